#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "doctest.h"
#include "moco/io.hpp"
#include "moco/trainkit.hpp"
#include "support/gradcheck.hpp"

using namespace moco;
using namespace moco::trainkit;
using moco::testing::gradcheck;
namespace fs = std::filesystem;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) { return a.bitwise_equal(b); }

fs::path scratch(const std::string& name) {
  auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

CorpusOptions tiny_corpus() {
  CorpusOptions o;
  o.frames = 4;
  o.height = 16;
  o.width = 16;
  return o;
}

TrainConfig tiny_train() {
  TrainConfig c;
  c.frames = 4;
  c.frame_height = 16;
  c.frame_width = 16;
  c.patch_t = 2;
  c.patch_h = 4;
  c.patch_w = 4;
  c.vae_mode = "identity_patchify";
  c.block_count = 2;
  c.branch_blocks = 2;
  c.width = 8;
  c.heads = 2;
  c.batch_size = 2;
  c.steps = 3;
  c.pretrain_steps = 0;
  c.diffusion_steps = 10;
  c.track_queries = 2;
  c.checkpoint_interval = 0;
  c.seed = 4;
  return c;
}

// A corpus of `n` tiny clips loaded and encoded for `model`.
Dataset tiny_dataset(const std::string& name, std::size_t n, MocoModel& model, std::size_t queries) {
  const auto dir = scratch(name);
  make_synthetic_corpus(n, 1, dir, tiny_corpus());
  Dataset d = load_corpus(dir);
  encode_dataset(d, model, queries, false);
  return d;
}

std::map<std::string, Tensor> snapshot(const MocoModel& m) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : m.params().items()) out[name] = v.value();
  return out;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

// ---------------------------------------------------------------- objective

TEST_CASE("total_loss with the published weights") {
  const LossWeights w;
  CHECK(w.lambda_m == 0.001);
  CHECK(w.lambda_track == 0.01);
  CHECK(total_loss({1.0, 2.0, 3.0}, w) == 1.032);
  CHECK(total_loss({0.0, 0.0, 0.0}, w) == 0.0);
  const Var l_d(Tensor::scalar(1.0)), l_m(Tensor::scalar(2.0)), l_t(Tensor::scalar(3.0));
  CHECK(combine(l_d, &l_m, &l_t, w).item() == 1.032);
}

TEST_CASE("zero weights reproduce the noise loss bitwise") {
  const LossWeights zero{0.0, 0.0};
  Rng rng(3);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int i = 0; i < 50; ++i) {
    const double d = u(rng);
    CHECK(total_loss({d, u(rng), u(rng)}, zero) == d);
    const Var l_d(Tensor::scalar(d)), l_m(Tensor::scalar(u(rng))), l_t(Tensor::scalar(u(rng)));
    CHECK(combine(l_d, &l_m, &l_t, zero).item() == d);
  }
  CHECK_THROWS_AS(LossWeights({-1.0, 0.0}).validate(), std::invalid_argument);
}

TEST_CASE("loss components re-sum to the total within one ulp") {
  Rng rng(8);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  const LossWeights w;
  for (int i = 0; i < 200; ++i) {
    const LossComponents c{u(rng), u(rng), u(rng)};
    const double total = total_loss(c, w);
    const double resum = c.diffusion + w.lambda_m * c.mask + w.lambda_track * c.track;
    CHECK(std::abs(total - resum) <= std::numeric_limits<double>::epsilon() * total);
  }
}

TEST_CASE("tracking path is zero for a perfect predictor in identity mode") {
  diffusion::VaeConfig vc;
  vc.patch_t = 1;
  vc.patch_h = 4;
  vc.patch_w = 4;
  ParameterSet params;
  const diffusion::Vae vae(vc, params);
  Rng rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor video(Shape{3, 16, 16, 3});
  for (auto& x : video.storage()) x = u(rng);
  const auto schedule = diffusion::build_schedule(10, 1e-3, 0.2);
  const std::size_t t = 3;
  const Tensor z0 = vae.encode(video.reshaped({1, 3, 16, 16, 3}));
  const Tensor eps = randn(z0.shape(), rng);
  const Tensor zt = diffusion::forward_noise(z0, t, eps, schedule);
  Tensor queries(Shape{2, 2});
  queries[0] = 5;
  queries[1] = 6;
  queries[2] = 10;
  queries[3] = 9;
  const auto out = tracking_grad_path(constant(zt), constant(eps), t, schedule, vae, video, queries);
  CHECK_FALSE(out.skipped);
  CHECK(std::abs(out.loss.item()) < 1e-12);
}

TEST_CASE("tracking path gradient matches finite differences") {
  diffusion::VaeConfig vc;
  vc.patch_t = 1;
  vc.patch_h = 4;
  vc.patch_w = 4;
  ParameterSet params;
  const diffusion::Vae vae(vc, params);
  Rng rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor video(Shape{3, 16, 16, 3});
  for (auto& x : video.storage()) x = u(rng);
  const auto schedule = diffusion::build_schedule(10, 1e-3, 0.2);
  const std::size_t t = 2;
  const Tensor z0 = vae.encode(video.reshaped({1, 3, 16, 16, 3}));
  const Tensor eps = randn(z0.shape(), rng);
  const Tensor zt = diffusion::forward_noise(z0, t, eps, schedule);
  Tensor queries(Shape{2, 2});
  queries[0] = 6;
  queries[1] = 7;
  queries[2] = 9;
  queries[3] = 10;
  Var eps_hat(randn(z0.shape(), rng, 1.0), true);
  const Var zt_var = constant(zt);
  for (const track::TrackerOptions opts : {track::TrackerOptions{2, 0.5}, track::TrackerOptions{}}) {
    const auto report = gradcheck(
        eps_hat, [&] { return tracking_grad_path(zt_var, eps_hat, t, schedule, vae, video, queries, opts).loss; },
        1e-5, 1e-8, 97);
    CHECK(report.max_abs_analytic > 0.0);
    CHECK(report.max_rel_error < 1e-3);
  }
}

TEST_CASE("tracking path is skipped below the alpha-bar floor") {
  diffusion::VaeConfig vc;
  vc.patch_t = 1;
  vc.patch_h = 4;
  vc.patch_w = 4;
  ParameterSet params;
  const diffusion::Vae vae(vc, params);
  const auto schedule = diffusion::NoiseSchedule::from_betas({0.5, 1.0 - 2e-7});
  REQUIRE(schedule.alpha_bar(2) == doctest::Approx(1e-7));
  const Tensor z(Shape{1, 2, 48, 2, 2});
  const Tensor video(Shape{2, 8, 8, 3});
  Tensor queries(Shape{1, 2});
  queries[0] = queries[1] = 4;
  const auto out = tracking_grad_path(constant(z), constant(z), 2, schedule, vae, video, queries);
  CHECK(out.skipped);
  CHECK(out.loss.item() == 0.0);
  CHECK_FALSE(tracking_grad_path(constant(z), constant(z), 1, schedule, vae, video, queries).skipped);
}

// ---------------------------------------------------------------- config

TEST_CASE("config text round-trips bit-exactly") {
  for (TrainConfig c : {TrainConfig::desk(), TrainConfig::paper(), tiny_train()}) {
    c.learning_rate = 0.1 + 0.2;
    c.beta_max = std::nextafter(0.4, 1.0);
    const auto back = TrainConfig::from_text(c.to_text());
    CHECK(back.to_text() == c.to_text());
    CHECK(back.learning_rate == c.learning_rate);
    CHECK(back.beta_max == c.beta_max);
  }
  const auto path = fs::temp_directory_path() / "moco_config.txt";
  write_config(path, TrainConfig::paper());
  CHECK(read_config(path).to_text() == TrainConfig::paper().to_text());
}

TEST_CASE("paper profile keeps the published values") {
  const auto p = TrainConfig::paper();
  CHECK(p.learning_rate == 1e-5);
  CHECK(p.steps == 20000);
  CHECK(p.frame_width == 720);
  CHECK(p.frame_height == 480);
  CHECK(p.branch_blocks == 8);
  CHECK(p.lambda_m == 0.001);
  CHECK(p.lambda_track == 0.01);
  CHECK_NOTHROW(p.validate());
  const auto d = TrainConfig::desk();
  CHECK(d.learning_rate == 1e-3);
  CHECK(d.frame_width == 48);
  CHECK(d.frame_height == 64);
  CHECK(d.frames == 16);
  CHECK(d.diffusion_steps == 50);
  CHECK(d.batch_size == 4);
  CHECK(d.pretrain_steps + d.steps == 2000);
  CHECK(p.pretrain_steps == 0);
}

TEST_CASE("invalid configs are rejected") {
  CHECK_THROWS_AS(TrainConfig::from_text("no_such_key=1\n"), InvalidConfig);
  CHECK_THROWS_AS(TrainConfig::from_text("steps=abc\n"), InvalidConfig);
  auto c = TrainConfig::desk();
  c.frame_width = 50;
  CHECK_THROWS_AS(c.validate(), InvalidConfig);
  c = TrainConfig::desk();
  c.lambda_m = -1.0;
  CHECK_THROWS_AS(c.validate(), InvalidConfig);
  c = TrainConfig::desk();
  c.branch_blocks = 9;
  CHECK_THROWS_AS(c.validate(), InvalidConfig);
}

// ---------------------------------------------------------------- corpus

TEST_CASE("synthetic corpus is deterministic per seed") {
  const auto a = scratch("moco_corpus_a"), b = scratch("moco_corpus_b");
  const auto ids = make_synthetic_corpus(3, 9, a, tiny_corpus());
  make_synthetic_corpus(3, 9, b, tiny_corpus());
  REQUIRE(ids.size() == 3);
  for (const auto& id : ids)
    for (const char* f : {curation::ClipFiles::prompt, curation::ClipFiles::keypoints2d, curation::ClipFiles::video,
                          curation::ClipFiles::skeleton, curation::ClipFiles::mask, curation::ClipFiles::tracks})
      CHECK(file_bytes(a / id / f) == file_bytes(b / id / f));
}

TEST_CASE("ground-truth tracks are the projected query joints") {
  const auto dir = scratch("moco_corpus_tracks");
  make_synthetic_corpus(1, 2, dir, tiny_corpus());
  const auto kp = curation::read_keypoints2d(dir / "clip_0000" / curation::ClipFiles::keypoints2d);
  const auto tr = track::read_trajectories(dir / "clip_0000" / curation::ClipFiles::tracks);
  const auto& qj = query_joints();
  REQUIRE(tr.queries() == 16);
  const std::size_t T = tr.frames(), K = kp.points.shape()[1];
  for (std::size_t q = 0; q < qj.size(); ++q)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < 2; ++c) CHECK(tr.points[(q * T + t) * 2 + c] == kp.points[(t * K + qj[q]) * 2 + c]);
}

TEST_CASE("walk, run and jump clips pass the curation filter at desk resolution") {
  const auto dir = scratch("moco_corpus_filter");
  make_synthetic_corpus(6, 3, dir);
  const auto records = curation::curate_corpus(dir);
  REQUIRE(records.size() == 6);
  for (const auto& r : records) {
    CHECK(r.accepted);
    CHECK(r.offset_score > 0.1);
  }
}

TEST_CASE("unwritable corpus directory raises IOError") {
  const auto blocker = fs::temp_directory_path() / "moco_blocker_file";
  io::write_text(blocker, "x");
  CHECK_THROWS_AS(make_synthetic_corpus(1, 0, blocker / "corpus", tiny_corpus()), io::IOError);
  CHECK_THROWS_AS(make_synthetic_corpus(0, 0, scratch("moco_zero"), tiny_corpus()), std::invalid_argument);
}

TEST_CASE("motion verbs map to procedural motions") {
  CHECK(motion_for_prompt("a man walks") == motion::MotionId::walk);
  CHECK(motion_for_prompt("The dancer spins around") == motion::MotionId::spin);
  CHECK(motion_for_prompt("she is Waving") == motion::MotionId::wave);
  CHECK_FALSE(motion_for_prompt("a quiet beach").has_value());
  CHECK_FALSE(motion_for_prompt("a walker").has_value());
}

// ---------------------------------------------------------------- training

TEST_CASE("empty data raises NoData") {
  const auto c = tiny_train();
  MocoModel m(c.model_config());
  CHECK_THROWS_AS(train(c, m, Dataset{}), NoData);
  const auto dir = scratch("moco_nodata");
  fs::create_directories(dir);
  io::write_text(dir / "manifest.jsonl", curation::manifest_text({}));
  CHECK_THROWS_AS(load_dataset(dir / "manifest.jsonl"), NoData);
}

TEST_CASE("a step with learning rate zero leaves every parameter unchanged") {
  auto c = tiny_train();
  c.learning_rate = 0.0;
  c.steps = 1;
  MocoModel m(c.model_config());
  const auto data = tiny_dataset("moco_lr0", 2, m, c.track_queries);
  const auto before = snapshot(m);
  const auto log = train(c, m, data);
  REQUIRE(log.size() == 1);
  CHECK(std::isfinite(log[0].total));
  for (const auto& [name, v] : m.params().items()) CHECK_MESSAGE(bitwise_equal(v.value(), before.at(name)), name);
}

TEST_CASE("training updates only the trainable partition") {
  auto c = tiny_train();
  c.steps = 4;
  MocoModel m(c.model_config());
  const auto data = tiny_dataset("moco_freeze", 3, m, c.track_queries);
  const auto before = snapshot(m);
  train(c, m, data);
  const auto plan = structure::freeze_plan(m.params());
  for (const auto& name : plan.frozen) CHECK_MESSAGE(bitwise_equal(m.params().at(name).value(), before.at(name)), name);
  std::size_t changed = 0;
  for (const auto& name : plan.trainable) changed += bitwise_equal(m.params().at(name).value(), before.at(name)) ? 0 : 1;
  CHECK(changed > 0);
}

TEST_CASE("base pretraining touches only the backbone and recopies the branch") {
  auto c = tiny_train();
  c.pretrain_steps = 2;
  MocoModel m(c.model_config());
  const auto data = tiny_dataset("moco_base", 2, m, 0);
  const auto before = snapshot(m);
  const auto log = pretrain_base(c, m, data);
  REQUIRE(log.size() == 2);
  CHECK(log[0].phase == "base");
  CHECK_FALSE(bitwise_equal(m.params().at("backbone/head/weight").value(), before.at("backbone/head/weight")));
  CHECK(bitwise_equal(m.params().at("text/table").value(), before.at("text/table")));
  CHECK(bitwise_equal(m.params().at("hadc/P_k/0/fc1/weight").value(), before.at("hadc/P_k/0/fc1/weight")));
  CHECK(bitwise_equal(m.params().at("backbone/blocks/0/mlp/fc1/weight").value(),
                      m.params().at("structure_branch/blocks/0/mlp/fc1/weight").value()));
  CHECK(m.params().at("hadc/P_k/0/fc1/weight").requires_grad());
  CHECK_FALSE(m.params().at("backbone/head/weight").requires_grad());
}

TEST_CASE("identical seeds give identical logs") {
  auto c = tiny_train();
  auto run = [&] {
    MocoModel m(c.model_config());
    const auto data = tiny_dataset("moco_repro", 3, m, c.track_queries);
    std::vector<std::string> lines;
    for (const auto& l : train(c, m, data)) lines.push_back(metrics_line(l));
    return lines;
  };
  CHECK(run() == run());
}

TEST_CASE("ablation toggles train without error") {
  for (int variant = 0; variant < 4; ++variant) {
    auto c = tiny_train();
    c.steps = 1;
    if (variant == 0) c.hadc_enabled = false;
    if (variant == 1) c.lambda_m = 0.0;
    if (variant == 2) c.lambda_track = 0.0;
    if (variant == 3) c.structure_enabled = false;
    MocoModel m(c.model_config());
    const auto data = tiny_dataset("moco_ablation", 2, m, c.track_queries);
    const auto log = train(c, m, data);
    REQUIRE(log.size() == 1);
    CHECK(std::isfinite(log[0].total));
    if (variant == 2) CHECK(log[0].components.track == 0.0);
    else CHECK(log[0].components.track > 0.0);
    if (variant == 0 || variant == 1 || variant == 3) CHECK(log[0].components.mask == 0.0);
  }
}

TEST_CASE("non-finite loss aborts with a batch dump") {
  auto c = tiny_train();
  MocoModel m(c.model_config());
  auto data = tiny_dataset("moco_nan", 2, m, c.track_queries);
  for (auto& clip : data.clips) clip.latent[0] = std::nan("");
  const auto out = scratch("moco_nan_run");
  TrainOptions opts;
  opts.out_dir = out;
  try {
    train(c, m, data, opts);
    FAIL("expected NonFiniteLoss");
  } catch (const NonFiniteLoss& e) {
    CHECK(e.batch_id.find("clip_") != std::string::npos);
  }
  const auto dump = nlohmann::json::parse(io::read_text(out / "nonfinite_batch.json"));
  CHECK(dump.at("step") == 1);
}

TEST_CASE("checkpoints restore every parameter and the config") {
  auto c = tiny_train();
  c.checkpoint_interval = 2;
  c.steps = 2;
  MocoModel m(c.model_config());
  const auto data = tiny_dataset("moco_ckpt", 2, m, c.track_queries);
  const auto out = scratch("moco_ckpt_run");
  TrainOptions opts;
  opts.out_dir = out;
  const auto log = train(c, m, data, opts);
  CHECK(fs::exists(out / "checkpoint_000002.arr"));
  TrainConfig echoed;
  const auto loaded = load_checkpoint(out / "checkpoint.arr", &echoed);
  CHECK(echoed.to_text() == c.to_text());
  for (const auto& [name, v] : m.params().items())
    CHECK_MESSAGE(bitwise_equal(loaded->params().at(name).value(), v.value()), name);
  const auto read = read_metrics(out / "metrics.csv");
  REQUIRE(read.size() == log.size());
  CHECK(read[1].total == log[1].total);
  CHECK(read[1].batch == log[1].batch);
}

TEST_CASE("run_training chains base and branch phases into one log") {
  auto c = tiny_train();
  c.pretrain_steps = 2;
  c.steps = 2;
  const auto dir = scratch("moco_run_corpus");
  make_synthetic_corpus(2, 5, dir, tiny_corpus());
  Dataset data = load_corpus(dir);
  const auto out = scratch("moco_run_out");
  TrainOptions opts;
  opts.out_dir = out;
  const auto r = run_training(c, data, nullptr, opts);
  REQUIRE(r.log.size() == 4);
  CHECK(r.log[1].phase == "base");
  CHECK(r.log[2].phase == "branch");
  CHECK(r.log[3].step == 4);
  CHECK(read_metrics(out / "metrics.csv").size() == 4);
  CHECK(read_config(out / "config.txt").to_text() == c.to_text());
}

// ---------------------------------------------------------------- evaluation

TEST_CASE("pearson matches hand values") {
  CHECK(pearson({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0));
  CHECK(pearson({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(pearson({1, 2, 3, 4}, {1, 3, 2, 4}) == doctest::Approx(0.8));
  CHECK_THROWS_AS(pearson({1}, {1}), std::invalid_argument);
}

TEST_CASE("loss windows average the early and final steps") {
  std::vector<StepLog> log(200);
  for (std::size_t i = 0; i < log.size(); ++i) log[i].total = static_cast<double>(i + 1);
  CHECK(early_loss(log) == doctest::Approx(10.5));
  CHECK(final_loss(log) == doctest::Approx(150.5));
}

TEST_CASE("tracked displacement of a static video is zero") {
  Tensor video(Shape{4, 16, 16, 3});
  Rng rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < 16 * 16 * 3; ++i) {
    const double v = u(rng);
    for (std::size_t t = 0; t < 4; ++t) video[t * 16 * 16 * 3 + i] = v;
  }
  Tensor q(Shape{1, 2});
  q[0] = 8;
  q[1] = 8;
  for (double d : mean_tracked_displacement(video, q)) CHECK(d == doctest::Approx(0.0).scale(1e-9));
  CHECK(total_tracked_motion(video, q) == doctest::Approx(0.0).scale(1e-9));
}
