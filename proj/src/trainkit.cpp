// SPDX-License-Identifier: Apache-2.0
#include "moco/trainkit.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace moco::trainkit {

// ---------------------------------------------------------------- objective

void LossWeights::validate() const {
  if (!(lambda_m >= 0.0) || !(lambda_track >= 0.0)) throw InvalidConfig("loss weights must be non-negative");
}

double total_loss(const LossComponents& c, const LossWeights& w) {
  double total = c.diffusion;
  if (w.lambda_m != 0.0) total += w.lambda_m * c.mask;
  if (w.lambda_track != 0.0) total += w.lambda_track * c.track;
  return total;
}

Var combine(const Var& l_d, const Var* l_m, const Var* l_track, const LossWeights& w) {
  Var total = l_d;
  if (l_m && w.lambda_m != 0.0) total = ops::add(total, ops::scale(*l_m, w.lambda_m));
  if (l_track && w.lambda_track != 0.0) total = ops::add(total, ops::scale(*l_track, w.lambda_track));
  return total;
}

TrackingLoss tracking_grad_path(const Var& z_t, const Var& eps_hat, std::size_t t,
                                const diffusion::NoiseSchedule& schedule, const diffusion::Vae& vae,
                                const Tensor& gt_video, const Tensor& queries, const track::TrackerOptions& options,
                                const Tensor* gt_tracks) {
  require_same_shape(z_t.shape(), eps_hat.shape(), "tracking_grad_path");
  if (z_t.shape().at(0) != 1) throw ShapeError("tracking_grad_path: one batch item expected");
  const double ab = schedule.alpha_bar(t);
  if (ab < kMinTrackAlphaBar) return {constant(Tensor::scalar(0.0)), true};
  const Var x0 = ops::axpby(1.0 / std::sqrt(ab), z_t, -std::sqrt(1.0 - ab) / std::sqrt(ab), eps_hat);
  const Var decoded = vae.decode_var(x0);
  const Shape& vs = decoded.shape();
  const Var frames = ops::reshape(decoded, {vs[1], vs[2], vs[3], vs[4]});
  require_same_shape(frames.shape(), gt_video.shape(), "tracking_grad_path video");
  const Var pred = track::soft_track(frames, queries, options);
  Tensor reference;
  if (gt_tracks) {
    reference = *gt_tracks;
  } else {
    NoGradGuard guard;
    reference = track::soft_track(constant(gt_video), queries, options).value();
  }
  return {track::loss_track(pred, constant(reference)), false};
}

// ---------------------------------------------------------------- config

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  const char* key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0') throw InvalidConfig("config key " + key + ": not a number: '" + v + "'");
  return d;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw InvalidConfig("config key " + key + ": not a non-negative integer: '" + v + "'");
  }
  return std::stoull(v);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InvalidConfig("config key " + key + ": not a boolean: '" + v + "'");
}

#define MOCO_DOUBLE(name) \
  Field{#name, [](const TrainConfig& c) { return fmt_double(c.name); }, \
        [](TrainConfig& c, const std::string& v) { c.name = parse_double(#name, v); }}
#define MOCO_SIZE(name) \
  Field{#name, [](const TrainConfig& c) { return std::to_string(c.name); }, \
        [](TrainConfig& c, const std::string& v) { c.name = static_cast<decltype(c.name)>(parse_uint(#name, v)); }}
#define MOCO_BOOL(name) \
  Field{#name, [](const TrainConfig& c) { return std::string(c.name ? "true" : "false"); }, \
        [](TrainConfig& c, const std::string& v) { c.name = parse_bool(#name, v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> f{
      MOCO_DOUBLE(learning_rate),   MOCO_DOUBLE(weight_decay),   MOCO_DOUBLE(grad_clip),
      MOCO_SIZE(batch_size),        MOCO_SIZE(steps),            MOCO_SIZE(seed),
      MOCO_SIZE(checkpoint_interval), MOCO_SIZE(pretrain_steps), MOCO_DOUBLE(pretrain_learning_rate),
      MOCO_SIZE(frame_height),      MOCO_SIZE(frame_width),      MOCO_SIZE(frames),
      MOCO_SIZE(branch_blocks),     MOCO_SIZE(block_count),      MOCO_SIZE(width),
      MOCO_SIZE(heads),             MOCO_SIZE(mlp_ratio),        MOCO_SIZE(dit_patch),
      MOCO_SIZE(mask_channels),
      Field{"vae_mode", [](const TrainConfig& c) { return c.vae_mode; },
            [](TrainConfig& c, const std::string& v) { c.vae_mode = v; }},
      MOCO_SIZE(vae_channels),      MOCO_SIZE(patch_t),          MOCO_SIZE(patch_h),
      MOCO_SIZE(patch_w),           MOCO_BOOL(structure_enabled), MOCO_BOOL(hadc_enabled),
      MOCO_SIZE(diffusion_steps),   MOCO_DOUBLE(beta_min),       MOCO_DOUBLE(beta_max),
      MOCO_DOUBLE(lambda_m),        MOCO_DOUBLE(lambda_track),   MOCO_BOOL(track_loss_enabled),
      MOCO_SIZE(track_queries),     MOCO_SIZE(track_every),
  };
  return f;
}

#undef MOCO_DOUBLE
#undef MOCO_SIZE
#undef MOCO_BOOL

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.learning_rate = 1e-5;
  c.steps = 20000;
  c.pretrain_steps = 0;
  c.frame_height = 480;
  c.frame_width = 720;
  c.branch_blocks = 8;
  c.lambda_m = 0.001;
  c.lambda_track = 0.01;
  c.diffusion_steps = 1000;
  c.beta_min = 1e-4;
  c.beta_max = 0.02;
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !(pretrain_learning_rate >= 0.0)) throw InvalidConfig("learning rates must be >= 0");
  if (!(weight_decay >= 0.0) || !(grad_clip >= 0.0)) throw InvalidConfig("weight_decay and grad_clip must be >= 0");
  if (batch_size == 0) throw InvalidConfig("batch_size must be positive");
  if (patch_t == 0 || patch_h == 0 || patch_w == 0 || dit_patch == 0) throw InvalidConfig("patch sizes must be positive");
  if (frames % patch_t != 0 || frame_height % (patch_h * dit_patch) != 0 || frame_width % (patch_w * dit_patch) != 0) {
    throw InvalidConfig("resolution " + std::to_string(frame_width) + "x" + std::to_string(frame_height) + "x" +
                        std::to_string(frames) + " is not divisible by the patch sizes");
  }
  if (track_every == 0) throw InvalidConfig("track_every must be positive");
  loss_weights().validate();
  try {
    model_config().validate();
    schedule();
  } catch (const std::invalid_argument& e) {
    throw InvalidConfig(e.what());
  }
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.backbone.block_count = block_count;
  m.backbone.width = width;
  m.backbone.heads = heads;
  m.backbone.mlp_ratio = mlp_ratio;
  m.backbone.dit_patch = dit_patch;
  m.backbone.vae.mode = diffusion::parse_vae_mode(vae_mode);
  m.backbone.vae.learned_channels = vae_channels;
  m.backbone.vae.patch_t = patch_t;
  m.backbone.vae.patch_h = patch_h;
  m.backbone.vae.patch_w = patch_w;
  m.branch_blocks = branch_blocks;
  m.mask_channels = mask_channels;
  m.structure_enabled = structure_enabled;
  m.hadc_enabled = hadc_enabled;
  m.seed = seed;
  return m;
}

diffusion::NoiseSchedule TrainConfig::schedule() const {
  return diffusion::build_schedule(diffusion_steps, beta_min, beta_max);
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + "=" + f.get(*this) + "\n";
  return out;
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidConfig("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const auto it = std::find_if(fields().begin(), fields().end(), [&](const Field& f) { return key == f.key; });
    if (it == fields().end()) throw InvalidConfig("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->set(c, value);
  }
  return c;
}

TrainConfig read_config(const std::filesystem::path& path) { return TrainConfig::from_text(io::read_text(path)); }

void write_config(const std::filesystem::path& path, const TrainConfig& config) { io::write_text(path, config.to_text()); }

// ---------------------------------------------------------------- optimizer

AdamW::AdamW(std::vector<Var> params, double lr, double weight_decay, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.shape(), 0.0);
    v_.emplace_back(p.shape(), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor g = params_[i].grad();
    Tensor& w = params_[i].mutable_value();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
      v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
      const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_) + wd_ * w[j];
      w[j] -= lr_ * update;
    }
  }
}

// ---------------------------------------------------------------- training

namespace {

Tensor stack(const std::vector<const Tensor*>& items) {
  Shape s = items.at(0)->shape();
  const std::size_t n = items[0]->size();
  s[0] = items.size();
  Tensor out(s);
  for (std::size_t b = 0; b < items.size(); ++b) {
    require_same_shape(items[b]->shape(), items[0]->shape(), "stack");
    std::copy(items[b]->data().begin(), items[b]->data().end(), out.storage().begin() + b * n);
  }
  return out;
}

Var first_item(const Var& x) {
  Shape s = x.shape();
  const std::size_t n = x.size() / s[0];
  s[0] = 1;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return ops::gather(x, std::move(idx), s);
}

double clip_gradients(const std::vector<Var>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    const Tensor g = p.grad();
    for (double x : g.data()) sq += x * x;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& p : params) {
      Tensor& g = p.node()->grad_buffer();
      for (auto& x : g.storage()) x *= s;
    }
  }
  return norm;
}

struct Batch {
  std::vector<std::size_t> items;
  std::vector<std::size_t> t;
  std::string ids;
};

Batch draw_batch(const Dataset& data, std::size_t batch_size, std::size_t T, Rng& rng) {
  Batch b;
  std::vector<std::size_t> order(data.clips.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<std::size_t> ut(1, T);
  for (std::size_t i = 0; i < batch_size; ++i) {
    b.items.push_back(order[i % order.size()]);
    b.t.push_back(ut(rng));
    b.ids += (i ? "+" : "") + data.clips[b.items.back()].id;
  }
  return b;
}

Rng step_rng(std::uint64_t seed, std::size_t step, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

class MetricsSink {
 public:
  explicit MetricsSink(const std::optional<std::filesystem::path>& dir) {
    if (!dir) return;
    std::filesystem::create_directories(*dir);
    const auto path = *dir / "metrics.csv";
    const bool fresh = !std::filesystem::exists(path);
    os_.open(path, std::ios::app);
    if (!os_) throw io::IOError("cannot write " + path.string());
    if (fresh) os_ << metrics_header() << '\n';
  }
  void write(const StepLog& log) {
    if (os_.is_open()) os_ << metrics_line(log) << '\n' << std::flush;
  }

 private:
  std::ofstream os_;
};

void dump_nonfinite(const std::optional<std::filesystem::path>& dir, const StepLog& log, const Batch& batch) {
  if (!dir) return;
  nlohmann::json j;
  j["step"] = log.step;
  j["phase"] = log.phase;
  j["batch"] = log.batch;
  j["timesteps"] = batch.t;
  j["diffusion"] = fmt_double(log.components.diffusion);
  j["mask"] = fmt_double(log.components.mask);
  j["track"] = fmt_double(log.components.track);
  io::write_text(*dir / "nonfinite_batch.json", j.dump(2));
}

std::vector<Var> trainable_vars(const ParameterSet& params) {
  std::vector<Var> out;
  for (const auto& [name, v] : params.items())
    if (v.requires_grad()) out.push_back(v);
  return out;
}

}  // namespace

std::vector<StepLog> pretrain_base(const TrainConfig& config, MocoModel& model, const Dataset& data,
                                   const TrainOptions& options) {
  config.validate();
  if (data.clips.empty()) throw NoData("no clips for base pretraining");
  for (auto& [name, v] : model.params().items()) v.set_requires_grad(name.rfind("backbone/", 0) == 0);
  const auto params = trainable_vars(model.params());
  AdamW opt(params, config.pretrain_learning_rate, config.weight_decay);
  const auto schedule = config.schedule();
  MetricsSink sink(options.out_dir);
  std::vector<StepLog> logs;
  for (std::size_t i = 0; i < config.pretrain_steps; ++i) {
    const std::size_t step = options.first_step + i;
    Rng rng = step_rng(config.seed, step, 1);
    const Batch batch = draw_batch(data, config.batch_size, schedule.steps, rng);
    std::vector<const Tensor*> lat;
    std::vector<std::string> prompts;
    for (std::size_t b : batch.items) {
      lat.push_back(&data.clips[b].latent);
      prompts.push_back(data.clips[b].prompt);
    }
    const Tensor z0 = stack(lat);
    const Tensor eps = randn(z0.shape(), rng);
    Tensor zt(z0.shape());
    const std::size_t n = z0.size() / batch.items.size();
    for (std::size_t b = 0; b < batch.items.size(); ++b) {
      const double ab = schedule.alpha_bar(batch.t[b]);
      for (std::size_t j = b * n; j < (b + 1) * n; ++j) zt[j] = std::sqrt(ab) * z0[j] + std::sqrt(1.0 - ab) * eps[j];
    }
    const auto text = model.text_encoder().encode(prompts);
    const auto out = model.forward(constant(zt), batch.t, text, nullptr);
    const Var loss = diffusion::loss_noise(out.eps_hat, constant(eps));
    StepLog log;
    log.step = step;
    log.phase = "base";
    log.components.diffusion = loss.item();
    log.total = loss.item();
    log.batch = batch.ids;
    if (!std::isfinite(log.total)) {
      dump_nonfinite(options.out_dir, log, batch);
      throw NonFiniteLoss("non-finite loss at step " + std::to_string(step) + " on batch " + batch.ids, batch.ids);
    }
    for (auto p : params) p.zero_grad();
    backward(loss);
    clip_gradients(params, config.grad_clip);
    opt.step();
    sink.write(log);
    if (options.on_step) options.on_step(log);
    logs.push_back(std::move(log));
  }
  structure::apply_partition(model.params(), structure::freeze_plan(model.params()));
  model.reset_branch();
  return logs;
}

std::vector<StepLog> train(const TrainConfig& config, MocoModel& model, const Dataset& data,
                           const TrainOptions& options) {
  config.validate();
  if (data.clips.empty()) throw NoData("manifest has no accepted clips");
  structure::apply_partition(model.params(), structure::freeze_plan(model.params()));
  const auto params = trainable_vars(model.params());
  AdamW opt(params, config.learning_rate, config.weight_decay);
  const auto schedule = config.schedule();
  const auto weights = config.loss_weights();
  const bool use_branch = model.has_branch();
  const bool use_mask = use_branch && config.hadc_enabled && weights.lambda_m != 0.0;
  MetricsSink sink(options.out_dir);
  std::vector<StepLog> logs;
  for (std::size_t i = 0; i < config.steps; ++i) {
    const std::size_t step = options.first_step + i;
    Rng rng = step_rng(config.seed, step, 2);
    const Batch batch = draw_batch(data, config.batch_size, schedule.steps, rng);
    std::vector<const Tensor*> lat, skel, mask;
    std::vector<std::string> prompts;
    for (std::size_t b : batch.items) {
      lat.push_back(&data.clips[b].latent);
      skel.push_back(&data.clips[b].skeleton_latent);
      mask.push_back(&data.clips[b].mask_latent);
      prompts.push_back(data.clips[b].prompt);
    }
    const Tensor z0 = stack(lat);
    const Tensor eps = randn(z0.shape(), rng);
    Tensor zt(z0.shape());
    const std::size_t n = z0.size() / batch.items.size();
    for (std::size_t b = 0; b < batch.items.size(); ++b) {
      const double ab = schedule.alpha_bar(batch.t[b]);
      for (std::size_t j = b * n; j < (b + 1) * n; ++j) zt[j] = std::sqrt(ab) * z0[j] + std::sqrt(1.0 - ab) * eps[j];
    }
    const Tensor skeleton = stack(skel);
    const auto text = model.text_encoder().encode(prompts);
    const Var zt_var = constant(zt);
    const auto out = model.forward(zt_var, batch.t, text, use_branch ? &skeleton : nullptr);

    StepLog log;
    log.step = step;
    log.phase = "branch";
    log.batch = batch.ids;
    const Var l_d = diffusion::loss_noise(out.eps_hat, constant(eps));
    log.components.diffusion = l_d.item();
    std::optional<Var> l_m, l_t;
    if (use_mask && !out.mask_preds.empty()) {
      l_m = hadc::loss_mask(out.mask_preds, constant(stack(mask)));
      log.components.mask = l_m->item();
    }
    if (config.track_loss_enabled && weights.lambda_track != 0.0 && step % config.track_every == 0) {
      const ClipData& clip = data.clips[batch.items[0]];
      const std::size_t q = std::min(config.track_queries, clip.queries.shape()[0]);
      Tensor queries(Shape{q, 2});
      std::copy_n(clip.queries.data().begin(), 2 * q, queries.storage().begin());
      const auto tl = tracking_grad_path(first_item(zt_var), first_item(out.eps_hat), batch.t[0], schedule,
                                         model.vae(), clip.video, queries, {},
                                         clip.gt_tracks.size() == q * clip.video.shape()[0] * 2 ? &clip.gt_tracks
                                                                                                 : nullptr);
      log.track_skipped = tl.skipped;
      if (!tl.skipped) {
        l_t = tl.loss;
        log.components.track = tl.loss.item();
      }
    }
    const Var total = combine(l_d, l_m ? &*l_m : nullptr, l_t ? &*l_t : nullptr, weights);
    log.total = total.item();
    if (!std::isfinite(log.total)) {
      dump_nonfinite(options.out_dir, log, batch);
      throw NonFiniteLoss("non-finite loss at step " + std::to_string(step) + " on batch " + batch.ids, batch.ids);
    }
    if (!params.empty()) {
      for (auto p : params) p.zero_grad();
      backward(total);
      clip_gradients(params, config.grad_clip);
      opt.step();
    }
    sink.write(log);
    if (options.on_step) options.on_step(log);
    if (options.out_dir && config.checkpoint_interval > 0 && (i + 1) % config.checkpoint_interval == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_%06zu.arr", step);
      save_checkpoint(*options.out_dir / name, model, config);
    }
    logs.push_back(std::move(log));
  }
  if (options.out_dir) save_checkpoint(*options.out_dir / "checkpoint.arr", model, config);
  return logs;
}

RunResult run_training(const TrainConfig& config, Dataset& data, Dataset* base, const TrainOptions& options) {
  config.validate();
  if (data.clips.empty()) throw NoData("no accepted clips to train on");
  RunResult r;
  r.model = std::make_unique<MocoModel>(config.model_config());
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    std::filesystem::remove(*options.out_dir / "metrics.csv");
    write_config(*options.out_dir / "config.txt", config);
  }
  if (config.vae_mode == "learned_small") {
    Dataset all;
    all.clips = data.clips;
    if (base) all.clips.insert(all.clips.end(), base->clips.begin(), base->clips.end());
    encode_dataset(all, *r.model, 0, true);
  }
  encode_dataset(data, *r.model, config.track_queries, false);
  if (base) encode_dataset(*base, *r.model, 0, false);
  TrainOptions opts = options;
  if (config.pretrain_steps > 0) {
    auto logs = pretrain_base(config, *r.model, base ? *base : data, opts);
    r.log.insert(r.log.end(), logs.begin(), logs.end());
    opts.first_step += config.pretrain_steps;
  }
  auto logs = train(config, *r.model, data, opts);
  r.log.insert(r.log.end(), logs.begin(), logs.end());
  return r;
}

// ---------------------------------------------------------------- checkpoints

nlohmann::json checkpoint_meta(const TrainConfig& config) {
  nlohmann::json j;
  j["version"] = "moco-kit/1";
  j["config"] = config.to_text();
  j["schedule"] = {{"steps", config.diffusion_steps},
                   {"beta_min", fmt_double(config.beta_min)},
                   {"beta_max", fmt_double(config.beta_max)}};
  return j;
}

void save_checkpoint(const std::filesystem::path& path, const MocoModel& model, const TrainConfig& config) {
  model.save(path, checkpoint_meta(config));
}

std::unique_ptr<MocoModel> load_checkpoint(const std::filesystem::path& path, TrainConfig* config_out) {
  const auto c = io::read_container(path);
  if (c.meta.value("version", "") != "moco-kit/1") throw io::IOError("checkpoint " + path.string() + ": unknown version");
  const TrainConfig config = TrainConfig::from_text(c.meta.at("config").get<std::string>());
  auto model = std::make_unique<MocoModel>(config.model_config());
  model->load_parameters(c);
  structure::apply_partition(model->params(), structure::freeze_plan(model->params()));
  if (config_out) *config_out = config;
  return model;
}

std::string metrics_header() { return "step,phase,total,diffusion,mask,track,track_skipped,batch"; }

std::string metrics_line(const StepLog& l) {
  return std::to_string(l.step) + "," + l.phase + "," + fmt_double(l.total) + "," + fmt_double(l.components.diffusion) +
         "," + fmt_double(l.components.mask) + "," + fmt_double(l.components.track) + "," +
         (l.track_skipped ? "1" : "0") + "," + l.batch;
}

std::vector<StepLog> read_metrics(const std::filesystem::path& path) {
  std::istringstream in(io::read_text(path));
  std::string line;
  std::vector<StepLog> out;
  std::getline(in, line);
  if (line != metrics_header()) throw io::IOError("metrics file " + path.string() + ": unexpected header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() < 7) throw io::IOError("metrics file " + path.string() + ": malformed line");
    StepLog l;
    l.step = std::stoull(f[0]);
    l.phase = f[1];
    l.total = std::strtod(f[2].c_str(), nullptr);
    l.components.diffusion = std::strtod(f[3].c_str(), nullptr);
    l.components.mask = std::strtod(f[4].c_str(), nullptr);
    l.components.track = std::strtod(f[5].c_str(), nullptr);
    l.track_skipped = f[6] == "1";
    if (f.size() > 7) l.batch = f[7];
    out.push_back(std::move(l));
  }
  return out;
}

}  // namespace moco::trainkit
