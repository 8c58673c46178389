// SPDX-License-Identifier: Apache-2.0
//
// moco: corpus generation, curation, training, generation and evaluation.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "moco/curation.hpp"
#include "moco/io.hpp"
#include "moco/render.hpp"
#include "moco/trainkit.hpp"

namespace fs = std::filesystem;
using namespace moco;

namespace {

std::vector<motion::MotionId> parse_motions(const std::string& list) {
  std::vector<motion::MotionId> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto id = motion::parse_motion_id(item);
    if (!id) throw CLI::ValidationError("--motions", "unknown motion '" + item + "'");
    out.push_back(*id);
  }
  if (out.empty()) throw CLI::ValidationError("--motions", "empty list");
  return out;
}

motion::StructureGeneratorHandle make_generator(const std::string& url) {
  if (url.empty()) return std::make_shared<motion::ProceduralGenerator>();
  // host:port[/path]
  const auto slash = url.find('/');
  const std::string hostport = url.substr(0, slash);
  const std::string path = slash == std::string::npos ? "/generate" : url.substr(slash);
  const auto colon = hostport.rfind(':');
  if (colon == std::string::npos) throw CLI::ValidationError("--generator", "expected host:port[/path]");
  return std::make_shared<motion::HttpGeneratorAdapter>(hostport.substr(0, colon),
                                                        std::stoi(hostport.substr(colon + 1)), path);
}

int cmd_make_corpus(const fs::path& out, std::size_t clips, std::uint64_t seed, const std::string& motions,
                    std::uint64_t background_seed) {
  trainkit::CorpusOptions opts;
  opts.motions = parse_motions(motions);
  opts.background_seed = background_seed;
  const auto ids = trainkit::make_synthetic_corpus(clips, seed, out, opts);
  std::cout << "wrote " << ids.size() << " clips to " << out.string() << "\n";
  return 0;
}

int cmd_curate(const fs::path& corpus, const fs::path& out, double threshold, double whole_body) {
  curation::FilterOptions opts;
  opts.threshold = threshold;
  opts.min_frame_fraction = whole_body;
  const auto records = curation::curate_corpus(corpus, opts);
  io::write_text(out, curation::manifest_text(records));
  std::size_t accepted = 0;
  for (const auto& r : records) accepted += r.accepted ? 1 : 0;
  std::cout << accepted << "/" << records.size() << " clips accepted, manifest " << out.string() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& preset, const fs::path& manifest,
              const std::string& corpus, const std::string& base_corpus, const fs::path& out,
              const std::vector<std::string>& overrides) {
  trainkit::TrainConfig config =
      config_path.empty() ? (preset == "paper" ? trainkit::TrainConfig::paper() : trainkit::TrainConfig::desk())
                          : trainkit::read_config(config_path);
  if (!overrides.empty()) {
    std::string text = config.to_text();
    for (const auto& o : overrides) text += o + "\n";
    config = trainkit::TrainConfig::from_text(text);
  }
  auto data = trainkit::load_dataset(manifest, corpus);
  std::optional<trainkit::Dataset> base;
  if (!base_corpus.empty()) base = trainkit::load_corpus(base_corpus);

  fs::create_directories(out);
  nlohmann::json run;
  run["manifest"] = fs::absolute(manifest).string();
  run["corpus"] = corpus.empty() ? fs::absolute(manifest).parent_path().string() : fs::absolute(corpus).string();
  if (base) run["base_corpus"] = fs::absolute(base_corpus).string();
  io::write_text(out / "run.json", run.dump(2) + "\n");

  trainkit::TrainOptions opts;
  opts.out_dir = out;
  const auto start = std::chrono::steady_clock::now();
  opts.on_step = [&](const trainkit::StepLog& l) {
    if (l.step % 50 != 0) return;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::fprintf(stderr, "step %6zu %-6s total %.6f  d %.6f  m %.6f  tr %.6f  %.1fs\n", l.step, l.phase.c_str(),
                 l.total, l.components.diffusion, l.components.mask, l.components.track, s);
  };
  trainkit::run_training(config, data, base ? &*base : nullptr, opts);
  std::cout << "checkpoint " << (out / "checkpoint.arr").string() << "\n";
  return 0;
}

int cmd_generate(const fs::path& checkpoint, const std::string& prompt, std::string motion_prompt,
                 const std::string& generator_url, bool unconditional, std::uint64_t seed, const fs::path& out) {
  trainkit::TrainConfig config;
  const auto model = trainkit::load_checkpoint(checkpoint, &config);
  fs::create_directories(out);
  nlohmann::json info;
  info["prompt"] = prompt;
  std::optional<Tensor> skeleton;
  if (!unconditional) {
    if (motion_prompt.empty()) {
      const auto extracted = curation::LexiconExtractor().extract(prompt);
      if (extracted.no_motion_verb) throw std::runtime_error("prompt has no motion verb; pass --motion-prompt");
      motion_prompt = extracted.text;
    }
    const auto id = trainkit::motion_for_prompt(motion_prompt);
    if (!id) throw std::runtime_error("no procedural motion matches '" + motion_prompt + "'");
    const motion::MotionPrompt mp{motion_prompt, motion::to_string(*id),
                                  static_cast<double>(config.frames) / motion::kDefaultFps, seed};
    const auto keypoints = motion::generate_structure(mp, make_generator(generator_url));
    trainkit::CorpusOptions opts;
    opts.frames = config.frames;
    opts.height = config.frame_height;
    opts.width = config.frame_width;
    const auto clip = trainkit::render_keypoints(prompt, keypoints, opts);
    skeleton = clip.skeleton;
    render::export_pngs(out / "skeleton", clip.skeleton);
    motion::write_keypoints(out / "keypoints3d.json", keypoints);
    info["motion_prompt"] = motion_prompt;
    info["motion_id"] = motion::to_string(*id);
  }
  const Tensor video = trainkit::generate_video(*model, config, prompt, skeleton ? &*skeleton : nullptr, seed);
  render::export_pngs(out / "frames", video);
  info["seed"] = seed;
  io::write_text(out / "generation.json", info.dump(2) + "\n");
  std::cout << "wrote " << video.shape()[0] << " frames to " << (out / "frames").string() << "\n";
  return 0;
}

int cmd_eval(const fs::path& run_dir, const std::string& manifest_arg, const std::string& corpus_arg,
             std::uint64_t seed) {
  std::string manifest = manifest_arg, corpus = corpus_arg;
  if (manifest.empty()) {
    const auto run = nlohmann::json::parse(io::read_text(run_dir / "run.json"));
    manifest = run.at("manifest").get<std::string>();
    if (corpus.empty()) corpus = run.value("corpus", "");
  }
  const auto data = trainkit::load_dataset(manifest, corpus);
  const auto s = trainkit::evaluate_run(run_dir, data, seed);
  std::printf("early_loss %.6f\nfinal_loss %.6f\nloss_ratio %.4f\nadherence_pearson %.4f\nmask_gate_ratio %.4f\n",
              s.early_loss, s.final_loss, s.final_loss / s.early_loss, s.adherence_r, s.mask_gate);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"moco: skeleton-conditioned human video diffusion"};
  app.require_subcommand(1);

  auto* mk = app.add_subcommand("make-corpus", "Render a synthetic clip corpus");
  fs::path mk_out;
  std::size_t mk_clips = 8;
  std::uint64_t mk_seed = 0, mk_bg = 7;
  std::string mk_motions = "walk,run,jump";
  mk->add_option("--out", mk_out, "Corpus directory")->required();
  mk->add_option("--clips", mk_clips, "Number of clips")->check(CLI::PositiveNumber);
  mk->add_option("--seed", mk_seed, "Corpus seed");
  mk->add_option("--motions", mk_motions, "Comma-separated motion ids, cycled over clips");
  mk->add_option("--background-seed", mk_bg, "Background texture seed");

  auto* cu = app.add_subcommand("curate", "Filter a corpus and write its manifest");
  fs::path cu_corpus, cu_out;
  double cu_threshold = 0.1, cu_whole = 0.9;
  cu->add_option("--corpus", cu_corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  cu->add_option("--out", cu_out, "Manifest path")->required();
  cu->add_option("--threshold", cu_threshold, "Offset threshold; clips at or below are rejected");
  cu->add_option("--whole-body", cu_whole, "Minimum fraction of frames with every joint in frame");

  auto* tr = app.add_subcommand("train", "Pretrain the backbone and train the structure branch");
  std::string tr_config, tr_preset = "desk", tr_corpus, tr_base;
  fs::path tr_manifest, tr_out;
  std::vector<std::string> tr_set;
  tr->add_option("--config", tr_config, "key=value config file")->check(CLI::ExistingFile);
  tr->add_option("--preset", tr_preset, "Config preset when --config is absent")
      ->check(CLI::IsMember({"desk", "paper"}));
  tr->add_option("--manifest", tr_manifest, "Curated manifest")->required()->check(CLI::ExistingFile);
  tr->add_option("--corpus", tr_corpus, "Corpus directory (default: manifest directory)");
  tr->add_option("--base-corpus", tr_base, "Corpus for backbone pretraining (default: training clips)");
  tr->add_option("--out", tr_out, "Run directory")->required();
  tr->add_option("--set", tr_set, "Config override key=value, repeatable");

  auto* ge = app.add_subcommand("generate", "Sample a clip from a checkpoint");
  fs::path ge_ckpt, ge_out;
  std::string ge_prompt, ge_motion, ge_generator;
  std::uint64_t ge_seed = 0;
  bool ge_uncond = false;
  ge->add_option("--checkpoint", ge_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ge->add_option("--prompt", ge_prompt, "Text prompt")->required();
  ge->add_option("--motion-prompt", ge_motion, "Motion-specific prompt (default: extracted from --prompt)");
  ge->add_option("--generator", ge_generator, "host:port[/path] of an HTTP keypoint generator");
  ge->add_flag("--unconditional", ge_uncond, "Skip the skeleton condition");
  ge->add_option("--seed", ge_seed, "Sampling seed");
  ge->add_option("--out", ge_out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Plot losses and measure adherence for a run");
  fs::path ev_run;
  std::string ev_manifest, ev_corpus;
  std::uint64_t ev_seed = 0;
  ev->add_option("--run", ev_run, "Run directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--manifest", ev_manifest, "Manifest (default: from run.json)");
  ev->add_option("--corpus", ev_corpus, "Corpus directory (default: from run.json)");
  ev->add_option("--seed", ev_seed, "Sampling seed");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*mk) return cmd_make_corpus(mk_out, mk_clips, mk_seed, mk_motions, mk_bg);
    if (*cu) return cmd_curate(cu_corpus, cu_out, cu_threshold, cu_whole);
    if (*tr) return cmd_train(tr_config, tr_preset, tr_manifest, tr_corpus, tr_base, tr_out, tr_set);
    if (*ge) return cmd_generate(ge_ckpt, ge_prompt, ge_motion, ge_generator, ge_uncond, ge_seed, ge_out);
    if (*ev) return cmd_eval(ev_run, ev_manifest, ev_corpus, ev_seed);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "moco: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
