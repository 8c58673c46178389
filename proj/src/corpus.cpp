// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <random>

#include "moco/render.hpp"
#include "moco/trainkit.hpp"

namespace moco::trainkit {
namespace {

namespace fs = std::filesystem;

struct Colour {
  const char* word;
  std::array<double, 3> rgb;
};

const std::vector<Colour>& colours() {
  static const std::vector<Colour> c{{"red", {0.85, 0.2, 0.2}},   {"blue", {0.2, 0.35, 0.9}},
                                     {"green", {0.2, 0.75, 0.3}}, {"yellow", {0.9, 0.85, 0.2}},
                                     {"orange", {0.95, 0.55, 0.15}}, {"purple", {0.6, 0.25, 0.8}}};
  return c;
}

const std::vector<std::string> kSubjects{"A man", "A woman", "A person", "A boy", "A girl", "An athlete"};
const std::vector<std::string> kGarments{"shirt", "coat", "jacket", "dress", "hoodie"};

std::string verb_phrase(motion::MotionId id) {
  switch (id) {
    case motion::MotionId::walk: return "walks across the plaza";
    case motion::MotionId::run: return "runs along the beach";
    case motion::MotionId::jump: return "jumps in place on a street";
    case motion::MotionId::wave: return "waves a hand in a park";
    case motion::MotionId::squat: return "squats down in a gym";
    case motion::MotionId::spin: return "spins around on a stage";
  }
  return "moves";
}

std::array<double, 3> tint_for(const std::string& prompt) {
  std::string lower = prompt;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (const auto& c : colours())
    if (lower.find(c.word) != std::string::npos) return c.rgb;
  return {0.6, 0.6, 0.6};
}

void put_video(const fs::path& path, const Tensor& frames) {
  io::ArrayContainer c;
  c.meta["kind"] = "video";
  c.put_u8("frames", frames.shape(), io::to_u8(frames.data()));
  io::write_container(path, c);
}

Tensor get_video(const fs::path& path) { return io::read_container(path).tensor("frames"); }

}  // namespace

const std::vector<std::size_t>& query_joints() {
  // pelvis, hips, spine1, knees, ankles, neck, head, shoulders, elbows, wrists
  static const std::vector<std::size_t> q{0, 1, 2, 3, 4, 5, 7, 8, 12, 15, 16, 17, 18, 19, 20, 21};
  return q;
}

std::optional<motion::MotionId> motion_for_prompt(const std::string& prompt) {
  static const std::vector<std::pair<std::string, motion::MotionId>> forms{
      {"walk", motion::MotionId::walk},   {"walks", motion::MotionId::walk},   {"walking", motion::MotionId::walk},
      {"walked", motion::MotionId::walk}, {"run", motion::MotionId::run},      {"runs", motion::MotionId::run},
      {"running", motion::MotionId::run}, {"ran", motion::MotionId::run},      {"jump", motion::MotionId::jump},
      {"jumps", motion::MotionId::jump},  {"jumping", motion::MotionId::jump}, {"jumped", motion::MotionId::jump},
      {"wave", motion::MotionId::wave},   {"waves", motion::MotionId::wave},   {"waving", motion::MotionId::wave},
      {"waved", motion::MotionId::wave},  {"squat", motion::MotionId::squat},  {"squats", motion::MotionId::squat},
      {"squatting", motion::MotionId::squat}, {"squatted", motion::MotionId::squat},
      {"spin", motion::MotionId::spin},   {"spins", motion::MotionId::spin},   {"spinning", motion::MotionId::spin},
      {"spun", motion::MotionId::spin}};
  std::string word;
  auto match = [&]() -> std::optional<motion::MotionId> {
    for (const auto& [form, id] : forms)
      if (word == form) return id;
    return std::nullopt;
  };
  for (char ch : prompt + " ") {
    if (std::isalpha(static_cast<unsigned char>(ch))) {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
      continue;
    }
    if (auto id = match()) return id;
    word.clear();
  }
  return std::nullopt;
}

RenderedClip render_clip(const std::string& prompt, motion::MotionId id, std::uint64_t motion_seed,
                         const CorpusOptions& options) {
  motion::MotionPrompt mp{prompt, motion::to_string(id), static_cast<double>(options.frames) / motion::kDefaultFps,
                          motion_seed};
  return render_keypoints(prompt, motion::synthesize_motion(mp, motion::SkeletonTopology::humanml3d()), options);
}

RenderedClip render_keypoints(const std::string& prompt, const motion::KeypointSequence3D& keypoints,
                              const CorpusOptions& options) {
  const auto topo = motion::SkeletonTopology::humanml3d();
  RenderedClip clip;
  clip.prompt = prompt;
  clip.keypoints = keypoints;
  const auto cam = render::fit_camera(clip.keypoints, options.width, options.height);
  clip.points2d = render::project(clip.keypoints, cam);
  const auto depth = render::joint_depths(clip.keypoints);
  const auto skel = render::rasterize_skeleton(clip.points2d, topo, cam, &depth);
  const auto mask = render::rasterize_mask(clip.points2d, topo, cam);
  clip.skeleton = skel.frames;
  clip.mask = render::to_three_channels(mask.frames);
  clip.video = render::compose_video(skel, mask, tint_for(prompt), options.background_seed);
  return clip;
}

std::vector<std::string> make_synthetic_corpus(std::size_t n_clips, std::uint64_t seed, const fs::path& out_dir,
                                               const CorpusOptions& options) {
  if (n_clips == 0) throw std::invalid_argument("make_synthetic_corpus: n_clips must be >= 1");
  if (options.motions.empty()) throw std::invalid_argument("make_synthetic_corpus: no motions");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw io::IOError("cannot create corpus directory " + out_dir.string());
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n_clips; ++i) {
    Rng rng(seed * 0x9E3779B97F4A7C15ULL + i);
    std::uniform_int_distribution<std::size_t> pick_s(0, kSubjects.size() - 1), pick_c(0, colours().size() - 1),
        pick_g(0, kGarments.size() - 1);
    const auto id = options.motions[i % options.motions.size()];
    const std::string colour = colours()[pick_c(rng)].word;
    const std::string article = std::string("aeiou").find(colour[0]) == std::string::npos ? " in a " : " in an ";
    const std::string prompt = kSubjects[pick_s(rng)] + article + colour + " " +
                               kGarments[pick_g(rng)] + " " + verb_phrase(id);
    const std::uint64_t motion_seed = rng();
    const auto clip = render_clip(prompt, id, motion_seed, options);

    char name[32];
    std::snprintf(name, sizeof name, "clip_%04zu", i);
    const fs::path dir = out_dir / name;
    fs::create_directories(dir, ec);
    if (ec) throw io::IOError("cannot create clip directory " + dir.string());
    io::write_text(dir / curation::ClipFiles::prompt, prompt + "\n");
    motion::write_keypoints(dir / curation::ClipFiles::keypoints3d, clip.keypoints);
    const std::size_t T = clip.keypoints.frames, K = clip.keypoints.joints;
    curation::Keypoints2D kp{Tensor(Shape{T, K, 2}), options.width, options.height};
    for (std::size_t j = 0; j < T * K; ++j) {
      kp.points[j * 2] = clip.points2d[j * 2] / static_cast<double>(options.width);
      kp.points[j * 2 + 1] = clip.points2d[j * 2 + 1] / static_cast<double>(options.height);
    }
    curation::write_keypoints2d(dir / curation::ClipFiles::keypoints2d, kp);
    put_video(dir / curation::ClipFiles::video, clip.video);
    put_video(dir / curation::ClipFiles::skeleton, clip.skeleton);
    put_video(dir / curation::ClipFiles::mask, clip.mask);
    const auto& qj = query_joints();
    track::TrajectorySet tracks;
    tracks.points = Tensor(Shape{qj.size(), T, 2});
    for (std::size_t q = 0; q < qj.size(); ++q)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < 2; ++c) tracks.points[(q * T + t) * 2 + c] = kp.points[(t * K + qj[q]) * 2 + c];
    track::write_trajectories(dir / curation::ClipFiles::tracks, tracks);
    ids.emplace_back(name);
  }
  return ids;
}

ClipData load_clip(const fs::path& dir, const std::string& id) {
  ClipData c;
  c.id = id;
  c.prompt = io::read_text(dir / curation::ClipFiles::prompt);
  while (!c.prompt.empty() && (c.prompt.back() == '\n' || c.prompt.back() == '\r')) c.prompt.pop_back();
  c.video = get_video(dir / curation::ClipFiles::video);
  c.skeleton = get_video(dir / curation::ClipFiles::skeleton);
  c.mask = get_video(dir / curation::ClipFiles::mask);
  const auto tracks = track::read_trajectories(dir / curation::ClipFiles::tracks);
  c.joint_tracks = tracks.points;
  const auto kp = curation::read_keypoints2d(dir / curation::ClipFiles::keypoints2d);
  const std::size_t T = kp.points.shape()[0], K = kp.points.shape()[1], Q = tracks.queries();
  c.queries = Tensor(Shape{Q, 2});
  for (std::size_t q = 0; q < Q; ++q) {
    c.queries[q * 2] = tracks.points[(q * T) * 2] * static_cast<double>(kp.width);
    c.queries[q * 2 + 1] = tracks.points[(q * T) * 2 + 1] * static_cast<double>(kp.height);
  }
  c.root_path = Tensor(Shape{T, 2});
  for (std::size_t t = 0; t < T; ++t) {
    c.root_path[t * 2] = kp.points[(t * K) * 2];
    c.root_path[t * 2 + 1] = kp.points[(t * K) * 2 + 1];
  }
  return c;
}

Dataset load_dataset(const fs::path& manifest, const fs::path& corpus_dir) {
  const auto records = curation::read_manifest(manifest);
  const fs::path root = corpus_dir.empty() ? manifest.parent_path() : corpus_dir;
  Dataset d;
  for (const auto& r : records) {
    if (!r.accepted) continue;
    d.clips.push_back(load_clip(root / r.clip_id, r.clip_id));
  }
  if (d.clips.empty()) throw NoData("manifest " + manifest.string() + " has no accepted clips");
  return d;
}

Dataset load_corpus(const fs::path& corpus_dir) {
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(corpus_dir))
    if (e.is_directory()) ids.push_back(e.path().filename().string());
  std::sort(ids.begin(), ids.end());
  Dataset d;
  for (const auto& id : ids) d.clips.push_back(load_clip(corpus_dir / id, id));
  return d;
}

void encode_dataset(Dataset& data, MocoModel& model, std::size_t track_queries, bool fit_vae) {
  auto with_batch = [](const Tensor& v) {
    Shape s{1};
    for (auto d : v.shape()) s.push_back(d);
    return v.reshaped(s);
  };
  if (fit_vae && model.config().backbone.vae.mode == diffusion::VaeMode::learned_small) {
    std::vector<Tensor> videos;
    for (const auto& c : data.clips) {
      videos.push_back(with_batch(c.video));
      videos.push_back(with_batch(c.skeleton));
      videos.push_back(with_batch(c.mask));
    }
    model.vae().fit(videos);
  }
  for (auto& c : data.clips) {
    c.latent = model.vae().encode(with_batch(c.video));
    c.skeleton_latent = model.vae().encode(with_batch(c.skeleton));
    c.mask_latent = model.vae().encode(with_batch(c.mask));
    const std::size_t q = std::min(track_queries, c.queries.shape()[0]);
    if (q == 0) {
      c.gt_tracks = Tensor();
      continue;
    }
    Tensor queries(Shape{q, 2});
    std::copy_n(c.queries.data().begin(), 2 * q, queries.storage().begin());
    NoGradGuard guard;
    c.gt_tracks = track::soft_track(constant(c.video), queries).value();
  }
}

}  // namespace moco::trainkit
