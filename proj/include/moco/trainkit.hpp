// SPDX-License-Identifier: Apache-2.0
//
// Training objective, configuration, synthetic corpus, data loading, the
// optimizer loop with the freeze plan, checkpoints and evaluation metrics.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "moco/curation.hpp"
#include "moco/model.hpp"
#include "moco/motion.hpp"
#include "moco/track.hpp"

namespace moco::trainkit {

class NoData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(const std::string& what, std::string batch) : std::runtime_error(what), batch_id(std::move(batch)) {}
  std::string batch_id;
};

class InvalidConfig : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------- objective

struct LossWeights {
  double lambda_m = 0.001;
  double lambda_track = 0.01;

  void validate() const;
};

struct LossComponents {
  double diffusion = 0.0;
  double mask = 0.0;
  double track = 0.0;
};

/// diffusion + lambda_m * mask + lambda_track * track; zero weights drop their term.
double total_loss(const LossComponents& c, const LossWeights& w);
/// Differentiable form of total_loss; null terms are absent.
Var combine(const Var& l_d, const Var* l_m, const Var* l_track, const LossWeights& w);

constexpr double kMinTrackAlphaBar = 1e-6;

struct TrackingLoss {
  Var loss;  // scalar; zero when skipped
  bool skipped = false;
};

/// Clean-latent estimate from the noise prediction, differentiable decode,
/// soft tracking of prediction and ground truth from the same queries, and
/// the tracking loss. z_t and eps_hat hold one item (1, F, C, H, W);
/// gt_video is (T, H, W, 3). `gt_tracks` short-cuts tracking the ground truth.
TrackingLoss tracking_grad_path(const Var& z_t, const Var& eps_hat, std::size_t t,
                                const diffusion::NoiseSchedule& schedule, const diffusion::Vae& vae,
                                const Tensor& gt_video, const Tensor& queries,
                                const track::TrackerOptions& options = {}, const Tensor* gt_tracks = nullptr);

// ---------------------------------------------------------------- config

struct TrainConfig {
  // optimization
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double grad_clip = 1.0;  // global norm; 0 disables
  std::size_t batch_size = 4;
  std::size_t steps = 1200;  // branch steps; with pretrain_steps the desk budget is 2000
  std::uint64_t seed = 0;
  std::size_t checkpoint_interval = 500;
  // base pretraining of the backbone before branch training
  std::size_t pretrain_steps = 800;
  double pretrain_learning_rate = 3e-3;
  // geometry
  std::size_t frame_height = 64;
  std::size_t frame_width = 48;
  std::size_t frames = 16;
  // model
  std::size_t branch_blocks = 8;
  std::size_t block_count = 8;
  std::size_t width = 32;
  std::size_t heads = 2;
  std::size_t mlp_ratio = 2;
  std::size_t dit_patch = 1;
  std::size_t mask_channels = 4;
  std::string vae_mode = "learned_small";
  std::size_t vae_channels = 64;
  std::size_t patch_t = 4;
  std::size_t patch_h = 8;
  std::size_t patch_w = 8;
  bool structure_enabled = true;
  bool hadc_enabled = true;
  // diffusion
  std::size_t diffusion_steps = 50;
  double beta_min = 0.002;
  double beta_max = 0.4;
  // objective
  double lambda_m = 0.001;
  double lambda_track = 0.01;
  bool track_loss_enabled = true;
  std::size_t track_queries = 4;
  std::size_t track_every = 1;

  /// Desk-scale defaults.
  static TrainConfig desk();
  /// Published full-scale values (720x480, 20k iterations, lr 1e-5).
  static TrainConfig paper();

  /// Throws InvalidConfig.
  void validate() const;
  LossWeights loss_weights() const { return {lambda_m, lambda_track}; }
  ModelConfig model_config() const;
  diffusion::NoiseSchedule schedule() const;

  /// Flat key=value lines, doubles printed with 17 significant digits.
  std::string to_text() const;
  static TrainConfig from_text(const std::string& text);
};

TrainConfig read_config(const std::filesystem::path& path);
void write_config(const std::filesystem::path& path, const TrainConfig& config);

// ---------------------------------------------------------------- corpus

struct CorpusOptions {
  std::size_t frames = 16;
  std::size_t height = 64;
  std::size_t width = 48;
  std::uint64_t background_seed = 7;
  std::vector<motion::MotionId> motions{motion::MotionId::walk, motion::MotionId::run, motion::MotionId::jump};
};

/// Joints tracked as query points, fixed for every clip.
const std::vector<std::size_t>& query_joints();

struct RenderedClip {
  std::string prompt;
  motion::KeypointSequence3D keypoints;
  Tensor points2d;  // (T, K, 2) pixels
  Tensor skeleton;  // (T, H, W, 3)
  Tensor mask;      // (T, H, W, 3), binary
  Tensor video;     // (T, H, W, 3)
};

/// Renders a motion at the corpus geometry. The tint follows the colour word of the prompt.
RenderedClip render_clip(const std::string& prompt, motion::MotionId motion, std::uint64_t motion_seed,
                         const CorpusOptions& options);

/// Renders given 3D keypoints at the corpus geometry.
RenderedClip render_keypoints(const std::string& prompt, const motion::KeypointSequence3D& keypoints,
                              const CorpusOptions& options);

/// First procedural motion named by a verb form in the prompt.
std::optional<motion::MotionId> motion_for_prompt(const std::string& prompt);

/// Writes clip_XXXX directories with prompt, keypoints, skeleton, mask,
/// video and ground-truth tracks. Returns the clip ids. Throws io::IOError
/// when out_dir cannot be written.
std::vector<std::string> make_synthetic_corpus(std::size_t n_clips, std::uint64_t seed,
                                               const std::filesystem::path& out_dir,
                                               const CorpusOptions& options = {});

// ---------------------------------------------------------------- data

struct ClipData {
  std::string id;
  std::string prompt;
  Tensor video;     // (T, H, W, 3)
  Tensor skeleton;  // (T, H, W, 3)
  Tensor mask;      // (T, H, W, 3)
  Tensor joint_tracks;  // (Q, T, 2) normalized projected joints
  Tensor queries;   // (Q, 2) pixels at frame 0
  Tensor root_path; // (T, 2) normalized projected root joint
  // filled by encode_dataset
  Tensor latent, skeleton_latent, mask_latent;  // (1, F, C, H, W)
  Tensor gt_tracks;  // soft tracks of the video over the first track_queries queries
};

struct Dataset {
  std::vector<ClipData> clips;
};

/// Loads the accepted clips of a manifest from corpus_dir (default: the
/// manifest's directory). Throws NoData when none are accepted.
Dataset load_dataset(const std::filesystem::path& manifest, const std::filesystem::path& corpus_dir = {});
/// Loads every clip directory of a corpus without filtering.
Dataset load_corpus(const std::filesystem::path& corpus_dir);
ClipData load_clip(const std::filesystem::path& clip_dir, const std::string& id);

/// Fits a learned_small autoencoder on the clips, then fills latents and ground-truth tracks.
void encode_dataset(Dataset& data, MocoModel& model, std::size_t track_queries, bool fit_vae);

// ---------------------------------------------------------------- training

struct StepLog {
  std::size_t step = 0;  // 1-based, counted across phases
  std::string phase;     // "base" or "branch"
  double total = 0.0;
  LossComponents components;
  bool track_skipped = false;
  std::string batch;  // clip ids joined with '+'
};

/// AdamW over a fixed list of parameters.
class AdamW {
 public:
  AdamW(std::vector<Var> params, double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8);
  void step();
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  double lr_, wd_, b1_, b2_, eps_;
  std::size_t t_ = 0;
};

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // metrics.csv and checkpoints
  std::function<void(const StepLog&)> on_step;
  std::size_t first_step = 1;  // step counter offset
};

/// Trains backbone/ on the noise loss with text conditioning only, then
/// recopies the backbone into the structure branch.
std::vector<StepLog> pretrain_base(const TrainConfig& config, MocoModel& model, const Dataset& data,
                                   const TrainOptions& options = {});

/// Trains the freeze plan's trainable partition on the combined loss.
/// Throws NoData for an empty dataset and NonFiniteLoss (after writing
/// nonfinite_batch.json to out_dir) on a non-finite loss.
std::vector<StepLog> train(const TrainConfig& config, MocoModel& model, const Dataset& data,
                           const TrainOptions& options = {});

struct RunResult {
  std::unique_ptr<MocoModel> model;
  std::vector<StepLog> log;  // base then branch steps
};

/// Builds the model, fits the autoencoder on both datasets, pretrains the
/// backbone for pretrain_steps on `base` (or `data` when absent), then runs
/// `steps` branch-training steps on `data`. Writes config.txt, metrics.csv
/// and checkpoints when out_dir is set.
RunResult run_training(const TrainConfig& config, Dataset& data, Dataset* base, const TrainOptions& options = {});

/// Checkpoint metadata: format version, config echo and schedule.
nlohmann::json checkpoint_meta(const TrainConfig& config);
void save_checkpoint(const std::filesystem::path& path, const MocoModel& model, const TrainConfig& config);
/// Rebuilds the model from the config echo and loads every parameter.
std::unique_ptr<MocoModel> load_checkpoint(const std::filesystem::path& path, TrainConfig* config_out = nullptr);

std::string metrics_header();
std::string metrics_line(const StepLog& log);

// ---------------------------------------------------------------- evaluation

/// Samples a clip (T, H, W, 3) for a prompt, optionally conditioned on a skeleton video.
Tensor generate_video(const MocoModel& model, const TrainConfig& config, const std::string& prompt,
                      const Tensor* skeleton_video, std::uint64_t seed,
                      diffusion::SamplerMode mode = diffusion::SamplerMode::deterministic);

/// Per-frame mean over queries of |track(t) - track(0)| in normalized units.
std::vector<double> mean_tracked_displacement(const Tensor& video, const Tensor& queries);
/// Per-frame |root(t) - root(0)| of a (T, 2) path.
std::vector<double> root_displacement(const Tensor& root_path);
/// Sum over frames of the mean consecutive-frame tracked displacement.
double total_tracked_motion(const Tensor& video, const Tensor& queries);

double pearson(const std::vector<double>& a, const std::vector<double>& b);

/// Mean over blocks and probe steps of w^k inside the token-downsampled mask
/// divided by the mean outside.
double mask_gate_ratio(const MocoModel& model, const TrainConfig& config, const ClipData& clip);

struct EvalSummary {
  double final_loss = 0.0;    // mean total over the last 100 logged steps
  double early_loss = 0.0;    // mean total over steps 6..15
  double adherence_r = 0.0;   // pooled Pearson over clips and frames
  double mask_gate = 0.0;     // mean over clips
  std::size_t clips = 0;
};

std::vector<StepLog> read_metrics(const std::filesystem::path& path);
double early_loss(const std::vector<StepLog>& log);
double final_loss(const std::vector<StepLog>& log);

/// Loads run_dir/checkpoint.arr, encodes the clips with its autoencoder and
/// writes loss_curve.png, adherence.png and metrics_summary.json into run_dir.
EvalSummary evaluate_run(const std::filesystem::path& run_dir, Dataset data, std::uint64_t seed = 0);

/// Line plot of one or more series into a width x height RGB image.
void plot_series(const std::filesystem::path& path, const std::vector<std::vector<double>>& series,
                 std::size_t width = 320, std::size_t height = 200, bool log_y = false);
/// Scatter plot of (x, y) pairs.
void plot_scatter(const std::filesystem::path& path, const std::vector<double>& x, const std::vector<double>& y,
                  std::size_t width = 240, std::size_t height = 240);

}  // namespace moco::trainkit
