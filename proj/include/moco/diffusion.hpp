// SPDX-License-Identifier: Apache-2.0
//
// Appearance backbone: noise schedule, forward process, hashed text encoder,
// video autoencoder, the DiT noise predictor, the noise loss and samplers.
//
// Latent clips are (B, F, C, H, W). Videos are (B, T, H, W, 3) in [0, 1].
// Diffusion steps are 1-based: t in [1, T].
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "moco/nn.hpp"

namespace moco::diffusion {

class InvalidSchedule : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct NoiseSchedule {
  std::size_t steps = 0;
  std::vector<double> betas;       // betas[t - 1]
  std::vector<double> alpha_bars;  // alpha_bars[t - 1]

  double beta(std::size_t t) const { return betas.at(t - 1); }
  double alpha_bar(std::size_t t) const { return alpha_bars.at(t - 1); }
  /// alpha_bar(0) is 1 by convention.
  double alpha_bar_or_one(std::size_t t) const { return t == 0 ? 1.0 : alpha_bars.at(t - 1); }

  /// Builds from explicit betas without the monotonicity checks (synthetic schedules).
  static NoiseSchedule from_betas(std::vector<double> betas);
  /// Throws InvalidSchedule unless 0 < beta_1 < ... < beta_T < 1.
  void validate() const;
};

/// Linear betas from beta_min to beta_max; alpha_bars are the running product.
NoiseSchedule build_schedule(std::size_t steps, double beta_min, double beta_max);

/// sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
Tensor forward_noise(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& schedule);

// ---------------------------------------------------------------- text

constexpr std::size_t kTextBuckets = 4096;
constexpr std::uint32_t kNullToken = 4096;

/// Lowercased words split on whitespace and punctuation.
std::vector<std::string> split_words(const std::string& text);
/// FNV-1a hash of each word modulo kTextBuckets; empty text gives {kNullToken}.
std::vector<std::uint32_t> token_ids(const std::string& text);

struct TextEmbedding {
  Var tokens;                        // (B, T_tok, D); rows at or past lengths[b] are zero
  std::vector<std::size_t> lengths;  // valid tokens per item
};

class TextEncoder {
 public:
  TextEncoder() = default;
  /// Registers "<prefix>/table" of shape (kTextBuckets + 1, width).
  TextEncoder(ParameterSet& params, std::size_t width, Rng& rng, const std::string& prefix = "text");
  TextEmbedding encode(const std::vector<std::string>& texts) const;
  std::size_t width() const { return width_; }

 private:
  Var table_;
  std::size_t width_ = 0;
};

// ---------------------------------------------------------------- autoencoder

enum class VaeMode { identity_patchify, learned_small };

std::string to_string(VaeMode mode);
VaeMode parse_vae_mode(const std::string& s);

struct VaeConfig {
  VaeMode mode = VaeMode::identity_patchify;
  std::size_t patch_t = 4;
  std::size_t patch_h = 8;
  std::size_t patch_w = 8;
  std::size_t video_channels = 3;
  std::size_t learned_channels = 64;  // latent channels in learned_small mode

  std::size_t patch_dim() const { return patch_t * patch_h * patch_w * video_channels; }
  std::size_t latent_channels() const { return mode == VaeMode::identity_patchify ? patch_dim() : learned_channels; }
};

/// identity_patchify folds each (patch_t, patch_h, patch_w, 3) block into the
/// channel axis, channel index ((dt * patch_h + dy) * patch_w + dx) * 3 + c.
/// learned_small projects those patch vectors onto an orthonormal basis fit by
/// PCA; the three per-channel constant patterns are always in the basis.
class Vae {
 public:
  Vae() = default;
  /// learned_small registers frozen "<prefix>/basis" (C, patch_dim) and "<prefix>/mean" (patch_dim).
  Vae(const VaeConfig& config, ParameterSet& params, const std::string& prefix = "vae");

  const VaeConfig& config() const { return config_; }
  Shape latent_shape(const Shape& video_shape) const;
  Shape video_shape(const Shape& latent_shape) const;

  Tensor encode(const Tensor& video) const;
  Tensor decode(const Tensor& latent) const;
  /// Differentiable decode.
  Var decode_var(const Var& latent) const;

  /// Fits the learned_small basis to patches of the given videos.
  void fit(const std::vector<Tensor>& videos);

 private:
  /// (B, T, H, W, 3) -> patches (B, F, H', W', P) as a flat index map.
  std::vector<std::size_t> patch_index(const Shape& video_shape) const;
  std::vector<std::size_t> latent_to_channels_last(const Shape& latent_shape) const;
  std::vector<std::size_t> channels_last_to_latent(const Shape& latent_shape) const;

  VaeConfig config_;
  Var basis_;
  Var mean_;
};

/// Peak signal-to-noise ratio in dB for signals in [0, 1].
double psnr(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------- DiT

struct BackboneConfig {
  std::size_t block_count = 8;
  std::size_t width = 32;
  std::size_t heads = 2;
  std::size_t mlp_ratio = 2;
  std::size_t dit_patch = 1;  // spatial patch on the latent grid
  bool output_skip = true;    // learned gamma(t) * z_t added to the head output
  VaeConfig vae;

  void validate() const;
};

struct DitBlock {
  Linear q, k, v, o;      // self-attention
  Linear cq, ck, cv, co;  // cross-attention to text
  Linear fc1, fc2;        // MLP

  /// Pre-norm residual block: self-attention, cross-attention, MLP.
  Var forward(const Var& h, const TextEmbedding& text, std::size_t heads) const;
};

DitBlock make_dit_block(ParameterSet& params, const std::string& prefix, std::size_t width, std::size_t hidden,
                        Rng& rng, bool trainable);
/// New parameters under `prefix` holding copies of `src`'s current values.
DitBlock copy_dit_block(ParameterSet& params, const std::string& prefix, const DitBlock& src, bool trainable);
std::vector<Var*> block_parameters(DitBlock& b);

/// (B, L, D) + v (B, D) broadcast over L.
Var add_per_item(const Var& h, const Var& v);
/// Fixed 3D sinusoidal position table (L, D) for an (F, H, W) token grid.
Tensor position_table(std::size_t F, std::size_t H, std::size_t W, std::size_t width);
/// Sinusoidal features (B, D) of integer steps.
Tensor timestep_features(const std::vector<std::size_t>& t, std::size_t width);

class Backbone {
 public:
  /// Called with the k-th block's output a_i^k (0-based k); returns a_o^k.
  using BlockHook = std::function<Var(std::size_t k, const Var& a_i)>;

  Backbone() = default;
  Backbone(const BackboneConfig& config, ParameterSet& params, Rng& rng, const std::string& prefix = "backbone");

  const BackboneConfig& config() const { return config_; }
  std::size_t token_dim() const;
  /// Token grid (F', H', W') for a latent shape.
  std::array<std::size_t, 3> token_grid(const Shape& latent_shape) const;

  /// Latent (B, F, C, H, W) to tokens (B, L, C * p * p), token order (f, y, x).
  Var tokenize(const Var& latent) const;
  Var untokenize(const Var& tokens, const Shape& latent_shape) const;
  /// Patch embedding plus fixed position table.
  Var embed(const Var& tokens, const Shape& latent_shape) const;
  Var embed_with(const Linear& proj, const Var& tokens, const Shape& latent_shape) const;
  /// (B, D) timestep embedding.
  Var time_embedding(const std::vector<std::size_t>& t) const;

  Var predict_noise(const Var& z_t, const std::vector<std::size_t>& t, const TextEmbedding& text,
                    const BlockHook* hook = nullptr) const;

  std::vector<DitBlock>& blocks() { return blocks_; }
  const std::vector<DitBlock>& blocks() const { return blocks_; }
  const Linear& patch_embed() const { return patch_embed_; }
  /// Output projections whose zeroing makes predict_noise identically zero.
  std::vector<Var*> output_projections();

 private:
  BackboneConfig config_;
  Linear patch_embed_;
  Linear t_fc1_, t_fc2_;
  std::vector<DitBlock> blocks_;
  Linear head_;
  Linear skip_;  // (D -> 1), zero init
};

/// Mean squared error over all elements.
Var loss_noise(const Var& eps_hat, const Var& eps);

// ---------------------------------------------------------------- samplers

enum class SamplerMode { ddpm_ancestral, deterministic };

/// Noise prediction at step t for the current latent.
using NoisePredictor = std::function<Tensor(const Tensor& z_t, std::size_t t)>;

/// Posterior mean of z_{t-1} given z_t and the noise estimate.
Tensor ddpm_mean(const Tensor& z_t, const Tensor& eps_hat, std::size_t t, const NoiseSchedule& s);
/// Posterior variance (1 - abar_{t-1}) / (1 - abar_t) * beta_t.
double ddpm_variance(std::size_t t, const NoiseSchedule& s);
/// Eta = 0 update to z_{t-1}.
Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, std::size_t t, const NoiseSchedule& s);
/// Clean-latent estimate (z_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
Tensor predict_x0(const Tensor& z_t, const Tensor& eps_hat, std::size_t t, const NoiseSchedule& s);

/// Runs all T reverse steps from z_T and returns the final latent.
Tensor sample_latent(const Tensor& z_T, const NoisePredictor& predictor, const NoiseSchedule& schedule,
                     SamplerMode mode, Rng& rng);

/// sample_latent followed by decode and clamping to [0, 1].
Tensor sample(const Tensor& z_T, const NoisePredictor& predictor, const NoiseSchedule& schedule, SamplerMode mode,
              const Vae& vae, Rng& rng);

}  // namespace moco::diffusion
