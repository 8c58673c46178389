// SPDX-License-Identifier: Apache-2.0
//
// The full conditional video model: text encoder, autoencoder, frozen
// backbone, structure branch and human-aware dynamic control, sharing one
// parameter set with checkpoint namespaces backbone/, text/, vae/,
// structure_branch/ and hadc/.
#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "moco/diffusion.hpp"
#include "moco/hadc.hpp"
#include "moco/io.hpp"
#include "moco/structure.hpp"

namespace moco {

struct ModelConfig {
  diffusion::BackboneConfig backbone;
  std::size_t branch_blocks = 8;  // N
  std::size_t mask_channels = 4;  // C' inside the mask heads
  bool structure_enabled = true;
  bool hadc_enabled = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ModelOutput {
  Var eps_hat;
  std::vector<Var> weights;     // w^k, (B, L, 1); empty without HADC or skeleton
  std::vector<Var> mask_preds;  // U^k(w^k), latent-shaped
};

class MocoModel {
 public:
  explicit MocoModel(const ModelConfig& config);
  MocoModel(const MocoModel&) = delete;
  MocoModel& operator=(const MocoModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const diffusion::TextEncoder& text_encoder() const { return text_; }
  diffusion::Vae& vae() { return vae_; }
  const diffusion::Vae& vae() const { return vae_; }
  diffusion::Backbone& backbone() { return backbone_; }
  const diffusion::Backbone& backbone() const { return backbone_; }
  bool has_branch() const { return branch_.has_value(); }
  structure::StructureBranch& branch() { return *branch_; }
  const hadc::Hadc& hadc() const { return hadc_; }

  /// Noise prediction; the structure branch runs only when `skeleton_latent` is given.
  ModelOutput forward(const Var& z_t, const std::vector<std::size_t>& t, const diffusion::TextEmbedding& text,
                      const Tensor* skeleton_latent) const;

  /// Gradient-free predictor for the samplers, for a single prompt.
  diffusion::NoisePredictor predictor(const std::string& prompt, std::optional<Tensor> skeleton_latent) const;

  /// Recopies the backbone into the structure branch (after base pretraining).
  void reset_branch();

  /// Writes every parameter plus `meta` to a container.
  void save(const std::filesystem::path& path, const nlohmann::json& meta) const;
  /// Loads parameter values by name; throws io::IOError on missing names or shape mismatch.
  void load_parameters(const io::ArrayContainer& container);

 private:
  ModelConfig config_;
  ParameterSet params_;
  diffusion::TextEncoder text_;
  diffusion::Backbone backbone_;
  diffusion::Vae vae_;
  std::optional<structure::StructureBranch> branch_;
  hadc::Hadc hadc_;
};

}  // namespace moco
