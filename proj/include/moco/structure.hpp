// SPDX-License-Identifier: Apache-2.0
//
// Structure branch: trainable copies of the first N backbone blocks that turn
// the skeleton latent into per-block guidance features, and the freeze plan
// that splits model parameters into frozen and trainable sets.
#pragma once

#include <string>
#include <vector>

#include "moco/diffusion.hpp"

namespace moco::structure {

struct StructureFeatures {
  std::vector<Var> per_block;  // N entries, each (B, L, D), after the injection projection
};

class StructureBranch {
 public:
  StructureBranch() = default;
  /// Copies the backbone's patch embedding and first `n` blocks; injections start at zero.
  StructureBranch(const diffusion::Backbone& backbone, std::size_t n, ParameterSet& params,
                  const std::string& prefix = "structure_branch");

  std::size_t size() const { return blocks_.size(); }

  /// Recopies the backbone's current embedding and block weights and zeroes the injections.
  void reset_from(const diffusion::Backbone& backbone);

  /// Runs the branch on an encoded skeleton latent (B, F, C, H, W) with the
  /// backbone's timestep embedding `temb` (B, D).
  StructureFeatures encode(const diffusion::Backbone& backbone, const Var& skeleton_latent,
                           const diffusion::TextEmbedding& text, const Var& temb) const;

  const std::vector<diffusion::DitBlock>& blocks() const { return blocks_; }
  const std::vector<Linear>& injections() const { return injections_; }
  const Linear& embed() const { return embed_; }

 private:
  Linear embed_;
  std::vector<diffusion::DitBlock> blocks_;
  std::vector<Linear> injections_;
};

/// vae_encode of the skeleton video (B, T, H, W, 3) followed by the branch.
StructureFeatures encode_structure(const StructureBranch& branch, const diffusion::Backbone& backbone,
                                   const diffusion::Vae& vae, const Tensor& skeleton_video,
                                   const diffusion::TextEmbedding& text, const std::vector<std::size_t>& t);

struct ParameterPartition {
  std::vector<std::string> frozen;
  std::vector<std::string> trainable;
};

/// Frozen: backbone/, text/, vae/. Trainable: structure_branch/, hadc/.
/// Throws std::invalid_argument for a parameter outside these namespaces.
ParameterPartition freeze_plan(const ParameterSet& params);
/// Sets requires_grad according to the partition.
void apply_partition(ParameterSet& params, const ParameterPartition& partition);

}  // namespace moco::structure
