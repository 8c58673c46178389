// SPDX-License-Identifier: Apache-2.0
#include "moco/structure.hpp"

#include <stdexcept>

namespace moco::structure {

namespace {

bool has_prefix(const std::string& s, const std::string& p) { return s.compare(0, p.size(), p) == 0; }

}  // namespace

StructureBranch::StructureBranch(const diffusion::Backbone& backbone, std::size_t n, ParameterSet& params,
                                 const std::string& prefix) {
  if (n == 0 || n > backbone.blocks().size()) {
    throw std::invalid_argument("structure branch size must lie in [1, block_count]");
  }
  const auto& src = backbone.patch_embed();
  embed_.weight = params.add(prefix + "/embed/weight", src.weight.value());
  embed_.bias = params.add(prefix + "/embed/bias", src.bias.value());
  const std::size_t D = backbone.config().width;
  for (std::size_t k = 0; k < n; ++k) {
    const std::string p = prefix + "/blocks/" + std::to_string(k);
    blocks_.push_back(diffusion::copy_dit_block(params, p, backbone.blocks()[k], true));
    Linear inj;
    inj.weight = params.add(p + "/injection/weight", Tensor({D, D}, 0.0));
    inj.bias = params.add(p + "/injection/bias", Tensor({D}, 0.0));
    injections_.push_back(inj);
  }
}

void StructureBranch::reset_from(const diffusion::Backbone& backbone) {
  embed_.weight.mutable_value() = backbone.patch_embed().weight.value();
  embed_.bias.mutable_value() = backbone.patch_embed().bias.value();
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    auto dst = diffusion::block_parameters(blocks_[k]);
    auto src = diffusion::block_parameters(const_cast<diffusion::DitBlock&>(backbone.blocks()[k]));
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->mutable_value() = src[i]->value();
    injections_[k].weight.mutable_value().fill(0.0);
    injections_[k].bias.mutable_value().fill(0.0);
  }
}

StructureFeatures StructureBranch::encode(const diffusion::Backbone& backbone, const Var& skeleton_latent,
                                          const diffusion::TextEmbedding& text, const Var& temb) const {
  const Shape& l = skeleton_latent.shape();
  Var h = diffusion::add_per_item(backbone.embed_with(embed_, backbone.tokenize(skeleton_latent), l), temb);
  StructureFeatures out;
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    h = blocks_[k].forward(h, text, backbone.config().heads);
    out.per_block.push_back(injections_[k](h));
  }
  return out;
}

StructureFeatures encode_structure(const StructureBranch& branch, const diffusion::Backbone& backbone,
                                   const diffusion::Vae& vae, const Tensor& skeleton_video,
                                   const diffusion::TextEmbedding& text, const std::vector<std::size_t>& t) {
  const Var latent = constant(vae.encode(skeleton_video));
  return branch.encode(backbone, latent, text, backbone.time_embedding(t));
}

ParameterPartition freeze_plan(const ParameterSet& params) {
  ParameterPartition part;
  for (const auto& [name, var] : params.items()) {
    if (has_prefix(name, "backbone/") || has_prefix(name, "text/") || has_prefix(name, "vae/")) {
      part.frozen.push_back(name);
    } else if (has_prefix(name, "structure_branch/") || has_prefix(name, "hadc/")) {
      part.trainable.push_back(name);
    } else {
      throw std::invalid_argument("parameter outside the known namespaces: " + name);
    }
  }
  return part;
}

void apply_partition(ParameterSet& params, const ParameterPartition& partition) {
  for (const auto& n : partition.frozen) params.at(n).set_requires_grad(false);
  for (const auto& n : partition.trainable) params.at(n).set_requires_grad(true);
}

}  // namespace moco::structure
