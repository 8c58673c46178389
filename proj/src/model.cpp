// SPDX-License-Identifier: Apache-2.0
#include "moco/model.hpp"

#include <stdexcept>

namespace moco {

void ModelConfig::validate() const {
  backbone.validate();
  if (structure_enabled && (branch_blocks == 0 || branch_blocks > backbone.block_count)) {
    throw std::invalid_argument("branch_blocks must lie in [1, block_count]");
  }
  if (mask_channels == 0) throw std::invalid_argument("mask_channels must be positive");
}

namespace {

ModelConfig validated(const ModelConfig& c) {
  c.validate();
  return c;
}

}  // namespace

MocoModel::MocoModel(const ModelConfig& config) : config_(validated(config)) {
  Rng rng(config_.seed);
  text_ = diffusion::TextEncoder(params_, config_.backbone.width, rng);
  backbone_ = diffusion::Backbone(config_.backbone, params_, rng);
  vae_ = diffusion::Vae(config_.backbone.vae, params_);
  if (config_.structure_enabled) {
    branch_.emplace(backbone_, config_.branch_blocks, params_);
    if (config_.hadc_enabled) {
      hadc_ = hadc::make_hadc(params_, config_.branch_blocks, config_.backbone.width, config_.mask_channels,
                              config_.backbone.vae.latent_channels(), config_.backbone.dit_patch, rng);
    }
  }
}

ModelOutput MocoModel::forward(const Var& z_t, const std::vector<std::size_t>& t, const diffusion::TextEmbedding& text,
                               const Tensor* skeleton_latent) const {
  ModelOutput out;
  if (!branch_ || skeleton_latent == nullptr) {
    out.eps_hat = backbone_.predict_noise(z_t, t, text);
    return out;
  }
  require_same_shape(skeleton_latent->shape(), z_t.shape(), "skeleton latent");
  const auto feats = branch_->encode(backbone_, constant(*skeleton_latent), text, backbone_.time_embedding(t));
  const auto grid = backbone_.token_grid(z_t.shape());
  const bool gated = config_.hadc_enabled;
  diffusion::Backbone::BlockHook hook = [&](std::size_t k, const Var& a_i) -> Var {
    if (k >= feats.per_block.size()) return a_i;
    const Var& s = feats.per_block[k];
    if (!gated) return ops::add(a_i, s);
    Var w = hadc_.predictors[k](s, a_i);
    out.mask_preds.push_back(hadc_.heads[k](w, grid));
    out.weights.push_back(w);
    return hadc::fuse(a_i, s, w);
  };
  out.eps_hat = backbone_.predict_noise(z_t, t, text, &hook);
  return out;
}

diffusion::NoisePredictor MocoModel::predictor(const std::string& prompt, std::optional<Tensor> skeleton_latent) const {
  auto text = std::make_shared<diffusion::TextEmbedding>();
  {
    NoGradGuard guard;
    *text = text_.encode({prompt});
  }
  auto skel = std::make_shared<std::optional<Tensor>>(std::move(skeleton_latent));
  return [this, text, skel](const Tensor& z_t, std::size_t t) {
    NoGradGuard guard;
    const Tensor* s = skel->has_value() ? &**skel : nullptr;
    return forward(constant(z_t), {t}, *text, s).eps_hat.value();
  };
}

void MocoModel::reset_branch() {
  if (branch_) branch_->reset_from(backbone_);
}

void MocoModel::save(const std::filesystem::path& path, const nlohmann::json& meta) const {
  io::ArrayContainer c;
  c.meta = meta;
  for (const auto& [name, var] : params_.items()) c.put(name, var.value());
  io::write_container(path, c);
}

void MocoModel::load_parameters(const io::ArrayContainer& container) {
  for (auto& [name, var] : params_.items()) {
    const Tensor t = container.tensor(name);
    if (t.shape() != var.shape()) {
      throw io::IOError("checkpoint parameter " + name + " has shape " + shape_str(t.shape()) + ", expected " +
                        shape_str(var.shape()));
    }
    var.mutable_value() = t;
  }
}

}  // namespace moco
