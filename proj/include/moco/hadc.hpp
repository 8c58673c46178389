// SPDX-License-Identifier: Apache-2.0
//
// Human-aware dynamic control: per-block weight predictors, gated fusion of
// structure features into the backbone stream, mask heads and the mask loss.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "moco/nn.hpp"

namespace moco::hadc {

/// concat(s, a_i) -> 2D -> D -> D -> 1 with GELU between, then sigmoid. Output (B, L, 1).
struct WeightPredictor {
  Mlp3 mlp;
  Var operator()(const Var& s, const Var& a_i) const;
};

WeightPredictor make_weight_predictor(ParameterSet& params, const std::string& prefix, std::size_t width, Rng& rng);

/// a_i + w * s with w (B, L, 1) broadcast over the channel axis.
Var fuse(const Var& a_i, const Var& s, const Var& w);

/// Per-position MLP 1 -> D -> D -> C', nearest upsample by `upsample`
/// spatially, then a 3x3x3 convolution C' -> C. Output (B, F, C, H, W).
struct MaskHead {
  Mlp3 mlp;
  Var conv_weight;  // (27 * C', C)
  Var conv_bias;    // (C)
  std::size_t upsample = 1;

  /// `w` is (B, L, 1) with L = F' * H' * W' for grid = (F', H', W').
  Var operator()(const Var& w, const std::array<std::size_t, 3>& grid) const;
};

MaskHead make_mask_head(ParameterSet& params, const std::string& prefix, std::size_t width, std::size_t hidden_channels,
                        std::size_t latent_channels, std::size_t upsample, Rng& rng);

/// Sum over heads of the per-element mean squared error against m.
Var loss_mask(const std::vector<Var>& predictions, const Var& m);

struct Hadc {
  std::vector<WeightPredictor> predictors;  // P^k
  std::vector<MaskHead> heads;              // U^k
};

/// Registers hadc/P_k/<k>/... and hadc/U_k/<k>/... for k in [0, n).
Hadc make_hadc(ParameterSet& params, std::size_t n, std::size_t width, std::size_t hidden_channels,
               std::size_t latent_channels, std::size_t upsample, Rng& rng);

}  // namespace moco::hadc
