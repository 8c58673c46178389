// SPDX-License-Identifier: Apache-2.0
#include "moco/hadc.hpp"

#include <cmath>

namespace moco::hadc {

Var WeightPredictor::operator()(const Var& s, const Var& a_i) const {
  require_same_shape(s.shape(), a_i.shape(), "predict_weights");
  return ops::sigmoid(mlp(ops::concat_last(s, a_i)));
}

WeightPredictor make_weight_predictor(ParameterSet& params, const std::string& prefix, std::size_t width, Rng& rng) {
  return WeightPredictor{make_mlp3(params, prefix, 2 * width, width, 1, rng)};
}

Var fuse(const Var& a_i, const Var& s, const Var& w) {
  require_same_shape(a_i.shape(), s.shape(), "fuse");
  return ops::add(a_i, ops::mul_gate(s, w));
}

Var MaskHead::operator()(const Var& w, const std::array<std::size_t, 3>& grid) const {
  const Shape& sw = w.shape();
  const std::size_t F = grid[0], H = grid[1], W = grid[2];
  if (sw.size() != 3 || sw[2] != 1 || sw[1] != F * H * W) {
    throw ShapeError("mask head: weights " + shape_str(sw) + " do not factor over grid (" + std::to_string(F) + ", " +
                     std::to_string(H) + ", " + std::to_string(W) + ")");
  }
  const std::size_t B = sw[0], Ch = mlp.l3.bias.size(), C = conv_bias.size(), p = upsample;
  const Var feat = mlp(w);  // (B, L, C')
  const std::size_t Hu = H * p, Wu = W * p;
  std::vector<std::size_t> up(B * F * Hu * Wu * Ch);
  std::size_t i = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t y = 0; y < Hu; ++y)
        for (std::size_t x = 0; x < Wu; ++x)
          for (std::size_t c = 0; c < Ch; ++c) up[i++] = (((b * F + f) * H + y / p) * W + x / p) * Ch + c;
  const Var grid_feat = ops::gather(feat, std::move(up), {B, F, Hu, Wu, Ch});
  const Var conv = ops::conv3d_same(grid_feat, conv_weight, conv_bias);  // (B, F, Hu, Wu, C)
  std::vector<std::size_t> perm(B * F * C * Hu * Wu);
  i = 0;
  for (std::size_t bf = 0; bf < B * F; ++bf)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < Hu; ++y)
        for (std::size_t x = 0; x < Wu; ++x) perm[i++] = ((bf * Hu + y) * Wu + x) * C + c;
  return ops::gather(conv, std::move(perm), {B, F, C, Hu, Wu});
}

MaskHead make_mask_head(ParameterSet& params, const std::string& prefix, std::size_t width, std::size_t hidden_channels,
                        std::size_t latent_channels, std::size_t upsample, Rng& rng) {
  if (upsample == 0 || hidden_channels == 0) throw std::invalid_argument("mask head sizes must be positive");
  MaskHead h;
  h.mlp = make_mlp3(params, prefix + "/mlp", 1, width, hidden_channels, rng);
  h.conv_weight = params.add(prefix + "/conv/weight",
                             randn({27 * hidden_channels, latent_channels}, rng, 1.0 / std::sqrt(27.0 * hidden_channels)));
  h.conv_bias = params.add(prefix + "/conv/bias", Tensor({latent_channels}, 0.0));
  h.upsample = upsample;
  return h;
}

Var loss_mask(const std::vector<Var>& predictions, const Var& m) {
  if (predictions.empty()) return constant(Tensor::scalar(0.0));
  std::vector<Var> terms;
  for (const auto& p : predictions) terms.push_back(ops::mse(p, m));
  return ops::add_scalars(terms);
}

Hadc make_hadc(ParameterSet& params, std::size_t n, std::size_t width, std::size_t hidden_channels,
               std::size_t latent_channels, std::size_t upsample, Rng& rng) {
  Hadc h;
  for (std::size_t k = 0; k < n; ++k) {
    h.predictors.push_back(make_weight_predictor(params, "hadc/P_k/" + std::to_string(k), width, rng));
    h.heads.push_back(make_mask_head(params, "hadc/U_k/" + std::to_string(k), width, hidden_channels, latent_channels,
                                     upsample, rng));
  }
  return h;
}

}  // namespace moco::hadc
