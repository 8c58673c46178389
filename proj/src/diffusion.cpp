// SPDX-License-Identifier: Apache-2.0
#include "moco/diffusion.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

namespace moco::diffusion {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<std::size_t> invert(const std::vector<std::size_t>& perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return inv;
}

Tensor apply_index(const Tensor& x, const std::vector<std::size_t>& index, Shape shape) {
  Tensor out(std::move(shape));
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = x[index[i]];
  return out;
}

/// Replicates a constant (L, D) table across the batch.
Tensor tile_batch(const Tensor& table, std::size_t B) {
  Tensor out(Shape{B, table.dim(0), table.dim(1)});
  for (std::size_t b = 0; b < B; ++b) std::copy(table.ptr(), table.ptr() + table.size(), out.ptr() + b * table.size());
  return out;
}

}  // namespace

// ---------------------------------------------------------------- schedule

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  NoiseSchedule s;
  s.steps = betas.size();
  s.betas = std::move(betas);
  s.alpha_bars.resize(s.steps);
  double prod = 1.0;
  for (std::size_t i = 0; i < s.steps; ++i) {
    prod *= 1.0 - s.betas[i];
    s.alpha_bars[i] = prod;
  }
  return s;
}

void NoiseSchedule::validate() const {
  if (steps < 2 || betas.size() != steps || alpha_bars.size() != steps) throw InvalidSchedule("schedule needs T >= 2 consistent arrays");
  for (std::size_t i = 0; i < steps; ++i) {
    if (!(betas[i] > 0.0 && betas[i] < 1.0)) throw InvalidSchedule("beta outside (0, 1)");
    if (i > 0 && !(betas[i] > betas[i - 1])) throw InvalidSchedule("betas must be strictly increasing");
  }
}

NoiseSchedule build_schedule(std::size_t steps, double beta_min, double beta_max) {
  if (steps < 2) throw InvalidSchedule("steps must be >= 2");
  if (!(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0)) {
    throw InvalidSchedule("need 0 < beta_min < beta_max < 1");
  }
  std::vector<double> betas(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    betas[i] = beta_min + (beta_max - beta_min) * static_cast<double>(i) / static_cast<double>(steps - 1);
  }
  NoiseSchedule s = NoiseSchedule::from_betas(std::move(betas));
  s.validate();
  return s;
}

Tensor forward_noise(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& schedule) {
  require_same_shape(z0.shape(), eps.shape(), "forward_noise");
  if (t < 1 || t > schedule.steps) throw std::out_of_range("forward_noise: t outside [1, T]");
  const double ab = schedule.alpha_bar(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  Tensor out(z0.shape());
  for (std::size_t i = 0; i < z0.size(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

// ---------------------------------------------------------------- text

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::vector<std::uint32_t> token_ids(const std::string& text) {
  std::vector<std::uint32_t> ids;
  for (const auto& w : split_words(text)) {
    std::uint32_t h = 2166136261u;
    for (unsigned char c : w) {
      h ^= c;
      h *= 16777619u;
    }
    ids.push_back(h % static_cast<std::uint32_t>(kTextBuckets));
  }
  if (ids.empty()) ids.push_back(kNullToken);
  return ids;
}

TextEncoder::TextEncoder(ParameterSet& params, std::size_t width, Rng& rng, const std::string& prefix)
    : width_(width) {
  table_ = params.add(prefix + "/table", randn({kTextBuckets + 1, width}, rng, 1.0), false);
}

TextEmbedding TextEncoder::encode(const std::vector<std::string>& texts) const {
  const std::size_t B = texts.size();
  std::vector<std::vector<std::uint32_t>> ids;
  std::size_t T = 0;
  for (const auto& s : texts) {
    ids.push_back(token_ids(s));
    T = std::max(T, ids.back().size());
  }
  const std::size_t D = width_;
  TextEmbedding out;
  Tensor tok(Shape{B, T, D}, 0.0);
  std::vector<std::size_t> rows(B * T, std::numeric_limits<std::size_t>::max());
  for (std::size_t b = 0; b < B; ++b) {
    out.lengths.push_back(ids[b].size());
    for (std::size_t i = 0; i < ids[b].size(); ++i) {
      rows[b * T + i] = ids[b][i];
      std::copy_n(table_.value().ptr() + ids[b][i] * D, D, tok.ptr() + (b * T + i) * D);
    }
  }
  out.tokens = make_op(std::move(tok), {table_}, [rows, D](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r] == std::numeric_limits<std::size_t>::max()) continue;
      for (std::size_t c = 0; c < D; ++c) g[rows[r] * D + c] += self.grad[r * D + c];
    }
  });
  return out;
}

// ---------------------------------------------------------------- autoencoder

std::string to_string(VaeMode mode) { return mode == VaeMode::identity_patchify ? "identity_patchify" : "learned_small"; }

VaeMode parse_vae_mode(const std::string& s) {
  if (s == "identity_patchify") return VaeMode::identity_patchify;
  if (s == "learned_small") return VaeMode::learned_small;
  throw std::invalid_argument("unknown vae_mode '" + s + "'");
}

Vae::Vae(const VaeConfig& config, ParameterSet& params, const std::string& prefix) : config_(config) {
  if (config.patch_t == 0 || config.patch_h == 0 || config.patch_w == 0 || config.video_channels == 0) {
    throw std::invalid_argument("vae patch sizes must be positive");
  }
  if (config.mode == VaeMode::learned_small) {
    const std::size_t P = config.patch_dim(), C = config.learned_channels;
    if (C < config.video_channels || C > P) throw std::invalid_argument("learned_channels must lie in [3, patch_dim]");
    basis_ = params.add(prefix + "/basis", Tensor({C, P}, 0.0), false);
    mean_ = params.add(prefix + "/mean", Tensor({P}, 0.0), false);
  }
}

Shape Vae::latent_shape(const Shape& v) const {
  if (v.size() != 5 || v[4] != config_.video_channels) throw ShapeError("video must be (B, T, H, W, 3), got " + shape_str(v));
  if (v[1] % config_.patch_t || v[2] % config_.patch_h || v[3] % config_.patch_w) {
    throw ShapeError("video dims " + shape_str(v) + " not divisible by the patch sizes");
  }
  return {v[0], v[1] / config_.patch_t, config_.latent_channels(), v[2] / config_.patch_h, v[3] / config_.patch_w};
}

Shape Vae::video_shape(const Shape& l) const {
  if (l.size() != 5 || l[2] != config_.latent_channels()) throw ShapeError("latent must be (B, F, C, H, W), got " + shape_str(l));
  return {l[0], l[1] * config_.patch_t, l[3] * config_.patch_h, l[4] * config_.patch_w, config_.video_channels};
}

std::vector<std::size_t> Vae::patch_index(const Shape& v) const {
  const std::size_t B = v[0], T = v[1], H = v[2], W = v[3], Cv = v[4];
  const std::size_t pt = config_.patch_t, ph = config_.patch_h, pw = config_.patch_w;
  const std::size_t F = T / pt, Hp = H / ph, Wp = W / pw, P = config_.patch_dim();
  std::vector<std::size_t> idx(B * F * Hp * Wp * P);
  std::size_t i = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t y = 0; y < Hp; ++y)
        for (std::size_t x = 0; x < Wp; ++x)
          for (std::size_t dt = 0; dt < pt; ++dt)
            for (std::size_t dy = 0; dy < ph; ++dy)
              for (std::size_t dx = 0; dx < pw; ++dx)
                for (std::size_t c = 0; c < Cv; ++c)
                  idx[i++] = (((b * T + f * pt + dt) * H + y * ph + dy) * W + x * pw + dx) * Cv + c;
  return idx;
}

std::vector<std::size_t> Vae::channels_last_to_latent(const Shape& l) const {
  // out (B, F, C, H, W) reads from channels-last (B, F, H, W, C).
  const std::size_t B = l[0], F = l[1], C = l[2], H = l[3], W = l[4];
  std::vector<std::size_t> idx(B * F * C * H * W);
  std::size_t i = 0;
  for (std::size_t bf = 0; bf < B * F; ++bf)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) idx[i++] = ((bf * H + y) * W + x) * C + c;
  return idx;
}

std::vector<std::size_t> Vae::latent_to_channels_last(const Shape& l) const { return invert(channels_last_to_latent(l)); }

Tensor Vae::encode(const Tensor& video) const {
  const Shape ls = latent_shape(video.shape());
  const auto pidx = patch_index(video.shape());
  const Shape cl{ls[0], ls[1], ls[3], ls[4], config_.patch_dim()};
  Tensor patches = apply_index(video, pidx, cl);
  if (config_.mode == VaeMode::identity_patchify) return apply_index(patches, channels_last_to_latent(ls), ls);
  const std::size_t N = ls[0] * ls[1] * ls[3] * ls[4], P = config_.patch_dim(), C = config_.learned_channels;
  Eigen::Map<RowMat> X(patches.ptr(), N, P);
  X.rowwise() -= Eigen::Map<const Eigen::RowVectorXd>(mean_.value().ptr(), P);
  Tensor z(Shape{ls[0], ls[1], ls[3], ls[4], C});
  Eigen::Map<RowMat>(z.ptr(), N, C).noalias() = X * Eigen::Map<const RowMat>(basis_.value().ptr(), C, P).transpose();
  return apply_index(z, channels_last_to_latent(ls), ls);
}

Tensor Vae::decode(const Tensor& latent) const {
  NoGradGuard guard;
  return decode_var(Var(latent)).value();
}

Var Vae::decode_var(const Var& latent) const {
  const Shape& ls = latent.shape();
  const Shape vs = video_shape(ls);
  const Shape cl{ls[0], ls[1], ls[3], ls[4], ls[2]};
  Var z_cl = ops::gather(latent, latent_to_channels_last(ls), cl);
  Var patches = z_cl;
  if (config_.mode == VaeMode::learned_small) {
    patches = ops::add_bias(ops::matmul(z_cl, basis_), mean_);
  }
  return ops::gather(patches, invert(patch_index(vs)), vs);
}

void Vae::fit(const std::vector<Tensor>& videos) {
  if (config_.mode != VaeMode::learned_small) return;
  const std::size_t P = config_.patch_dim(), C = config_.learned_channels, Cv = config_.video_channels;
  std::vector<double> rows;
  for (const auto& v : videos) {
    const auto pidx = patch_index(v.shape());
    for (std::size_t i : pidx) rows.push_back(v[i]);
  }
  const std::size_t N = rows.size() / P;
  if (N == 0) throw std::invalid_argument("Vae::fit needs at least one video");
  Eigen::Map<RowMat> X(rows.data(), N, P);
  // Per-channel constant mean, so constant clips stay inside the basis span.
  Eigen::RowVectorXd col_mean = X.colwise().mean();
  Eigen::RowVectorXd mu(P);
  for (std::size_t c = 0; c < Cv; ++c) {
    double m = 0.0;
    for (std::size_t p = c; p < P; p += Cv) m += col_mean(static_cast<Eigen::Index>(p));
    m /= static_cast<double>(P / Cv);
    for (std::size_t p = c; p < P; p += Cv) mu(static_cast<Eigen::Index>(p)) = m;
  }

  // Per-channel constant patterns, orthonormal by construction.
  RowMat basis(C, P);
  basis.setZero();
  for (std::size_t c = 0; c < Cv; ++c) {
    for (std::size_t p = c; p < P; p += Cv) basis(c, p) = 1.0;
    basis.row(c) /= basis.row(c).norm();
  }
  RowMat centered = X.rowwise() - mu;
  // Remove the constant directions, then take the leading principal axes of the residual.
  RowMat fixed = basis.topRows(Cv);
  centered -= (centered * fixed.transpose()) * fixed;
  const RowMat cov = (centered.transpose() * centered) / static_cast<double>(std::max<std::size_t>(N, 2) - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  const auto& vecs = solver.eigenvectors();  // ascending eigenvalues
  for (std::size_t j = 0; j < C - Cv; ++j) {
    Eigen::RowVectorXd axis = vecs.col(static_cast<Eigen::Index>(P - 1 - j)).transpose();
    // Sign convention: largest-magnitude entry positive, for reproducible bases.
    Eigen::Index arg = 0;
    axis.cwiseAbs().maxCoeff(&arg);
    if (axis(arg) < 0) axis = -axis;
    basis.row(static_cast<Eigen::Index>(Cv + j)) = axis;
  }
  std::copy(basis.data(), basis.data() + C * P, basis_.mutable_value().ptr());
  std::copy(mu.data(), mu.data() + P, mean_.mutable_value().ptr());
}

double psnr(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "psnr");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = s / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

// ---------------------------------------------------------------- DiT

void BackboneConfig::validate() const {
  if (block_count == 0) throw std::invalid_argument("block_count must be positive");
  if (width == 0 || heads == 0 || width % heads != 0) throw std::invalid_argument("width must be divisible by heads");
  if (dit_patch == 0) throw std::invalid_argument("dit_patch must be positive");
}

Var DitBlock::forward(const Var& h, const TextEmbedding& text, std::size_t heads) const {
  Var x = ops::layer_norm(h);
  Var out = ops::add(h, o(ops::attention(q(x), k(x), v(x), heads)));
  x = ops::layer_norm(out);
  out = ops::add(out, co(ops::attention(cq(x), ck(text.tokens), cv(text.tokens), heads, &text.lengths)));
  x = ops::layer_norm(out);
  return ops::add(out, fc2(ops::gelu(fc1(x))));
}

DitBlock make_dit_block(ParameterSet& params, const std::string& prefix, std::size_t width, std::size_t hidden,
                        Rng& rng, bool trainable) {
  DitBlock b;
  auto lin = [&](const std::string& name, std::size_t in, std::size_t out) {
    Linear l = make_linear(params, prefix + "/" + name, in, out, rng);
    l.weight.set_requires_grad(trainable);
    l.bias.set_requires_grad(trainable);
    return l;
  };
  b.q = lin("attn/q", width, width);
  b.k = lin("attn/k", width, width);
  b.v = lin("attn/v", width, width);
  b.o = lin("attn/o", width, width);
  b.cq = lin("cross/q", width, width);
  b.ck = lin("cross/k", width, width);
  b.cv = lin("cross/v", width, width);
  b.co = lin("cross/o", width, width);
  b.fc1 = lin("mlp/fc1", width, hidden);
  b.fc2 = lin("mlp/fc2", hidden, width);
  return b;
}

DitBlock copy_dit_block(ParameterSet& params, const std::string& prefix, const DitBlock& src, bool trainable) {
  DitBlock b;
  auto copy = [&](const std::string& name, const Linear& s) {
    Linear l;
    l.weight = params.add(prefix + "/" + name + "/weight", s.weight.value(), trainable);
    l.bias = params.add(prefix + "/" + name + "/bias", s.bias.value(), trainable);
    return l;
  };
  b.q = copy("attn/q", src.q);
  b.k = copy("attn/k", src.k);
  b.v = copy("attn/v", src.v);
  b.o = copy("attn/o", src.o);
  b.cq = copy("cross/q", src.cq);
  b.ck = copy("cross/k", src.ck);
  b.cv = copy("cross/v", src.cv);
  b.co = copy("cross/o", src.co);
  b.fc1 = copy("mlp/fc1", src.fc1);
  b.fc2 = copy("mlp/fc2", src.fc2);
  return b;
}

std::vector<Var*> block_parameters(DitBlock& b) {
  std::vector<Var*> out;
  for (Linear* l : {&b.q, &b.k, &b.v, &b.o, &b.cq, &b.ck, &b.cv, &b.co, &b.fc1, &b.fc2}) {
    out.push_back(&l->weight);
    out.push_back(&l->bias);
  }
  return out;
}

Var add_per_item(const Var& h, const Var& v) {
  const Shape& sh = h.shape();
  if (sh.size() != 3 || v.shape() != Shape{sh[0], sh[2]}) {
    throw ShapeError("add_per_item: h " + shape_str(sh) + " v " + shape_str(v.shape()));
  }
  const std::size_t B = sh[0], L = sh[1], D = sh[2];
  std::vector<std::size_t> idx(B * L * D);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t d = 0; d < D; ++d) idx[(b * L + l) * D + d] = b * D + d;
  return ops::add(h, ops::gather(v, std::move(idx), sh));
}

Tensor position_table(std::size_t F, std::size_t H, std::size_t W, std::size_t width) {
  // Width split across the three axes in even-sized chunks; leftovers stay zero.
  const std::size_t chunk = (width / 3) & ~std::size_t{1};
  Tensor table(Shape{F * H * W, width}, 0.0);
  auto fill = [&](std::size_t row, std::size_t offset, double pos) {
    const std::size_t half = chunk / 2;
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(100.0, -static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(half, 1)));
      table[row * width + offset + 2 * i] = std::sin(pos * freq);
      table[row * width + offset + 2 * i + 1] = std::cos(pos * freq);
    }
  };
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t row = (f * H + y) * W + x;
        fill(row, 0, static_cast<double>(f));
        fill(row, chunk, static_cast<double>(y));
        fill(row, 2 * chunk, static_cast<double>(x));
      }
  return table;
}

Tensor timestep_features(const std::vector<std::size_t>& t, std::size_t width) {
  const std::size_t half = width / 2;
  Tensor out(Shape{t.size(), width}, 0.0);
  for (std::size_t b = 0; b < t.size(); ++b)
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(1000.0, -static_cast<double>(i) / static_cast<double>(half));
      out[b * width + i] = std::cos(static_cast<double>(t[b]) * freq);
      out[b * width + half + i] = std::sin(static_cast<double>(t[b]) * freq);
    }
  return out;
}

Backbone::Backbone(const BackboneConfig& config, ParameterSet& params, Rng& rng, const std::string& prefix)
    : config_(config) {
  config_.validate();
  const std::size_t D = config_.width;
  patch_embed_ = make_linear(params, prefix + "/patch_embed", token_dim(), D, rng);
  t_fc1_ = make_linear(params, prefix + "/time/fc1", D, D, rng);
  t_fc2_ = make_linear(params, prefix + "/time/fc2", D, D, rng);
  for (std::size_t k = 0; k < config_.block_count; ++k) {
    blocks_.push_back(make_dit_block(params, prefix + "/blocks/" + std::to_string(k), D, D * config_.mlp_ratio, rng, true));
  }
  head_ = make_linear(params, prefix + "/head", D, token_dim(), rng);
  head_.weight.mutable_value().fill(0.0);
  skip_ = make_linear(params, prefix + "/skip", D, 1, rng);
  skip_.weight.mutable_value().fill(0.0);
}

std::size_t Backbone::token_dim() const {
  return config_.vae.latent_channels() * config_.dit_patch * config_.dit_patch;
}

std::array<std::size_t, 3> Backbone::token_grid(const Shape& l) const {
  const std::size_t p = config_.dit_patch;
  if (l.size() != 5 || l[2] != config_.vae.latent_channels() || l[3] % p || l[4] % p) {
    throw ShapeError("latent " + shape_str(l) + " incompatible with the backbone");
  }
  return {l[1], l[3] / p, l[4] / p};
}

namespace {

std::vector<std::size_t> token_index(const Shape& l, std::size_t p) {
  // tokens (B, L, C * p * p) read from latent (B, F, C, H, W); feature order (c, py, px).
  const std::size_t B = l[0], F = l[1], C = l[2], H = l[3], W = l[4];
  const std::size_t Hp = H / p, Wp = W / p;
  std::vector<std::size_t> idx(B * F * C * H * W);
  std::size_t i = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t y = 0; y < Hp; ++y)
        for (std::size_t x = 0; x < Wp; ++x)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t py = 0; py < p; ++py)
              for (std::size_t px = 0; px < p; ++px)
                idx[i++] = (((b * F + f) * C + c) * H + y * p + py) * W + x * p + px;
  return idx;
}

}  // namespace

Var Backbone::tokenize(const Var& latent) const {
  const Shape& l = latent.shape();
  const auto g = token_grid(l);
  return ops::gather(latent, token_index(l, config_.dit_patch), {l[0], g[0] * g[1] * g[2], token_dim()});
}

Var Backbone::untokenize(const Var& tokens, const Shape& l) const {
  const auto g = token_grid(l);
  if (tokens.shape() != Shape{l[0], g[0] * g[1] * g[2], token_dim()}) throw ShapeError("untokenize: token shape mismatch");
  return ops::gather(tokens, invert(token_index(l, config_.dit_patch)), l);
}

Var Backbone::embed(const Var& tokens, const Shape& l) const { return embed_with(patch_embed_, tokens, l); }

Var Backbone::embed_with(const Linear& proj, const Var& tokens, const Shape& l) const {
  const auto g = token_grid(l);
  const Tensor pos = tile_batch(position_table(g[0], g[1], g[2], config_.width), l[0]);
  return ops::add(proj(tokens), constant(pos));
}

Var Backbone::time_embedding(const std::vector<std::size_t>& t) const {
  return t_fc2_(ops::gelu(t_fc1_(constant(timestep_features(t, config_.width)))));
}

Var Backbone::predict_noise(const Var& z_t, const std::vector<std::size_t>& t, const TextEmbedding& text,
                            const BlockHook* hook) const {
  const Shape& l = z_t.shape();
  if (t.size() != l.at(0)) throw ShapeError("predict_noise: one timestep per batch item required");
  if (text.tokens.shape().at(0) != l[0] || text.tokens.shape().at(2) != config_.width) {
    throw ShapeError("predict_noise: text embedding " + shape_str(text.tokens.shape()) + " does not match the batch/width");
  }
  Var tokens = tokenize(z_t);
  Var temb = time_embedding(t);
  Var h = add_per_item(embed(tokens, l), temb);
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    h = blocks_[k].forward(h, text, config_.heads);
    if (hook) h = (*hook)(k, h);
  }
  Var out = head_(ops::layer_norm(h));
  if (config_.output_skip) {
    const std::size_t B = l[0], L = tokens.shape()[1];
    std::vector<std::size_t> idx(B * L);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < L; ++i) idx[b * L + i] = b;
    Var gamma = ops::gather(skip_(temb), std::move(idx), {B, L, 1});
    out = ops::add(out, ops::mul_gate(tokens, gamma));
  }
  return untokenize(out, l);
}

std::vector<Var*> Backbone::output_projections() {
  std::vector<Var*> out;
  for (auto& b : blocks_)
    for (Linear* l : {&b.o, &b.co, &b.fc2}) {
      out.push_back(&l->weight);
      out.push_back(&l->bias);
    }
  out.push_back(&head_.weight);
  out.push_back(&head_.bias);
  out.push_back(&skip_.weight);
  out.push_back(&skip_.bias);
  return out;
}

Var loss_noise(const Var& eps_hat, const Var& eps) { return ops::mse(eps_hat, eps); }

// ---------------------------------------------------------------- samplers

Tensor ddpm_mean(const Tensor& z_t, const Tensor& eps_hat, std::size_t t, const NoiseSchedule& s) {
  require_same_shape(z_t.shape(), eps_hat.shape(), "ddpm_mean");
  const double beta = s.beta(t), alpha = 1.0 - beta, ab = s.alpha_bar(t);
  const double c1 = 1.0 / std::sqrt(alpha), c2 = beta / std::sqrt(1.0 - ab);
  Tensor out(z_t.shape());
  for (std::size_t i = 0; i < z_t.size(); ++i) out[i] = c1 * (z_t[i] - c2 * eps_hat[i]);
  return out;
}

double ddpm_variance(std::size_t t, const NoiseSchedule& s) {
  return (1.0 - s.alpha_bar_or_one(t - 1)) / (1.0 - s.alpha_bar(t)) * s.beta(t);
}

Tensor predict_x0(const Tensor& z_t, const Tensor& eps_hat, std::size_t t, const NoiseSchedule& s) {
  require_same_shape(z_t.shape(), eps_hat.shape(), "predict_x0");
  const double ab = s.alpha_bar(t);
  const double a = 1.0 / std::sqrt(ab), b = std::sqrt(1.0 - ab);
  Tensor out(z_t.shape());
  for (std::size_t i = 0; i < z_t.size(); ++i) out[i] = a * (z_t[i] - b * eps_hat[i]);
  return out;
}

Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, std::size_t t, const NoiseSchedule& s) {
  const Tensor x0 = predict_x0(z_t, eps_hat, t, s);
  const double abp = s.alpha_bar_or_one(t - 1);
  const double a = std::sqrt(abp), b = std::sqrt(1.0 - abp);
  Tensor out(z_t.shape());
  for (std::size_t i = 0; i < z_t.size(); ++i) out[i] = a * x0[i] + b * eps_hat[i];
  return out;
}

Tensor sample_latent(const Tensor& z_T, const NoisePredictor& predictor, const NoiseSchedule& schedule,
                     SamplerMode mode, Rng& rng) {
  NoGradGuard guard;
  Tensor z = z_T;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t t = schedule.steps; t >= 1; --t) {
    const Tensor eps_hat = predictor(z, t);
    if (mode == SamplerMode::deterministic) {
      z = ddim_step(z, eps_hat, t, schedule);
    } else {
      z = ddpm_mean(z, eps_hat, t, schedule);
      if (t > 1) {
        const double sigma = std::sqrt(ddpm_variance(t, schedule));
        for (auto& v : z.storage()) v += sigma * normal(rng);
      }
    }
  }
  return z;
}

Tensor sample(const Tensor& z_T, const NoisePredictor& predictor, const NoiseSchedule& schedule, SamplerMode mode,
              const Vae& vae, Rng& rng) {
  Tensor video = vae.decode(sample_latent(z_T, predictor, schedule, mode, rng));
  for (auto& v : video.storage()) v = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
  return video;
}

}  // namespace moco::diffusion
