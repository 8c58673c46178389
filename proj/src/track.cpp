// SPDX-License-Identifier: Apache-2.0
#include "moco/track.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "json.hpp"
#include "moco/io.hpp"

namespace moco::track {
namespace {

constexpr double kNccEpsilon = 1e-8;
// Soft-argmax weights below this fraction of the total are skipped in backward.
constexpr double kWeightCutoff = 1e-16;

bool wants(const NodePtr& p) { return p && p->requires_grad; }

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_points(const Shape& s, const char* what) {
  if (s.size() != 3 || s[2] != 2 || s[0] == 0) throw ShapeError(std::string(what) + ": expected (Q, T_v, 2), got " + shape_str(s));
  if (s[1] < 2) throw InvalidLength(std::string(what) + ": need at least 2 frames");
}

/// Box sums of x and x^2 over (2r+1)^2 windows summed across channels, zero padded.
struct BoxStats {
  std::vector<double> sum, sum_sq;  // (H, W)
};

BoxStats box_stats(const double* frame, std::size_t H, std::size_t W, std::size_t C, std::size_t r) {
  // Integral images over the per-pixel channel sums.
  const std::size_t H1 = H + 1, W1 = W + 1;
  std::vector<double> s(H1 * W1, 0.0), s2(H1 * W1, 0.0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double a = 0.0, a2 = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double v = frame[(y * W + x) * C + c];
        a += v;
        a2 += v * v;
      }
      s[(y + 1) * W1 + x + 1] = a + s[y * W1 + x + 1] + s[(y + 1) * W1 + x] - s[y * W1 + x];
      s2[(y + 1) * W1 + x + 1] = a2 + s2[y * W1 + x + 1] + s2[(y + 1) * W1 + x] - s2[y * W1 + x];
    }
  BoxStats out{std::vector<double>(H * W), std::vector<double>(H * W)};
  const long R = static_cast<long>(r);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t y0 = static_cast<std::size_t>(std::max(0L, static_cast<long>(y) - R));
      const std::size_t x0 = static_cast<std::size_t>(std::max(0L, static_cast<long>(x) - R));
      const std::size_t y1 = std::min(H, y + r + 1), x1 = std::min(W, x + r + 1);
      auto rect = [&](const std::vector<double>& I) {
        return I[y1 * W1 + x1] - I[y0 * W1 + x1] - I[y1 * W1 + x0] + I[y0 * W1 + x0];
      };
      out.sum[y * W + x] = rect(s);
      out.sum_sq[y * W + x] = rect(s2);
    }
  return out;
}

/// Zero-padded patch (2r+1, 2r+1, C) centred on (cx, cy).
void extract_patch(const double* frame, std::size_t H, std::size_t W, std::size_t C, long cx, long cy, long r,
                   std::vector<double>& out) {
  std::size_t i = 0;
  for (long dy = -r; dy <= r; ++dy)
    for (long dx = -r; dx <= r; ++dx) {
      const long y = cy + dy, x = cx + dx;
      const bool in = y >= 0 && x >= 0 && y < static_cast<long>(H) && x < static_cast<long>(W);
      for (std::size_t c = 0; c < C; ++c, ++i) out[i] = in ? frame[(static_cast<std::size_t>(y) * W + x) * C + c] : 0.0;
    }
}

/// sum_i a_c[i] * frame_patch(x, y)[i] with a_c the centred template.
double dot_patch(const double* frame, std::size_t H, std::size_t W, std::size_t C, long cx, long cy, long r,
                 const std::vector<double>& a_c) {
  double s = 0.0;
  const long n = 2 * r + 1;
  for (long dy = -r; dy <= r; ++dy) {
    const long y = cy + dy;
    if (y < 0 || y >= static_cast<long>(H)) continue;
    const long xlo = std::max(0L, cx - r), xhi = std::min(static_cast<long>(W) - 1, cx + r);
    if (xlo > xhi) continue;
    const double* row = frame + (static_cast<std::size_t>(y) * W + xlo) * C;
    const double* tmpl = a_c.data() + ((dy + r) * n + (xlo - cx + r)) * C;
    const std::size_t len = static_cast<std::size_t>(xhi - xlo + 1) * C;
    for (std::size_t i = 0; i < len; ++i) s += row[i] * tmpl[i];
  }
  return s;
}

/// Adds scale * a_c into the gradient of the frame patch centred on (cx, cy).
void scatter_patch(double* grad, std::size_t H, std::size_t W, std::size_t C, long cx, long cy, long r,
                   const std::vector<double>& v, double scale) {
  const long n = 2 * r + 1;
  for (long dy = -r; dy <= r; ++dy) {
    const long y = cy + dy;
    if (y < 0 || y >= static_cast<long>(H)) continue;
    const long xlo = std::max(0L, cx - r), xhi = std::min(static_cast<long>(W) - 1, cx + r);
    if (xlo > xhi) continue;
    double* row = grad + (static_cast<std::size_t>(y) * W + xlo) * C;
    const double* src = v.data() + ((dy + r) * n + (xlo - cx + r)) * C;
    const std::size_t len = static_cast<std::size_t>(xhi - xlo + 1) * C;
    for (std::size_t i = 0; i < len; ++i) row[i] += scale * src[i];
  }
}

}  // namespace

void TrajectorySet::validate() const {
  check_points(points.shape(), "TrajectorySet");
  for (double v : points.data())
    if (!std::isfinite(v)) throw std::invalid_argument("TrajectorySet: non-finite coordinate");
}

std::vector<std::pair<std::size_t, std::size_t>> pair_set(std::size_t frames) {
  if (frames < 2) throw InvalidLength("pair_set: need at least 2 frames, got " + std::to_string(frames));
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(frames * (frames - 1));
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t u = 0; u < frames; ++u)
      if (t != u) out.emplace_back(t, u);
  return out;
}

Tensor displacement(const TrajectorySet& traj, std::size_t t, std::size_t t_prime) {
  check_points(traj.points.shape(), "displacement");
  const std::size_t Q = traj.queries(), T = traj.frames();
  if (t >= T || t_prime >= T) throw std::out_of_range("displacement: frame index out of range");
  Tensor d(Shape{Q, 2});
  for (std::size_t q = 0; q < Q; ++q)
    for (std::size_t c = 0; c < 2; ++c)
      d[q * 2 + c] = traj.points[(q * T + t_prime) * 2 + c] - traj.points[(q * T + t) * 2 + c];
  return d;
}

double pair_weight(std::size_t t, std::size_t t_prime) {
  const double gap = t > t_prime ? static_cast<double>(t - t_prime) : static_cast<double>(t_prime - t);
  return std::exp(gap / kDecayDivisor);
}

Var loss_track(const Var& gen, const Var& gt) {
  require_same_shape(gen.shape(), gt.shape(), "loss_track");
  check_points(gen.shape(), "loss_track");
  const std::size_t Q = gen.shape()[0], T = gen.shape()[1];
  const auto pairs = pair_set(T);
  double norm = 0.0;
  for (auto [t, u] : pairs) norm += pair_weight(t, u);
  const double per_entry = 1.0 / (2.0 * static_cast<double>(Q) * norm);
  const Tensor& a = gen.value();
  const Tensor& b = gt.value();
  auto residual = [T](const Tensor& x, const Tensor& y, std::size_t q, std::size_t t, std::size_t u, std::size_t c) {
    return (x[(q * T + u) * 2 + c] - x[(q * T + t) * 2 + c]) - (y[(q * T + u) * 2 + c] - y[(q * T + t) * 2 + c]);
  };
  double total = 0.0;
  for (auto [t, u] : pairs) {
    double mae = 0.0;
    for (std::size_t q = 0; q < Q; ++q)
      for (std::size_t c = 0; c < 2; ++c) mae += std::abs(residual(a, b, q, t, u, c));
    total += pair_weight(t, u) * mae;
  }
  return make_op(Tensor::scalar(total * per_entry), {gen, gt}, [pairs, Q, T, per_entry, residual](Node& self) {
    const auto& pg = self.parents[0];
    const auto& pt = self.parents[1];
    const double g = self.grad[0] * per_entry;
    Tensor d(pg->value.shape());
    for (auto [t, u] : pairs) {
      const double w = pair_weight(t, u) * g;
      for (std::size_t q = 0; q < Q; ++q)
        for (std::size_t c = 0; c < 2; ++c) {
          const double s = w * sign(residual(pg->value, pt->value, q, t, u, c));
          d[(q * T + u) * 2 + c] += s;
          d[(q * T + t) * 2 + c] -= s;
        }
    }
    if (wants(pg)) {
      auto& buf = pg->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) buf[i] += d[i];
    }
    if (wants(pt)) {
      auto& buf = pt->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) buf[i] -= d[i];
    }
  });
}

double loss_track(const TrajectorySet& gen, const TrajectorySet& gt) {
  NoGradGuard guard;
  return loss_track(constant(gen.points), constant(gt.points)).item();
}

Var soft_track(const Var& video, const Tensor& queries, const TrackerOptions& options) {
  const Shape& vs = video.shape();
  if (vs.size() != 4) throw ShapeError("soft_track: video must be (T, H, W, C), got " + shape_str(vs));
  if (queries.rank() != 2 || queries.shape()[1] != 2) throw ShapeError("soft_track: queries must be (Q, 2)");
  if (!(options.temperature > 0.0)) throw std::invalid_argument("soft_track: temperature must be positive");
  const std::size_t T = vs[0], H = vs[1], W = vs[2], C = vs[3], Q = queries.shape()[0];
  const long r = static_cast<long>(options.patch_radius);
  const std::size_t n = static_cast<std::size_t>((2 * r + 1) * (2 * r + 1)) * C;
  const double tau = options.temperature;
  std::vector<long> qx(Q), qy(Q);
  for (std::size_t q = 0; q < Q; ++q) {
    const double x = queries[q * 2], y = queries[q * 2 + 1];
    if (!std::isfinite(x) || !std::isfinite(y) || x < -0.5 || y < -0.5 || x >= static_cast<double>(W) - 0.5 ||
        y >= static_cast<double>(H) - 0.5) {
      throw InvalidQuery("soft_track: query (" + std::to_string(x) + ", " + std::to_string(y) + ") outside the frame");
    }
    qx[q] = std::lround(x);
    qy[q] = std::lround(y);
  }
  const double* v = video.value().ptr();
  const std::size_t frame_size = H * W * C, HW = H * W;
  std::vector<BoxStats> stats;
  stats.reserve(T);
  for (std::size_t t = 0; t < T; ++t) stats.push_back(box_stats(v + t * frame_size, H, W, C, options.patch_radius));

  // Per (q, t): softmax weights over positions and the NCC pieces needed by backward.
  struct Cell {
    std::vector<double> weight;  // (H * W)
    std::vector<double> cov;     // (H * W)
    double x = 0.0, y = 0.0;
  };
  std::vector<std::vector<double>> centred(Q, std::vector<double>(n));
  std::vector<double> template_var(Q);
  std::vector<Cell> cells(Q * T);
  Tensor out(Shape{Q, T, 2});
  const double dn = static_cast<double>(n);
  for (std::size_t q = 0; q < Q; ++q) {
    auto& a = centred[q];
    extract_patch(v, H, W, C, qx[q], qy[q], r, a);
    double mean = 0.0;
    for (double x : a) mean += x;
    mean /= dn;
    double va = 0.0;
    for (auto& x : a) {
      x -= mean;
      va += x * x;
    }
    template_var[q] = va;
    for (std::size_t t = 0; t < T; ++t) {
      Cell& cell = cells[q * T + t];
      cell.weight.resize(HW);
      cell.cov.resize(HW);
      const double* frame = v + t * frame_size;
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const std::size_t p = y * W + x;
          const double cov = dot_patch(frame, H, W, C, static_cast<long>(x), static_cast<long>(y), r, a);
          const double vb = std::max(0.0, stats[t].sum_sq[p] - stats[t].sum[p] * stats[t].sum[p] / dn);
          const double score = cov / std::sqrt(va * vb + kNccEpsilon) / tau;
          cell.cov[p] = cov;
          cell.weight[p] = score;
          best = std::max(best, score);
        }
      double z = 0.0;
      for (auto& w : cell.weight) {
        w = std::exp(w - best);
        z += w;
      }
      double ex = 0.0, ey = 0.0;
      for (std::size_t p = 0; p < HW; ++p) {
        cell.weight[p] /= z;
        ex += cell.weight[p] * static_cast<double>(p % W);
        ey += cell.weight[p] * static_cast<double>(p / W);
      }
      cell.x = ex;
      cell.y = ey;
      out[(q * T + t) * 2] = ex / static_cast<double>(W);
      out[(q * T + t) * 2 + 1] = ey / static_cast<double>(H);
    }
  }

  return make_op(std::move(out), {video},
                 [cells = std::move(cells), centred = std::move(centred), template_var = std::move(template_var),
                  stats = std::move(stats), qx, qy, T, H, W, C, Q, r, n, tau](Node& self) {
                   const auto& pv = self.parents[0];
                   if (!wants(pv)) return;
                   const double* v = pv->value.ptr();
                   double* g = pv->grad_buffer().ptr();
                   const std::size_t frame_size = H * W * C;
                   const double dn = static_cast<double>(n);
                   std::vector<double> b(n), template_grad(n);
                   for (std::size_t q = 0; q < Q; ++q) {
                     const auto& a = centred[q];
                     const double va = template_var[q];
                     std::fill(template_grad.begin(), template_grad.end(), 0.0);
                     for (std::size_t t = 0; t < T; ++t) {
                       const Cell& cell = cells[q * T + t];
                       const double gx = self.grad[(q * T + t) * 2] / static_cast<double>(W);
                       const double gy = self.grad[(q * T + t) * 2 + 1] / static_cast<double>(H);
                       if (gx == 0.0 && gy == 0.0) continue;
                       const double* frame = v + t * frame_size;
                       double* gframe = g + t * frame_size;
                       for (std::size_t p = 0; p < H * W; ++p) {
                         const double pi = cell.weight[p];
                         if (pi < kWeightCutoff) continue;
                         const double px = static_cast<double>(p % W), py = static_cast<double>(p / W);
                         // d out / d score_p for a softmax-weighted mean.
                         const double g_score = pi * (gx * (px - cell.x) + gy * (py - cell.y));
                         if (g_score == 0.0) continue;
                         const double g_ncc = g_score / tau;
                         const double vb = std::max(0.0, stats[t].sum_sq[p] - stats[t].sum[p] * stats[t].sum[p] / dn);
                         const double D = va * vb + kNccEpsilon;
                         const double sd = std::sqrt(D);
                         const double cov = cell.cov[p];
                         const long cx = static_cast<long>(p % W), cy = static_cast<long>(p / W);
                         // d ncc / d b = a_c / sqrt(D) - cov * va * b_c / D^{3/2}
                         scatter_patch(gframe, H, W, C, cx, cy, r, a, g_ncc / sd);
                         extract_patch(frame, H, W, C, cx, cy, r, b);
                         double mb = 0.0;
                         for (double x : b) mb += x;
                         mb /= dn;
                         for (auto& x : b) x -= mb;
                         scatter_patch(gframe, H, W, C, cx, cy, r, b, -g_ncc * cov * va / (D * sd));
                         // d ncc / d a = b_c / sqrt(D) - cov * vb * a_c / D^{3/2}, centred through a_c.
                         const double ka = -g_ncc * cov * vb / (D * sd);
                         for (std::size_t i = 0; i < n; ++i) template_grad[i] += g_ncc * b[i] / sd + ka * a[i];
                       }
                     }
                     // Template entries are centred copies of frame-0 pixels; project out the mean.
                     double m = 0.0;
                     for (double x : template_grad) m += x;
                     m /= dn;
                     for (auto& x : template_grad) x -= m;
                     scatter_patch(g, H, W, C, qx[q], qy[q], r, template_grad, 1.0);
                   }
                 });
}

void write_trajectories(const std::filesystem::path& path, const TrajectorySet& traj) {
  traj.validate();
  nlohmann::json j;
  j["query_frame"] = traj.query_frame;
  auto& pts = j["points"] = nlohmann::json::array();
  const std::size_t Q = traj.queries(), T = traj.frames();
  for (std::size_t q = 0; q < Q; ++q) {
    nlohmann::json track = nlohmann::json::array();
    for (std::size_t t = 0; t < T; ++t)
      track.push_back({traj.points[(q * T + t) * 2], traj.points[(q * T + t) * 2 + 1]});
    pts.push_back(std::move(track));
  }
  io::write_text(path, j.dump());
}

TrajectorySet read_trajectories(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw io::IOError("trajectory file " + path.string() + ": " + e.what());
  }
  TrajectorySet traj;
  traj.query_frame = j.value("query_frame", std::size_t{0});
  const auto& pts = j.at("points");
  const std::size_t Q = pts.size(), T = Q ? pts[0].size() : 0;
  traj.points = Tensor(Shape{Q, T, 2});
  for (std::size_t q = 0; q < Q; ++q) {
    if (pts[q].size() != T) throw io::IOError("trajectory file " + path.string() + ": ragged tracks");
    for (std::size_t t = 0; t < T; ++t) {
      traj.points[(q * T + t) * 2] = pts[q][t].at(0).get<double>();
      traj.points[(q * T + t) * 2 + 1] = pts[q][t].at(1).get<double>();
    }
  }
  traj.validate();
  return traj;
}

}  // namespace moco::track
