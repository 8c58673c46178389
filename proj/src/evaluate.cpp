// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>

#include "moco/trainkit.hpp"

namespace moco::trainkit {
namespace {

Tensor with_batch(const Tensor& v) {
  Shape s{1};
  for (auto d : v.shape()) s.push_back(d);
  return v.reshaped(s);
}

Tensor without_batch(const Tensor& v) {
  Shape s(v.shape().begin() + 1, v.shape().end());
  return v.reshaped(s);
}

struct Canvas {
  std::size_t w, h;
  std::vector<std::uint8_t> rgb;

  Canvas(std::size_t width, std::size_t height) : w(width), h(height), rgb(width * height * 3, 255) {}

  void dot(long x, long y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= static_cast<long>(w) || y >= static_cast<long>(h)) return;
    for (int k = 0; k < 3; ++k) rgb[(static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * 3 + k] = c[k];
  }
  void line(double x0, double y0, double x1, double y1, std::array<std::uint8_t, 3> c) {
    const int n = static_cast<int>(std::ceil(std::max(std::fabs(x1 - x0), std::fabs(y1 - y0)))) + 1;
    for (int i = 0; i <= n; ++i) {
      const double a = static_cast<double>(i) / n;
      dot(std::lround(x0 + a * (x1 - x0)), std::lround(y0 + a * (y1 - y0)), c);
    }
  }
  void axes(std::size_t m) {
    line(m, h - m, w - m, h - m, {0, 0, 0});
    line(m, m, m, h - m, {0, 0, 0});
  }
};

const std::array<std::array<std::uint8_t, 3>, 4> kSeriesColours{{{31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {148, 103, 189}}};

double mean_of(const std::vector<StepLog>& log, std::size_t from, std::size_t to) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = from; i < to && i < log.size(); ++i) {
    s += log[i].total;
    ++n;
  }
  return n ? s / static_cast<double>(n) : std::nan("");
}

}  // namespace

Tensor generate_video(const MocoModel& model, const TrainConfig& config, const std::string& prompt,
                      const Tensor* skeleton_video, std::uint64_t seed, diffusion::SamplerMode mode) {
  const Shape video_shape{1, config.frames, config.frame_height, config.frame_width, 3};
  const Shape latent_shape = model.vae().latent_shape(video_shape);
  Rng rng(seed);
  const Tensor z_T = randn(latent_shape, rng);
  std::optional<Tensor> skel;
  if (skeleton_video) skel = model.vae().encode(with_batch(*skeleton_video));
  const auto predictor = model.predictor(prompt, skel);
  return without_batch(diffusion::sample(z_T, predictor, config.schedule(), mode, model.vae(), rng));
}

std::vector<double> mean_tracked_displacement(const Tensor& video, const Tensor& queries) {
  NoGradGuard guard;
  const Tensor tr = track::soft_track(constant(video), queries).value();
  const std::size_t Q = tr.shape()[0], T = tr.shape()[1];
  std::vector<double> out(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t q = 0; q < Q; ++q) {
      const double dx = tr[(q * T + t) * 2] - tr[(q * T) * 2];
      const double dy = tr[(q * T + t) * 2 + 1] - tr[(q * T) * 2 + 1];
      out[t] += std::sqrt(dx * dx + dy * dy);
    }
    out[t] /= static_cast<double>(Q);
  }
  return out;
}

std::vector<double> root_displacement(const Tensor& root_path) {
  const std::size_t T = root_path.shape().at(0);
  std::vector<double> out(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double dx = root_path[t * 2] - root_path[0], dy = root_path[t * 2 + 1] - root_path[1];
    out[t] = std::sqrt(dx * dx + dy * dy);
  }
  return out;
}

double total_tracked_motion(const Tensor& video, const Tensor& queries) {
  NoGradGuard guard;
  const Tensor tr = track::soft_track(constant(video), queries).value();
  const std::size_t Q = tr.shape()[0], T = tr.shape()[1];
  double total = 0.0;
  for (std::size_t t = 1; t < T; ++t) {
    double step = 0.0;
    for (std::size_t q = 0; q < Q; ++q) {
      const double dx = tr[(q * T + t) * 2] - tr[(q * T + t - 1) * 2];
      const double dy = tr[(q * T + t) * 2 + 1] - tr[(q * T + t - 1) * 2 + 1];
      step += std::sqrt(dx * dx + dy * dy);
    }
    total += step / static_cast<double>(Q);
  }
  return total;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("pearson: need two equal series of length >= 2");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n, mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double mask_gate_ratio(const MocoModel& model, const TrainConfig& config, const ClipData& clip) {
  if (!model.has_branch() || !config.hadc_enabled) return std::nan("");
  NoGradGuard guard;
  const auto schedule = config.schedule();
  const auto grid = model.backbone().token_grid(clip.latent.shape());
  const std::size_t Fp = grid[0], Hp = grid[1], Wp = grid[2], L = Fp * Hp * Wp;
  const std::size_t T = clip.mask.shape()[0], H = clip.mask.shape()[1], W = clip.mask.shape()[2];
  const std::size_t ft = T / Fp, fy = H / Hp, fx = W / Wp;
  std::vector<double> pooled(L, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        pooled[((t / ft) * Hp + y / fy) * Wp + x / fx] += clip.mask[((t * H + y) * W + x) * 3];
  for (auto& p : pooled) p /= static_cast<double>(ft * fy * fx);

  const auto text = model.text_encoder().encode({clip.prompt});
  std::vector<double> w(L, 0.0);
  std::size_t count = 0;
  const std::size_t Tn = schedule.steps;
  for (std::size_t t : {std::max<std::size_t>(1, Tn / 4), std::max<std::size_t>(1, Tn / 2), std::max<std::size_t>(1, 3 * Tn / 4)}) {
    Rng rng(1000 + t);
    const Tensor eps = randn(clip.latent.shape(), rng);
    const Tensor zt = diffusion::forward_noise(clip.latent, t, eps, schedule);
    const auto out = model.forward(constant(zt), {t}, text, &clip.skeleton_latent);
    for (const auto& wk : out.weights) {
      for (std::size_t i = 0; i < L; ++i) w[i] += wk.value()[i];
      ++count;
    }
  }
  double in = 0.0, outside = 0.0;
  std::size_t n_in = 0, n_out = 0;
  for (std::size_t i = 0; i < L; ++i) {
    const double v = w[i] / static_cast<double>(count);
    if (pooled[i] >= 0.5) {
      in += v;
      ++n_in;
    } else {
      outside += v;
      ++n_out;
    }
  }
  if (n_in == 0 || n_out == 0) return std::nan("");
  return (in / static_cast<double>(n_in)) / (outside / static_cast<double>(n_out));
}

double early_loss(const std::vector<StepLog>& log) { return mean_of(log, 5, 15); }

double final_loss(const std::vector<StepLog>& log) {
  const std::size_t n = log.size();
  return mean_of(log, n > 100 ? n - 100 : 0, n);
}

void plot_series(const std::filesystem::path& path, const std::vector<std::vector<double>>& series, std::size_t width,
                 std::size_t height, bool log_y) {
  Canvas c(width, height);
  const std::size_t m = 12;
  c.axes(m);
  double lo = INFINITY, hi = -INFINITY;
  std::size_t n = 0;
  auto tf = [&](double v) { return log_y ? std::log10(std::max(v, 1e-12)) : v; };
  for (const auto& s : series) {
    n = std::max(n, s.size());
    for (double v : s)
      if (std::isfinite(v)) {
        lo = std::min(lo, tf(v));
        hi = std::max(hi, tf(v));
      }
  }
  if (n >= 2 && hi > lo) {
    const double pw = static_cast<double>(width - 2 * m), ph = static_cast<double>(height - 2 * m);
    for (std::size_t k = 0; k < series.size(); ++k) {
      const auto& s = series[k];
      for (std::size_t i = 1; i < s.size(); ++i) {
        if (!std::isfinite(s[i - 1]) || !std::isfinite(s[i])) continue;
        const double x0 = m + pw * static_cast<double>(i - 1) / static_cast<double>(n - 1);
        const double x1 = m + pw * static_cast<double>(i) / static_cast<double>(n - 1);
        const double y0 = height - m - ph * (tf(s[i - 1]) - lo) / (hi - lo);
        const double y1 = height - m - ph * (tf(s[i]) - lo) / (hi - lo);
        c.line(x0, y0, x1, y1, kSeriesColours[k % kSeriesColours.size()]);
      }
    }
  }
  io::write_png_rgb(path, width, height, c.rgb);
}

void plot_scatter(const std::filesystem::path& path, const std::vector<double>& x, const std::vector<double>& y,
                  std::size_t width, std::size_t height) {
  Canvas c(width, height);
  const std::size_t m = 12;
  c.axes(m);
  if (!x.empty() && x.size() == y.size()) {
    const auto [xlo, xhi] = std::minmax_element(x.begin(), x.end());
    const auto [ylo, yhi] = std::minmax_element(y.begin(), y.end());
    const double sx = *xhi > *xlo ? *xhi - *xlo : 1.0, sy = *yhi > *ylo ? *yhi - *ylo : 1.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const long px = std::lround(m + (width - 2.0 * m) * (x[i] - *xlo) / sx);
      const long py = std::lround(height - m - (height - 2.0 * m) * (y[i] - *ylo) / sy);
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) c.dot(px + dx, py + dy, kSeriesColours[1]);
    }
  }
  io::write_png_rgb(path, width, height, c.rgb);
}

EvalSummary evaluate_run(const std::filesystem::path& run_dir, Dataset data, std::uint64_t seed) {
  TrainConfig config;
  auto model = load_checkpoint(run_dir / "checkpoint.arr", &config);
  encode_dataset(data, *model, 0, false);
  const auto log = read_metrics(run_dir / "metrics.csv");
  EvalSummary s;
  s.early_loss = early_loss(log);
  s.final_loss = final_loss(log);
  std::vector<double> totals;
  for (const auto& l : log) totals.push_back(l.total);
  plot_series(run_dir / "loss_curve.png", {totals}, 320, 200, true);

  std::vector<double> root_all, tracked_all;
  double gate = 0.0;
  std::size_t gate_n = 0;
  for (std::size_t i = 0; i < data.clips.size(); ++i) {
    const auto& clip = data.clips[i];
    const Tensor video = generate_video(*model, config, clip.prompt, &clip.skeleton, seed + i);
    const auto tracked = mean_tracked_displacement(video, clip.queries);
    const auto root = root_displacement(clip.root_path);
    root_all.insert(root_all.end(), root.begin(), root.end());
    tracked_all.insert(tracked_all.end(), tracked.begin(), tracked.end());
    const double g = mask_gate_ratio(*model, config, clip);
    if (std::isfinite(g)) {
      gate += g;
      ++gate_n;
    }
  }
  s.clips = data.clips.size();
  s.adherence_r = root_all.size() >= 2 ? pearson(root_all, tracked_all) : 0.0;
  s.mask_gate = gate_n ? gate / static_cast<double>(gate_n) : std::nan("");
  plot_scatter(run_dir / "adherence.png", root_all, tracked_all);

  nlohmann::json j;
  j["early_loss"] = s.early_loss;
  j["final_loss"] = s.final_loss;
  j["loss_ratio"] = s.final_loss / s.early_loss;
  j["adherence_pearson"] = s.adherence_r;
  j["mask_gate_ratio"] = std::isfinite(s.mask_gate) ? nlohmann::json(s.mask_gate) : nlohmann::json(nullptr);
  j["clips"] = s.clips;
  j["steps"] = log.size();
  io::write_text(run_dir / "metrics_summary.json", j.dump(2) + "\n");
  return s;
}

}  // namespace moco::trainkit
