// SPDX-License-Identifier: Apache-2.0
#include "moco/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <random>

#include "moco/io.hpp"

namespace moco::render {

namespace {

struct Box {
  long x0, y0, x1, y1;  // inclusive
  bool empty() const { return x0 > x1 || y0 > y1; }
};

Box clip_box(double umin, double vmin, double umax, double vmax, std::size_t W, std::size_t H) {
  Box b{0, 0, -1, -1};
  if (!std::isfinite(umin) || !std::isfinite(vmin) || !std::isfinite(umax) || !std::isfinite(vmax)) return b;
  b.x0 = std::max(0L, static_cast<long>(std::floor(umin)));
  b.y0 = std::max(0L, static_cast<long>(std::floor(vmin)));
  b.x1 = std::min(static_cast<long>(W) - 1, static_cast<long>(std::ceil(umax)));
  b.y1 = std::min(static_cast<long>(H) - 1, static_cast<long>(std::ceil(vmax)));
  return b;
}

// Far bounds keep the long casts inside range for wild coordinates.
double sane(double x) { return std::clamp(x, -1e6, 1e6); }

void blend(double* px, const std::array<double, 3>& color, double alpha) {
  for (int c = 0; c < 3; ++c) px[c] = px[c] * (1.0 - alpha) + color[c] * alpha;
}

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double s = 0.0;
  if (len2 > 0.0) s = std::clamp(((px - ax) * dx + (py - ay) * dy) / len2, 0.0, 1.0);
  return std::hypot(px - (ax + s * dx), py - (ay + s * dy));
}

void draw_segment(double* frame, std::size_t W, std::size_t H, double ax, double ay, double bx, double by,
                  double width, const std::array<double, 3>& color) {
  const double reach = width / 2.0 + 0.5;
  const Box box = clip_box(sane(std::min(ax, bx) - reach), sane(std::min(ay, by) - reach),
                           sane(std::max(ax, bx) + reach), sane(std::max(ay, by) + reach), W, H);
  if (box.empty()) return;
  for (long y = box.y0; y <= box.y1; ++y)
    for (long x = box.x0; x <= box.x1; ++x) {
      const double d = segment_distance(static_cast<double>(x), static_cast<double>(y), ax, ay, bx, by);
      const double cov = std::clamp(reach - d, 0.0, 1.0);
      if (cov > 0.0) blend(frame + (static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)) * 3, color, cov);
    }
}

void draw_disc(double* frame, std::size_t W, std::size_t H, double cx, double cy, double radius,
               const std::array<double, 3>& color) {
  const double reach = radius + 0.5;
  const Box box = clip_box(sane(cx - reach), sane(cy - reach), sane(cx + reach), sane(cy + reach), W, H);
  if (box.empty()) return;
  for (long y = box.y0; y <= box.y1; ++y)
    for (long x = box.x0; x <= box.x1; ++x) {
      const double d = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
      const double cov = std::clamp(reach - d, 0.0, 1.0);
      if (cov > 0.0) blend(frame + (static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)) * 3, color, cov);
    }
}

void check_points(const Tensor& points2d, const motion::SkeletonTopology& topology) {
  if (points2d.rank() != 3 || points2d.dim(2) != 2 || points2d.dim(1) != topology.joint_count) {
    throw ShapeError("points2d must be (T, K, 2) with K = " + std::to_string(topology.joint_count) + ", got " +
                     shape_str(points2d.shape()));
  }
}

}  // namespace

void CameraModel::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw InvalidCamera("camera scale must be positive");
  if (width == 0 || height == 0) throw InvalidCamera("camera image size must be positive");
  if (!(u0 >= 0.0 && u0 <= static_cast<double>(width) && v0 >= 0.0 && v0 <= static_cast<double>(height))) {
    throw InvalidCamera("principal point outside the image");
  }
  if (mode == Projection::weak_perspective && !(z_ref > 0.0)) throw InvalidCamera("z_ref must be positive");
}

CameraModel fit_camera(const motion::KeypointSequence3D& seq, std::size_t width, std::size_t height, double margin,
                       double max_scale) {
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (std::size_t t = 0; t < seq.frames; ++t)
    for (std::size_t k = 0; k < seq.joints; ++k) {
      xmin = std::min(xmin, seq.at(t, k, 0));
      xmax = std::max(xmax, seq.at(t, k, 0));
      ymin = std::min(ymin, seq.at(t, k, 1));
      ymax = std::max(ymax, seq.at(t, k, 1));
    }
  if (!std::isfinite(xmin)) throw std::invalid_argument("fit_camera: empty sequence");
  const double aw = static_cast<double>(width) - 1.0 - 2.0 * margin;
  const double ah = static_cast<double>(height) - 1.0 - 2.0 * margin;
  if (aw <= 0.0 || ah <= 0.0) throw InvalidCamera("fit_camera: margin leaves no room");
  double scale = max_scale;
  if (xmax > xmin) scale = std::min(scale, aw / (xmax - xmin));
  if (ymax > ymin) scale = std::min(scale, ah / (ymax - ymin));
  CameraModel cam;
  cam.scale = scale;
  cam.width = width;
  cam.height = height;
  cam.u0 = (static_cast<double>(width) - 1.0) / 2.0 - scale * (xmin + xmax) / 2.0;
  cam.v0 = (static_cast<double>(height) - 1.0) / 2.0 + scale * (ymin + ymax) / 2.0;
  // The principal point may leave the image for a travelling clip; pin it to the border.
  cam.u0 = std::clamp(cam.u0, 0.0, static_cast<double>(width));
  cam.v0 = std::clamp(cam.v0, 0.0, static_cast<double>(height));
  return cam;
}

Tensor project(const motion::KeypointSequence3D& seq, const CameraModel& camera) {
  camera.validate();
  Tensor out(Shape{seq.frames, seq.joints, 2});
  for (std::size_t t = 0; t < seq.frames; ++t)
    for (std::size_t k = 0; k < seq.joints; ++k) {
      double s = camera.scale;
      if (camera.mode == Projection::weak_perspective) s = s / (1.0 + seq.at(t, k, 2) / camera.z_ref);
      out[(t * seq.joints + k) * 2 + 0] = camera.u0 + s * seq.at(t, k, 0);
      out[(t * seq.joints + k) * 2 + 1] = camera.v0 - s * seq.at(t, k, 1);
    }
  return out;
}

Tensor joint_depths(const motion::KeypointSequence3D& seq) {
  Tensor out(Shape{seq.frames, seq.joints});
  for (std::size_t t = 0; t < seq.frames; ++t)
    for (std::size_t k = 0; k < seq.joints; ++k) out[t * seq.joints + k] = seq.at(t, k, 2);
  return out;
}

const std::array<std::array<double, 3>, 22>& palette() {
  // Every entry has a channel at 1.0, so max channel equals coverage for a single layer.
  static const std::array<std::array<double, 3>, 22> colors = {{
      {1.0, 0.0, 0.0},   {1.0, 0.33, 0.0}, {1.0, 0.67, 0.0}, {1.0, 1.0, 0.0},  {0.67, 1.0, 0.0}, {0.33, 1.0, 0.0},
      {0.0, 1.0, 0.0},   {0.0, 1.0, 0.33}, {0.0, 1.0, 0.67}, {0.0, 1.0, 1.0},  {0.0, 0.67, 1.0}, {0.0, 0.33, 1.0},
      {0.0, 0.0, 1.0},   {0.33, 0.0, 1.0}, {0.67, 0.0, 1.0}, {1.0, 0.0, 1.0},  {1.0, 0.0, 0.67}, {1.0, 0.0, 0.33},
      {1.0, 0.5, 0.5},   {0.5, 1.0, 0.5},  {0.5, 0.5, 1.0},  {1.0, 1.0, 1.0},
  }};
  return colors;
}

SkeletonRaster rasterize_skeleton(const Tensor& points2d, const motion::SkeletonTopology& topology,
                                  const CameraModel& camera, const Tensor* depths, const RasterStyle& style) {
  camera.validate();
  check_points(points2d, topology);
  const std::size_t T = points2d.dim(0), K = topology.joint_count, W = camera.width, H = camera.height;
  if (depths && depths->shape() != Shape{T, K}) throw ShapeError("depths must be (T, K)");
  SkeletonRaster out{Tensor(Shape{T, H, W, 3}, 0.0)};
  const auto& pal = palette();
  std::vector<std::size_t> order(topology.bones.size());
  for (std::size_t t = 0; t < T; ++t) {
    double* frame = out.frames.ptr() + t * H * W * 3;
    const double* p = points2d.ptr() + t * K * 2;
    std::iota(order.begin(), order.end(), 0);
    if (depths) {
      const double* z = depths->ptr() + t * K;
      auto bone_depth = [&](std::size_t b) { return z[topology.bones[b].first] + z[topology.bones[b].second]; };
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return bone_depth(a) > bone_depth(b); });
    }
    for (std::size_t b : order) {
      const auto [i, j] = topology.bones[b];
      draw_segment(frame, W, H, p[i * 2], p[i * 2 + 1], p[j * 2], p[j * 2 + 1], style.line_width, pal[b % pal.size()]);
    }
    if (style.draw_joints)
      for (std::size_t k = 0; k < K; ++k) draw_disc(frame, W, H, p[k * 2], p[k * 2 + 1], style.joint_radius, pal[k % pal.size()]);
  }
  return out;
}

Tensor dilate_support(const Tensor& frames, double radius) {
  if (frames.rank() != 4) throw ShapeError("dilate_support expects (T, H, W, C)");
  const std::size_t T = frames.dim(0), H = frames.dim(1), W = frames.dim(2), C = frames.dim(3);
  const long r = static_cast<long>(std::floor(radius));
  std::vector<std::pair<long, long>> offsets;
  for (long dy = -r; dy <= r; ++dy)
    for (long dx = -r; dx <= r; ++dx)
      if (static_cast<double>(dx * dx + dy * dy) <= radius * radius) offsets.emplace_back(dx, dy);
  Tensor out(Shape{T, H, W, 1}, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double* px = frames.ptr() + ((t * H + y) * W + x) * C;
        if (std::none_of(px, px + C, [](double v) { return v > 0.0; })) continue;
        for (const auto& [dx, dy] : offsets) {
          const long xx = static_cast<long>(x) + dx, yy = static_cast<long>(y) + dy;
          if (xx < 0 || yy < 0 || xx >= static_cast<long>(W) || yy >= static_cast<long>(H)) continue;
          out[(t * H + static_cast<std::size_t>(yy)) * W + static_cast<std::size_t>(xx)] = 1.0;
        }
      }
  return out;
}

HumanMask rasterize_mask(const Tensor& points2d, const motion::SkeletonTopology& topology, const CameraModel& camera) {
  const SkeletonRaster skel = rasterize_skeleton(points2d, topology, camera);
  return HumanMask{dilate_support(skel.frames, kMaskDilation)};
}

Tensor compose_video(const SkeletonRaster& skeleton, const HumanMask& mask, const std::array<double, 3>& tint,
                     std::uint64_t background_seed) {
  const Tensor& s = skeleton.frames;
  if (s.rank() != 4 || s.dim(3) != 3) throw ShapeError("compose_video: skeleton must be (T, H, W, 3)");
  const std::size_t T = s.dim(0), H = s.dim(1), W = s.dim(2);
  if (mask.frames.shape() != Shape{T, H, W, 1}) throw ShapeError("compose_video: mask shape mismatch");

  // Static low-frequency background, a sum of seeded plane waves.
  std::mt19937_64 rng(background_seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  struct Wave {
    double kx, ky, phase, amp;
  };
  std::array<std::array<Wave, 3>, 3> waves{};
  for (auto& channel : waves)
    for (auto& w : channel) {
      const double angle = 2.0 * std::numbers::pi * uni(rng);
      const double freq = 2.0 * std::numbers::pi * (0.03 + 0.05 * uni(rng));
      w = {freq * std::cos(angle), freq * std::sin(angle), 2.0 * std::numbers::pi * uni(rng), 0.04 + 0.04 * uni(rng)};
    }
  Tensor background(Shape{H, W, 3});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double v = 0.3;
        for (const auto& w : waves[c]) v += w.amp * std::sin(w.kx * static_cast<double>(x) + w.ky * static_cast<double>(y) + w.phase);
        background[(y * W + x) * 3 + c] = v;
      }

  Tensor out(Shape{T, H, W, 3});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < H * W; ++i) {
      const double m = mask.frames[t * H * W + i];
      const double* sk = s.ptr() + (t * H * W + i) * 3;
      const double alpha = std::min(1.0, std::max({sk[0], sk[1], sk[2]}));
      for (std::size_t c = 0; c < 3; ++c) {
        const double base = background[i * 3 + c] * (1.0 - m) + tint[c] * m;
        out[(t * H * W + i) * 3 + c] = std::clamp(base * (1.0 - alpha) + sk[c], 0.0, 1.0);
      }
    }
  return out;
}

Tensor to_three_channels(const Tensor& frames) {
  if (frames.rank() != 4 || frames.dim(3) != 1) throw ShapeError("to_three_channels expects (T, H, W, 1)");
  Tensor out(Shape{frames.dim(0), frames.dim(1), frames.dim(2), 3});
  for (std::size_t i = 0; i < frames.size(); ++i)
    for (std::size_t c = 0; c < 3; ++c) out[i * 3 + c] = frames[i];
  return out;
}

void export_pngs(const std::filesystem::path& dir, const Tensor& frames) {
  if (frames.rank() != 4 || (frames.dim(3) != 1 && frames.dim(3) != 3)) throw ShapeError("export_pngs expects (T, H, W, 1|3)");
  const Tensor rgb = frames.dim(3) == 3 ? frames : to_three_channels(frames);
  std::filesystem::create_directories(dir);
  const std::size_t T = rgb.dim(0), H = rgb.dim(1), W = rgb.dim(2);
  char name[32];
  for (std::size_t t = 0; t < T; ++t) {
    std::snprintf(name, sizeof(name), "frame_%05zu.png", t);
    const auto bytes = io::to_u8(rgb.data().subspan(t * H * W * 3, H * W * 3));
    io::write_png_rgb(dir / name, W, H, bytes);
  }
}

std::size_t nonzero_pixels(const Tensor& frames, std::size_t t) {
  const std::size_t H = frames.dim(1), W = frames.dim(2), C = frames.dim(3);
  std::size_t n = 0;
  for (std::size_t i = 0; i < H * W; ++i) {
    const double* px = frames.ptr() + (t * H * W + i) * C;
    if (std::any_of(px, px + C, [](double v) { return v > 0.0; })) ++n;
  }
  return n;
}

}  // namespace moco::render
