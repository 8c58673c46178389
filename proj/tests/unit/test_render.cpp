#include <cmath>
#include <filesystem>
#include <numbers>

#include "doctest.h"
#include "moco/io.hpp"
#include "moco/render.hpp"

using namespace moco;
using namespace moco::render;

namespace {

motion::KeypointSequence3D single_joint(double x, double y, double z) {
  motion::KeypointSequence3D s;
  s.frames = 1;
  s.joints = 1;
  s.fps = 16;
  s.joint_names = {"j"};
  s.positions = {x, y, z};
  return s;
}

CameraModel cam64(double scale = 10.0) {
  CameraModel c;
  c.scale = scale;
  c.u0 = 32;
  c.v0 = 32;
  c.width = 64;
  c.height = 64;
  return c;
}

motion::SkeletonTopology two_joint_topology() {
  motion::SkeletonTopology t;
  t.joint_count = 2;
  t.joint_names = {"a", "b"};
  t.bones = {{0, 1}};
  return t;
}

Tensor points(std::size_t T, std::size_t K, double u, double v) {
  Tensor p(Shape{T, K, 2});
  for (std::size_t i = 0; i < T * K; ++i) {
    p[i * 2] = u;
    p[i * 2 + 1] = v;
  }
  return p;
}

}  // namespace

TEST_CASE("orthographic projection matches hand-computed pixels") {
  auto cam = cam64();
  auto p0 = project(single_joint(0, 0, 0), cam);
  CHECK(p0[0] == 32.0);
  CHECK(p0[1] == 32.0);
  auto p1 = project(single_joint(1, 0, 0), cam);
  CHECK(p1[0] == 42.0);
  CHECK(p1[1] == 32.0);
  auto p2 = project(single_joint(0, 1, 0), cam);
  CHECK(p2[1] == 22.0);
}

TEST_CASE("weak perspective divides scale by 1 + z / z_ref") {
  auto cam = cam64();
  cam.mode = Projection::weak_perspective;
  auto p = project(single_joint(1, 0, 5), cam);
  CHECK(p[0] == 37.0);
}

TEST_CASE("camera validation") {
  auto cam = cam64();
  cam.scale = 0.0;
  CHECK_THROWS_AS(cam.validate(), InvalidCamera);
  cam = cam64();
  cam.u0 = 80;
  CHECK_THROWS_AS(cam.validate(), InvalidCamera);
}

TEST_CASE("doubling image size, principal point and scale doubles coordinates") {
  auto topo = motion::SkeletonTopology::humanml3d();
  auto seq = motion::synthesize_motion({"", "run", 1.0, 5}, topo);
  auto cam = cam64(12.5);
  auto big = cam;
  big.scale *= 2;
  big.u0 *= 2;
  big.v0 *= 2;
  big.width *= 2;
  big.height *= 2;
  auto a = project(seq, cam);
  auto b = project(seq, big);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == 2.0 * a[i]);
}

TEST_CASE("coincident joints draw a single disc") {
  auto topo = motion::SkeletonTopology::humanml3d();
  auto raster = rasterize_skeleton(points(1, 22, 20, 30), topo, cam64());
  const std::size_t n = nonzero_pixels(raster.frames, 0);
  CHECK(n > 0);
  CHECK(static_cast<double>(n) <= std::numbers::pi * 3.5 * 3.5 + 8.0);
}

TEST_CASE("vertical 20 px bone lies in the anti-aliasing band") {
  Tensor p(Shape{1, 2, 2}, std::vector<double>{20, 10, 20, 30});
  RasterStyle line_only;
  line_only.draw_joints = false;
  auto raster = rasterize_skeleton(p, two_joint_topology(), cam64(), nullptr, line_only);
  const std::size_t n = nonzero_pixels(raster.frames, 0);
  // Frozen from the reference run: 3 full columns over 21 rows plus 3 cap pixels each end.
  CHECK(n == 69);
  CHECK(n >= 48);
  CHECK(n <= 100);
}

TEST_CASE("rasters are bit-deterministic, in range, and zero on the background") {
  auto topo = motion::SkeletonTopology::humanml3d();
  auto seq = motion::synthesize_motion({"", "walk", 1.0, 2}, topo);
  auto cam = fit_camera(seq, 48, 64);
  auto pts = project(seq, cam);
  auto depth = joint_depths(seq);
  auto a = rasterize_skeleton(pts, topo, cam, &depth);
  auto b = rasterize_skeleton(pts, topo, cam, &depth);
  CHECK(a.frames.bitwise_equal(b.frames));
  CHECK(a.frames.shape() == Shape{16, 64, 48, 3});
  double lo = 1, hi = 0;
  for (double v : a.frames.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo == 0.0);
  CHECK(hi <= 1.0);
  CHECK(a.frames[0] == 0.0);
}

TEST_CASE("fit_camera keeps every joint inside the frame") {
  auto topo = motion::SkeletonTopology::humanml3d();
  for (auto id : motion::all_motions()) {
    auto seq = motion::synthesize_motion({"", motion::to_string(id), 1.0, 3}, topo);
    auto cam = fit_camera(seq, 48, 64);
    auto pts = project(seq, cam);
    for (std::size_t i = 0; i < pts.size(); i += 2) {
      CHECK(pts[i] >= 0.0);
      CHECK(pts[i] <= 47.0);
      CHECK(pts[i + 1] >= 0.0);
      CHECK(pts[i + 1] <= 63.0);
    }
  }
}

TEST_CASE("mask is a binary superset of the skeleton") {
  auto topo = motion::SkeletonTopology::humanml3d();
  auto seq = motion::synthesize_motion({"", "squat", 1.0, 4}, topo);
  auto cam = fit_camera(seq, 48, 64);
  auto pts = project(seq, cam);
  auto skel = rasterize_skeleton(pts, topo, cam);
  auto mask = rasterize_mask(pts, topo, cam);
  const std::size_t HW = 64 * 48;
  for (std::size_t t = 0; t < seq.frames; ++t) {
    CHECK(nonzero_pixels(mask.frames, t) >= nonzero_pixels(skel.frames, t));
    for (std::size_t i = 0; i < HW; ++i) {
      const double m = mask.frames[t * HW + i];
      CHECK((m == 0.0 || m == 1.0));
      const double* s = skel.frames.ptr() + (t * HW + i) * 3;
      if (s[0] > 0 || s[1] > 0 || s[2] > 0) CHECK(m == 1.0);
    }
  }
}

TEST_CASE("dilating a radius-3 disc gives a disc of radius 9 +- 1") {
  auto topo = motion::SkeletonTopology::humanml3d();
  auto mask = rasterize_mask(points(1, 22, 32, 32), topo, cam64());
  // Independent oracle: farthest mask pixel from the disc center.
  double rmax = 0.0;
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x)
      if (mask.frames[y * 64 + x] > 0.0) rmax = std::max(rmax, std::hypot(x - 32.0, y - 32.0));
  CHECK(rmax >= 8.0);
  CHECK(rmax <= 10.0);
  const double area = static_cast<double>(nonzero_pixels(mask.frames, 0));
  CHECK(area >= std::numbers::pi * 8.0 * 8.0);
  CHECK(area <= std::numbers::pi * 10.0 * 10.0);
}

TEST_CASE("out-of-bounds joints draw nothing and never throw") {
  auto topo = motion::SkeletonTopology::humanml3d();
  auto far = points(2, 22, -500, 9000);
  auto mask = rasterize_mask(far, topo, cam64());
  for (double v : mask.frames.data()) CHECK(v == 0.0);
  auto huge = points(1, 22, 1e300, -1e300);
  CHECK_NOTHROW(rasterize_skeleton(huge, topo, cam64()));
}

TEST_CASE("composited video keeps the skeleton and tints the mask") {
  auto topo = motion::SkeletonTopology::humanml3d();
  auto seq = motion::synthesize_motion({"", "wave", 1.0, 1}, topo);
  auto cam = fit_camera(seq, 48, 64);
  auto pts = project(seq, cam);
  auto skel = rasterize_skeleton(pts, topo, cam);
  auto mask = rasterize_mask(pts, topo, cam);
  auto v1 = compose_video(skel, mask, {0.9, 0.6, 0.4}, 11);
  auto v2 = compose_video(skel, mask, {0.9, 0.6, 0.4}, 11);
  CHECK(v1.bitwise_equal(v2));
  for (double v : v1.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("PNG export writes one file per frame") {
  const auto dir = std::filesystem::temp_directory_path() / "moco_png_export";
  std::filesystem::remove_all(dir);
  Tensor frames(Shape{3, 4, 5, 1}, 0.5);
  export_pngs(dir, frames);
  CHECK(std::filesystem::exists(dir / "frame_00000.png"));
  CHECK(std::filesystem::exists(dir / "frame_00002.png"));
  CHECK_FALSE(std::filesystem::exists(dir / "frame_00003.png"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("array container round-trips f64 and u8 arrays") {
  const auto path = std::filesystem::temp_directory_path() / "moco_container.arr";
  io::ArrayContainer c;
  c.meta["kind"] = "test";
  Tensor t(Shape{2, 3}, std::vector<double>{1, -2, 3.25, 1e-300, -0.0, 7});
  c.put("a", t);
  c.put_u8("b", {2}, {0, 255});
  io::write_container(path, c);
  auto back = io::read_container(path);
  CHECK(back.meta["kind"] == "test");
  CHECK(back.tensor("a").bitwise_equal(t));
  CHECK(back.tensor("b")[1] == 1.0);
  CHECK_THROWS_AS(back.tensor("zzz"), io::IOError);
  std::filesystem::remove(path);
}
