// SPDX-License-Identifier: Apache-2.0
//
// Projection of 3D keypoints to pixels and rasterization of skeleton videos,
// human masks and the synthetic appearance videos used as training targets.
//
// Pixel (u, v) has its center at integer coordinates; u grows right, v grows
// down. All frame arrays are (T, H, W, C) row-major with values in [0, 1].
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "moco/motion.hpp"
#include "moco/tensor.hpp"

namespace moco::render {

class InvalidCamera : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Projection { orthographic, weak_perspective };

struct CameraModel {
  Projection mode = Projection::orthographic;
  double scale = 1.0;  // pixels per meter
  double u0 = 0.0;
  double v0 = 0.0;
  std::size_t width = 0;
  std::size_t height = 0;
  double z_ref = 5.0;  // meters, weak perspective only

  /// Throws InvalidCamera unless scale > 0 and the principal point lies in the image.
  void validate() const;
};

/// Orthographic camera that frames the whole sequence with `margin` pixels of
/// slack on every side, scale capped at `max_scale`.
CameraModel fit_camera(const motion::KeypointSequence3D& seq, std::size_t width, std::size_t height,
                       double margin = 4.0, double max_scale = 28.0);

/// (T, K, 2) pixel coordinates.
Tensor project(const motion::KeypointSequence3D& seq, const CameraModel& camera);
/// (T, K) depth per joint, larger is farther from the camera.
Tensor joint_depths(const motion::KeypointSequence3D& seq);

struct RasterStyle {
  double line_width = 3.0;
  double joint_radius = 3.0;
  bool draw_joints = true;
};

constexpr double kMaskDilation = 6.0;

/// 22 fixed RGB colors, indexed by bone (and by joint for the discs).
const std::array<std::array<double, 3>, 22>& palette();

struct SkeletonRaster {
  Tensor frames;  // (T, H, W, 3)
};

struct HumanMask {
  Tensor frames;  // (T, H, W, 1), values in {0, 1}
};

/// Anti-aliased skeleton drawing. Bones are painted far-to-near by mean bone
/// depth when `depths` (T, K) is given, in bone order otherwise.
SkeletonRaster rasterize_skeleton(const Tensor& points2d, const motion::SkeletonTopology& topology,
                                  const CameraModel& camera, const Tensor* depths = nullptr,
                                  const RasterStyle& style = {});

/// Support of the default-style skeleton raster dilated by a Euclidean disc of radius 6 px.
HumanMask rasterize_mask(const Tensor& points2d, const motion::SkeletonTopology& topology,
                         const CameraModel& camera);

/// Binary support (any channel > 0) of a (T, H, W, C) array dilated by a disc.
Tensor dilate_support(const Tensor& frames, double radius);

/// Appearance target: a fixed textured background, the mask region tinted
/// with `tint`, and the skeleton composited on top.
Tensor compose_video(const SkeletonRaster& skeleton, const HumanMask& mask, const std::array<double, 3>& tint,
                     std::uint64_t background_seed);

/// Replicates a (T, H, W, 1) array to three channels.
Tensor to_three_channels(const Tensor& frames);

/// Writes frame_%05d.png for every frame of a (T, H, W, 1|3) array.
void export_pngs(const std::filesystem::path& dir, const Tensor& frames);

/// Pixel count with any channel > 0 in frame t.
std::size_t nonzero_pixels(const Tensor& frames, std::size_t t);

}  // namespace moco::render
