// SPDX-License-Identifier: Apache-2.0
//
// Dense tracking loss over ordered frame pairs with exponential interval
// weights, and a differentiable correlation tracker that produces the tracks.
#pragma once

#include <filesystem>
#include <stdexcept>
#include <utility>
#include <vector>

#include "moco/autograd.hpp"

namespace moco::track {

class InvalidLength : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InvalidQuery : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

constexpr double kDecayDivisor = 2.0;

/// Tracks (Q, T_v, 2) as (x / W, y / H) for pixel-centre coordinates x, y.
struct TrajectorySet {
  Tensor points;
  std::size_t query_frame = 0;

  std::size_t queries() const { return points.shape().at(0); }
  std::size_t frames() const { return points.shape().at(1); }
  /// Throws InvalidLength for T_v < 2 and ShapeError for a malformed array.
  void validate() const;
};

/// All ordered (t, t') with t != t' in lexicographic order.
std::vector<std::pair<std::size_t, std::size_t>> pair_set(std::size_t frames);

/// points[:, t'] - points[:, t] as (Q, 2).
Tensor displacement(const TrajectorySet& traj, std::size_t t, std::size_t t_prime);

/// exp(|t - t'| / kDecayDivisor).
double pair_weight(std::size_t t, std::size_t t_prime);

/// Weighted mean over pair_set of the mean absolute displacement error,
/// normalized by the sum of weights. Inputs are (Q, T_v, 2).
Var loss_track(const Var& gen, const Var& gt);
double loss_track(const TrajectorySet& gen, const TrajectorySet& gt);

struct TrackerOptions {
  std::size_t patch_radius = 4;
  double temperature = 0.05;
};

/// Tracks query pixels (Q, 2) given as (x, y) at frame 0 through a video
/// (T, H, W, C). Each frame's position is the soft-argmax over all pixel
/// positions of the normalized cross-correlation with the frame-0 patch;
/// patches are zero-padded outside the image. Differentiable in the video.
Var soft_track(const Var& video, const Tensor& queries, const TrackerOptions& options = {});

void write_trajectories(const std::filesystem::path& path, const TrajectorySet& traj);
TrajectorySet read_trajectories(const std::filesystem::path& path);

}  // namespace moco::track
