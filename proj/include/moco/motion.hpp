// SPDX-License-Identifier: Apache-2.0
//
// 3D human keypoint sequences, skeleton topology, procedural motions, and the
// structure-generator interface that turns a motion prompt into keypoints.
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace moco::motion {

class UnknownMotion : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InvalidDuration : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GeneratorUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SkeletonTopology {
  std::size_t joint_count = 0;
  std::vector<std::pair<std::size_t, std::size_t>> bones;  // (parent, child)
  std::vector<std::string> joint_names;
  std::size_t root_index = 0;

  /// 22-joint HumanML3D body tree rooted at the pelvis.
  static SkeletonTopology humanml3d();

  /// Throws std::invalid_argument unless bones form a tree over all joints rooted at root_index.
  void validate() const;
  /// Parent index per joint; the root maps to itself.
  std::vector<std::size_t> parents() const;
  std::optional<std::size_t> joint_index(const std::string& name) const;
};

/// Positions are (frames, joints, 3) row-major, meters, Y up.
struct KeypointSequence3D {
  std::size_t frames = 0;
  std::size_t joints = 0;
  double fps = 0.0;
  std::vector<std::string> joint_names;
  std::vector<double> positions;

  double& at(std::size_t t, std::size_t k, std::size_t c) { return positions[(t * joints + k) * 3 + c]; }
  double at(std::size_t t, std::size_t k, std::size_t c) const { return positions[(t * joints + k) * 3 + c]; }
  bool all_finite() const;
};

enum class MotionId { walk, run, jump, wave, squat, spin };

std::optional<MotionId> parse_motion_id(const std::string& label);
std::string to_string(MotionId id);
const std::vector<MotionId>& all_motions();

struct MotionPrompt {
  std::string text;       // motion-specific prompt p'
  std::string motion_id;  // procedural label, e.g. "walk"
  double duration_s = 1.0;
  std::uint64_t seed = 0;
};

constexpr double kDefaultFps = 16.0;

/// Deterministic procedural motion. Root starts at the origin.
KeypointSequence3D synthesize_motion(const MotionPrompt& prompt, const SkeletonTopology& topology,
                                     double fps = kDefaultFps);

/// Maximum relative bone-length deviation from frame 0 over the sequence.
double max_bone_length_deviation(const KeypointSequence3D& seq, const SkeletonTopology& topology);
/// Largest per-joint displacement between consecutive frames, meters.
double max_frame_displacement(const KeypointSequence3D& seq);

/// Source of 3D keypoint sequences for a motion prompt.
class StructureGenerator {
 public:
  virtual ~StructureGenerator() = default;
  virtual KeypointSequence3D generate(const MotionPrompt& prompt) = 0;
  virtual std::string name() const = 0;
};

class ProceduralGenerator final : public StructureGenerator {
 public:
  explicit ProceduralGenerator(SkeletonTopology topology = SkeletonTopology::humanml3d(), double fps = kDefaultFps);
  KeypointSequence3D generate(const MotionPrompt& prompt) override;
  std::string name() const override { return "procedural"; }

 private:
  SkeletonTopology topology_;
  double fps_;
};

/// Posts the prompt as JSON to an HTTP endpoint that answers with a keypoint
/// document (same schema as the keypoint file format).
class HttpGeneratorAdapter final : public StructureGenerator {
 public:
  HttpGeneratorAdapter(std::string host, int port, std::string path = "/generate", double timeout_s = 2.0);
  KeypointSequence3D generate(const MotionPrompt& prompt) override;
  std::string name() const override { return "http://" + host_ + ":" + std::to_string(port_) + path_; }

 private:
  std::string host_;
  int port_;
  std::string path_;
  double timeout_s_;
};

using StructureGeneratorHandle = std::shared_ptr<StructureGenerator>;

/// Runs the generator and checks the sequence invariants. Adapter failures
/// surface as GeneratorUnavailable carrying the adapter's message.
KeypointSequence3D generate_structure(const MotionPrompt& prompt, const StructureGeneratorHandle& generator);

// Keypoint file format: {"fps": int, "joint_names": [...], "frames": [[[x,y,z] x K] x T]},
// coordinates written with 9 significant digits.
std::string keypoints_to_json(const KeypointSequence3D& seq);
KeypointSequence3D keypoints_from_json(const std::string& text);
void write_keypoints(const std::filesystem::path& path, const KeypointSequence3D& seq);
KeypointSequence3D read_keypoints(const std::filesystem::path& path);

}  // namespace moco::motion
