// SPDX-License-Identifier: Apache-2.0
#include "moco/motion.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <sstream>

#include "httplib.h"
#include "moco/io.hpp"

namespace moco::motion {

namespace {

using Eigen::AngleAxisd;
using Eigen::Matrix3d;
using Eigen::Vector3d;

constexpr double kPi = std::numbers::pi;

struct JointDef {
  const char* name;
  int parent;
  double ox, oy, oz;  // rest offset from parent, meters; facing +X, left side +Z
};

// HumanML3D joint order.
constexpr JointDef kJoints[22] = {
    {"pelvis", -1, 0.0, 0.0, 0.0},          {"left_hip", 0, 0.0, -0.06, 0.09},
    {"right_hip", 0, 0.0, -0.06, -0.09},    {"spine1", 0, 0.0, 0.11, 0.0},
    {"left_knee", 1, 0.0, -0.40, 0.0},      {"right_knee", 2, 0.0, -0.40, 0.0},
    {"spine2", 3, 0.0, 0.13, 0.0},          {"left_ankle", 4, 0.0, -0.40, 0.0},
    {"right_ankle", 5, 0.0, -0.40, 0.0},    {"spine3", 6, 0.0, 0.06, 0.0},
    {"left_foot", 7, 0.12, -0.06, 0.0},     {"right_foot", 8, 0.12, -0.06, 0.0},
    {"neck", 9, 0.0, 0.20, 0.0},            {"left_collar", 9, 0.0, 0.13, 0.07},
    {"right_collar", 9, 0.0, 0.13, -0.07},  {"head", 12, 0.02, 0.13, 0.0},
    {"left_shoulder", 13, 0.0, 0.03, 0.11}, {"right_shoulder", 14, 0.0, 0.03, -0.11},
    {"left_elbow", 16, 0.0, -0.27, 0.0},    {"right_elbow", 17, 0.0, -0.27, 0.0},
    {"left_wrist", 18, 0.0, -0.25, 0.0},    {"right_wrist", 19, 0.0, -0.25, 0.0},
};

enum J : std::size_t {
  kPelvis = 0, kLHip = 1, kRHip = 2, kSpine1 = 3, kLKnee = 4, kRKnee = 5, kLAnkle = 7, kRAnkle = 8,
  kLShoulder = 16, kRShoulder = 17, kLElbow = 18, kRElbow = 19,
};

Matrix3d rot_z(double a) { return AngleAxisd(a, Vector3d::UnitZ()).toRotationMatrix(); }
Matrix3d rot_x(double a) { return AngleAxisd(a, Vector3d::UnitX()).toRotationMatrix(); }
Matrix3d rot_y(double a) { return AngleAxisd(a, Vector3d::UnitY()).toRotationMatrix(); }

struct Pose {
  Vector3d root = Vector3d::Zero();
  Matrix3d root_rot = Matrix3d::Identity();
  Matrix3d local[22];
  Pose() {
    for (auto& m : local) m = Matrix3d::Identity();
  }
};

// Per-seed variation of amplitude, speed and phase.
struct Variation {
  double amp = 1.0;
  double speed = 1.0;
  double phase = 0.0;
};

Variation draw_variation(MotionId id, std::uint64_t seed) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(id) + 1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Variation v;
  v.amp = 1.0 + 0.1 * u(rng);
  v.speed = 1.0 + 0.1 * u(rng);
  v.phase = kPi * (1.0 + u(rng));
  return v;
}

double sq(double x) { return x * x; }

// t: seconds since start; u: normalized progress in [0, 1] across the clip.
Pose motion_pose(MotionId id, double t, double u, const Variation& var) {
  Pose p;
  const double a = var.amp;
  switch (id) {
    case MotionId::walk: {
      const double ph = 2.0 * kPi * 0.9 * var.speed * t + var.phase;
      p.root = {1.2 * var.speed * t, 0.015 * (1.0 - std::cos(2.0 * ph)), 0.0};
      p.local[kLHip] = rot_z(0.45 * a * std::sin(ph));
      p.local[kRHip] = rot_z(-0.45 * a * std::sin(ph));
      p.local[kLKnee] = rot_z(-0.3 * a * (1.0 - std::cos(ph)));
      p.local[kRKnee] = rot_z(-0.3 * a * (1.0 + std::cos(ph)));
      p.local[kLShoulder] = rot_z(-0.35 * a * std::sin(ph));
      p.local[kRShoulder] = rot_z(0.35 * a * std::sin(ph));
      p.local[kLElbow] = rot_z(0.3);
      p.local[kRElbow] = rot_z(0.3);
      break;
    }
    case MotionId::run: {
      const double ph = 2.0 * kPi * 0.8 * var.speed * t + var.phase;
      p.root = {1.8 * var.speed * t, 0.04 * (1.0 - std::cos(2.0 * ph)), 0.0};
      p.local[kSpine1] = rot_z(-0.15);
      p.local[kLHip] = rot_z(0.4 * a * std::sin(ph));
      p.local[kRHip] = rot_z(-0.4 * a * std::sin(ph));
      p.local[kLKnee] = rot_z(-0.4 * a * (1.0 - std::cos(ph)));
      p.local[kRKnee] = rot_z(-0.4 * a * (1.0 + std::cos(ph)));
      p.local[kLShoulder] = rot_z(-0.5 * a * std::sin(ph));
      p.local[kRShoulder] = rot_z(0.5 * a * std::sin(ph));
      p.local[kLElbow] = rot_z(1.2);
      p.local[kRElbow] = rot_z(1.2);
      break;
    }
    case MotionId::jump: {
      const double s = sq(std::sin(kPi * u));
      p.root = {0.0, 0.35 * a * s, 0.0};
      p.local[kLHip] = rot_z(0.6 * a * s);
      p.local[kRHip] = rot_z(0.6 * a * s);
      p.local[kLKnee] = rot_z(-1.0 * a * s);
      p.local[kRKnee] = rot_z(-1.0 * a * s);
      p.local[kLAnkle] = rot_z(0.4 * a * s);
      p.local[kRAnkle] = rot_z(0.4 * a * s);
      p.local[kLShoulder] = rot_z(2.5 * a * s);
      p.local[kRShoulder] = rot_z(2.5 * a * s);
      break;
    }
    case MotionId::wave: {
      const double ph = 2.0 * kPi * 1.5 * var.speed * t + var.phase;
      p.local[kRShoulder] = rot_z(2.4);
      p.local[kRElbow] = rot_z(0.4 + 0.5 * a * std::sin(ph));
      p.local[kLElbow] = rot_z(0.15);
      break;
    }
    case MotionId::squat: {
      const double s = sq(std::sin(kPi * u));
      p.root = {0.0, -0.35 * a * s, 0.0};
      p.local[kLHip] = rot_z(1.3 * a * s);
      p.local[kRHip] = rot_z(1.3 * a * s);
      p.local[kLKnee] = rot_z(-1.9 * a * s);
      p.local[kRKnee] = rot_z(-1.9 * a * s);
      p.local[kLAnkle] = rot_z(0.6 * a * s);
      p.local[kRAnkle] = rot_z(0.6 * a * s);
      p.local[kLShoulder] = rot_z(1.4 * a * s);
      p.local[kRShoulder] = rot_z(1.4 * a * s);
      break;
    }
    case MotionId::spin: {
      p.root_rot = rot_y(kPi * var.speed * t + var.phase);
      p.local[kLShoulder] = rot_x(-1.4 * a);
      p.local[kRShoulder] = rot_x(1.4 * a);
      break;
    }
  }
  return p;
}

void forward_kinematics(const Pose& pose, std::span<double> out /* (22, 3) */) {
  Vector3d pos[22];
  Matrix3d glob[22];
  pos[0] = pose.root;
  glob[0] = pose.root_rot * pose.local[0];
  for (std::size_t j = 1; j < 22; ++j) {
    const auto parent = static_cast<std::size_t>(kJoints[j].parent);
    pos[j] = pos[parent] + glob[parent] * Vector3d(kJoints[j].ox, kJoints[j].oy, kJoints[j].oz);
    glob[j] = glob[parent] * pose.local[j];
  }
  for (std::size_t j = 0; j < 22; ++j)
    for (int c = 0; c < 3; ++c) out[j * 3 + c] = pos[j][c];
}

}  // namespace

SkeletonTopology SkeletonTopology::humanml3d() {
  SkeletonTopology topo;
  topo.joint_count = 22;
  topo.root_index = 0;
  for (std::size_t j = 0; j < 22; ++j) {
    topo.joint_names.emplace_back(kJoints[j].name);
    if (kJoints[j].parent >= 0) topo.bones.emplace_back(static_cast<std::size_t>(kJoints[j].parent), j);
  }
  return topo;
}

void SkeletonTopology::validate() const {
  if (joint_count == 0) throw std::invalid_argument("topology needs at least one joint");
  if (joint_names.size() != joint_count) throw std::invalid_argument("joint_names size != joint_count");
  if (root_index >= joint_count) throw std::invalid_argument("root_index out of range");
  if (bones.size() != joint_count - 1) throw std::invalid_argument("a tree over K joints has K-1 bones");
  std::vector<std::vector<std::size_t>> adj(joint_count);
  for (const auto& [a, b] : bones) {
    if (a >= joint_count || b >= joint_count || a == b) throw std::invalid_argument("bone references invalid joints");
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  // K-1 edges plus connectivity implies acyclic.
  std::vector<bool> seen(joint_count, false);
  std::vector<std::size_t> stack{root_index};
  seen[root_index] = true;
  std::size_t visited = 1;
  while (!stack.empty()) {
    const auto j = stack.back();
    stack.pop_back();
    for (auto n : adj[j])
      if (!seen[n]) {
        seen[n] = true;
        ++visited;
        stack.push_back(n);
      }
  }
  if (visited != joint_count) throw std::invalid_argument("bone graph is not connected");
}

std::vector<std::size_t> SkeletonTopology::parents() const {
  std::vector<std::size_t> parent(joint_count);
  for (std::size_t j = 0; j < joint_count; ++j) parent[j] = j;
  std::vector<std::vector<std::size_t>> adj(joint_count);
  for (const auto& [a, b] : bones) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::vector<bool> seen(joint_count, false);
  std::vector<std::size_t> stack{root_index};
  seen[root_index] = true;
  while (!stack.empty()) {
    const auto j = stack.back();
    stack.pop_back();
    for (auto n : adj[j])
      if (!seen[n]) {
        seen[n] = true;
        parent[n] = j;
        stack.push_back(n);
      }
  }
  return parent;
}

std::optional<std::size_t> SkeletonTopology::joint_index(const std::string& name) const {
  for (std::size_t j = 0; j < joint_names.size(); ++j)
    if (joint_names[j] == name) return j;
  return std::nullopt;
}

bool KeypointSequence3D::all_finite() const {
  return std::all_of(positions.begin(), positions.end(), [](double v) { return std::isfinite(v); });
}

std::optional<MotionId> parse_motion_id(const std::string& label) {
  for (auto id : all_motions())
    if (to_string(id) == label) return id;
  return std::nullopt;
}

std::string to_string(MotionId id) {
  switch (id) {
    case MotionId::walk: return "walk";
    case MotionId::run: return "run";
    case MotionId::jump: return "jump";
    case MotionId::wave: return "wave";
    case MotionId::squat: return "squat";
    case MotionId::spin: return "spin";
  }
  return "?";
}

const std::vector<MotionId>& all_motions() {
  static const std::vector<MotionId> ids = {MotionId::walk, MotionId::run,   MotionId::jump,
                                            MotionId::wave, MotionId::squat, MotionId::spin};
  return ids;
}

KeypointSequence3D synthesize_motion(const MotionPrompt& prompt, const SkeletonTopology& topology, double fps) {
  const auto id = parse_motion_id(prompt.motion_id);
  if (!id) throw UnknownMotion("unknown motion_id '" + prompt.motion_id + "'");
  if (!(prompt.duration_s > 0.0) || !std::isfinite(prompt.duration_s)) {
    throw InvalidDuration("duration_s must be positive, got " + std::to_string(prompt.duration_s));
  }
  if (!(fps > 0.0)) throw std::invalid_argument("fps must be positive");
  if (topology.joint_count != 22 || topology.joint_names != SkeletonTopology::humanml3d().joint_names) {
    throw std::invalid_argument("procedural motions are defined on the 22-joint HumanML3D topology");
  }
  const auto frames = static_cast<std::size_t>(std::llround(prompt.duration_s * fps));
  if (frames == 0) throw InvalidDuration("duration too short for one frame at this fps");

  KeypointSequence3D seq;
  seq.frames = frames;
  seq.joints = 22;
  seq.fps = fps;
  seq.joint_names = topology.joint_names;
  seq.positions.assign(frames * 22 * 3, 0.0);
  const Variation var = draw_variation(*id, prompt.seed);
  for (std::size_t i = 0; i < frames; ++i) {
    const double t = static_cast<double>(i) / fps;
    const double u = frames > 1 ? static_cast<double>(i) / static_cast<double>(frames - 1) : 0.0;
    forward_kinematics(motion_pose(*id, t, u, var), std::span<double>(seq.positions).subspan(i * 66, 66));
  }
  // Root starts at the origin.
  const double r0[3] = {seq.at(0, 0, 0), seq.at(0, 0, 1), seq.at(0, 0, 2)};
  for (std::size_t i = 0; i < frames; ++i)
    for (std::size_t k = 0; k < 22; ++k)
      for (std::size_t c = 0; c < 3; ++c) seq.at(i, k, c) -= r0[c];
  return seq;
}

double max_bone_length_deviation(const KeypointSequence3D& seq, const SkeletonTopology& topology) {
  double worst = 0.0;
  auto len = [&](std::size_t t, std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) s += sq(seq.at(t, a, c) - seq.at(t, b, c));
    return std::sqrt(s);
  };
  for (const auto& [a, b] : topology.bones) {
    const double l0 = len(0, a, b);
    if (l0 <= 0.0) continue;
    for (std::size_t t = 1; t < seq.frames; ++t) worst = std::max(worst, std::abs(len(t, a, b) - l0) / l0);
  }
  return worst;
}

double max_frame_displacement(const KeypointSequence3D& seq) {
  double worst = 0.0;
  for (std::size_t t = 1; t < seq.frames; ++t)
    for (std::size_t k = 0; k < seq.joints; ++k) {
      double s = 0.0;
      for (std::size_t c = 0; c < 3; ++c) s += sq(seq.at(t, k, c) - seq.at(t - 1, k, c));
      worst = std::max(worst, std::sqrt(s));
    }
  return worst;
}

ProceduralGenerator::ProceduralGenerator(SkeletonTopology topology, double fps)
    : topology_(std::move(topology)), fps_(fps) {}

KeypointSequence3D ProceduralGenerator::generate(const MotionPrompt& prompt) {
  return synthesize_motion(prompt, topology_, fps_);
}

HttpGeneratorAdapter::HttpGeneratorAdapter(std::string host, int port, std::string path, double timeout_s)
    : host_(std::move(host)), port_(port), path_(std::move(path)), timeout_s_(timeout_s) {}

KeypointSequence3D HttpGeneratorAdapter::generate(const MotionPrompt& prompt) {
  httplib::Client client(host_, port_);
  const auto secs = static_cast<time_t>(timeout_s_);
  const auto usecs = static_cast<time_t>((timeout_s_ - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  const nlohmann::json body = {{"text", prompt.text},
                               {"motion_id", prompt.motion_id},
                               {"duration_s", prompt.duration_s},
                               {"seed", prompt.seed}};
  auto res = client.Post(path_, body.dump(), "application/json");
  if (!res) throw GeneratorUnavailable(name() + ": " + httplib::to_string(res.error()));
  if (res->status != 200) throw GeneratorUnavailable(name() + ": HTTP status " + std::to_string(res->status));
  try {
    return keypoints_from_json(res->body);
  } catch (const std::exception& e) {
    throw GeneratorUnavailable(name() + ": malformed response: " + e.what());
  }
}

KeypointSequence3D generate_structure(const MotionPrompt& prompt, const StructureGeneratorHandle& generator) {
  if (!generator) throw GeneratorUnavailable("no structure generator configured");
  KeypointSequence3D seq;
  if (dynamic_cast<ProceduralGenerator*>(generator.get())) {
    seq = generator->generate(prompt);
  } else {
    try {
      seq = generator->generate(prompt);
    } catch (const GeneratorUnavailable&) {
      throw;
    } catch (const std::exception& e) {
      throw GeneratorUnavailable(generator->name() + ": " + e.what());
    }
  }
  if (seq.frames == 0 || seq.joints == 0 || seq.positions.size() != seq.frames * seq.joints * 3) {
    throw GeneratorUnavailable(generator->name() + ": returned an empty or inconsistent sequence");
  }
  if (!seq.all_finite()) throw GeneratorUnavailable(generator->name() + ": returned non-finite keypoints");
  return seq;
}

std::string keypoints_to_json(const KeypointSequence3D& seq) {
  std::ostringstream os;
  os << "{\"fps\": " << std::llround(seq.fps) << ", \"joint_names\": " << nlohmann::json(seq.joint_names).dump()
     << ", \"frames\": [";
  char buf[32];
  for (std::size_t t = 0; t < seq.frames; ++t) {
    os << (t ? ", [" : "[");
    for (std::size_t k = 0; k < seq.joints; ++k) {
      os << (k ? ", [" : "[");
      for (std::size_t c = 0; c < 3; ++c) {
        std::snprintf(buf, sizeof(buf), "%.9g", seq.at(t, k, c));
        os << (c ? ", " : "") << buf;
      }
      os << "]";
    }
    os << "]";
  }
  os << "]}\n";
  return os.str();
}

KeypointSequence3D keypoints_from_json(const std::string& text) {
  const auto doc = nlohmann::json::parse(text);
  KeypointSequence3D seq;
  seq.fps = doc.at("fps").get<double>();
  seq.joint_names = doc.at("joint_names").get<std::vector<std::string>>();
  const auto& frames = doc.at("frames");
  seq.frames = frames.size();
  seq.joints = seq.joint_names.size();
  seq.positions.reserve(seq.frames * seq.joints * 3);
  for (const auto& f : frames) {
    if (f.size() != seq.joints) throw std::invalid_argument("frame joint count does not match joint_names");
    for (const auto& j : f) {
      if (j.size() != 3) throw std::invalid_argument("keypoint must have 3 coordinates");
      for (const auto& c : j) seq.positions.push_back(c.get<double>());
    }
  }
  return seq;
}

void write_keypoints(const std::filesystem::path& path, const KeypointSequence3D& seq) {
  io::write_text(path, keypoints_to_json(seq));
}

KeypointSequence3D read_keypoints(const std::filesystem::path& path) { return keypoints_from_json(io::read_text(path)); }

}  // namespace moco::motion
