#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "moco/motion.hpp"

using namespace moco::motion;

namespace {

MotionPrompt prompt(const std::string& id, double dur, std::uint64_t seed = 7) { return {"", id, dur, seed}; }

double root_travel(const KeypointSequence3D& s, std::size_t axis) {
  return std::abs(s.at(s.frames - 1, 0, axis) - s.at(0, 0, axis));
}

}  // namespace

TEST_CASE("default topology is a 22-joint tree") {
  auto topo = SkeletonTopology::humanml3d();
  CHECK(topo.joint_count == 22);
  CHECK(topo.bones.size() == 21);
  CHECK_NOTHROW(topo.validate());
  CHECK(topo.joint_index("left_ankle").value() == 7);
  auto parents = topo.parents();
  CHECK(parents[0] == 0);
  CHECK(parents[20] == 18);

  auto cyclic = topo;
  cyclic.bones.back() = {1, 4};
  CHECK_THROWS(cyclic.validate());
  auto self_loop = topo;
  self_loop.bones[0] = {3, 3};
  CHECK_THROWS(self_loop.validate());
}

TEST_CASE("frame count is round(duration * fps)") {
  auto topo = SkeletonTopology::humanml3d();
  CHECK(synthesize_motion(prompt("walk", 2.0), topo).frames == 32);
  CHECK(synthesize_motion(prompt("walk", 1.03), topo).frames == 16);
  CHECK(synthesize_motion(prompt("run", 0.5), topo, 30.0).frames == 15);
}

TEST_CASE("synthesis is bitwise deterministic") {
  auto topo = SkeletonTopology::humanml3d();
  for (auto id : all_motions()) {
    auto a = synthesize_motion(prompt(to_string(id), 1.5, 3), topo);
    auto b = synthesize_motion(prompt(to_string(id), 1.5, 3), topo);
    CHECK(a.positions == b.positions);
  }
  auto c = synthesize_motion(prompt("walk", 1.5, 4), topo);
  CHECK(c.positions != synthesize_motion(prompt("walk", 1.5, 3), topo).positions);
}

TEST_CASE("walk travels, wave stays put") {
  auto topo = SkeletonTopology::humanml3d();
  auto walk = synthesize_motion(prompt("walk", 2.0), topo);
  auto wave = synthesize_motion(prompt("wave", 2.0), topo);
  CHECK(root_travel(walk, 0) > 0.5);
  double wave_max = 0.0;
  for (std::size_t t = 0; t < wave.frames; ++t)
    wave_max = std::max(wave_max, std::hypot(wave.at(t, 0, 0), wave.at(t, 0, 1), wave.at(t, 0, 2)));
  CHECK(wave_max < 0.05);
}

TEST_CASE("root starts at the origin") {
  auto topo = SkeletonTopology::humanml3d();
  for (auto id : all_motions()) {
    auto s = synthesize_motion(prompt(to_string(id), 1.0, 11), topo);
    for (std::size_t c = 0; c < 3; ++c) CHECK(s.at(0, 0, c) == 0.0);
  }
}

TEST_CASE("kinematic invariants hold for every motion and several seeds") {
  auto topo = SkeletonTopology::humanml3d();
  for (auto id : all_motions())
    for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
      auto s = synthesize_motion(prompt(to_string(id), 2.0, seed), topo);
      CAPTURE(to_string(id));
      CHECK(s.all_finite());
      CHECK(max_bone_length_deviation(s, topo) < 0.01);
      CHECK(max_frame_displacement(s) < 0.3);
    }
}

TEST_CASE("errors") {
  auto topo = SkeletonTopology::humanml3d();
  CHECK_THROWS_AS(synthesize_motion(prompt("moonwalk", 1.0), topo), UnknownMotion);
  CHECK_THROWS_AS(synthesize_motion(prompt("walk", 0.0), topo), InvalidDuration);
  CHECK_THROWS_AS(synthesize_motion(prompt("walk", -1.0), topo), InvalidDuration);
}

TEST_CASE("procedural jump rises and lands") {
  StructureGeneratorHandle gen = std::make_shared<ProceduralGenerator>();
  auto s = generate_structure(prompt("jump", 1.0), gen);
  CHECK(s.frames == 16);
  double peak = 0.0;
  for (std::size_t t = 0; t < s.frames; ++t) peak = std::max(peak, s.at(t, 0, 1));
  CHECK(peak > 0.2);
  CHECK(std::abs(s.at(s.frames - 1, 0, 1) - s.at(0, 0, 1)) < 0.02);
}

TEST_CASE("empty text is accepted by the procedural generator") {
  StructureGeneratorHandle gen = std::make_shared<ProceduralGenerator>();
  CHECK_NOTHROW(generate_structure({"", "squat", 1.0, 0}, gen));
}

TEST_CASE("unreachable adapter surfaces GeneratorUnavailable") {
  StructureGeneratorHandle gen = std::make_shared<HttpGeneratorAdapter>("127.0.0.1", 9, "/generate", 0.5);
  CHECK_THROWS_AS(generate_structure(prompt("walk", 1.0), gen), GeneratorUnavailable);
  CHECK_THROWS_AS(generate_structure(prompt("walk", 1.0), nullptr), GeneratorUnavailable);
}

TEST_CASE("keypoint file round-trips at 9 significant digits") {
  auto topo = SkeletonTopology::humanml3d();
  auto s = synthesize_motion(prompt("spin", 1.0), topo);
  const std::string text = keypoints_to_json(s);
  auto back = keypoints_from_json(text);
  CHECK(back.frames == s.frames);
  CHECK(back.joint_names == s.joint_names);
  CHECK(back.fps == 16.0);
  for (std::size_t i = 0; i < s.positions.size(); ++i) {
    const double tol = 5e-9 * std::max(std::abs(s.positions[i]), 1e-300);
    CHECK(std::abs(back.positions[i] - s.positions[i]) <= tol);
  }
  // A second pass is a fixed point.
  CHECK(keypoints_to_json(back) == text);

  const auto path = std::filesystem::temp_directory_path() / "moco_kp_roundtrip.json";
  write_keypoints(path, back);
  CHECK(read_keypoints(path).positions == back.positions);
  std::filesystem::remove(path);
}
