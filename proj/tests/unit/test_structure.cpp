#include <set>

#include "doctest.h"
#include "moco/hadc.hpp"
#include "moco/structure.hpp"

using namespace moco;
using namespace moco::diffusion;
using namespace moco::structure;

namespace {

BackboneConfig tiny_config() {
  BackboneConfig c;
  c.block_count = 3;
  c.width = 8;
  c.heads = 2;
  c.vae.patch_t = 2;
  c.vae.patch_h = 4;
  c.vae.patch_w = 4;
  return c;
}

struct Fixture {
  ParameterSet params;
  Rng rng{5};
  BackboneConfig config = tiny_config();
  TextEncoder text{params, config.width, rng};
  Backbone backbone{config, params, rng};
  Vae vae{config.vae, params};
  StructureBranch branch{backbone, 2, params};
};

Tensor skeleton_video(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor v(Shape{1, 4, 8, 8, 3});
  for (auto& x : v.storage()) x = u(rng);
  return v;
}

}  // namespace

TEST_CASE("branch yields N token-shaped features that are zero at init") {
  Fixture f;
  auto text = f.text.encode({"a person walks"});
  auto feats = encode_structure(f.branch, f.backbone, f.vae, skeleton_video(f.rng), text, {3});
  REQUIRE(feats.per_block.size() == 2);
  for (const auto& s : feats.per_block) {
    CHECK(s.shape() == Shape{1, 8, 8});
    for (double v : s.value().data()) CHECK(v == 0.0);
  }
}

TEST_CASE("copied block weights equal backbone weights bitwise") {
  Fixture f;
  for (std::size_t k = 0; k < f.branch.size(); ++k) {
    auto& src = const_cast<DitBlock&>(f.backbone.blocks()[k]);
    auto& dst = const_cast<DitBlock&>(f.branch.blocks()[k]);
    auto a = block_parameters(src);
    auto b = block_parameters(dst);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i]->value().bitwise_equal(b[i]->value()));
      CHECK(a[i]->node() != b[i]->node());
    }
  }
  CHECK(f.branch.embed().weight.value().bitwise_equal(f.backbone.patch_embed().weight.value()));
}

TEST_CASE("branch size must lie in [1, block_count]") {
  Fixture f;
  ParameterSet other;
  CHECK_THROWS_AS(StructureBranch(f.backbone, 0, other), std::invalid_argument);
  CHECK_THROWS_AS(StructureBranch(f.backbone, 4, other), std::invalid_argument);
  CHECK_NOTHROW(StructureBranch(f.backbone, 3, other));
}

TEST_CASE("non-divisible skeleton video is a shape error") {
  Fixture f;
  auto text = f.text.encode({"x"});
  Tensor bad(Shape{1, 3, 8, 8, 3});
  CHECK_THROWS_AS(encode_structure(f.branch, f.backbone, f.vae, bad, text, {1}), ShapeError);
}

TEST_CASE("freeze plan partitions every parameter exactly once") {
  Fixture f;
  auto h = hadc::make_hadc(f.params, 2, f.config.width, 4, f.config.vae.latent_channels(), 1, f.rng);
  auto part = freeze_plan(f.params);
  CHECK(part.frozen.size() + part.trainable.size() == f.params.items().size());
  std::set<std::string> seen(part.frozen.begin(), part.frozen.end());
  seen.insert(part.trainable.begin(), part.trainable.end());
  CHECK(seen.size() == f.params.items().size());
  auto in = [](const std::vector<std::string>& v, const std::string& name) {
    return std::find(v.begin(), v.end(), name) != v.end();
  };
  CHECK(in(part.frozen, "backbone/blocks/0/attn/q/weight"));
  CHECK(in(part.frozen, "text/table"));
  CHECK(in(part.trainable, "hadc/P_k/0/fc1/weight"));
  CHECK(in(part.trainable, "structure_branch/blocks/1/injection/weight"));

  apply_partition(f.params, part);
  CHECK_FALSE(f.params.at("backbone/head/weight").requires_grad());
  CHECK(f.params.at("hadc/U_k/1/conv/weight").requires_grad());
}

TEST_CASE("parameters outside known namespaces are rejected") {
  ParameterSet p;
  p.add("stray/w", Tensor(Shape{1}, 0.0));
  CHECK_THROWS_AS(freeze_plan(p), std::invalid_argument);
}
