#include <random>

#include "doctest.h"
#include "moco/model.hpp"

using namespace moco;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) { return a.bitwise_equal(b); }

ModelConfig tiny_config() {
  ModelConfig c;
  c.backbone.block_count = 3;
  c.backbone.width = 16;
  c.backbone.heads = 2;
  c.backbone.mlp_ratio = 2;
  c.backbone.vae.patch_t = 2;
  c.backbone.vae.patch_h = 4;
  c.backbone.vae.patch_w = 4;
  c.branch_blocks = 2;
  c.seed = 3;
  return c;
}

// Video (1, 4, 8, 8, 3) -> latent (1, 2, 96, 2, 2).
Shape latent_shape(const MocoModel& m) { return m.vae().latent_shape({1, 4, 8, 8, 3}); }

void randomize(MocoModel& m, const std::string& name, std::uint64_t seed, double std = 0.1) {
  Rng rng(seed);
  auto& v = m.params().at(name);
  v.mutable_value() = randn(v.shape(), rng, std);
}

}  // namespace

TEST_CASE("conditional and unconditional sampling agree bitwise at initialization") {
  MocoModel m(tiny_config());
  randomize(m, "backbone/head/weight", 11);
  const Shape ls = latent_shape(m);
  Rng rng(5);
  const Tensor skel = randn(ls, rng);
  const Tensor z_T = randn(ls, rng);
  const auto schedule = diffusion::build_schedule(10, 1e-3, 0.2);
  Rng r1(9), r2(9);
  const Tensor cond = diffusion::sample_latent(z_T, m.predictor("a man walks", skel), schedule,
                                               diffusion::SamplerMode::ddpm_ancestral, r1);
  const Tensor uncond = diffusion::sample_latent(z_T, m.predictor("a man walks", std::nullopt), schedule,
                                                 diffusion::SamplerMode::ddpm_ancestral, r2);
  CHECK(bitwise_equal(cond, uncond));
  CHECK_FALSE(bitwise_equal(cond, z_T));
}

TEST_CASE("forward reports one weight map and one mask prediction per branch block") {
  MocoModel m(tiny_config());
  const Shape ls = latent_shape(m);
  Rng rng(2);
  const Tensor z = randn(ls, rng), skel = randn(ls, rng);
  const auto text = m.text_encoder().encode({"a woman runs"});
  const auto out = m.forward(constant(z), {4}, text, &skel);
  REQUIRE(out.weights.size() == 2);
  REQUIRE(out.mask_preds.size() == 2);
  CHECK(out.weights[0].shape() == Shape{1, 8, 1});
  CHECK(out.mask_preds[1].shape() == ls);
  CHECK(out.eps_hat.shape() == ls);
  const auto plain = m.forward(constant(z), {4}, text, nullptr);
  CHECK(plain.weights.empty());
}

TEST_CASE("a trained injection makes the skeleton change the prediction") {
  MocoModel m(tiny_config());
  randomize(m, "backbone/head/weight", 11);
  randomize(m, "structure_branch/blocks/0/injection/weight", 12);
  const Shape ls = latent_shape(m);
  Rng rng(3);
  const Tensor z = randn(ls, rng), skel = randn(ls, rng);
  const auto text = m.text_encoder().encode({"a woman runs"});
  NoGradGuard guard;
  const Tensor with = m.forward(constant(z), {4}, text, &skel).eps_hat.value();
  const Tensor without = m.forward(constant(z), {4}, text, nullptr).eps_hat.value();
  CHECK_FALSE(bitwise_equal(with, without));
}

TEST_CASE("reset_branch recopies the backbone and zeroes injections") {
  MocoModel m(tiny_config());
  randomize(m, "backbone/blocks/1/attn/q/weight", 4);
  randomize(m, "structure_branch/blocks/0/injection/weight", 5);
  m.reset_branch();
  CHECK(bitwise_equal(m.params().at("backbone/blocks/1/attn/q/weight").value(),
                      m.params().at("structure_branch/blocks/1/attn/q/weight").value()));
  for (double v : m.params().at("structure_branch/blocks/0/injection/weight").value().data()) CHECK(v == 0.0);
}

TEST_CASE("ablation configs build the expected namespaces") {
  auto c = tiny_config();
  c.hadc_enabled = false;
  MocoModel no_hadc(c);
  CHECK(no_hadc.has_branch());
  CHECK_FALSE(no_hadc.params().contains("hadc/P_k/0/fc1/weight"));
  c.structure_enabled = false;
  MocoModel backbone_only(c);
  CHECK_FALSE(backbone_only.has_branch());
  const Shape ls = latent_shape(backbone_only);
  Rng rng(1);
  const Tensor z = randn(ls, rng), skel = randn(ls, rng);
  const auto text = backbone_only.text_encoder().encode({"x"});
  CHECK(backbone_only.forward(constant(z), {1}, text, &skel).weights.empty());
}

TEST_CASE("invalid branch depth is rejected") {
  auto c = tiny_config();
  c.branch_blocks = 4;
  CHECK_THROWS_AS(MocoModel{c}, std::invalid_argument);
}

TEST_CASE("load_parameters rejects mismatched shapes") {
  MocoModel m(tiny_config());
  io::ArrayContainer c;
  for (const auto& [name, v] : m.params().items()) c.put(name, v.value());
  c.put("backbone/head/bias", Tensor(Shape{1}));
  CHECK_THROWS_AS(m.load_parameters(c), io::IOError);
}
