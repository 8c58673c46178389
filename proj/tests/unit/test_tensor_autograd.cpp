#include <cmath>

#include "doctest.h"
#include "moco/autograd.hpp"
#include "moco/nn.hpp"
#include "support/gradcheck.hpp"

using namespace moco;
using moco::testing::gradcheck;

namespace {

Var rand_var(const Shape& s, Rng& rng, bool grad = true) { return Var(randn(s, rng), grad); }

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.reshaped({3, 2}).dim(0) == 3);
  CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1.0}), ShapeError);
  Tensor u = t;
  CHECK(u.bitwise_equal(t));
  u[0] = std::nextafter(1.5, 2.0);
  CHECK_FALSE(u.bitwise_equal(t));
  u[0] = NAN;
  CHECK_FALSE(u.all_finite());
}

TEST_CASE("no graph is recorded for frozen inputs or under NoGradGuard") {
  Rng rng(1);
  Var a = rand_var({3}, rng, false);
  Var b = rand_var({3}, rng, true);
  CHECK_FALSE(ops::add(a, a).requires_grad());
  CHECK(ops::add(a, b).requires_grad());
  NoGradGuard guard;
  CHECK_FALSE(ops::add(a, b).requires_grad());
}

TEST_CASE("gradient only reaches inputs that require it") {
  Rng rng(2);
  Var a = rand_var({4}, rng, false);
  Var b = rand_var({4}, rng, true);
  backward(ops::sum(ops::mul(a, b)));
  CHECK(a.node()->grad.empty());
  for (std::size_t i = 0; i < 4; ++i) CHECK(b.grad()[i] == a.value()[i]);
}

TEST_CASE("elementwise and reduction op gradients") {
  Rng rng(3);
  Var x = rand_var({2, 5}, rng);
  Var y = rand_var({2, 5}, rng, false);
  Var g = rand_var({2, 1}, rng, false);
  Var bias = rand_var({5}, rng, false);
  auto f = [&] {
    Var h = ops::axpby(0.7, x, -1.3, y);
    h = ops::add_bias(ops::mul(h, x), bias);
    h = ops::mul_gate(ops::gelu(h), ops::sigmoid(g));
    return ops::mean(ops::mul(h, h));
  };
  CHECK(gradcheck(x, f).max_rel_error < 1e-6);
  Var gg = rand_var({2, 1}, rng);
  auto f2 = [&] { return ops::sum(ops::mul_gate(ops::sigmoid(x), ops::sigmoid(gg))); };
  CHECK(gradcheck(gg, f2).max_rel_error < 1e-6);
}

TEST_CASE("linear, layer_norm, concat and gather gradients") {
  Rng rng(4);
  Var x = rand_var({3, 4}, rng);
  Var w = rand_var({8, 2}, rng);
  Var b = rand_var({2}, rng);
  std::vector<std::size_t> idx = {5, 0, 0, 4, 3, 1};
  auto f = [&] {
    Var ln = ops::layer_norm(x);
    Var cat = ops::concat_last(ln, ops::scale(x, 0.5));
    Var out = ops::linear(cat, w, b);
    Var picked = ops::gather(out, idx, {2, 3});
    return ops::sum(ops::mul(picked, picked));
  };
  CHECK(gradcheck(x, f).max_rel_error < 1e-5);
  CHECK(gradcheck(w, f).max_rel_error < 1e-5);
  CHECK(gradcheck(b, f).max_rel_error < 1e-5);
}

TEST_CASE("attention gradients with key masking") {
  Rng rng(5);
  Var q = rand_var({2, 3, 4}, rng);
  Var k = rand_var({2, 5, 4}, rng);
  Var v = rand_var({2, 5, 4}, rng);
  std::vector<std::size_t> lens = {5, 2};
  Var probe = rand_var({2, 3, 4}, rng, false);
  auto f = [&] { return ops::sum(ops::mul(ops::attention(q, k, v, 2, &lens), probe)); };
  CHECK(gradcheck(q, f).max_rel_error < 1e-5);
  CHECK(gradcheck(k, f).max_rel_error < 1e-5);
  CHECK(gradcheck(v, f).max_rel_error < 1e-5);
  // Masked keys receive no gradient.
  for (std::size_t j = 2; j < 5; ++j)
    for (std::size_t c = 0; c < 4; ++c) CHECK(v.grad()[(5 + j) * 4 + c] == 0.0);
}

TEST_CASE("attention with a single valid key copies its value") {
  Var q(Tensor({1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
  Var k(Tensor({1, 3, 2}, std::vector<double>{0, 1, 5, 5, 9, 9}));
  Var v(Tensor({1, 3, 2}, std::vector<double>{7, 8, 0, 0, 0, 0}));
  std::vector<std::size_t> lens = {1};
  Var o = ops::attention(q, k, v, 1, &lens);
  CHECK(o.value()[0] == 7.0);
  CHECK(o.value()[3] == 8.0);
}

TEST_CASE("conv3d_same gradients and zero padding") {
  Rng rng(6);
  Var x = rand_var({1, 2, 3, 3, 2}, rng);
  Var w = rand_var({27 * 2, 3}, rng);
  Var b = rand_var({3}, rng);
  Var probe = rand_var({1, 2, 3, 3, 3}, rng, false);
  auto f = [&] { return ops::sum(ops::mul(ops::conv3d_same(x, w, b), probe)); };
  CHECK(gradcheck(x, f).max_rel_error < 1e-6);
  CHECK(gradcheck(w, f).max_rel_error < 1e-6);
  CHECK(gradcheck(b, f).max_rel_error < 1e-6);

  // Centre tap only: output equals input plus bias.
  Tensor wc({27, 1}, 0.0);
  wc[13] = 1.0;
  Var xi = rand_var({1, 2, 2, 2, 1}, rng, false);
  Var y = ops::conv3d_same(xi, Var(wc), Var(Tensor({1}, 0.25)));
  for (std::size_t i = 0; i < xi.size(); ++i) CHECK(y.value()[i] == xi.value()[i] + 0.25);
}

TEST_CASE("mse values and shape errors") {
  Var a(Tensor({2}, std::vector<double>{0, 0}));
  Var b(Tensor({2}, std::vector<double>{1, 3}));
  CHECK(ops::mse(a, b).item() == 5.0);
  CHECK_THROWS_AS(ops::mse(a, Var(Tensor({3}))), ShapeError);
}

TEST_CASE("parameter set rejects duplicates and preserves order") {
  ParameterSet p;
  Rng rng(7);
  make_linear(p, "a", 2, 3, rng);
  CHECK_THROWS(p.add("a/weight", Tensor({1})));
  CHECK(p.items()[0].first == "a/weight");
  CHECK(p.items()[1].first == "a/bias");
  CHECK(p.scalar_count() == 9);
}
