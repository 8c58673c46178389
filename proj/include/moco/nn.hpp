// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "moco/autograd.hpp"

namespace moco {

using Rng = std::mt19937_64;

Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0);

/// Named, ordered collection of parameters. Names use '/' separated namespaces.
class ParameterSet {
 public:
  Var& add(const std::string& name, Tensor init, bool trainable = true);
  const Var& at(const std::string& name) const;
  Var& at(const std::string& name);
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
  std::vector<std::pair<std::string, Var>>& items() { return items_; }
  std::size_t scalar_count() const;

 private:
  std::vector<std::pair<std::string, Var>> items_;
  std::map<std::string, std::size_t> index_;
};

struct Linear {
  Var weight;  // (in, out)
  Var bias;    // (out)

  Var operator()(const Var& x) const { return ops::linear(x, weight, bias); }
};

/// Registers `<prefix>/weight` and `<prefix>/bias`. Weights ~ N(0, gain^2 / in); biases zero.
Linear make_linear(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
                   double gain = 1.0);

/// Three linear layers with GELU between them.
struct Mlp3 {
  Linear l1, l2, l3;
  Var operator()(const Var& x) const { return l3(ops::gelu(l2(ops::gelu(l1(x))))); }
};

Mlp3 make_mlp3(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t hidden,
               std::size_t out, Rng& rng);

}  // namespace moco
