// SPDX-License-Identifier: Apache-2.0
#include "moco/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace moco {

Tensor randn(const Shape& shape, Rng& rng, double stddev) {
  Tensor t(shape);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.storage()) v = dist(rng);
  return t;
}

Var& ParameterSet::add(const std::string& name, Tensor init, bool trainable) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_[name] = items_.size();
  items_.emplace_back(name, Var(std::move(init), trainable));
  return items_.back().second;
}

const Var& ParameterSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return items_[it->second].second;
}

Var& ParameterSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return items_[it->second].second;
}

bool ParameterSet::contains(const std::string& name) const { return index_.count(name) > 0; }

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : items_) n += v.size();
  return n;
}

Linear make_linear(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
                   double gain) {
  Linear l;
  l.weight = params.add(prefix + "/weight", randn({in, out}, rng, gain / std::sqrt(static_cast<double>(in))));
  l.bias = params.add(prefix + "/bias", Tensor({out}, 0.0));
  return l;
}

Mlp3 make_mlp3(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t hidden,
               std::size_t out, Rng& rng) {
  return Mlp3{make_linear(params, prefix + "/fc1", in, hidden, rng), make_linear(params, prefix + "/fc2", hidden, hidden, rng),
              make_linear(params, prefix + "/fc3", hidden, out, rng)};
}

}  // namespace moco
