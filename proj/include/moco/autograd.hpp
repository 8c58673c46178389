// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode automatic differentiation over `Tensor`.
//
// A `Var` is a shared handle to a graph node. Operations record their parents
// and a backward closure only when at least one input requires a gradient and
// no `NoGradGuard` is active, so inference on frozen weights builds no graph.
#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "moco/tensor.hpp"

namespace moco {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  /// Direct write access; used by optimizers and finite-difference checks.
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  double item() const { return node_->value.item(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool defined() const { return static_cast<bool>(node_); }

  /// Accumulated gradient; a zero tensor of the value's shape when none reached this node.
  Tensor grad() const;
  void zero_grad();

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Back-propagates from a single-element root (seed 1).
void backward(const Var& root);

/// Builds an output node. `fn` receives the output node (whose grad is set)
/// and must accumulate into each parent's grad_buffer() that requires grad.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn);

Var constant(Tensor t);

namespace ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// alpha * a + beta * b, same shapes.
Var axpby(double alpha, const Var& a, double beta, const Var& b);
/// x (..., D) + bias (D).
Var add_bias(const Var& x, const Var& bias);
/// x (..., D) * gate (..., 1), gate broadcast over the last axis.
Var mul_gate(const Var& x, const Var& gate);
/// x (..., in) @ w (in, out).
Var matmul(const Var& x, const Var& w);
Var linear(const Var& x, const Var& w, const Var& b);
/// Normalizes the last axis to zero mean and unit variance (no affine).
Var layer_norm(const Var& x, double eps = 1e-5);
Var gelu(const Var& x);
Var sigmoid(const Var& x);
Var concat_last(const Var& a, const Var& b);
Var reshape(const Var& x, Shape shape);
/// out[i] = x[index[i]]; backward scatter-adds. Covers permutes, patchify and upsampling.
Var gather(const Var& x, std::vector<std::size_t> index, Shape out_shape);
/// Multi-head scaled dot-product attention. q (B, Lq, D), k/v (B, Lk, D).
/// `key_lengths` (size B) masks keys at positions >= length.
Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads,
              const std::vector<std::size_t>* key_lengths = nullptr);
/// 3x3x3 convolution with zero padding 1 on channels-last x (B, F, H, W, Cin);
/// w (27 * Cin, Cout) ordered (kf, kh, kw, cin); b (Cout).
Var conv3d_same(const Var& x, const Var& w, const Var& b);
Var sum(const Var& x);
Var mean(const Var& x);
/// Mean of squared differences; throws ShapeError on mismatch.
Var mse(const Var& a, const Var& b);
/// Sum of scalars.
Var add_scalars(const std::vector<Var>& terms);

}  // namespace ops

}  // namespace moco
