// SPDX-License-Identifier: Apache-2.0
#include "moco/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

namespace moco {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using Strided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStrided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

Node& node_of(const Var& v) { return *v.node(); }

bool wants(const NodePtr& p) { return p && p->requires_grad; }

std::size_t last_dim(const Shape& s) {
  if (s.empty()) throw ShapeError("operation requires rank >= 1");
  return s.back();
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.size() != value.size()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  if (node_->grad.size() == node_->value.size()) return node_->grad;
  return Tensor(node_->value.shape(), 0.0);
}

void Var::zero_grad() { node_->grad = Tensor(); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  Var out(std::move(value), false);
  if (!g_grad_enabled) return out;
  const bool any = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p.requires_grad(); });
  if (!any) return out;
  Node& n = node_of(out);
  n.requires_grad = true;
  n.parents.reserve(parents.size());
  for (auto& p : parents) n.parents.push_back(p.node());
  n.backward_fn = std::move(fn);
  return out;
}

Var constant(Tensor t) { return Var(std::move(t), false); }

void backward(const Var& root) {
  if (root.size() != 1) throw ShapeError("backward() needs a single-element root, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
  }
}

namespace ops {

Var add(const Var& a, const Var& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor out = a.value();
  const double* pb = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!wants(p)) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) { return axpby(1.0, a, -1.0, b); }

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (wants(pa)) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (wants(pb)) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v *= s;
  return make_op(std::move(out), {a}, [s](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Var axpby(double alpha, const Var& a, double beta, const Var& b) {
  require_same_shape(a.shape(), b.shape(), "axpby");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * a.value()[i] + beta * b.value()[i];
  return make_op(std::move(out), {a, b}, [alpha, beta](Node& self) {
    const double coef[2] = {alpha, beta};
    for (int k = 0; k < 2; ++k) {
      const auto& p = self.parents[k];
      if (!wants(p)) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += coef[k] * self.grad[i];
    }
  });
}

Var add_bias(const Var& x, const Var& bias) {
  const std::size_t d = last_dim(x.shape());
  if (bias.shape() != Shape{d}) throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " vs x " + shape_str(x.shape()));
  Tensor out = x.value();
  const std::size_t rows = out.size() / d;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] += bias.value()[j];
  return make_op(std::move(out), {x, bias}, [d, rows](Node& self) {
    if (wants(self.parents[0])) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self.parents[1])) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j];
    }
  });
}

Var mul_gate(const Var& x, const Var& gate) {
  const std::size_t d = last_dim(x.shape());
  Shape expect = x.shape();
  expect.back() = 1;
  require_same_shape(gate.shape(), expect, "mul_gate");
  Tensor out = x.value();
  const std::size_t rows = out.size() / d;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] *= gate.value()[r];
  return make_op(std::move(out), {x, gate}, [d, rows](Node& self) {
    const auto& px = self.parents[0];
    const auto& pg = self.parents[1];
    if (wants(px)) {
      auto& g = px->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) g[r * d + j] += self.grad[r * d + j] * pg->value[r];
    }
    if (wants(pg)) {
      auto& g = pg->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += self.grad[r * d + j] * px->value[r * d + j];
        g[r] += acc;
      }
    }
  });
}

Var matmul(const Var& x, const Var& w) {
  if (w.shape().size() != 2) throw ShapeError("matmul: weight must be 2-D, got " + shape_str(w.shape()));
  const std::size_t in = w.shape()[0], outd = w.shape()[1];
  if (last_dim(x.shape()) != in) throw ShapeError("matmul: " + shape_str(x.shape()) + " @ " + shape_str(w.shape()));
  const std::size_t rows = x.size() / in;
  Shape os = x.shape();
  os.back() = outd;
  Tensor out(os);
  MapMat(out.ptr(), rows, outd).noalias() = CMapMat(x.value().ptr(), rows, in) * CMapMat(w.value().ptr(), in, outd);
  return make_op(std::move(out), {x, w}, [rows, in, outd](Node& self) {
    const auto& px = self.parents[0];
    const auto& pw = self.parents[1];
    CMapMat gy(self.grad.ptr(), rows, outd);
    if (wants(px)) {
      MapMat(px->grad_buffer().ptr(), rows, in).noalias() += gy * CMapMat(pw->value.ptr(), in, outd).transpose();
    }
    if (wants(pw)) {
      MapMat(pw->grad_buffer().ptr(), in, outd).noalias() += CMapMat(px->value.ptr(), rows, in).transpose() * gy;
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) { return add_bias(matmul(x, w), b); }

Var layer_norm(const Var& x, double eps) {
  const std::size_t d = last_dim(x.shape());
  const std::size_t rows = x.size() / d;
  Tensor out(x.shape());
  std::vector<double> inv_std(rows);
  const double* px = x.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (row[j] - mu) * is;
  }
  Var result = make_op(std::move(out), {x}, nullptr);
  if (result.requires_grad()) {
    result.node()->backward_fn = [d, rows, inv_std = std::move(inv_std)](Node& self) {
      auto& g = self.parents[0]->grad_buffer();
      const double* y = self.value.ptr();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gy = self.grad.ptr() + r * d;
        const double* yr = y + r * d;
        double mg = 0.0, mgy = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          mg += gy[j];
          mgy += gy[j] * yr[j];
        }
        mg /= static_cast<double>(d);
        mgy /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) g[r * d + j] += inv_std[r] * (gy[j] - mg - yr[j] * mgy);
      }
    };
  }
  return result;
}

Var gelu(const Var& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.value()[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  }
  return make_op(std::move(out), {x}, [](Node& self) {
    const auto& p = self.parents[0];
    auto& g = p->grad_buffer();
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = p->value[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Var sigmoid(const Var& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x.value()[i]));
  return make_op(std::move(out), {x}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = self.value[i];
      g[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

Var concat_last(const Var& a, const Var& b) {
  Shape sa = a.shape(), sb = b.shape();
  if (sa.size() != sb.size() || sa.empty() || !std::equal(sa.begin(), sa.end() - 1, sb.begin())) {
    throw ShapeError("concat_last: " + shape_str(sa) + " vs " + shape_str(sb));
  }
  const std::size_t da = sa.back(), db = sb.back(), rows = a.size() / da;
  Shape so = sa;
  so.back() = da + db;
  Tensor out(so);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.value().ptr() + r * da, da, out.ptr() + r * (da + db));
    std::copy_n(b.value().ptr() + r * db, db, out.ptr() + r * (da + db) + da);
  }
  return make_op(std::move(out), {a, b}, [da, db, rows](Node& self) {
    const std::size_t w = da + db;
    if (wants(self.parents[0])) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < da; ++j) g[r * da + j] += self.grad[r * w + j];
    }
    if (wants(self.parents[1])) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < db; ++j) g[r * db + j] += self.grad[r * w + da + j];
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_op(std::move(out), {x}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var gather(const Var& x, std::vector<std::size_t> index, Shape out_shape) {
  if (numel(out_shape) != index.size()) throw ShapeError("gather: index size does not match output shape");
  Tensor out(std::move(out_shape));
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= n) throw ShapeError("gather: index out of range");
    out[i] = x.value()[index[i]];
  }
  return make_op(std::move(out), {x}, [index = std::move(index)](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += self.grad[i];
  });
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads,
              const std::vector<std::size_t>* key_lengths) {
  const Shape& sq = q.shape();
  const Shape& sk = k.shape();
  if (sq.size() != 3 || sk.size() != 3 || v.shape() != sk || sq[0] != sk[0] || sq[2] != sk[2]) {
    throw ShapeError("attention: q " + shape_str(sq) + " k " + shape_str(sk) + " v " + shape_str(v.shape()));
  }
  const std::size_t B = sq[0], Lq = sq[1], Lk = sk[1], D = sq[2];
  if (heads == 0 || D % heads != 0) throw ShapeError("attention: width not divisible by heads");
  if (key_lengths && key_lengths->size() != B) throw ShapeError("attention: key_lengths size mismatch");
  const std::size_t dh = D / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor out(sq);
  auto probs = std::make_shared<std::vector<double>>(B * heads * Lq * Lk);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t valid = key_lengths ? std::min((*key_lengths)[b], Lk) : Lk;
    if (valid == 0) throw ShapeError("attention: no valid keys");
    for (std::size_t h = 0; h < heads; ++h) {
      CStrided Q(q.value().ptr() + b * Lq * D + h * dh, Lq, dh, Eigen::OuterStride<>(D));
      CStrided K(k.value().ptr() + b * Lk * D + h * dh, valid, dh, Eigen::OuterStride<>(D));
      CStrided V(v.value().ptr() + b * Lk * D + h * dh, valid, dh, Eigen::OuterStride<>(D));
      MapMat P(probs->data() + (b * heads + h) * Lq * Lk, Lq, Lk);
      P.setZero();
      auto Pv = P.leftCols(valid);
      Pv.noalias() = (Q * K.transpose()) * inv_scale;
      for (std::size_t i = 0; i < Lq; ++i) {
        const double m = Pv.row(i).maxCoeff();
        Pv.row(i) = (Pv.row(i).array() - m).exp();
        Pv.row(i) /= Pv.row(i).sum();
      }
      Strided O(out.ptr() + b * Lq * D + h * dh, Lq, dh, Eigen::OuterStride<>(D));
      O.noalias() = Pv * V;
    }
  }
  std::vector<std::size_t> lens;
  if (key_lengths) lens = *key_lengths;
  return make_op(std::move(out), {q, k, v}, [=, lens = std::move(lens)](Node& self) {
    const auto& pq = self.parents[0];
    const auto& pk = self.parents[1];
    const auto& pv = self.parents[2];
    double* gq = wants(pq) ? pq->grad_buffer().ptr() : nullptr;
    double* gk = wants(pk) ? pk->grad_buffer().ptr() : nullptr;
    double* gv = wants(pv) ? pv->grad_buffer().ptr() : nullptr;
    RowMat dP, dS;
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t valid = lens.empty() ? Lk : std::min(lens[b], Lk);
      for (std::size_t h = 0; h < heads; ++h) {
        CStrided Q(pq->value.ptr() + b * Lq * D + h * dh, Lq, dh, Eigen::OuterStride<>(D));
        CStrided K(pk->value.ptr() + b * Lk * D + h * dh, valid, dh, Eigen::OuterStride<>(D));
        CStrided V(pv->value.ptr() + b * Lk * D + h * dh, valid, dh, Eigen::OuterStride<>(D));
        CStrided dO(self.grad.ptr() + b * Lq * D + h * dh, Lq, dh, Eigen::OuterStride<>(D));
        CMapMat Pfull(probs->data() + (b * heads + h) * Lq * Lk, Lq, Lk);
        auto P = Pfull.leftCols(valid);
        if (gv) {
          Strided GV(gv + b * Lk * D + h * dh, valid, dh, Eigen::OuterStride<>(D));
          GV.noalias() += P.transpose() * dO;
        }
        if (!gq && !gk) continue;
        dP.noalias() = dO * V.transpose();
        dS = P.array() * (dP.colwise() - (dP.array() * P.array()).rowwise().sum().matrix()).array();
        dS *= inv_scale;
        if (gq) {
          Strided GQ(gq + b * Lq * D + h * dh, Lq, dh, Eigen::OuterStride<>(D));
          GQ.noalias() += dS * K;
        }
        if (gk) {
          Strided GK(gk + b * Lk * D + h * dh, valid, dh, Eigen::OuterStride<>(D));
          GK.noalias() += dS.transpose() * Q;
        }
      }
    }
  });
}

Var conv3d_same(const Var& x, const Var& w, const Var& b) {
  const Shape& sx = x.shape();
  if (sx.size() != 5) throw ShapeError("conv3d_same: input must be (B, F, H, W, C), got " + shape_str(sx));
  const std::size_t B = sx[0], F = sx[1], H = sx[2], W = sx[3], Cin = sx[4];
  if (w.shape().size() != 2 || w.shape()[0] != 27 * Cin) {
    throw ShapeError("conv3d_same: weight " + shape_str(w.shape()) + " for Cin=" + std::to_string(Cin));
  }
  const std::size_t Cout = w.shape()[1];
  if (b.shape() != Shape{Cout}) throw ShapeError("conv3d_same: bias shape");
  const std::size_t P = F * H * W, K = 27 * Cin;

  // im2col, shared between forward and backward.
  auto cols = std::make_shared<std::vector<double>>(B * P * K, 0.0);
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          double* row = cols->data() + (bi * P + (f * H + y) * W + xx) * K;
          for (int kf = 0; kf < 3; ++kf)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const long ff = static_cast<long>(f) + kf - 1, yy = static_cast<long>(y) + ky - 1,
                           xs = static_cast<long>(xx) + kx - 1;
                if (ff < 0 || yy < 0 || xs < 0 || ff >= static_cast<long>(F) || yy >= static_cast<long>(H) ||
                    xs >= static_cast<long>(W))
                  continue;
                const double* src = x.value().ptr() + (((bi * F + ff) * H + yy) * W + xs) * Cin;
                std::copy_n(src, Cin, row + ((kf * 3 + ky) * 3 + kx) * Cin);
              }
        }
  Tensor out(Shape{B, F, H, W, Cout});
  MapMat O(out.ptr(), B * P, Cout);
  O.noalias() = CMapMat(cols->data(), B * P, K) * CMapMat(w.value().ptr(), K, Cout);
  O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().ptr(), Cout);

  return make_op(std::move(out), {x, w, b}, [=](Node& self) {
    const auto& px = self.parents[0];
    const auto& pw = self.parents[1];
    const auto& pb = self.parents[2];
    CMapMat G(self.grad.ptr(), B * P, Cout);
    if (wants(pw)) MapMat(pw->grad_buffer().ptr(), K, Cout).noalias() += CMapMat(cols->data(), B * P, K).transpose() * G;
    if (wants(pb)) Eigen::Map<Eigen::RowVectorXd>(pb->grad_buffer().ptr(), Cout) += G.colwise().sum();
    if (!wants(px)) return;
    RowMat dcols = G * CMapMat(pw->value.ptr(), K, Cout).transpose();
    auto& gx = px->grad_buffer();
    for (std::size_t bi = 0; bi < B; ++bi)
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t xx = 0; xx < W; ++xx) {
            const double* row = dcols.data() + (bi * P + (f * H + y) * W + xx) * K;
            for (int kf = 0; kf < 3; ++kf)
              for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                  const long ff = static_cast<long>(f) + kf - 1, yy = static_cast<long>(y) + ky - 1,
                             xs = static_cast<long>(xx) + kx - 1;
                  if (ff < 0 || yy < 0 || xs < 0 || ff >= static_cast<long>(F) || yy >= static_cast<long>(H) ||
                      xs >= static_cast<long>(W))
                    continue;
                  double* dst = gx.ptr() + (((bi * F + ff) * H + yy) * W + xs) * Cin;
                  const double* src = row + ((kf * 3 + ky) * 3 + kx) * Cin;
                  for (std::size_t c = 0; c < Cin; ++c) dst[c] += src[c];
                }
          }
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_op(Tensor::scalar(s), {x}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const double gs = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gs;
  });
}

Var mean(const Var& x) {
  if (x.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Var mse(const Var& a, const Var& b) {
  require_same_shape(a.shape(), b.shape(), "mse");
  const std::size_t n = a.size();
  if (n == 0) throw ShapeError("mse of empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a.value()[i] - b.value()[i];
    s += d * d;
  }
  return make_op(Tensor::scalar(s / static_cast<double>(n)), {a, b}, [n](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    const double c = 2.0 * self.grad[0] / static_cast<double>(n);
    if (wants(pa)) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) g[i] += c * (pa->value[i] - pb->value[i]);
    }
    if (wants(pb)) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) g[i] -= c * (pa->value[i] - pb->value[i]);
    }
  });
}

Var add_scalars(const std::vector<Var>& terms) {
  double s = 0.0;
  for (const auto& t : terms) s += t.item();
  return make_op(Tensor::scalar(s), terms, [](Node& self) {
    for (auto& p : self.parents)
      if (wants(p)) p->grad_buffer()[0] += self.grad[0];
  });
}

}  // namespace ops

}  // namespace moco
