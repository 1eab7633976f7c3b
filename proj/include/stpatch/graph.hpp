#pragma once

#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "stpatch/tensor.hpp"

namespace stpatch {

// Reverse-mode autodiff over TensorT values. Each op records a node on the
// tape in creation order; backward walks the tape in reverse, so the
// topological order is implicit. Tensors on the tape are never mutated.
template <typename T>
struct NodeT {
  TensorT<T> value;
  TensorT<T> grad;  // allocated lazily on first accumulation
  std::vector<std::shared_ptr<NodeT>> parents;
  std::function<void(NodeT&)> backprop;

  bool has_grad() const { return !grad.empty(); }

  void accumulate(const TensorT<T>& g) {
    if (grad.empty()) grad = TensorT<T>(value.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) grad(i) += g(i);
  }

  TensorT<T>& grad_buffer() {
    if (grad.empty()) grad = TensorT<T>(value.shape());
    return grad;
  }
};

template <typename T>
using NodePtrT = std::shared_ptr<NodeT<T>>;

template <typename T>
class TapeT {
 public:
  using Node = NodeT<T>;
  using NodePtr = NodePtrT<T>;

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  NodePtr leaf(TensorT<T> v) { return record(std::move(v), {}, nullptr); }

  NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    auto value = stpatch::matmul(a->value, b->value);
    const auto d = detail::matmul_dims(a->value, b->value);
    return record(std::move(value), {a, b}, [a, b, d](Node& self) {
      auto& ga = a->grad_buffer();
      auto& gb = b->grad_buffer();
      for (std::size_t bi = 0; bi < d.batches; ++bi) {
        const T* gp = self.grad.data() + bi * d.m * d.n;
        const T* ap = a->value.data() + (d.a_batched ? bi * d.m * d.k : 0);
        const T* bp = b->value.data() + (d.b_batched ? bi * d.k * d.n : 0);
        // dA += dC B^T ; dB += A^T dC
        detail::mm_nt_acc(gp, bp, ga.data() + (d.a_batched ? bi * d.m * d.k : 0), d.m, d.n, d.k);
        detail::mm_tn_acc(ap, gp, gb.data() + (d.b_batched ? bi * d.k * d.n : 0), d.k, d.m, d.n);
      }
    });
  }

  // scale * (A B^T) per batch.
  NodePtr scaled_matmul_nt(const NodePtr& a, const NodePtr& b, T s) {
    auto value = stpatch::scaled_matmul_nt(a->value, b->value, s);
    return record(std::move(value), {a, b}, [a, b, s](Node& self) {
      const std::size_t batches = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2),
                        n = b->value.dim(1);
      TensorT<T> g = stpatch::scale(self.grad, s);
      auto& ga = a->grad_buffer();
      auto& gb = b->grad_buffer();
      for (std::size_t bi = 0; bi < batches; ++bi) {
        // C = s A B^T : dA += g B ; dB += g^T A
        detail::mm_acc(g.data() + bi * m * n, b->value.data() + bi * n * k,
                       ga.data() + bi * m * k, m, n, k);
        detail::mm_tn_acc(g.data() + bi * m * n, a->value.data() + bi * m * k,
                          gb.data() + bi * n * k, n, m, k);
      }
    });
  }

  NodePtr add(const NodePtr& a, const NodePtr& b) {
    return record(stpatch::add(a->value, b->value), {a, b}, [a, b](Node& self) {
      a->accumulate(self.grad);
      b->accumulate(self.grad);
    });
  }

  NodePtr add_rowbias(const NodePtr& x, const NodePtr& bias) {
    return record(stpatch::add_rowbias(x->value, bias->value), {x, bias}, [x, bias](Node& self) {
      x->accumulate(self.grad);
      auto& gb = bias->grad_buffer();
      for (std::size_t i = 0; i < self.grad.dim(0); ++i)
        for (std::size_t j = 0; j < self.grad.dim(1); ++j) gb(j) += self.grad(i, j);
    });
  }

  NodePtr scale(const NodePtr& x, T c) {
    return record(stpatch::scale(x->value, c), {x},
                  [x, c](Node& self) { x->accumulate(stpatch::scale(self.grad, c)); });
  }

  NodePtr transpose2(const NodePtr& x) {
    return record(stpatch::transpose2(x->value), {x},
                  [x](Node& self) { x->accumulate(stpatch::transpose2(self.grad)); });
  }

  NodePtr swap01(const NodePtr& x) {
    return record(stpatch::swap01(x->value), {x},
                  [x](Node& self) { x->accumulate(stpatch::swap01(self.grad)); });
  }

  NodePtr softmax_last(const NodePtr& x) {
    auto value = stpatch::softmax_last(x->value);
    return record(std::move(value), {x}, [x](Node& self) {
      // dx = s * (g - sum(g * s)) per last-dim slice
      const std::size_t width = self.value.dim(self.value.rank() - 1);
      const std::size_t rows = self.value.numel() / width;
      auto& gx = x->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* s = self.value.data() + r * width;
        const T* g = self.grad.data() + r * width;
        T dot = T(0);
        for (std::size_t j = 0; j < width; ++j) dot += g[j] * s[j];
        T* out = gx.data() + r * width;
        for (std::size_t j = 0; j < width; ++j) out[j] += s[j] * (g[j] - dot);
      }
    });
  }

  NodePtr concat_last(const std::vector<NodePtr>& parts) {
    std::vector<const TensorT<T>*> vals;
    vals.reserve(parts.size());
    for (const auto& p : parts) vals.push_back(&p->value);
    auto value = stpatch::concat_last(vals);
    return record(std::move(value), parts, [parts](Node& self) {
      std::size_t offset = 0;
      for (const auto& p : parts) {
        const std::size_t w = p->value.dim(p->value.rank() - 1);
        p->accumulate(stpatch::slice_last(self.grad, offset, w));
        offset += w;
      }
    });
  }

  NodePtr slice_last(const NodePtr& x, std::size_t start, std::size_t len) {
    return record(stpatch::slice_last(x->value, start, len), {x}, [x, start, len](Node& self) {
      const std::size_t width = x->value.dim(x->value.rank() - 1);
      const std::size_t rows = x->value.numel() / width;
      auto& gx = x->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < len; ++j)
          gx.data()[r * width + start + j] += self.grad.data()[r * len + j];
    });
  }

  // out[i,:] = x[idx[i],:]; idx -1 selects a zero row (no gradient flows).
  NodePtr gather_rows(const NodePtr& x, std::vector<int> idx) {
    auto value = stpatch::gather_rows(x->value, std::span<const int>(idx));
    return record(std::move(value), {x}, [x, idx = std::move(idx)](Node& self) {
      const std::size_t w = x->value.dim(1);
      auto& gx = x->grad_buffer();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0) continue;
        T* dst = gx.data() + std::size_t(idx[i]) * w;
        const T* src = self.grad.data() + i * w;
        for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
      }
    });
  }

  NodePtr layer_norm_last(const NodePtr& x, T eps = T(1e-5)) {
    auto value = stpatch::layer_norm_last(x->value, eps);
    return record(std::move(value), {x}, [x, eps](Node& self) {
      const std::size_t width = x->value.dim(x->value.rank() - 1);
      const std::size_t rows = x->value.numel() / width;
      auto& gx = x->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x->value.data() + r * width;
        const T* xn = self.value.data() + r * width;  // normalized values
        const T* g = self.grad.data() + r * width;
        T mean = T(0);
        for (std::size_t j = 0; j < width; ++j) mean += in[j];
        mean /= T(width);
        T var = T(0);
        for (std::size_t j = 0; j < width; ++j) var += (in[j] - mean) * (in[j] - mean);
        var /= T(width);
        const T inv = T(1) / std::sqrt(var + eps);
        T gmean = T(0), gxdot = T(0);
        for (std::size_t j = 0; j < width; ++j) {
          gmean += g[j];
          gxdot += g[j] * xn[j];
        }
        gmean /= T(width);
        gxdot /= T(width);
        T* out = gx.data() + r * width;
        for (std::size_t j = 0; j < width; ++j) out[j] += inv * (g[j] - gmean - xn[j] * gxdot);
      }
    });
  }

  NodePtr reshape(const NodePtr& x, std::vector<std::size_t> shape) {
    auto value = stpatch::reshape(x->value, shape);
    return record(std::move(value), {x}, [x](Node& self) {
      x->accumulate(stpatch::reshape(self.grad, x->value.shape()));
    });
  }

  NodePtr sum_all(const NodePtr& x) {
    TensorT<T> value({1});
    value(0) = stpatch::sum_all(x->value);
    return record(std::move(value), {x}, [x](Node& self) {
      auto& gx = x->grad_buffer();
      const T g = self.grad(0);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx(i) += g;
    });
  }

  // Scalar projection against a fixed tensor; handy for gradient checks.
  NodePtr inner(const NodePtr& x, TensorT<T> weights) {
    if (!x->value.same_shape(weights)) {
      throw std::invalid_argument("inner shape mismatch: " + x->value.shape_str() + " vs " +
                                  weights.shape_str());
    }
    TensorT<T> value({1});
    T s = T(0);
    for (std::size_t i = 0; i < weights.numel(); ++i) s += x->value(i) * weights(i);
    value(0) = s;
    return record(std::move(value), {x}, [x, w = std::move(weights)](Node& self) {
      auto& gx = x->grad_buffer();
      const T g = self.grad(0);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx(i) += g * w(i);
    });
  }

  // Mean absolute difference against a fixed target. The subgradient at an
  // exact tie is 0.
  NodePtr l1_loss(const NodePtr& pred, TensorT<T> target) {
    TensorT<T> value({1});
    value(0) = stpatch::l1_loss(pred->value, target);
    return record(std::move(value), {pred}, [pred, t = std::move(target)](Node& self) {
      auto& gp = pred->grad_buffer();
      const T g = self.grad(0) / T(t.numel());
      for (std::size_t i = 0; i < t.numel(); ++i) {
        const T diff = pred->value(i) - t(i);
        if (diff > T(0)) gp(i) += g;
        else if (diff < T(0)) gp(i) -= g;
      }
    });
  }

  // Seeds the scalar output with gradient 1 and walks the tape backwards.
  void backward(const NodePtr& out) {
    if (out->value.numel() != 1) {
      throw std::invalid_argument("backward requires a scalar output, got " +
                                  out->value.shape_str());
    }
    TensorT<T> seed({1});
    seed(0) = T(1);
    out->accumulate(seed);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node& n = **it;
      if (n.backprop && n.has_grad()) n.backprop(n);
    }
  }

 private:
  NodePtr record(TensorT<T> value, std::vector<NodePtr> parents,
                 std::function<void(Node&)> backprop) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->parents = std::move(parents);
    node->backprop = std::move(backprop);
    nodes_.push_back(node);
    return node;
  }

  std::vector<NodePtr> nodes_;
};

using Tape = TapeT<double>;
using NodePtr = NodePtrT<double>;

}  // namespace stpatch
