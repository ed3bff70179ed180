#pragma once

// Reverse-mode differentiation over dense Tensors.
//
// A Tape records every operation applied to variables that require
// gradients, in creation order, together with a closure that pushes the
// output gradient back into the operands. Tape::backward walks the record in
// reverse, accumulates gradients into the leaves and then drops the record.
// Leaves (parameters) outlive the tape and keep their accumulated gradient
// until zero_grad() is called.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mgdpr/error.hpp"
#include "mgdpr/tensor.hpp"

namespace mgdpr::ad {

struct Node {
  Tensor value;
  Tensor grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::function<void(const Tensor&)> backward;
  const char* op = "leaf";

  Tensor& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor(value.shape(), 0.0);
    return grad;
  }
};

class Var {
 public:
  Var() = default;

  static Var leaf(Tensor value, bool requires_grad) {
    Var v;
    v.node_ = std::make_shared<Node>();
    v.node_->value = std::move(value);
    v.node_->requires_grad = requires_grad;
    return v;
  }
  static Var parameter(Tensor value) { return leaf(std::move(value), true); }
  static Var constant(Tensor value) { return leaf(std::move(value), false); }

  bool valid() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }

  // Gradient accumulated by backward(); zeros if nothing reached this leaf.
  Tensor grad() const {
    if (has_grad()) return node_->grad;
    return Tensor(node_->value.shape(), 0.0);
  }

  void zero_grad() { node_->grad = Tensor(); }

  // Replaces a leaf's value in place (optimizer steps, finite differences).
  void assign(Tensor value) {
    if (value.shape() != node_->value.shape()) {
      throw DimensionError("assign: shape " + shape_str(value.shape()) + " does not match " +
                           shape_str(node_->value.shape()));
    }
    node_->value = std::move(value);
  }
  std::span<double> mutable_values() { return node_->value.values(); }

  Node* node() const noexcept { return node_.get(); }

 private:
  friend class Tape;
  std::shared_ptr<Node> node_;
};

namespace detail {

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Splits a shape around `axis` into (outer, length, inner) extents.
struct AxisView {
  std::size_t outer = 1, length = 1, inner = 1;
};

inline AxisView axis_view(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

inline void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(a.shape()));
  }
}

inline void add_into(Tensor& dst, const Tensor& src) {
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace detail

class Tape {
 public:
  // A non-recording tape evaluates operations without keeping any record;
  // used for inference.
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Nodes in record order. Every node appears after its operands.
  const std::vector<std::shared_ptr<Node>>& nodes() const noexcept { return nodes_; }

  // ---- linear algebra -------------------------------------------------

  Var matmul(const Var& a, const Var& b) {
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
      throw DimensionError("matmul: incompatible shapes " + shape_str(x.shape()) + " and " +
                           shape_str(y.shape()));
    }
    const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
    Tensor out(Shape{m, n}, 0.0);
    detail::gemm_nn(x.values().data(), y.values().data(), out.values().data(), m, k, n);
    return record("matmul", std::move(out), {a, b}, [a, b, m, k, n](const Tensor& g) {
      if (a.requires_grad()) {
        detail::gemm_nt(g.values().data(), b.value().values().data(),
                        a.node()->grad_buffer().values().data(), m, n, k);
      }
      if (b.requires_grad()) {
        detail::gemm_tn(a.value().values().data(), g.values().data(),
                        b.node()->grad_buffer().values().data(), k, m, n);
      }
    });
  }

  // Batched product over the leading axis: (B x m x k) * (B x k x n).
  Var bmm(const Var& a, const Var& b) {
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.rank() != 3 || y.rank() != 3 || x.dim(0) != y.dim(0) || x.dim(2) != y.dim(1)) {
      throw DimensionError("bmm: incompatible shapes " + shape_str(x.shape()) + " and " +
                           shape_str(y.shape()));
    }
    const std::size_t batch = x.dim(0), m = x.dim(1), k = x.dim(2), n = y.dim(2);
    Tensor out(Shape{batch, m, n}, 0.0);
    for (std::size_t s = 0; s < batch; ++s) {
      detail::gemm_nn(x.values().data() + s * m * k, y.values().data() + s * k * n,
                      out.values().data() + s * m * n, m, k, n);
    }
    return record("bmm", std::move(out), {a, b}, [a, b, batch, m, k, n](const Tensor& g) {
      for (std::size_t s = 0; s < batch; ++s) {
        const double* gs = g.values().data() + s * m * n;
        if (a.requires_grad()) {
          detail::gemm_nt(gs, b.value().values().data() + s * k * n,
                          a.node()->grad_buffer().values().data() + s * m * k, m, n, k);
        }
        if (b.requires_grad()) {
          detail::gemm_tn(a.value().values().data() + s * m * k, gs,
                          b.node()->grad_buffer().values().data() + s * k * n, k, m, n);
        }
      }
    });
  }

  // Swaps the last two axes of a rank-2 or rank-3 tensor.
  Var transpose(const Var& a) {
    const Tensor& x = a.value();
    if (x.rank() != 2 && x.rank() != 3) {
      throw DimensionError("transpose: expected rank 2 or 3, got " + shape_str(x.shape()));
    }
    const std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
    const std::size_t m = x.dim(x.rank() - 2), n = x.dim(x.rank() - 1);
    Shape shape = x.shape();
    std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
    Tensor out(shape, 0.0);
    auto swap_into = [batch, m, n](const double* src, double* dst) {
      for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) dst[s * m * n + j * m + i] += src[s * m * n + i * n + j];
        }
      }
    };
    swap_into(x.values().data(), out.values().data());
    return record("transpose", std::move(out), {a}, [a, batch, m, n](const Tensor& g) {
      double* dst = a.node()->grad_buffer().values().data();
      const double* src = g.values().data();
      for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t j = 0; j < n; ++j) {
          for (std::size_t i = 0; i < m; ++i) dst[s * m * n + i * n + j] += src[s * m * n + j * m + i];
        }
      }
    });
  }

  Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return record("reshape", std::move(out), {a}, [a](const Tensor& g) {
      auto dst = a.node()->grad_buffer().values();
      auto src = g.values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    });
  }

  // ---- elementwise ----------------------------------------------------

  Var add(const Var& a, const Var& b) {
    detail::require_same_shape("add", a.value(), b.value());
    Tensor out = a.value();
    detail::add_into(out, b.value());
    return record("add", std::move(out), {a, b}, [a, b](const Tensor& g) {
      if (a.requires_grad()) detail::add_into(a.node()->grad_buffer(), g);
      if (b.requires_grad()) detail::add_into(b.node()->grad_buffer(), g);
    });
  }

  Var sub(const Var& a, const Var& b) {
    detail::require_same_shape("sub", a.value(), b.value());
    Tensor out = a.value();
    auto o = out.values();
    auto y = b.value().values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= y[i];
    return record("sub", std::move(out), {a, b}, [a, b](const Tensor& g) {
      if (a.requires_grad()) detail::add_into(a.node()->grad_buffer(), g);
      if (b.requires_grad()) {
        auto d = b.node()->grad_buffer().values();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
      }
    });
  }

  Var hadamard(const Var& a, const Var& b) {
    detail::require_same_shape("hadamard", a.value(), b.value());
    Tensor out = a.value();
    auto o = out.values();
    auto y = b.value().values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= y[i];
    return record("hadamard", std::move(out), {a, b}, [a, b](const Tensor& g) {
      if (a.requires_grad()) {
        auto d = a.node()->grad_buffer().values();
        auto y = b.value().values();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * y[i];
      }
      if (b.requires_grad()) {
        auto d = b.node()->grad_buffer().values();
        auto x = a.value().values();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * x[i];
      }
    });
  }

  Var scale(const Var& a, double factor) {
    Tensor out = a.value();
    for (double& v : out.values()) v *= factor;
    return record("scale", std::move(out), {a}, [a, factor](const Tensor& g) {
      auto d = a.node()->grad_buffer().values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * g[i];
    });
  }

  Var exp(const Var& a) {
    Tensor out = a.value();
    for (double& v : out.values()) v = std::exp(v);
    Var res = record("exp", out, {a}, nullptr);
    attach(res, [a, out](const Tensor& g) {
      auto d = a.node()->grad_buffer().values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * out[i];
    });
    return res;
  }

  Var ln(const Var& a) {
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!(x[i] > 0.0)) {
        throw DomainError("ln: entry " + std::to_string(i) + " is nonpositive (" +
                          std::to_string(x[i]) + ")");
      }
    }
    Tensor out = x;
    for (double& v : out.values()) v = std::log(v);
    return record("ln", std::move(out), {a}, [a](const Tensor& g) {
      auto d = a.node()->grad_buffer().values();
      auto x = a.value().values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] / x[i];
    });
  }

  // Leaky rectifier: x for x > 0, slope * x otherwise.
  Var leaky_relu(const Var& a, double slope = 0.01) {
    Tensor out = a.value();
    for (double& v : out.values()) v = v > 0.0 ? v : slope * v;
    return record("leaky_relu", std::move(out), {a}, [a, slope](const Tensor& g) {
      auto d = a.node()->grad_buffer().values();
      auto x = a.value().values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += x[i] > 0.0 ? g[i] : slope * g[i];
    });
  }

  // Adds a length-n vector to every row of an (m x n) matrix.
  Var add_rowwise(const Var& a, const Var& bias) {
    const Tensor& x = a.value();
    detail::require_rank("add_rowwise", x, 2);
    const std::size_t m = x.dim(0), n = x.dim(1);
    if (bias.value().size() != n) {
      throw DimensionError("add_rowwise: bias " + shape_str(bias.shape()) +
                           " does not match row length of " + shape_str(x.shape()));
    }
    Tensor out = x;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.value()[j];
    }
    return record("add_rowwise", std::move(out), {a, bias}, [a, bias, m, n](const Tensor& g) {
      if (a.requires_grad()) detail::add_into(a.node()->grad_buffer(), g);
      if (bias.requires_grad()) {
        auto d = bias.node()->grad_buffer().values();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) d[j] += g[i * n + j];
        }
      }
    });
  }

  // sum_r weights[r] * inputs[r] + bias, pointwise over identically shaped inputs.
  Var channel_mix(const std::vector<Var>& inputs, const Var& weights, const Var& bias) {
    if (inputs.empty()) throw DimensionError("channel_mix: no input channels");
    if (weights.value().size() != inputs.size() || bias.value().size() != 1) {
      throw DimensionError("channel_mix: expected " + std::to_string(inputs.size()) +
                           " weights and one bias, got " + shape_str(weights.shape()) + " and " +
                           shape_str(bias.shape()));
    }
    for (const Var& in : inputs) detail::require_same_shape("channel_mix", inputs[0].value(), in.value());
    Tensor out(inputs[0].shape(), bias.value()[0]);
    for (std::size_t r = 0; r < inputs.size(); ++r) {
      const double w = weights.value()[r];
      auto x = inputs[r].value().values();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * x[i];
    }
    std::vector<Var> parents = inputs;
    parents.push_back(weights);
    parents.push_back(bias);
    return record("channel_mix", std::move(out), parents, [inputs, weights, bias](const Tensor& g) {
      for (std::size_t r = 0; r < inputs.size(); ++r) {
        const double w = weights.value()[r];
        auto x = inputs[r].value().values();
        if (inputs[r].requires_grad()) {
          auto d = inputs[r].node()->grad_buffer().values();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += w * g[i];
        }
        if (weights.requires_grad()) {
          double s = 0.0;
          for (std::size_t i = 0; i < x.size(); ++i) s += g[i] * x[i];
          weights.node()->grad_buffer()[r] += s;
        }
      }
      if (bias.requires_grad()) {
        double s = 0.0;
        for (double v : g.values()) s += v;
        bias.node()->grad_buffer()[0] += s;
      }
    });
  }

  // ---- reductions and structure ---------------------------------------

  Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return record("sum", Tensor::scalar(s), {a}, [a](const Tensor& g) {
      for (double& d : a.node()->grad_buffer().values()) d += g[0];
    });
  }

  // Mean along one axis; the axis is removed from the shape.
  Var mean(const Var& a, std::size_t axis) {
    const auto v = detail::axis_view(a.shape(), axis);
    Shape shape = a.shape();
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (shape.empty()) shape = {1};
    Tensor out(shape, 0.0);
    const double inv = 1.0 / static_cast<double>(v.length);
    const auto& x = a.value();
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t l = 0; l < v.length; ++l) {
        for (std::size_t i = 0; i < v.inner; ++i) {
          out[o * v.inner + i] += x[(o * v.length + l) * v.inner + i] * inv;
        }
      }
    }
    return record("mean", std::move(out), {a}, [a, v, inv](const Tensor& g) {
      auto d = a.node()->grad_buffer().values();
      for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t l = 0; l < v.length; ++l) {
          for (std::size_t i = 0; i < v.inner; ++i) {
            d[(o * v.length + l) * v.inner + i] += g[o * v.inner + i] * inv;
          }
        }
      }
    });
  }

  Var concat(const Var& a, const Var& b, std::size_t axis) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    bool ok = sa.size() == sb.size() && axis < sa.size();
    for (std::size_t i = 0; ok && i < sa.size(); ++i) ok = i == axis || sa[i] == sb[i];
    if (!ok) {
      throw DimensionError("concat: shapes " + shape_str(sa) + " and " + shape_str(sb) +
                           " are incompatible on axis " + std::to_string(axis));
    }
    const auto va = detail::axis_view(sa, axis);
    const auto vb = detail::axis_view(sb, axis);
    Shape shape = sa;
    shape[axis] += sb[axis];
    Tensor out(shape, 0.0);
    const std::size_t na = va.length * va.inner, nb = vb.length * vb.inner;
    for (std::size_t o = 0; o < va.outer; ++o) {
      std::copy_n(a.value().values().data() + o * na, na, out.values().data() + o * (na + nb));
      std::copy_n(b.value().values().data() + o * nb, nb, out.values().data() + o * (na + nb) + na);
    }
    return record("concat", std::move(out), {a, b}, [a, b, va, na, nb](const Tensor& g) {
      for (std::size_t o = 0; o < va.outer; ++o) {
        const double* src = g.values().data() + o * (na + nb);
        if (a.requires_grad()) {
          double* d = a.node()->grad_buffer().values().data() + o * na;
          for (std::size_t i = 0; i < na; ++i) d[i] += src[i];
        }
        if (b.requires_grad()) {
          double* d = b.node()->grad_buffer().values().data() + o * nb;
          for (std::size_t i = 0; i < nb; ++i) d[i] += src[na + i];
        }
      }
    });
  }

  // Sub-tensor at `index` along the leading axis.
  Var select(const Var& a, std::size_t index) {
    const Shape& s = a.shape();
    if (index >= s[0]) {
      throw DimensionError("select: index " + std::to_string(index) + " out of range for " +
                           shape_str(s));
    }
    Shape shape(s.begin() + 1, s.end());
    if (shape.empty()) shape = {1};
    const std::size_t count = shape_size(shape);
    std::vector<double> values(a.value().values().begin() + static_cast<std::ptrdiff_t>(index * count),
                               a.value().values().begin() + static_cast<std::ptrdiff_t>((index + 1) * count));
    return record("select", Tensor(shape, std::move(values)), {a}, [a, index, count](const Tensor& g) {
      double* d = a.node()->grad_buffer().values().data() + index * count;
      for (std::size_t i = 0; i < count; ++i) d[i] += g[i];
    });
  }

  // ---- normalizations ---------------------------------------------------

  // Softmax along `axis`, with max subtraction.
  Var softmax(const Var& a, std::size_t axis) {
    const auto v = detail::axis_view(a.shape(), axis);
    Tensor out = a.value();
    for_each_slice(v, [&](std::size_t base, std::size_t stride) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < v.length; ++l) mx = std::max(mx, out[base + l * stride]);
      double z = 0.0;
      for (std::size_t l = 0; l < v.length; ++l) {
        double& e = out[base + l * stride];
        e = std::exp(e - mx);
        z += e;
      }
      for (std::size_t l = 0; l < v.length; ++l) out[base + l * stride] /= z;
    });
    Var res = record("softmax", out, {a}, nullptr);
    attach(res, [a, v, out](const Tensor& g) {
      auto d = a.node()->grad_buffer().values();
      for_each_slice(v, [&](std::size_t base, std::size_t stride) {
        double dot = 0.0;
        for (std::size_t l = 0; l < v.length; ++l) dot += g[base + l * stride] * out[base + l * stride];
        for (std::size_t l = 0; l < v.length; ++l) {
          const std::size_t i = base + l * stride;
          d[i] += out[i] * (g[i] - dot);
        }
      });
    });
    return res;
  }

  Var log_softmax(const Var& a, std::size_t axis) {
    const auto v = detail::axis_view(a.shape(), axis);
    Tensor out = a.value();
    for_each_slice(v, [&](std::size_t base, std::size_t stride) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < v.length; ++l) mx = std::max(mx, out[base + l * stride]);
      double z = 0.0;
      for (std::size_t l = 0; l < v.length; ++l) z += std::exp(out[base + l * stride] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t l = 0; l < v.length; ++l) out[base + l * stride] -= lse;
    });
    Var res = record("log_softmax", out, {a}, nullptr);
    attach(res, [a, v, out](const Tensor& g) {
      auto d = a.node()->grad_buffer().values();
      for_each_slice(v, [&](std::size_t base, std::size_t stride) {
        double gs = 0.0;
        for (std::size_t l = 0; l < v.length; ++l) gs += g[base + l * stride];
        for (std::size_t l = 0; l < v.length; ++l) {
          const std::size_t i = base + l * stride;
          d[i] += g[i] - std::exp(out[i]) * gs;
        }
      });
    });
    return res;
  }

  // Group normalization of each row of a (rows x d) matrix: the d features
  // are split into num_groups contiguous groups, each standardized to zero
  // mean and unit variance. No affine parameters.
  Var group_normalize(const Var& a, std::size_t num_groups, double eps = 1e-5) {
    const Tensor& x = a.value();
    detail::require_rank("group_normalize", x, 2);
    const std::size_t rows = x.dim(0), d = x.dim(1);
    if (num_groups == 0 || d % num_groups != 0) {
      throw ConfigError("group_normalize: feature width " + std::to_string(d) +
                        " is not divisible by " + std::to_string(num_groups) + " groups");
    }
    const std::size_t gsize = d / num_groups;
    const std::size_t count = rows * num_groups;
    Tensor out(x.shape(), 0.0);
    std::vector<double> inv_std(count);
    for (std::size_t s = 0; s < count; ++s) {
      const double* src = x.values().data() + s * gsize;
      double mean = 0.0;
      for (std::size_t i = 0; i < gsize; ++i) mean += src[i];
      mean /= static_cast<double>(gsize);
      double var = 0.0;
      for (std::size_t i = 0; i < gsize; ++i) var += (src[i] - mean) * (src[i] - mean);
      var /= static_cast<double>(gsize);
      inv_std[s] = 1.0 / std::sqrt(var + eps);
      for (std::size_t i = 0; i < gsize; ++i) out[s * gsize + i] = (src[i] - mean) * inv_std[s];
    }
    Var res = record("group_normalize", out, {a}, nullptr);
    attach(res, [a, out, inv_std, gsize, count](const Tensor& g) {
      auto d = a.node()->grad_buffer().values();
      const double n = static_cast<double>(gsize);
      for (std::size_t s = 0; s < count; ++s) {
        const std::size_t base = s * gsize;
        double mg = 0.0, mgy = 0.0;
        for (std::size_t i = 0; i < gsize; ++i) {
          mg += g[base + i];
          mgy += g[base + i] * out[base + i];
        }
        mg /= n;
        mgy /= n;
        for (std::size_t i = 0; i < gsize; ++i) {
          d[base + i] += inv_std[s] * (g[base + i] - mg - out[base + i] * mgy);
        }
      }
    });
    return res;
  }

  // ---- differentiation ------------------------------------------------

  // Propagates d(loss)/d(.) to every leaf that requires gradients, adding to
  // whatever the leaves already hold, then clears the record.
  void backward(const Var& loss) {
    if (!loss.valid() || !loss.value().is_scalar()) {
      throw UsageError("backward: loss must be a scalar, got shape " +
                       (loss.valid() ? shape_str(loss.shape()) : std::string("(none)")));
    }
    if (!loss.requires_grad()) {
      throw UsageError("backward: loss is not connected to any parameter");
    }
    Node* root = loss.node();
    root->grad_buffer()[0] += 1.0;
    if (!root->backward) {
      clear();
      return;  // loss is itself a leaf
    }
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node& n = **it;
      if (n.backward && n.grad.size() == n.value.size()) n.backward(n.grad);
    }
    clear();
  }

  void clear() {
    for (auto& n : nodes_) {
      n->backward = nullptr;
      n->grad = Tensor();
    }
    nodes_.clear();
  }

 private:
  using BackwardFn = std::function<void(const Tensor&)>;

  template <typename F>
  static void for_each_slice(const detail::AxisView& v, F&& f) {
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) f(o * v.length * v.inner + i, v.inner);
    }
  }

  Var record(const char* op, Tensor value, const std::vector<Var>& parents, BackwardFn fn) {
    if (!value.all_finite()) {
      throw NumericError(std::string(op) + ": produced a non-finite value (overflow or invalid input)");
    }
    bool needs = false;
    for (const Var& p : parents) needs = needs || p.requires_grad();
    Var out;
    out.node_ = std::make_shared<Node>();
    out.node_->value = std::move(value);
    out.node_->op = op;
    if (recording_ && needs) {
      out.node_->requires_grad = true;
      out.node_->backward = std::move(fn);
      nodes_.push_back(out.node_);
    }
    return out;
  }

  // For ops whose backward closure needs the computed output.
  static void attach(Var& v, BackwardFn fn) {
    if (v.requires_grad()) v.node_->backward = std::move(fn);
  }

  bool recording_;
  std::vector<std::shared_ptr<Node>> nodes_;
};

}  // namespace mgdpr::ad
