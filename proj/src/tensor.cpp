#include "cpoforge/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <unordered_set>

#include "cpoforge/errors.hpp"

namespace cpoforge {

namespace {

std::atomic<std::uint64_t> g_next_seq{1};

thread_local bool g_grad_enabled = true;

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

using NodePtr = std::shared_ptr<detail::TensorNode>;

NodePtr make_node(Shape shape, std::vector<double> data, bool requires_grad) {
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node->needs_grad = requires_grad;
  node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  return node;
}

// Creates the output node of a primitive and attaches the backward
// closure when any input participates in gradient computation.
Tensor make_op(Shape shape, std::vector<double> data, const char* op,
               std::vector<NodePtr> parents,
               std::function<void(detail::TensorNode&)> backward_fn) {
  NodePtr node = make_node(std::move(shape), std::move(data), false);
  node->op = op;
  if (g_grad_enabled) {
    bool any = false;
    for (const NodePtr& p : parents) {
      if (p->needs_grad) {
        any = true;
        break;
      }
    }
    if (any) {
      node->needs_grad = true;
      node->parents = std::move(parents);
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(node);
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw InternalError(std::string(op) + ": shape mismatch " +
                      shape_to_string(a) + " vs " + shape_to_string(b));
}

struct AxisLanes {
  std::size_t outer;
  std::size_t len;
  std::size_t inner;
};

AxisLanes lanes_for(const char* op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw InternalError(std::string(op) + ": axis " + std::to_string(axis) +
                        " out of range for shape " + shape_to_string(shape));
  }
  AxisLanes l{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

void accumulate(detail::TensorNode& node, std::size_t index, double value) {
  node.grad[index] += value;
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  out += "]";
  return out;
}

// --- Tensor handle -------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, 0.0),
                          requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, value),
                          requires_grad));
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values,
                           bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw InternalError("from_vector: shape " + shape_to_string(shape) +
                        " does not match " + std::to_string(values.size()) +
                        " values");
  }
  return Tensor(make_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_node({1}, {value}, requires_grad));
}

const Shape& Tensor::shape() const {
  if (!node_) throw InternalError("shape() on undefined tensor");
  return node_->shape;
}

std::size_t Tensor::numel() const {
  if (!node_) throw InternalError("numel() on undefined tensor");
  return node_->data.size();
}

double Tensor::value() const {
  if (!node_ || node_->data.size() != 1) {
    throw InternalError("value() requires a scalar tensor");
  }
  return node_->data[0];
}

const std::vector<double>& Tensor::data() const {
  if (!node_) throw InternalError("data() on undefined tensor");
  return node_->data;
}

std::vector<double>& Tensor::mutable_data() {
  if (!node_) throw InternalError("mutable_data() on undefined tensor");
  return node_->data;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  if (!node_ || node_->grad.empty()) {
    throw InternalError("grad() on tensor without accumulated gradient");
  }
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.assign(node_->data.size(), 0.0);
}

// --- primitives ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    shape_error("matmul", sa, sb);
  }
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const double av = pa[i * k + l];
      if (av == 0.0) continue;
      const double* brow = pb + l * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  auto an = a.impl();
  auto bn = b.impl();
  return make_op(
      {m, n}, std::move(out), "matmul", {an, bn},
      [m, k, n](detail::TensorNode& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const double* g = self.grad.data();
        if (pa.needs_grad) {
          pa.ensure_grad();
          // dA = dC * B^T
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t l = 0; l < k; ++l) {
              double acc = 0.0;
              const double* grow = g + i * n;
              const double* brow = pb.data.data() + l * n;
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              accumulate(pa, i * k + l, acc);
            }
          }
        }
        if (pb.needs_grad) {
          pb.ensure_grad();
          // dB = A^T * dC
          for (std::size_t i = 0; i < m; ++i) {
            const double* arow = pa.data.data() + i * k;
            const double* grow = g + i * n;
            for (std::size_t l = 0; l < k; ++l) {
              const double av = arow[l];
              if (av == 0.0) continue;
              double* brow = pb.grad.data() + l * n;
              for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
            }
          }
        }
      });
}

Tensor transpose(const Tensor& a) {
  const auto& s = a.shape();
  if (s.size() != 2) {
    throw InternalError("transpose: expected 2-D tensor, got " +
                        shape_to_string(s));
  }
  const std::size_t m = s[0], n = s[1];
  std::vector<double> out(m * n);
  const double* p = a.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = p[i * n + j];
  }
  return make_op({n, m}, std::move(out), "transpose", {a.impl()},
                 [m, n](detail::TensorNode& self) {
                   auto& pa = *self.parents[0];
                   if (!pa.needs_grad) return;
                   pa.ensure_grad();
                   for (std::size_t i = 0; i < m; ++i) {
                     for (std::size_t j = 0; j < n; ++j) {
                       pa.grad[i * n + j] += self.grad[j * m + i];
                     }
                   }
                 });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const bool same = sa == sb;
  const bool bias = !same && sb.size() == 1 && !sa.empty() &&
                    sa.back() == sb[0];
  if (!same && !bias) shape_error("add", sa, sb);

  std::vector<double> out(a.data());
  const std::size_t n = out.size();
  const std::size_t d = b.numel();
  const double* pb = b.data().data();
  if (same) {
    for (std::size_t i = 0; i < n; ++i) out[i] += pb[i];
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] += pb[i % d];
  }
  return make_op(sa, std::move(out), "add", {a.impl(), b.impl()},
                 [same, n, d](detail::TensorNode& self) {
                   auto& pa = *self.parents[0];
                   auto& pb = *self.parents[1];
                   if (pa.needs_grad) {
                     pa.ensure_grad();
                     for (std::size_t i = 0; i < n; ++i) {
                       pa.grad[i] += self.grad[i];
                     }
                   }
                   if (pb.needs_grad) {
                     pb.ensure_grad();
                     if (same) {
                       for (std::size_t i = 0; i < n; ++i) {
                         pb.grad[i] += self.grad[i];
                       }
                     } else {
                       for (std::size_t i = 0; i < n; ++i) {
                         pb.grad[i % d] += self.grad[i];
                       }
                     }
                   }
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  std::vector<double> out(a.data());
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= pb[i];
  return make_op(a.shape(), std::move(out), "mul", {a.impl(), b.impl()},
                 [](detail::TensorNode& self) {
                   auto& pa = *self.parents[0];
                   auto& pb = *self.parents[1];
                   const std::size_t n = self.data.size();
                   if (pa.needs_grad) {
                     pa.ensure_grad();
                     for (std::size_t i = 0; i < n; ++i) {
                       pa.grad[i] += self.grad[i] * pb.data[i];
                     }
                   }
                   if (pb.needs_grad) {
                     pb.ensure_grad();
                     for (std::size_t i = 0; i < n; ++i) {
                       pb.grad[i] += self.grad[i] * pa.data[i];
                     }
                   }
                 });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data());
  for (double& v : out) v *= factor;
  return make_op(a.shape(), std::move(out), "scale", {a.impl()},
                 [factor](detail::TensorNode& self) {
                   auto& pa = *self.parents[0];
                   if (!pa.needs_grad) return;
                   pa.ensure_grad();
                   for (std::size_t i = 0; i < self.data.size(); ++i) {
                     pa.grad[i] += factor * self.grad[i];
                   }
                 });
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  const AxisLanes l = lanes_for("softmax", a.shape(), axis);
  std::vector<double> out(a.data());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      double* base = out.data() + o * l.len * l.inner + i;
      double mx = base[0];
      for (std::size_t j = 1; j < l.len; ++j) {
        mx = std::max(mx, base[j * l.inner]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j < l.len; ++j) {
        double e = std::exp(base[j * l.inner] - mx);
        base[j * l.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < l.len; ++j) base[j * l.inner] /= total;
    }
  }
  return make_op(a.shape(), std::move(out), "softmax", {a.impl()},
                 [l](detail::TensorNode& self) {
                   auto& pa = *self.parents[0];
                   if (!pa.needs_grad) return;
                   pa.ensure_grad();
                   for (std::size_t o = 0; o < l.outer; ++o) {
                     for (std::size_t i = 0; i < l.inner; ++i) {
                       const std::size_t base = o * l.len * l.inner + i;
                       double dot = 0.0;
                       for (std::size_t j = 0; j < l.len; ++j) {
                         const std::size_t k = base + j * l.inner;
                         dot += self.grad[k] * self.data[k];
                       }
                       for (std::size_t j = 0; j < l.len; ++j) {
                         const std::size_t k = base + j * l.inner;
                         pa.grad[k] += self.data[k] * (self.grad[k] - dot);
                       }
                     }
                   }
                 });
}

Tensor log_softmax(const Tensor& a, std::size_t axis) {
  const AxisLanes l = lanes_for("log_softmax", a.shape(), axis);
  std::vector<double> out(a.data());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      double* base = out.data() + o * l.len * l.inner + i;
      double mx = base[0];
      for (std::size_t j = 1; j < l.len; ++j) {
        mx = std::max(mx, base[j * l.inner]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j < l.len; ++j) {
        total += std::exp(base[j * l.inner] - mx);
      }
      const double lse = mx + std::log(total);
      for (std::size_t j = 0; j < l.len; ++j) base[j * l.inner] -= lse;
    }
  }
  return make_op(a.shape(), std::move(out), "log_softmax", {a.impl()},
                 [l](detail::TensorNode& self) {
                   auto& pa = *self.parents[0];
                   if (!pa.needs_grad) return;
                   pa.ensure_grad();
                   for (std::size_t o = 0; o < l.outer; ++o) {
                     for (std::size_t i = 0; i < l.inner; ++i) {
                       const std::size_t base = o * l.len * l.inner + i;
                       double gsum = 0.0;
                       for (std::size_t j = 0; j < l.len; ++j) {
                         gsum += self.grad[base + j * l.inner];
                       }
                       for (std::size_t j = 0; j < l.len; ++j) {
                         const std::size_t k = base + j * l.inner;
                         pa.grad[k] +=
                             self.grad[k] - std::exp(self.data[k]) * gsum;
                       }
                     }
                   }
                 });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  const auto& s = x.shape();
  if (s.empty()) shape_error("layer_norm", s, gain.shape());
  const std::size_t d = s.back();
  if (gain.shape() != Shape{d}) shape_error("layer_norm", s, gain.shape());
  if (bias.shape() != Shape{d}) shape_error("layer_norm", s, bias.shape());

  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  std::vector<double> mean_v(rows);
  std::vector<double> inv_v(rows);
  const double* px = x.data().data();
  const double* pg = gain.data().data();
  const double* pb = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    mean_v[r] = mu;
    inv_v[r] = inv;
    double* orow = out.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      orow[j] = pg[j] * ((row[j] - mu) * inv) + pb[j];
    }
  }
  return make_op(
      s, std::move(out), "layer_norm", {x.impl(), gain.impl(), bias.impl()},
      [rows, d, mean_v = std::move(mean_v),
       inv_v = std::move(inv_v)](detail::TensorNode& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        if (px.needs_grad) px.ensure_grad();
        if (pg.needs_grad) pg.ensure_grad();
        if (pb.needs_grad) pb.ensure_grad();
        std::vector<double> xhat(d);
        std::vector<double> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double mu = mean_v[r];
          const double inv = inv_v[r];
          const double* xrow = px.data.data() + r * d;
          const double* grow = self.grad.data() + r * d;
          double m1 = 0.0;  // mean of dxhat
          double m2 = 0.0;  // mean of dxhat * xhat
          for (std::size_t j = 0; j < d; ++j) {
            xhat[j] = (xrow[j] - mu) * inv;
            dxhat[j] = grow[j] * pg.data[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xhat[j];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          if (px.needs_grad) {
            double* gx = px.grad.data() + r * d;
            for (std::size_t j = 0; j < d; ++j) {
              gx[j] += inv * (dxhat[j] - m1 - xhat[j] * m2);
            }
          }
          if (pg.needs_grad) {
            for (std::size_t j = 0; j < d; ++j) {
              pg.grad[j] += grow[j] * xhat[j];
            }
          }
          if (pb.needs_grad) {
            for (std::size_t j = 0; j < d; ++j) pb.grad[j] += grow[j];
          }
        }
      });
}

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

inline double gelu_value(double x) {
  return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
}

inline double gelu_derivative(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
         x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

}  // namespace

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.data());
  for (double& v : out) v = gelu_value(v);
  return make_op(a.shape(), std::move(out), "gelu", {a.impl()},
                 [](detail::TensorNode& self) {
                   auto& pa = *self.parents[0];
                   if (!pa.needs_grad) return;
                   pa.ensure_grad();
                   for (std::size_t i = 0; i < self.data.size(); ++i) {
                     pa.grad[i] += self.grad[i] * gelu_derivative(pa.data[i]);
                   }
                 });
}

Tensor embedding_lookup(const Tensor& table,
                        std::span<const std::int32_t> ids) {
  const auto& s = table.shape();
  if (s.size() != 2) {
    throw InternalError("embedding_lookup: table must be 2-D, got " +
                        shape_to_string(s));
  }
  const std::size_t v = s[0], d = s[1];
  std::vector<double> out(ids.size() * d);
  const double* p = table.data().data();
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const std::int32_t id = ids[t];
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw InternalError("embedding_lookup: id " + std::to_string(id) +
                          " outside table rows [0, " + std::to_string(v) + ")");
    }
    std::copy_n(p + static_cast<std::size_t>(id) * d, d, out.data() + t * d);
  }
  std::vector<std::int32_t> ids_copy(ids.begin(), ids.end());
  return make_op({ids.size(), d}, std::move(out), "embedding_lookup",
                 {table.impl()},
                 [d, ids_copy = std::move(ids_copy)](detail::TensorNode& self) {
                   auto& pt = *self.parents[0];
                   if (!pt.needs_grad) return;
                   pt.ensure_grad();
                   for (std::size_t t = 0; t < ids_copy.size(); ++t) {
                     const std::size_t row =
                         static_cast<std::size_t>(ids_copy[t]) * d;
                     const double* g = self.grad.data() + t * d;
                     for (std::size_t j = 0; j < d; ++j) {
                       pt.grad[row + j] += g[j];
                     }
                   }
                 });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start,
             std::size_t length) {
  const AxisLanes l = lanes_for("slice", a.shape(), axis);
  if (start + length > l.len) {
    throw InternalError("slice: range [" + std::to_string(start) + ", " +
                        std::to_string(start + length) + ") out of bounds for axis of size " +
                        std::to_string(l.len));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  std::vector<double> out(l.outer * length * l.inner);
  const double* p = a.data().data();
  for (std::size_t o = 0; o < l.outer; ++o) {
    std::copy_n(p + (o * l.len + start) * l.inner, length * l.inner,
                out.data() + o * length * l.inner);
  }
  return make_op(std::move(out_shape), std::move(out), "slice", {a.impl()},
                 [l, start, length](detail::TensorNode& self) {
                   auto& pa = *self.parents[0];
                   if (!pa.needs_grad) return;
                   pa.ensure_grad();
                   for (std::size_t o = 0; o < l.outer; ++o) {
                     const double* g = self.grad.data() + o * length * l.inner;
                     double* dst = pa.grad.data() + (o * l.len + start) * l.inner;
                     for (std::size_t i = 0; i < length * l.inner; ++i) {
                       dst[i] += g[i];
                     }
                   }
                 });
}

Tensor concat(std::span<const Tensor> tensors, std::size_t axis) {
  if (tensors.empty()) throw InternalError("concat: empty input list");
  const Shape& first = tensors[0].shape();
  Shape out_shape = first;
  std::size_t total_axis = 0;
  for (const Tensor& t : tensors) {
    const Shape& s = t.shape();
    if (s.size() != first.size()) shape_error("concat", first, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) shape_error("concat", first, s);
    }
    total_axis += s[axis];
  }
  out_shape[axis] = total_axis;
  const AxisLanes l = lanes_for("concat", out_shape, axis);

  std::vector<double> out(l.outer * total_axis * l.inner);
  std::vector<NodePtr> parents;
  std::vector<std::size_t> extents;
  parents.reserve(tensors.size());
  for (const Tensor& t : tensors) {
    parents.push_back(t.impl());
    extents.push_back(t.shape()[axis]);
  }
  for (std::size_t o = 0; o < l.outer; ++o) {
    std::size_t offset = 0;
    for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
      const std::size_t chunk = extents[ti] * l.inner;
      const double* src = tensors[ti].data().data() + o * chunk;
      std::copy_n(src, chunk,
                  out.data() + (o * total_axis + offset) * l.inner);
      offset += extents[ti];
    }
  }
  return make_op(std::move(out_shape), std::move(out), "concat",
                 std::move(parents),
                 [l, total_axis, extents = std::move(extents)](
                     detail::TensorNode& self) {
                   for (std::size_t o = 0; o < l.outer; ++o) {
                     std::size_t offset = 0;
                     for (std::size_t ti = 0; ti < self.parents.size(); ++ti) {
                       auto& p = *self.parents[ti];
                       const std::size_t chunk = extents[ti] * l.inner;
                       if (p.needs_grad) {
                         p.ensure_grad();
                         const double* g = self.grad.data() +
                                           (o * total_axis + offset) * l.inner;
                         double* dst = p.grad.data() + o * chunk;
                         for (std::size_t i = 0; i < chunk; ++i) dst[i] += g[i];
                       }
                       offset += extents[ti];
                     }
                   }
                 });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_op({1}, {total}, "sum", {a.impl()},
                 [](detail::TensorNode& self) {
                   auto& pa = *self.parents[0];
                   if (!pa.needs_grad) return;
                   pa.ensure_grad();
                   const double g = self.grad[0];
                   for (double& v : pa.grad) v += g;
                 });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw InternalError("mean: empty tensor");
  double total = 0.0;
  for (double v : a.data()) total += v;
  const double n = static_cast<double>(a.numel());
  return make_op({1}, {total / n}, "mean", {a.impl()},
                 [n](detail::TensorNode& self) {
                   auto& pa = *self.parents[0];
                   if (!pa.needs_grad) return;
                   pa.ensure_grad();
                   const double g = self.grad[0] / n;
                   for (double& v : pa.grad) v += g;
                 });
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.data());
  for (double& v : out) v = stable_sigmoid(v);
  return make_op(a.shape(), std::move(out), "sigmoid", {a.impl()},
                 [](detail::TensorNode& self) {
                   auto& pa = *self.parents[0];
                   if (!pa.needs_grad) return;
                   pa.ensure_grad();
                   for (std::size_t i = 0; i < self.data.size(); ++i) {
                     const double y = self.data[i];
                     pa.grad[i] += self.grad[i] * y * (1.0 - y);
                   }
                 });
}

Tensor softplus(const Tensor& a) {
  std::vector<double> out(a.data());
  for (double& v : out) v = stable_softplus(v);
  return make_op(a.shape(), std::move(out), "softplus", {a.impl()},
                 [](detail::TensorNode& self) {
                   auto& pa = *self.parents[0];
                   if (!pa.needs_grad) return;
                   pa.ensure_grad();
                   for (std::size_t i = 0; i < self.data.size(); ++i) {
                     pa.grad[i] += self.grad[i] * stable_sigmoid(pa.data[i]);
                   }
                 });
}

Tensor select_sum(
    const Tensor& a,
    std::span<const std::pair<std::size_t, std::size_t>> indices) {
  const auto& s = a.shape();
  if (s.size() != 2) {
    throw InternalError("select_sum: expected 2-D tensor, got " +
                        shape_to_string(s));
  }
  const std::size_t rows = s[0], cols = s[1];
  double total = 0.0;
  for (const auto& [r, c] : indices) {
    if (r >= rows || c >= cols) {
      throw InternalError("select_sum: index (" + std::to_string(r) + ", " +
                          std::to_string(c) + ") outside " +
                          shape_to_string(s));
    }
    total += a.data()[r * cols + c];
  }
  std::vector<std::pair<std::size_t, std::size_t>> idx(indices.begin(),
                                                       indices.end());
  return make_op({1}, {total}, "select_sum", {a.impl()},
                 [cols, idx = std::move(idx)](detail::TensorNode& self) {
                   auto& pa = *self.parents[0];
                   if (!pa.needs_grad) return;
                   pa.ensure_grad();
                   const double g = self.grad[0];
                   for (const auto& [r, c] : idx) {
                     pa.grad[r * cols + c] += g;
                   }
                 });
}

// --- backward ------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw InternalError("backward: loss must be a defined scalar tensor");
  }
  NodePtr root = loss.impl();
  if (!root->backward_fn && !root->requires_grad) {
    throw InternalError("backward: empty tape (no operations recorded)");
  }

  // `order` holds shared ownership so clearing parent links below cannot
  // destroy a node that is still scheduled.
  std::vector<NodePtr> order;
  std::unordered_set<detail::TensorNode*> seen;
  std::vector<NodePtr> stack{root};
  seen.insert(root.get());
  while (!stack.empty()) {
    NodePtr node = std::move(stack.back());
    stack.pop_back();
    for (const NodePtr& p : node->parents) {
      if (seen.insert(p.get()).second) stack.push_back(p);
    }
    order.push_back(std::move(node));
  }
  std::sort(order.begin(), order.end(),
            [](const NodePtr& a, const NodePtr& b) { return a->seq > b->seq; });

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (const NodePtr& node : order) {
    if (node->backward_fn && !node->grad.empty()) {
      node->backward_fn(*node);
    }
  }
  // Clear the tape: closures and structural links go, gradients stay.
  for (const NodePtr& node : order) {
    node->backward_fn = nullptr;
    node->parents.clear();
  }
}

// --- grad mode -----------------------------------------------------------

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

// --- numeric gradient check ----------------------------------------------

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                  double eps, std::size_t max_coords_per_param,
                  std::uint64_t seed, CoordSelection selection) {
  for (Tensor& p : params) p.zero_grad();
  Tensor loss = f();
  backward(loss);

  std::mt19937_64 rng(seed);
  double max_rel = 0.0;
  for (Tensor& p : params) {
    const std::size_t n = p.numel();
    std::vector<std::size_t> coords;
    if (n <= max_coords_per_param) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else if (selection == CoordSelection::kLargestGradient) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
      const std::vector<double>& g = p.grad();
      std::partial_sort(coords.begin(),
                        coords.begin() + static_cast<std::ptrdiff_t>(
                                             max_coords_per_param),
                        coords.end(), [&g](std::size_t a, std::size_t b) {
                          return std::abs(g[a]) > std::abs(g[b]);
                        });
      coords.resize(max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    } else {
      std::unordered_set<std::size_t> chosen;
      std::uniform_int_distribution<std::size_t> dist(0, n - 1);
      while (chosen.size() < max_coords_per_param) chosen.insert(dist(rng));
      coords.assign(chosen.begin(), chosen.end());
      std::sort(coords.begin(), coords.end());
    }
    const std::vector<double>& analytic = p.grad();
    std::vector<double>& data = p.mutable_data();
    for (std::size_t c : coords) {
      const double original = data[c];
      double fp, fm;
      {
        NoGradGuard guard;
        data[c] = original + eps;
        fp = f().value();
        data[c] = original - eps;
        fm = f().value();
      }
      data[c] = original;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double denom =
          std::max(1e-8, std::abs(analytic[c]) + std::abs(numeric));
      max_rel = std::max(max_rel, std::abs(analytic[c] - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace cpoforge
