#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cpoforge {

using Shape = std::vector<std::size_t>;

namespace detail {

// One node of the dynamically recorded tape. Nodes are created in
// evaluation order, so the monotonically increasing `seq` id is a valid
// topological order by construction.
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool needs_grad = false;  // requires_grad or derived from such a tensor
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;
  std::uint64_t seq = 0;
  const char* op = "leaf";

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Value-semantics handle over a shared tape node. All arithmetic is in
// 64-bit floats, row-major.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_vector(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  double value() const;  // requires numel() == 1

  const std::vector<double>& data() const;
  // Direct write access for parameter updates. Only meaningful on leaves;
  // the tape holds no reference to past values, so mutating an interior
  // node would corrupt recorded gradients.
  std::vector<double>& mutable_data();

  bool requires_grad() const;
  bool has_grad() const;
  const std::vector<double>& grad() const;  // throws when never populated
  void zero_grad();

  // Internal handle used by the free-function primitives.
  const std::shared_ptr<detail::TensorNode>& impl() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::TensorNode> node)
      : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// --- primitives ---------------------------------------------------------
// Every primitive computes its forward value eagerly and, when gradient
// mode is on and any input needs a gradient, records a backward closure.
// Shape violations throw InternalError naming the primitive and shapes.

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k]x[k,n]
Tensor transpose(const Tensor& a);                // 2-D
// Same-shape elementwise add, or bias add [.., d] + [d] over the last axis.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor scale(const Tensor& a, double factor);
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor log_softmax(const Tensor& a, std::size_t axis);
// Normalizes over the last axis: gain * (x - mean) / sqrt(var + eps) + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor gelu(const Tensor& a);  // exact erf form
Tensor embedding_lookup(const Tensor& table, std::span<const std::int32_t> ids);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start,
             std::size_t length);
Tensor concat(std::span<const Tensor> tensors, std::size_t axis);
Tensor sum(const Tensor& a);   // scalar
Tensor mean(const Tensor& a);  // scalar
Tensor sigmoid(const Tensor& a);
// log(1 + exp(x)), evaluated so large |x| neither overflows nor loses
// the identity log(sigmoid(z)) == -softplus(-z).
Tensor softplus(const Tensor& a);
// Sum of a[r, c] over the given (row, col) pairs; 2-D input.
Tensor select_sum(const Tensor& a,
                  std::span<const std::pair<std::size_t, std::size_t>> indices);

// Reverse-mode sweep from a scalar loss. Gradients accumulate additively
// into every reachable tensor that needs one, then the recorded closures
// are dropped (the tape is cleared).
void backward(const Tensor& loss);

// While alive, primitives skip tape recording (pure value evaluation).
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

// Central-difference check of analytic gradients. Evaluates f twice per
// sampled coordinate and returns the max of
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
//
// When a tensor has more coordinates than the budget, kLargestGradient
// checks the ones with the biggest analytic entries; coordinates whose
// true derivative sits below the difference quotient's resolution
// (~ulp(f)/eps) only measure rounding noise. kUniform samples at random.
enum class CoordSelection { kLargestGradient, kUniform };

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                  double eps, std::size_t max_coords_per_param = 64,
                  std::uint64_t seed = 0x9E3779B97F4A7C15ULL,
                  CoordSelection selection = CoordSelection::kLargestGradient);

// Stable scalar helpers shared by the primitives.
double stable_sigmoid(double x);
double stable_softplus(double x);

std::string shape_to_string(const Shape& shape);

}  // namespace cpoforge
