#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "spotr/common.hpp"

namespace spotr {

using Shape = std::vector<size_t>;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily by the backward pass
  bool requires_grad = false;
  bool leaf = false;
  bool backward_done = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  size_t size() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

/// Dense row-major float64 tensor with reverse-mode autodiff. Value
/// semantics: copies share the underlying node (like a shared view). Every
/// op validates that its output is finite and throws NumericError otherwise.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}

  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  /// Leaf with i.i.d. normal(0, stddev) entries; used for parameter init.
  static Tensor randn(Shape shape, Rng& rng, double stddev,
                      bool requires_grad = true);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  size_t ndim() const { return n_->shape.size(); }
  size_t size() const { return n_->value.size(); }
  size_t rows() const;
  size_t cols() const;

  const std::vector<double>& data() const { return n_->value; }
  /// Direct mutation; valid only on leaves (params, constants) between
  /// forward passes -- graph nodes cache nothing across calls anyway.
  std::vector<double>& mutable_data() { return n_->value; }

  double at(size_t i) const { return n_->value[i]; }
  double at(size_t r, size_t c) const { return n_->value[r * cols() + c]; }
  /// Scalar extraction; throws unless size() == 1.
  double item() const;

  bool requires_grad() const { return n_->requires_grad; }
  bool is_leaf() const { return n_->leaf; }
  const std::vector<double>& grad() const;
  void zero_grad() {
    if (n_) n_->grad.assign(n_->value.size(), 0.0);
  }

  std::shared_ptr<detail::Node> node() const { return n_; }

 private:
  std::shared_ptr<detail::Node> n_;
};

// ---- grad mode ------------------------------------------------------------

bool grad_enabled();
/// RAII guard that disables tape recording (inference / finite differences).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// ---- FLOP counter ----------------------------------------------------------

/// Thread-local forward-pass FLOP counter (convention in flop_model.hpp).
void flops_reset();
uint64_t flops_count();

// ---- primitive ops ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// x [R x C] + b [C] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& b);
Tensor relu(const Tensor& x);
/// Same data, new shape (sizes must match). Zero-cost bookkeeping.
Tensor reshape(const Tensor& x, Shape shape);
Tensor exp(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Max-subtracted softmax along `axis` of a 1D or 2D tensor.
Tensor softmax(const Tensor& x, size_t axis);
Tensor reduce_sum(const Tensor& x, size_t axis);
/// Max along `axis`; gradient routes to the first argmax of each slice.
Tensor reduce_max(const Tensor& x, size_t axis);
Tensor sum_all(const Tensor& x);
/// Select rows of a 2D tensor; indices may repeat. Gradient scatter-adds.
Tensor gather_rows(const Tensor& x, const std::vector<size_t>& idx);
Tensor concat_cols(const Tensor& a, const Tensor& b);
/// Segmented ops over a flattened [T x C] tensor. `offsets` has Q+1 entries,
/// segment q spans rows [offsets[q], offsets[q+1]); segments are non-empty.
Tensor segment_softmax(const Tensor& x, const std::vector<size_t>& offsets);
Tensor segment_sum(const Tensor& x, const std::vector<size_t>& offsets);
Tensor segment_max(const Tensor& x, const std::vector<size_t>& offsets);
/// D[i,j] = ||a_i - b_j||^2 for a [Ma x 3], b [Mb x 3].
Tensor pairwise_sqdist(const Tensor& a, const Tensor& b);
/// Per-row normalization: y = gain (.) (x - mean)/sqrt(var + eps) + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
/// t*a + (1-t)*b with scalar tensor t.
Tensor mix(const Tensor& a, const Tensor& b, const Tensor& t);
/// Divide each row by its sum (sums must be nonzero).
Tensor normalize_rows(const Tensor& x);
/// -log softmax(logits)[label]; logits shape [K] or [1 x K].
Tensor cross_entropy(const Tensor& logits, size_t label);

// ---- autodiff --------------------------------------------------------------

/// Reverse pass from a scalar loss. Accumulates into .grad of every
/// requires-grad node reachable on the tape; visits each node exactly once.
/// Calling twice on the same graph throws.
void backward(const Tensor& loss);

/// Central-difference gradient oracle: perturbs theta coordinate-wise in
/// place and re-evaluates f. Independent of the tape.
Tensor fd_gradient(const std::function<double()>& f, Tensor theta, double h);

}  // namespace spotr
