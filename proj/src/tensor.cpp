#include "spotr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "spotr/flop_model.hpp"

namespace spotr {

namespace {

thread_local uint64_t g_flops = 0;
thread_local bool g_grad_enabled = true;

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

size_t shape_size(const Shape& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

[[noreturn]] void fail(const char* op, const std::string& msg) {
  throw NumericError(std::string(op) + ": " + msg);
}

void check(bool ok, const char* op, const std::string& msg) {
  if (!ok) fail(op, msg);
}

void check_finite(const Node& n) {
  for (double v : n.value)
    if (!std::isfinite(v)) fail(n.op, "non-finite value produced");
}

NodePtr make_node(const char* op, Shape shape, std::vector<double> value,
                  std::vector<NodePtr> parents,
                  std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->shape = std::move(shape);
  n->value = std::move(value);
  check_finite(*n);
  if (g_grad_enabled) {
    for (const auto& p : parents)
      if (p->requires_grad) {
        n->requires_grad = true;
        break;
      }
  }
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return n;
}

// Raw row-major matmul kernels; no recording, used by forward and backward.
void mm_nn(const double* a, const double* b, double* c, size_t m, size_t k,
           size_t n) {
  std::fill(c, c + m * n, 0.0);
  for (size_t i = 0; i < m; ++i)
    for (size_t p = 0; p < k; ++p) {
      double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      double* crow = c + i * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

// c[m x n] += a[m x k] * b[n x k]^T
void mm_nt_acc(const double* a, const double* b, double* c, size_t m, size_t k,
               size_t n) {
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) {
      double s = 0.0;
      const double* arow = a + i * k;
      const double* brow = b + j * k;
      for (size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
}

// c[k x n] += a[m x k]^T * b[m x n]
void mm_tn_acc(const double* a, const double* b, double* c, size_t m, size_t k,
               size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (size_t p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void softmax_slice(const double* x, double* y, size_t len, size_t stride) {
  double m = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < len; ++i) m = std::max(m, x[i * stride]);
  double s = 0.0;
  for (size_t i = 0; i < len; ++i) {
    double e = std::exp(x[i * stride] - m);
    y[i * stride] = e;
    s += e;
  }
  for (size_t i = 0; i < len; ++i) y[i * stride] /= s;
}

// dx_i = y_i * (dy_i - sum_j dy_j y_j), accumulated into gx.
void softmax_slice_backward(const double* y, const double* gy, double* gx,
                            size_t len, size_t stride) {
  double dot = 0.0;
  for (size_t i = 0; i < len; ++i) dot += gy[i * stride] * y[i * stride];
  for (size_t i = 0; i < len; ++i)
    gx[i * stride] += y[i * stride] * (gy[i * stride] - dot);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check(a.shape() == b.shape(), op,
        "shape mismatch " + shape_str(a.shape()) + " vs " +
            shape_str(b.shape()));
}

void check_offsets(const std::vector<size_t>& off, size_t total,
                   const char* op) {
  check(off.size() >= 2, op, "need at least one segment");
  check(off.front() == 0 && off.back() == total, op,
        "offsets must span all rows");
  for (size_t q = 0; q + 1 < off.size(); ++q)
    check(off[q] < off[q + 1], op, "empty segment");
}

Tensor elemwise(const char* op, const Tensor& a, const Tensor& b,
                const std::function<double(double, double)>& f,
                const std::function<void(Node&)>& bw) {
  check_same_shape(a, b, op);
  std::vector<double> out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = f(a.at(i), b.at(i));
  g_flops += flops_elemwise(a.size());
  return Tensor(make_node(op, a.shape(), std::move(out), {a.node(), b.node()},
                          bw));
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  check(shape_size(shape) == data.size(), "Tensor::from",
        "shape/data size mismatch");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  n->leaf = true;
  check_finite(*n);
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  size_t n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  size_t n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  std::vector<double> data(shape_size(shape));
  for (double& v : data) v = rng.normal() * stddev;
  return from(std::move(shape), std::move(data), requires_grad);
}

size_t Tensor::rows() const {
  check(ndim() == 2, "Tensor::rows", "not a matrix");
  return n_->shape[0];
}

size_t Tensor::cols() const {
  check(ndim() == 2, "Tensor::cols", "not a matrix");
  return n_->shape[1];
}

double Tensor::item() const {
  check(size() == 1, "Tensor::item", "tensor is not scalar");
  return n_->value[0];
}

const std::vector<double>& Tensor::grad() const {
  n_->ensure_grad();
  return n_->grad;
}

// ---- grad mode / flops -----------------------------------------------------

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void flops_reset() { g_flops = 0; }
uint64_t flops_count() { return g_flops; }

// ---- ops -------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  auto an = a.node(), bn = b.node();
  return elemwise("add", a, b, [](double x, double y) { return x + y; },
                  [an, bn](Node& n) {
                    if (an->requires_grad) {
                      an->ensure_grad();
                      for (size_t i = 0; i < n.size(); ++i)
                        an->grad[i] += n.grad[i];
                    }
                    if (bn->requires_grad) {
                      bn->ensure_grad();
                      for (size_t i = 0; i < n.size(); ++i)
                        bn->grad[i] += n.grad[i];
                    }
                  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto an = a.node(), bn = b.node();
  return elemwise("sub", a, b, [](double x, double y) { return x - y; },
                  [an, bn](Node& n) {
                    if (an->requires_grad) {
                      an->ensure_grad();
                      for (size_t i = 0; i < n.size(); ++i)
                        an->grad[i] += n.grad[i];
                    }
                    if (bn->requires_grad) {
                      bn->ensure_grad();
                      for (size_t i = 0; i < n.size(); ++i)
                        bn->grad[i] -= n.grad[i];
                    }
                  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto an = a.node(), bn = b.node();
  return elemwise("mul", a, b, [](double x, double y) { return x * y; },
                  [an, bn](Node& n) {
                    if (an->requires_grad) {
                      an->ensure_grad();
                      for (size_t i = 0; i < n.size(); ++i)
                        an->grad[i] += bn->value[i] * n.grad[i];
                    }
                    if (bn->requires_grad) {
                      bn->ensure_grad();
                      for (size_t i = 0; i < n.size(); ++i)
                        bn->grad[i] += an->value[i] * n.grad[i];
                    }
                  });
}

Tensor scale(const Tensor& a, double s) {
  auto an = a.node();
  std::vector<double> out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a.at(i) * s;
  g_flops += flops_elemwise(a.size());
  return Tensor(make_node("scale", a.shape(), std::move(out), {an},
                          [an, s](Node& n) {
                            an->ensure_grad();
                            for (size_t i = 0; i < n.size(); ++i)
                              an->grad[i] += s * n.grad[i];
                          }));
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.ndim() == 2 && b.ndim() == 2, "matmul", "inputs must be matrices");
  size_t m = a.rows(), k = a.cols(), n = b.cols();
  check(b.rows() == k, "matmul",
        "inner dims " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(m * n);
  mm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  g_flops += flops_matmul(m, k, n);
  auto an = a.node(), bn = b.node();
  return Tensor(make_node(
      "matmul", {m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](Node& nd) {
        if (an->requires_grad) {
          an->ensure_grad();
          mm_nt_acc(nd.grad.data(), bn->value.data(), an->grad.data(), m, n,
                    k);
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          mm_tn_acc(an->value.data(), nd.grad.data(), bn->grad.data(), m, k,
                    n);
        }
      }));
}

Tensor transpose(const Tensor& a) {
  check(a.ndim() == 2, "transpose", "input must be a matrix");
  size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) out[j * r + i] = a.at(i, j);
  auto an = a.node();
  return Tensor(make_node("transpose", {c, r}, std::move(out), {an},
                          [an, r, c](Node& n) {
                            an->ensure_grad();
                            for (size_t i = 0; i < r; ++i)
                              for (size_t j = 0; j < c; ++j)
                                an->grad[i * c + j] += n.grad[j * r + i];
                          }));
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  check(x.ndim() == 2 && b.ndim() == 1, "add_bias", "need matrix and vector");
  size_t r = x.rows(), c = x.cols();
  check(b.size() == c, "add_bias", "bias length mismatch");
  std::vector<double> out(r * c);
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) out[i * c + j] = x.at(i, j) + b.at(j);
  g_flops += flops_add_bias(r, c);
  auto xn = x.node(), bn = b.node();
  return Tensor(make_node("add_bias", {r, c}, std::move(out), {xn, bn},
                          [xn, bn, r, c](Node& n) {
                            if (xn->requires_grad) {
                              xn->ensure_grad();
                              for (size_t i = 0; i < r * c; ++i)
                                xn->grad[i] += n.grad[i];
                            }
                            if (bn->requires_grad) {
                              bn->ensure_grad();
                              for (size_t i = 0; i < r; ++i)
                                for (size_t j = 0; j < c; ++j)
                                  bn->grad[j] += n.grad[i * c + j];
                            }
                          }));
}

Tensor relu(const Tensor& x) {
  auto xn = x.node();
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = x.at(i) > 0.0 ? x.at(i) : 0.0;
  g_flops += flops_elemwise(x.size());
  return Tensor(make_node("relu", x.shape(), std::move(out), {xn},
                          [xn](Node& n) {
                            xn->ensure_grad();
                            for (size_t i = 0; i < n.size(); ++i)
                              if (xn->value[i] > 0.0)
                                xn->grad[i] += n.grad[i];
                          }));
}

Tensor reshape(const Tensor& x, Shape shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  check(n == x.size(), "reshape", "element count must be preserved");
  auto xn = x.node();
  std::vector<double> out = x.data();
  return Tensor(make_node("reshape", std::move(shape), std::move(out), {xn},
                          [xn](Node& n2) {
                            xn->ensure_grad();
                            for (size_t i = 0; i < n2.size(); ++i)
                              xn->grad[i] += n2.grad[i];
                          }));
}

Tensor exp(const Tensor& x) {
  auto xn = x.node();
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = std::exp(x.at(i));
  g_flops += flops_elemwise(x.size());
  return Tensor(make_node("exp", x.shape(), std::move(out), {xn},
                          [xn](Node& n) {
                            xn->ensure_grad();
                            for (size_t i = 0; i < n.size(); ++i)
                              xn->grad[i] += n.value[i] * n.grad[i];
                          }));
}

Tensor sigmoid(const Tensor& x) {
  auto xn = x.node();
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    double v = x.at(i);
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                      : std::exp(v) / (1.0 + std::exp(v));
  }
  g_flops += flops_sigmoid(x.size());
  return Tensor(make_node("sigmoid", x.shape(), std::move(out), {xn},
                          [xn](Node& n) {
                            xn->ensure_grad();
                            for (size_t i = 0; i < n.size(); ++i) {
                              double y = n.value[i];
                              xn->grad[i] += y * (1.0 - y) * n.grad[i];
                            }
                          }));
}

Tensor softmax(const Tensor& x, size_t axis) {
  check(x.ndim() == 1 || x.ndim() == 2, "softmax", "need 1D or 2D input");
  check(axis < x.ndim(), "softmax", "axis out of range");
  std::vector<double> out(x.size());
  size_t slices, len, stride, slice_step;
  if (x.ndim() == 1) {
    slices = 1, len = x.size(), stride = 1, slice_step = 0;
  } else if (axis == 1) {
    slices = x.rows(), len = x.cols(), stride = 1, slice_step = x.cols();
  } else {
    slices = x.cols(), len = x.rows(), stride = x.cols(), slice_step = 1;
  }
  for (size_t s = 0; s < slices; ++s)
    softmax_slice(x.data().data() + s * slice_step, out.data() + s * slice_step,
                  len, stride);
  g_flops += flops_softmax(slices, len);
  auto xn = x.node();
  return Tensor(make_node(
      "softmax", x.shape(), std::move(out), {xn},
      [xn, slices, len, stride, slice_step](Node& n) {
        xn->ensure_grad();
        for (size_t s = 0; s < slices; ++s)
          softmax_slice_backward(n.value.data() + s * slice_step,
                                 n.grad.data() + s * slice_step,
                                 xn->grad.data() + s * slice_step, len,
                                 stride);
      }));
}

Tensor reduce_sum(const Tensor& x, size_t axis) {
  check(x.ndim() == 2 && axis < 2, "reduce_sum", "need 2D input, axis 0/1");
  size_t r = x.rows(), c = x.cols();
  size_t out_len = axis == 0 ? c : r;
  std::vector<double> out(out_len, 0.0);
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) out[axis == 0 ? j : i] += x.at(i, j);
  g_flops += flops_reduce_sum(r * c);
  auto xn = x.node();
  return Tensor(make_node("reduce_sum", {out_len}, std::move(out), {xn},
                          [xn, r, c, axis](Node& n) {
                            xn->ensure_grad();
                            for (size_t i = 0; i < r; ++i)
                              for (size_t j = 0; j < c; ++j)
                                xn->grad[i * c + j] +=
                                    n.grad[axis == 0 ? j : i];
                          }));
}

Tensor reduce_max(const Tensor& x, size_t axis) {
  check(x.ndim() == 2 && axis < 2, "reduce_max", "need 2D input, axis 0/1");
  size_t r = x.rows(), c = x.cols();
  size_t out_len = axis == 0 ? c : r;
  std::vector<double> out(out_len, -std::numeric_limits<double>::infinity());
  std::vector<size_t> arg(out_len, 0);
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) {
      size_t o = axis == 0 ? j : i;
      if (x.at(i, j) > out[o]) {
        out[o] = x.at(i, j);
        arg[o] = i * c + j;
      }
    }
  g_flops += flops_reduce_max(r * c);
  auto xn = x.node();
  return Tensor(make_node("reduce_max", {out_len}, std::move(out), {xn},
                          [xn, arg](Node& n) {
                            xn->ensure_grad();
                            for (size_t o = 0; o < arg.size(); ++o)
                              xn->grad[arg[o]] += n.grad[o];
                          }));
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  g_flops += flops_reduce_sum(x.size());
  auto xn = x.node();
  return Tensor(make_node("sum_all", {1}, {s}, {xn}, [xn](Node& n) {
    xn->ensure_grad();
    for (size_t i = 0; i < xn->value.size(); ++i) xn->grad[i] += n.grad[0];
  }));
}

Tensor gather_rows(const Tensor& x, const std::vector<size_t>& idx) {
  check(x.ndim() == 2, "gather_rows", "need 2D input");
  size_t c = x.cols();
  std::vector<double> out(idx.size() * c);
  for (size_t i = 0; i < idx.size(); ++i) {
    check(idx[i] < x.rows(), "gather_rows", "index out of range");
    std::copy_n(x.data().data() + idx[i] * c, c, out.data() + i * c);
  }
  auto xn = x.node();
  return Tensor(make_node("gather_rows", {idx.size(), c}, std::move(out), {xn},
                          [xn, idx, c](Node& n) {
                            xn->ensure_grad();
                            for (size_t i = 0; i < idx.size(); ++i)
                              for (size_t j = 0; j < c; ++j)
                                xn->grad[idx[i] * c + j] += n.grad[i * c + j];
                          }));
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  check(a.ndim() == 2 && b.ndim() == 2 && a.rows() == b.rows(), "concat_cols",
        "row count mismatch");
  size_t r = a.rows(), ca = a.cols(), cb = b.cols(), c = ca + cb;
  std::vector<double> out(r * c);
  for (size_t i = 0; i < r; ++i) {
    std::copy_n(a.data().data() + i * ca, ca, out.data() + i * c);
    std::copy_n(b.data().data() + i * cb, cb, out.data() + i * c + ca);
  }
  auto an = a.node(), bn = b.node();
  return Tensor(make_node("concat_cols", {r, c}, std::move(out), {an, bn},
                          [an, bn, r, ca, cb, c](Node& n) {
                            if (an->requires_grad) {
                              an->ensure_grad();
                              for (size_t i = 0; i < r; ++i)
                                for (size_t j = 0; j < ca; ++j)
                                  an->grad[i * ca + j] += n.grad[i * c + j];
                            }
                            if (bn->requires_grad) {
                              bn->ensure_grad();
                              for (size_t i = 0; i < r; ++i)
                                for (size_t j = 0; j < cb; ++j)
                                  bn->grad[i * cb + j] +=
                                      n.grad[i * c + ca + j];
                            }
                          }));
}

Tensor segment_softmax(const Tensor& x, const std::vector<size_t>& offsets) {
  check(x.ndim() == 2, "segment_softmax", "need 2D input");
  size_t t = x.rows(), c = x.cols();
  check_offsets(offsets, t, "segment_softmax");
  std::vector<double> out(t * c);
  for (size_t q = 0; q + 1 < offsets.size(); ++q) {
    size_t lo = offsets[q], len = offsets[q + 1] - offsets[q];
    for (size_t j = 0; j < c; ++j)
      softmax_slice(x.data().data() + lo * c + j, out.data() + lo * c + j, len,
                    c);
  }
  g_flops += flops_segment_softmax(t, c);
  auto xn = x.node();
  return Tensor(make_node(
      "segment_softmax", {t, c}, std::move(out), {xn},
      [xn, offsets, c](Node& n) {
        xn->ensure_grad();
        for (size_t q = 0; q + 1 < offsets.size(); ++q) {
          size_t lo = offsets[q], len = offsets[q + 1] - offsets[q];
          for (size_t j = 0; j < c; ++j)
            softmax_slice_backward(n.value.data() + lo * c + j,
                                   n.grad.data() + lo * c + j,
                                   xn->grad.data() + lo * c + j, len, c);
        }
      }));
}

Tensor segment_sum(const Tensor& x, const std::vector<size_t>& offsets) {
  check(x.ndim() == 2, "segment_sum", "need 2D input");
  size_t t = x.rows(), c = x.cols(), q = offsets.size() - 1;
  check_offsets(offsets, t, "segment_sum");
  std::vector<double> out(q * c, 0.0);
  for (size_t s = 0; s < q; ++s)
    for (size_t i = offsets[s]; i < offsets[s + 1]; ++i)
      for (size_t j = 0; j < c; ++j) out[s * c + j] += x.at(i, j);
  g_flops += flops_segment_sum(t, c);
  auto xn = x.node();
  return Tensor(make_node("segment_sum", {q, c}, std::move(out), {xn},
                          [xn, offsets, c](Node& n) {
                            xn->ensure_grad();
                            for (size_t s = 0; s + 1 < offsets.size(); ++s)
                              for (size_t i = offsets[s]; i < offsets[s + 1];
                                   ++i)
                                for (size_t j = 0; j < c; ++j)
                                  xn->grad[i * c + j] += n.grad[s * c + j];
                          }));
}

Tensor segment_max(const Tensor& x, const std::vector<size_t>& offsets) {
  check(x.ndim() == 2, "segment_max", "need 2D input");
  size_t t = x.rows(), c = x.cols(), q = offsets.size() - 1;
  check_offsets(offsets, t, "segment_max");
  std::vector<double> out(q * c, -std::numeric_limits<double>::infinity());
  std::vector<size_t> arg(q * c, 0);
  for (size_t s = 0; s < q; ++s)
    for (size_t i = offsets[s]; i < offsets[s + 1]; ++i)
      for (size_t j = 0; j < c; ++j)
        if (x.at(i, j) > out[s * c + j]) {
          out[s * c + j] = x.at(i, j);
          arg[s * c + j] = i * c + j;
        }
  g_flops += flops_segment_max(t, c);
  auto xn = x.node();
  return Tensor(make_node("segment_max", {q, c}, std::move(out), {xn},
                          [xn, arg](Node& n) {
                            xn->ensure_grad();
                            for (size_t o = 0; o < arg.size(); ++o)
                              xn->grad[arg[o]] += n.grad[o];
                          }));
}

Tensor pairwise_sqdist(const Tensor& a, const Tensor& b) {
  check(a.ndim() == 2 && b.ndim() == 2 && a.cols() == 3 && b.cols() == 3,
        "pairwise_sqdist", "need [N x 3] inputs");
  size_t ma = a.rows(), mb = b.rows();
  std::vector<double> out(ma * mb);
  for (size_t i = 0; i < ma; ++i)
    for (size_t j = 0; j < mb; ++j) {
      double s = 0.0;
      for (size_t k = 0; k < 3; ++k) {
        double d = a.at(i, k) - b.at(j, k);
        s += d * d;
      }
      out[i * mb + j] = s;
    }
  g_flops += flops_pairwise_sqdist(ma, mb);
  auto an = a.node(), bn = b.node();
  return Tensor(make_node(
      "pairwise_sqdist", {ma, mb}, std::move(out), {an, bn},
      [an, bn, ma, mb](Node& n) {
        for (size_t i = 0; i < ma; ++i)
          for (size_t j = 0; j < mb; ++j) {
            double g = n.grad[i * mb + j];
            if (g == 0.0) continue;
            for (size_t k = 0; k < 3; ++k) {
              double d = an->value[i * 3 + k] - bn->value[j * 3 + k];
              if (an->requires_grad) {
                an->ensure_grad();
                an->grad[i * 3 + k] += 2.0 * d * g;
              }
              if (bn->requires_grad) {
                bn->ensure_grad();
                bn->grad[j * 3 + k] -= 2.0 * d * g;
              }
            }
          }
      }));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  check(x.ndim() == 2, "layer_norm", "need 2D input");
  size_t r = x.rows(), c = x.cols();
  check(gain.ndim() == 1 && gain.size() == c && bias.ndim() == 1 &&
            bias.size() == c,
        "layer_norm", "gain/bias length mismatch");
  std::vector<double> out(r * c), xhat(r * c), inv_sigma(r);
  for (size_t i = 0; i < r; ++i) {
    double mean = 0.0;
    for (size_t j = 0; j < c; ++j) mean += x.at(i, j);
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (size_t j = 0; j < c; ++j) {
      double d = x.at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    double inv = 1.0 / std::sqrt(var + eps);
    inv_sigma[i] = inv;
    for (size_t j = 0; j < c; ++j) {
      double h = (x.at(i, j) - mean) * inv;
      xhat[i * c + j] = h;
      out[i * c + j] = gain.at(j) * h + bias.at(j);
    }
  }
  g_flops += flops_layer_norm(r, c);
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  return Tensor(make_node(
      "layer_norm", {r, c}, std::move(out), {xn, gn, bn},
      [xn, gn, bn, r, c, xhat, inv_sigma](Node& n) {
        for (size_t i = 0; i < r; ++i) {
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (size_t j = 0; j < c; ++j) {
            double dxh = n.grad[i * c + j] * gn->value[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xhat[i * c + j];
          }
          mean_dxhat /= static_cast<double>(c);
          mean_dxhat_xhat /= static_cast<double>(c);
          if (xn->requires_grad) {
            xn->ensure_grad();
            for (size_t j = 0; j < c; ++j) {
              double dxh = n.grad[i * c + j] * gn->value[j];
              xn->grad[i * c + j] +=
                  inv_sigma[i] *
                  (dxh - mean_dxhat - xhat[i * c + j] * mean_dxhat_xhat);
            }
          }
          if (gn->requires_grad) {
            gn->ensure_grad();
            for (size_t j = 0; j < c; ++j)
              gn->grad[j] += n.grad[i * c + j] * xhat[i * c + j];
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t j = 0; j < c; ++j) bn->grad[j] += n.grad[i * c + j];
          }
        }
      }));
}

Tensor mix(const Tensor& a, const Tensor& b, const Tensor& t) {
  check_same_shape(a, b, "mix");
  check(t.size() == 1, "mix", "mixing weight must be scalar");
  double tv = t.at(0);
  std::vector<double> out(a.size());
  for (size_t i = 0; i < a.size(); ++i)
    out[i] = tv * a.at(i) + (1.0 - tv) * b.at(i);
  g_flops += flops_mix(a.size());
  auto an = a.node(), bn = b.node(), tn = t.node();
  return Tensor(make_node("mix", a.shape(), std::move(out), {an, bn, tn},
                          [an, bn, tn, tv](Node& n) {
                            if (an->requires_grad) {
                              an->ensure_grad();
                              for (size_t i = 0; i < n.size(); ++i)
                                an->grad[i] += tv * n.grad[i];
                            }
                            if (bn->requires_grad) {
                              bn->ensure_grad();
                              for (size_t i = 0; i < n.size(); ++i)
                                bn->grad[i] += (1.0 - tv) * n.grad[i];
                            }
                            if (tn->requires_grad) {
                              tn->ensure_grad();
                              double s = 0.0;
                              for (size_t i = 0; i < n.size(); ++i)
                                s += (an->value[i] - bn->value[i]) * n.grad[i];
                              tn->grad[0] += s;
                            }
                          }));
}

Tensor normalize_rows(const Tensor& x) {
  check(x.ndim() == 2, "normalize_rows", "need 2D input");
  size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r * c), sums(r);
  for (size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (size_t j = 0; j < c; ++j) s += x.at(i, j);
    check(s != 0.0, "normalize_rows", "zero row sum");
    sums[i] = s;
    for (size_t j = 0; j < c; ++j) out[i * c + j] = x.at(i, j) / s;
  }
  g_flops += flops_normalize_rows(r, c);
  auto xn = x.node();
  return Tensor(make_node(
      "normalize_rows", {r, c}, std::move(out), {xn},
      [xn, sums, r, c](Node& n) {
        xn->ensure_grad();
        for (size_t i = 0; i < r; ++i) {
          double dot = 0.0;
          for (size_t j = 0; j < c; ++j)
            dot += n.grad[i * c + j] * n.value[i * c + j];
          for (size_t j = 0; j < c; ++j)
            xn->grad[i * c + j] += (n.grad[i * c + j] - dot) / sums[i];
        }
      }));
}

Tensor cross_entropy(const Tensor& logits, size_t label) {
  check(logits.ndim() == 1 || (logits.ndim() == 2 && logits.rows() == 1),
        "cross_entropy", "need a single logit row");
  size_t k = logits.size();
  check(label < k, "cross_entropy", "label out of range");
  const double* x = logits.data().data();
  double m = *std::max_element(x, x + k);
  double sum = 0.0;
  for (size_t j = 0; j < k; ++j) sum += std::exp(x[j] - m);
  double loss = m + std::log(sum) - x[label];
  g_flops += flops_cross_entropy(k);
  auto ln = logits.node();
  return Tensor(make_node("cross_entropy", {1}, {loss}, {ln},
                          [ln, label, k, m, sum](Node& n) {
                            ln->ensure_grad();
                            double g = n.grad[0];
                            for (size_t j = 0; j < k; ++j) {
                              double p = std::exp(ln->value[j] - m) / sum;
                              ln->grad[j] += g * (p - (j == label ? 1.0 : 0.0));
                            }
                          }));
}

// ---- backward --------------------------------------------------------------

void backward(const Tensor& loss) {
  check(loss.defined() && loss.size() == 1, "backward", "loss must be scalar");
  NodePtr root = loss.node();
  check(root->requires_grad, "backward", "loss does not require grad");
  check(!root->backward_done, "backward",
        "called twice on the same graph without reset");

  // Iterative post-order DFS; only requires-grad nodes carry tape edges.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* nd = *it;
    nd->ensure_grad();
    if (nd->backward_fn) nd->backward_fn(*nd);
    nd->backward_done = true;
  }
}

Tensor fd_gradient(const std::function<double()>& f, Tensor theta, double h) {
  check(h > 0.0, "fd_gradient", "step must be positive");
  NoGradGuard no_grad;
  std::vector<double> g(theta.size());
  auto& v = theta.mutable_data();
  for (size_t i = 0; i < v.size(); ++i) {
    double saved = v[i];
    v[i] = saved + h;
    double fp = f();
    v[i] = saved - h;
    double fm = f();
    v[i] = saved;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return Tensor::from(theta.shape(), std::move(g));
}

}  // namespace spotr
