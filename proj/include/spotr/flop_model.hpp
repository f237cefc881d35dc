#pragma once

#include <cstdint>
#include <cstddef>

namespace spotr {

// FLOP accounting convention, shared by the tensor primitives (which add
// these amounts to the thread-local counter as they execute) and by the
// closed-form layer costs in bench.cpp. Keeping both sides on the same
// helpers is what makes "analytic == instrumented" an exact integer
// equality rather than an approximation.
//
//   multiply-add            2   (matmul inner step)
//   add / sub / mul / div   1   per element
//   exp / log / sqrt        1   per element
//   relu                    1   per element (select)
//   comparisons, gather, transpose, concat, reshape: 0 (data movement)
//
// softmax over a slice of length n costs 4n: subtract-max (n), exp (n),
// accumulate sum (n, zero-initialized), divide (n). The max scan itself is
// comparisons only. Reductions by max are free; reductions by sum cost one
// add per element.

constexpr uint64_t flops_matmul(size_t m, size_t k, size_t n) {
  return 2ull * m * k * n;
}
constexpr uint64_t flops_elemwise(size_t n) { return n; }
constexpr uint64_t flops_add_bias(size_t rows, size_t cols) {
  return static_cast<uint64_t>(rows) * cols;
}
constexpr uint64_t flops_softmax(size_t slices, size_t len) {
  return 4ull * slices * len;
}
// Per-element view of segmented softmax: every element is subtracted,
// exponentiated, summed, divided once whatever its segment length.
constexpr uint64_t flops_segment_softmax(size_t total_rows, size_t cols) {
  return 4ull * total_rows * cols;
}
constexpr uint64_t flops_segment_sum(size_t total_rows, size_t cols) {
  return static_cast<uint64_t>(total_rows) * cols;
}
constexpr uint64_t flops_segment_max(size_t, size_t) { return 0; }
constexpr uint64_t flops_reduce_sum(size_t n) { return n; }
constexpr uint64_t flops_reduce_max(size_t) { return 0; }
// Squared distance per (a, b) pair: 3 dims x (sub + multiply-add) = 9.
constexpr uint64_t flops_pairwise_sqdist(size_t a_rows, size_t b_rows) {
  return 9ull * a_rows * b_rows;
}
constexpr uint64_t flops_sigmoid(size_t n) { return 4ull * n; }
// Per row: sum (c) + mean (1) + center (c) + sumsq (2c) + var (1)
// + eps/sqrt/reciprocal (3) + scale (c) + gain (c) + bias (c) = 7c + 5.
constexpr uint64_t flops_layer_norm(size_t rows, size_t cols) {
  return static_cast<uint64_t>(rows) * (7ull * cols + 5);
}
// out = t*a + (1-t)*b: one sub for (1-t), then 3 per element.
constexpr uint64_t flops_mix(size_t n) { return 3ull * n + 1; }
constexpr uint64_t flops_normalize_rows(size_t rows, size_t cols) {
  return 2ull * rows * cols;
}
// max-subtract (k) + exp (k) + sum (k) + log (1) + sub (1).
constexpr uint64_t flops_cross_entropy(size_t k) { return 3ull * k + 2; }

}  // namespace spotr
