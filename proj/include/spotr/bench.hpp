#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spotr/spa.hpp"

namespace spotr {

/// One named stage of a cost breakdown. act_bytes follows the tape
/// convention: under reverse-mode autodiff every forward activation stays
/// live until the backward pass consumes it, so the peak simultaneously-live
/// set is the whole forward tape. The count is the sum of all op-output
/// elements (8 bytes each); parameters and raw inputs are excluded.
struct CostEntry {
  std::string layer;
  uint64_t flops = 0;
  uint64_t act_bytes = 0;
};

struct CostReport {
  std::string variant;  // "spa" or "gsa"
  size_t n = 0;
  size_t s = 0;  // key-set size: SP points for spa, n for gsa
  size_t c = 0;
  std::vector<CostEntry> layers;
  uint64_t flops = 0;
  uint64_t params = 0;
  uint64_t act_bytes = 0;
  uint64_t wall_ns = 0;  // median; 0 when not measured
  bool timer_warning = false;

  uint64_t layer_flops(const std::string& name) const;
};

/// Closed-form cost of one spa_forward call on n points with every query
/// attending to all SP points. Replays the forward op by op with the same
/// flop-model helpers the tensor primitives charge, so the total matches an
/// instrumented run exactly.
CostReport count_spa(const SpaConfig& cfg, size_t n, bool tied = false);
CostReport count_spa(size_t n, size_t s, size_t c, size_t hidden = 0);

/// Cost of global self-attention: the same channel-wise attention with the
/// key set equal to all n points. Equals the "attention" layer of count_spa
/// when s == n.
CostReport count_gsa(const AttnConfig& cfg, size_t n, bool tied = false);
CostReport count_gsa(size_t n, size_t c, size_t hidden = 0);

/// Global self-attention forward: every point attends to every point,
/// relative positions unscaled. Used for instrumentation checks and wall
/// timing.
Tensor gsa_forward(const Tensor& x, const Tensor& f, const AttnConfig& cfg,
                   const CwpaParams& params);

struct SweepConfig {
  std::vector<size_t> n_values;
  size_t s_points = 16;
  size_t channels = 64;
  size_t hidden = 0;  // 0 means same as channels
  size_t warmup = 3;
  size_t runs = 10;  // 0 disables measurement (deterministic output)
  size_t measure_max_n = 2048;
  uint64_t seed = 1;

  void validate() const;
};

/// One spa and one gsa report per requested n, wall times measured for
/// n <= measure_max_n (median of `runs` after `warmup` discarded runs).
std::vector<CostReport> sweep(const SweepConfig& cfg);

/// CSV with header `variant,N,S,C,flops,params,act_bytes,wall_ns_median`.
std::string bench_csv(const std::vector<CostReport>& reports);

/// Least-squares slope of log(y) against log(n).
double loglog_slope(const std::vector<size_t>& n,
                    const std::vector<uint64_t>& y);

}  // namespace spotr
