#pragma once

#include <vector>

#include "spotr/attention.hpp"
#include "spotr/tensor.hpp"

namespace spotr {

/// Self-positioning attention layer settings. `uniform_h` swaps the
/// semantic kernel for a flat 1/N weight in the aggregation (the
/// spatial-only ablation); `renormalize` jointly renormalizes the combined
/// g*h weights per SP point instead of using them raw.
struct SpaConfig {
  size_t s_points = 16;
  double gamma = 16.0;
  AttnConfig attn;
  bool uniform_h = false;
  bool renormalize = false;

  void validate() const;
};

struct SpaParams {
  Tensor z;  // [S x C] latent vectors, one per SP point
  CwpaParams cwpa;
};

SpaParams make_spa_params(const SpaConfig& cfg, Rng& rng);
void append_params(std::vector<Tensor>& out, const SpaParams& p);

/// h[s,i] = softmax over input points i of f_i . z_s.
Tensor semantic_kernel(const Tensor& z, const Tensor& f);

/// SP positions: delta_s = sum_i h[s,i] * x_i (convex combination).
Tensor sp_positions(const Tensor& f, const Tensor& x, const Tensor& z);

/// Scalar RBF value exp(-gamma * ||delta - xi||^2).
double spatial_kernel(const std::array<double, 3>& delta,
                      const std::array<double, 3>& xi, double gamma);

/// Batched RBF kernel matrix G[s,i] between SP positions and input points.
Tensor spatial_weights(const Tensor& delta, const Tensor& x, double gamma);

/// Disentangled aggregation: psi_s = sum_i g*h*f_i. With uniform_h the h
/// factor becomes 1/N (h may then be left undefined); with renormalize the
/// combined weights are scaled to sum to one per row first.
/// `weights_out`, when non-null, receives the final [S x N] weights.
Tensor aggregate(const Tensor& x, const Tensor& f, const Tensor& delta,
                 const Tensor& h, double gamma, bool uniform_h,
                 bool renormalize, Tensor* weights_out = nullptr);

/// Intermediate tensors of one SPA forward pass, for diagnostics dumps.
struct SpaTrace {
  Tensor h;      // [S x N]
  Tensor delta;  // [S x 3]
  Tensor g;      // [S x N]
  Tensor w;      // [S x N] final aggregation weights
  Tensor psi;    // [S x C]
  Tensor attn;   // [Q*S x C] cwpa attention rows
};

/// Full SPA pass: derive SP points from (x, f), then let each query point
/// cross-attend to them via CWPA. `query_idx` empty means all points.
Tensor spa_forward(const Tensor& x, const Tensor& f, const SpaConfig& cfg,
                   const SpaParams& params,
                   const std::vector<size_t>& query_idx = {},
                   SpaTrace* trace = nullptr);

/// Ablation: SP positions replaced by FPS-selected input positions, and
/// aggregation weights g * 1/N (no semantic kernel, no latents).
Tensor spa_ablation_fps(const Tensor& x, const Tensor& f,
                        const SpaConfig& cfg, const CwpaParams& cwpa,
                        const std::vector<size_t>& query_idx = {},
                        SpaTrace* trace = nullptr);

}  // namespace spotr
