#include "spotr/spa.hpp"

#include <cmath>

#include "spotr/geometry.hpp"

namespace spotr {

void SpaConfig::validate() const {
  if (s_points < 1) throw UsageError("spa: need at least one SP point");
  if (gamma <= 0.0) throw UsageError("spa: gamma must be positive");
  if (attn.channels == 0) throw UsageError("spa: channels must be positive");
  if (attn.tau <= 0.0) throw UsageError("spa: temperature must be positive");
}

SpaParams make_spa_params(const SpaConfig& cfg, Rng& rng) {
  cfg.validate();
  SpaParams p;
  p.z = Tensor::randn({cfg.s_points, cfg.attn.channels}, rng,
                      1.0 / std::sqrt(static_cast<double>(cfg.attn.channels)));
  p.cwpa = make_cwpa_params(cfg.attn, rng);
  return p;
}

void append_params(std::vector<Tensor>& out, const SpaParams& p) {
  out.push_back(p.z);
  append_params(out, p.cwpa);
}

Tensor semantic_kernel(const Tensor& z, const Tensor& f) {
  return softmax(matmul(z, transpose(f)), 1);
}

Tensor sp_positions(const Tensor& f, const Tensor& x, const Tensor& z) {
  return matmul(semantic_kernel(z, f), x);
}

double spatial_kernel(const std::array<double, 3>& delta,
                      const std::array<double, 3>& xi, double gamma) {
  double d2 = 0.0;
  for (size_t k = 0; k < 3; ++k) {
    double d = delta[k] - xi[k];
    d2 += d * d;
  }
  return std::exp(-gamma * d2);
}

Tensor spatial_weights(const Tensor& delta, const Tensor& x, double gamma) {
  return exp(scale(pairwise_sqdist(delta, x), -gamma));
}

Tensor aggregate(const Tensor& x, const Tensor& f, const Tensor& delta,
                 const Tensor& h, double gamma, bool uniform_h,
                 bool renormalize, Tensor* weights_out) {
  Tensor g = spatial_weights(delta, x, gamma);
  Tensor w;
  if (uniform_h) {
    w = scale(g, 1.0 / static_cast<double>(x.rows()));
  } else {
    if (!h.defined()) throw UsageError("aggregate: semantic kernel missing");
    w = mul(g, h);
  }
  if (renormalize) w = normalize_rows(w);
  if (weights_out) *weights_out = w;
  return matmul(w, f);
}

namespace {

Tensor distribute(const Tensor& x, const Tensor& f, const Tensor& delta,
                  const Tensor& psi, const SpaConfig& cfg,
                  const CwpaParams& cwpa, const std::vector<size_t>& query_idx,
                  SpaTrace* trace) {
  Tensor xq = query_idx.empty() ? x : gather_rows(x, query_idx);
  Tensor fq = query_idx.empty() ? f : gather_rows(f, query_idx);
  PairSet pairs = dense_pairs(xq.rows(), cfg.s_points);
  Tensor phi = rel_pos_rows(gather_rows(xq, pairs.qidx),
                            gather_rows(delta, pairs.kidx), 1.0);
  Tensor* attn_slot = trace ? &trace->attn : nullptr;
  return cwpa_pairs(fq, psi, phi, pairs, cfg.attn, cwpa, attn_slot);
}

}  // namespace

Tensor spa_forward(const Tensor& x, const Tensor& f, const SpaConfig& cfg,
                   const SpaParams& params,
                   const std::vector<size_t>& query_idx, SpaTrace* trace) {
  cfg.validate();
  Tensor h = semantic_kernel(params.z, f);
  Tensor delta = matmul(h, x);
  Tensor* w_slot = trace ? &trace->w : nullptr;
  Tensor psi =
      aggregate(x, f, delta, h, cfg.gamma, cfg.uniform_h, cfg.renormalize,
                w_slot);
  if (trace) {
    trace->h = h;
    trace->delta = delta;
    trace->g = spatial_weights(delta, x, cfg.gamma);
    trace->psi = psi;
  }
  return distribute(x, f, delta, psi, cfg, params.cwpa, query_idx, trace);
}

Tensor spa_ablation_fps(const Tensor& x, const Tensor& f,
                        const SpaConfig& cfg, const CwpaParams& cwpa,
                        const std::vector<size_t>& query_idx,
                        SpaTrace* trace) {
  cfg.validate();
  if (cfg.s_points > x.rows())
    throw UsageError("spa: more SP points than input points in FPS mode");
  Tensor delta = gather_rows(x, fps(x, cfg.s_points));
  Tensor* w_slot = trace ? &trace->w : nullptr;
  Tensor psi = aggregate(x, f, delta, Tensor(), cfg.gamma, true,
                         cfg.renormalize, w_slot);
  if (trace) {
    trace->delta = delta;
    trace->g = spatial_weights(delta, x, cfg.gamma);
    trace->psi = psi;
  }
  return distribute(x, f, delta, psi, cfg, cwpa, query_idx, trace);
}

}  // namespace spotr
