#include "spotr/attention.hpp"

#include <cmath>

namespace spotr {

Relation relation_from_name(const std::string& name) {
  if (name == "sub") return Relation::Sub;
  if (name == "key_only") return Relation::KeyOnly;
  if (name == "add") return Relation::Add;
  if (name == "mul") return Relation::Mul;
  throw UsageError("unknown relation: " + name);
}

const char* relation_name(Relation kind) {
  switch (kind) {
    case Relation::Sub:
      return "sub";
    case Relation::KeyOnly:
      return "key_only";
    case Relation::Add:
      return "add";
    default:
      return "mul";
  }
}

MlpParams make_mlp(size_t in_dim, size_t hidden_dim, size_t out_dim,
                   Rng& rng) {
  MlpParams p;
  p.w1 = Tensor::randn({in_dim, hidden_dim}, rng,
                       1.0 / std::sqrt(static_cast<double>(in_dim)));
  // Small positive hidden bias keeps all-zero inputs (singleton groups
  // under the sub relation) off the exact ReLU kink.
  p.b1 = Tensor::full({hidden_dim}, 0.01, true);
  p.w2 = Tensor::randn({hidden_dim, out_dim}, rng,
                       1.0 / std::sqrt(static_cast<double>(hidden_dim)));
  p.b2 = Tensor::zeros({out_dim}, true);
  return p;
}

Tensor mlp2(const Tensor& x, const MlpParams& p) {
  Tensor h = relu(add_bias(matmul(x, p.w1), p.b1));
  return add_bias(matmul(h, p.w2), p.b2);
}

void append_params(std::vector<Tensor>& out, const MlpParams& p) {
  out.push_back(p.w1);
  out.push_back(p.b1);
  out.push_back(p.w2);
  out.push_back(p.b2);
}

CwpaParams make_cwpa_params(const AttnConfig& cfg, Rng& rng) {
  if (cfg.channels == 0) throw UsageError("cwpa: channels must be positive");
  if (cfg.tau <= 0.0) throw UsageError("cwpa: temperature must be positive");
  CwpaParams p;
  p.value_map = make_mlp(cfg.channels + 3, cfg.hidden_width(), cfg.channels,
                         rng);
  p.logit_map = make_mlp(cfg.channels + 3, cfg.hidden_width(), cfg.channels,
                         rng);
  return p;
}

void append_params(std::vector<Tensor>& out, const CwpaParams& p) {
  append_params(out, p.value_map);
  if (!p.tied) append_params(out, p.logit_map);
}

PairSet dense_pairs(size_t n_queries, size_t n_keys) {
  if (n_queries == 0 || n_keys == 0)
    throw UsageError("dense_pairs: empty query or key set");
  PairSet ps;
  ps.qidx.reserve(n_queries * n_keys);
  ps.kidx.reserve(n_queries * n_keys);
  ps.offsets.reserve(n_queries + 1);
  ps.offsets.push_back(0);
  for (size_t q = 0; q < n_queries; ++q) {
    for (size_t k = 0; k < n_keys; ++k) {
      ps.qidx.push_back(q);
      ps.kidx.push_back(k);
    }
    ps.offsets.push_back(ps.qidx.size());
  }
  return ps;
}

Tensor relation_rows(const Tensor& fq_rows, const Tensor& fk_rows,
                     Relation kind) {
  switch (kind) {
    case Relation::Sub:
      return sub(fq_rows, fk_rows);
    case Relation::KeyOnly:
      return fk_rows;
    case Relation::Add:
      return add(fq_rows, fk_rows);
    default:
      return mul(fq_rows, fk_rows);
  }
}

Tensor rel_pos_rows(const Tensor& xq_rows, const Tensor& xk_rows,
                    double scale) {
  if (scale <= 0.0) throw UsageError("rel_pos: scale must be positive");
  return spotr::scale(sub(xk_rows, xq_rows), 1.0 / scale);
}

Tensor cwpa_pairs(const Tensor& fq, const Tensor& fk, const Tensor& phi,
                  const PairSet& pairs, const AttnConfig& cfg,
                  const CwpaParams& params, Tensor* attn_out) {
  if (pairs.pair_count() == 0) throw UsageError("cwpa: empty key set");
  if (cfg.tau <= 0.0) throw UsageError("cwpa: temperature must be positive");
  Tensor fq_rows = gather_rows(fq, pairs.qidx);
  Tensor fk_rows = gather_rows(fk, pairs.kidx);
  Tensor rel = relation_rows(fq_rows, fk_rows, cfg.relation);
  Tensor input = concat_cols(rel, phi);
  Tensor values = mlp2(input, params.value_map);
  Tensor logits =
      params.tied ? values : mlp2(input, params.logit_map);
  Tensor attn = segment_softmax(scale(logits, 1.0 / cfg.tau), pairs.offsets);
  if (attn_out) *attn_out = attn;
  return segment_sum(mul(attn, values), pairs.offsets);
}

Tensor cwpa_maxpool_pairs(const Tensor& fk, const Tensor& phi,
                          const PairSet& pairs, const MlpParams& value_map) {
  if (pairs.pair_count() == 0) throw UsageError("cwpa: empty key set");
  Tensor fk_rows = gather_rows(fk, pairs.kidx);
  Tensor input = concat_cols(fk_rows, phi);
  return segment_max(mlp2(input, value_map), pairs.offsets);
}

namespace {

PairSet single_query_pairs(size_t n_keys) {
  PairSet ps;
  ps.qidx.assign(n_keys, 0);
  ps.kidx.resize(n_keys);
  for (size_t k = 0; k < n_keys; ++k) ps.kidx[k] = k;
  ps.offsets = {0, n_keys};
  return ps;
}

}  // namespace

Tensor cwpa_single(const Tensor& xq, const Tensor& fq, const Tensor& xk,
                   const Tensor& fk, double phi_scale, const AttnConfig& cfg,
                   const CwpaParams& params, Tensor* attn_out) {
  size_t n_keys = xk.rows();
  PairSet ps = single_query_pairs(n_keys);
  Tensor xq_rows = gather_rows(xq, std::vector<size_t>(n_keys, 0));
  Tensor phi = rel_pos_rows(xq_rows, xk, phi_scale);
  return cwpa_pairs(fq, fk, phi, ps, cfg, params, attn_out);
}

Tensor cwpa_maxpool_single(const Tensor& xq, const Tensor& xk,
                           const Tensor& fk, double phi_scale,
                           const MlpParams& value_map) {
  size_t n_keys = xk.rows();
  PairSet ps = single_query_pairs(n_keys);
  Tensor xq_rows = gather_rows(xq, std::vector<size_t>(n_keys, 0));
  Tensor phi = rel_pos_rows(xq_rows, xk, phi_scale);
  return cwpa_maxpool_pairs(fk, phi, ps, value_map);
}

}  // namespace spotr
