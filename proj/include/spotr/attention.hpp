#pragma once

#include <string>
#include <vector>

#include "spotr/common.hpp"
#include "spotr/tensor.hpp"

namespace spotr {

enum class Relation { Sub, KeyOnly, Add, Mul };

Relation relation_from_name(const std::string& name);
const char* relation_name(Relation kind);

struct AttnConfig {
  Relation relation = Relation::Sub;
  double tau = 1.0;
  size_t channels = 0;
  size_t hidden = 0;  // 0 means same as channels

  size_t hidden_width() const { return hidden == 0 ? channels : hidden; }
};

/// Two-layer MLP, ReLU on the hidden layer only.
struct MlpParams {
  Tensor w1, b1, w2, b2;
};

MlpParams make_mlp(size_t in_dim, size_t hidden_dim, size_t out_dim, Rng& rng);
Tensor mlp2(const Tensor& x, const MlpParams& p);
void append_params(std::vector<Tensor>& out, const MlpParams& p);

/// Mapping MLPs of channel-wise point attention: value_map is M,
/// logit_map is M'. `tied` reuses M for the logits (the set-abstraction
/// equivalence mode) and leaves logit_map unused.
struct CwpaParams {
  MlpParams value_map;
  MlpParams logit_map;
  bool tied = false;
};

CwpaParams make_cwpa_params(const AttnConfig& cfg, Rng& rng);
void append_params(std::vector<Tensor>& out, const CwpaParams& p);

/// Query/key incidence in flattened pair-list form: pair t relates query
/// qidx[t] to key kidx[t]; rows of one query are consecutive, delimited by
/// offsets (size Q+1). Every query has at least one key.
struct PairSet {
  std::vector<size_t> qidx;
  std::vector<size_t> kidx;
  std::vector<size_t> offsets;

  size_t pair_count() const { return qidx.size(); }
  size_t query_count() const { return offsets.size() - 1; }
};

/// Dense incidence: every query attends to every key.
PairSet dense_pairs(size_t n_queries, size_t n_keys);

Tensor relation_rows(const Tensor& fq_rows, const Tensor& fk_rows,
                     Relation kind);

/// Normalized relative key positions, (xk - xq)/scale per pair row.
Tensor rel_pos_rows(const Tensor& xq_rows, const Tensor& xk_rows,
                    double scale);

/// Channel-wise point attention over a pair list.
/// Per pair: u = M([R(fq,fk); phi]) and logits = M'([R(fq,fk); phi])/tau;
/// attention is a per-channel softmax over each query's keys; the output
/// row is the attention-weighted sum of u over those keys.
/// `attn_out`, when non-null, receives the [T x C] attention weights.
Tensor cwpa_pairs(const Tensor& fq, const Tensor& fk, const Tensor& phi,
                  const PairSet& pairs, const AttnConfig& cfg,
                  const CwpaParams& params, Tensor* attn_out = nullptr);

/// Hard max-pool limit of cwpa_pairs in the key_only/tied configuration:
/// out[q][c] = max over the query's keys of M([fk; phi])[c].
Tensor cwpa_maxpool_pairs(const Tensor& fk, const Tensor& phi,
                          const PairSet& pairs, const MlpParams& value_map);

/// Single-query convenience forms. xq is [1 x 3], fq is [1 x C];
/// keys are xk [K x 3], fk [K x C].
Tensor cwpa_single(const Tensor& xq, const Tensor& fq, const Tensor& xk,
                   const Tensor& fk, double phi_scale, const AttnConfig& cfg,
                   const CwpaParams& params, Tensor* attn_out = nullptr);

Tensor cwpa_maxpool_single(const Tensor& xq, const Tensor& xk,
                           const Tensor& fk, double phi_scale,
                           const MlpParams& value_map);

}  // namespace spotr
