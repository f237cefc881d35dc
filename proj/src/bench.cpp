#include "spotr/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "spotr/flop_model.hpp"

namespace spotr {

namespace {

// Mirrors the op sequence of the forward code: each call records what one
// tensor primitive charges to the flop counter and the elements of the node
// it creates. Data movement (gather, transpose, concat) creates nodes but
// costs no flops.
struct Replay {
  CostReport* report;
  CostEntry* cur = nullptr;

  void layer(const std::string& name) {
    report->layers.push_back({name, 0, 0});
    cur = &report->layers.back();
  }
  void op(uint64_t flops, uint64_t out_elems) {
    cur->flops += flops;
    cur->act_bytes += 8 * out_elems;
  }
  void finish() {
    for (const CostEntry& e : report->layers) {
      report->flops += e.flops;
      report->act_bytes += e.act_bytes;
    }
  }
};

uint64_t mlp_param_count(size_t in, size_t hidden, size_t out) {
  return uint64_t(in) * hidden + hidden + uint64_t(hidden) * out + out;
}

// mlp2: matmul, add_bias, relu on the hidden layer, matmul, add_bias.
void replay_mlp2(Replay& r, size_t rows, size_t in, size_t hidden,
                 size_t out) {
  r.op(flops_matmul(rows, in, hidden), rows * hidden);
  r.op(flops_add_bias(rows, hidden), rows * hidden);
  r.op(flops_elemwise(rows * hidden), rows * hidden);
  r.op(flops_matmul(rows, hidden, out), rows * out);
  r.op(flops_add_bias(rows, out), rows * out);
}

// cwpa_pairs on t pairs grouped into q queries: gathers, the relation, the
// [rel; phi] concat, one mlp2 per (untied) map, temperature scale, segmented
// softmax, weighting, segmented sum.
void replay_cwpa(Replay& r, size_t t, size_t q, const AttnConfig& cfg,
                 bool tied) {
  size_t c = cfg.channels, h = cfg.hidden_width();
  r.op(0, t * c);
  r.op(0, t * c);
  if (cfg.relation != Relation::KeyOnly) r.op(flops_elemwise(t * c), t * c);
  r.op(0, t * (c + 3));
  replay_mlp2(r, t, c + 3, h, c);
  if (!tied) replay_mlp2(r, t, c + 3, h, c);
  r.op(flops_elemwise(t * c), t * c);
  r.op(flops_segment_softmax(t, c), t * c);
  r.op(flops_elemwise(t * c), t * c);
  r.op(flops_segment_sum(t, c), q * c);
}

// rel_pos_rows on gathered endpoints: two gathers, a subtract, a scale.
void replay_rel_pos(Replay& r, size_t t) {
  r.op(0, 3 * t);
  r.op(0, 3 * t);
  r.op(flops_elemwise(3 * t), 3 * t);
  r.op(flops_elemwise(3 * t), 3 * t);
}

uint64_t cwpa_param_count(size_t c, size_t h, bool tied) {
  return (tied ? 1 : 2) * mlp_param_count(c + 3, h, c);
}

}  // namespace

uint64_t CostReport::layer_flops(const std::string& name) const {
  for (const CostEntry& e : layers)
    if (e.layer == name) return e.flops;
  throw UsageError("cost report: no layer named " + name);
}

CostReport count_spa(const SpaConfig& cfg, size_t n, bool tied) {
  cfg.validate();
  if (n == 0) throw UsageError("count_spa: need at least one point");
  size_t s = cfg.s_points, c = cfg.attn.channels;
  size_t t = n * s;

  CostReport rep;
  rep.variant = "spa";
  rep.n = n;
  rep.s = s;
  rep.c = c;
  rep.params = uint64_t(s) * c +
               cwpa_param_count(c, cfg.attn.hidden_width(), tied);
  Replay r{&rep};

  r.layer("semantic_kernel");
  r.op(0, c * n);
  r.op(flops_matmul(s, c, n), s * n);
  r.op(flops_softmax(s, n), s * n);

  r.layer("sp_positions");
  r.op(flops_matmul(s, n, 3), 3 * s);

  r.layer("aggregate");
  r.op(flops_pairwise_sqdist(s, n), s * n);
  r.op(flops_elemwise(s * n), s * n);
  r.op(flops_elemwise(s * n), s * n);
  r.op(flops_elemwise(s * n), s * n);  // g*h, or g/n when h is uniform
  if (cfg.renormalize) r.op(flops_normalize_rows(s, n), s * n);
  r.op(flops_matmul(s, n, c), s * c);

  r.layer("attention");
  replay_rel_pos(r, t);
  replay_cwpa(r, t, n, cfg.attn, tied);

  r.finish();
  return rep;
}

CostReport count_spa(size_t n, size_t s, size_t c, size_t hidden) {
  SpaConfig cfg;
  cfg.s_points = s;
  cfg.attn.channels = c;
  cfg.attn.hidden = hidden;
  return count_spa(cfg, n);
}

CostReport count_gsa(const AttnConfig& cfg, size_t n, bool tied) {
  if (cfg.channels == 0) throw UsageError("count_gsa: channels must be positive");
  if (n == 0) throw UsageError("count_gsa: need at least one point");
  size_t t = n * n;

  CostReport rep;
  rep.variant = "gsa";
  rep.n = n;
  rep.s = n;
  rep.c = cfg.channels;
  rep.params = cwpa_param_count(cfg.channels, cfg.hidden_width(), tied);
  Replay r{&rep};

  r.layer("attention");
  replay_rel_pos(r, t);
  replay_cwpa(r, t, n, cfg, tied);

  r.finish();
  return rep;
}

CostReport count_gsa(size_t n, size_t c, size_t hidden) {
  AttnConfig cfg;
  cfg.channels = c;
  cfg.hidden = hidden;
  return count_gsa(cfg, n);
}

Tensor gsa_forward(const Tensor& x, const Tensor& f, const AttnConfig& cfg,
                   const CwpaParams& params) {
  size_t n = x.rows();
  PairSet pairs = dense_pairs(n, n);
  Tensor phi = rel_pos_rows(gather_rows(x, pairs.qidx),
                            gather_rows(x, pairs.kidx), 1.0);
  return cwpa_pairs(f, f, phi, pairs, cfg, params);
}

void SweepConfig::validate() const {
  if (n_values.empty()) throw UsageError("sweep: need at least one point count");
  for (size_t n : n_values)
    if (n == 0) throw UsageError("sweep: point counts must be positive");
  if (s_points == 0) throw UsageError("sweep: need at least one SP point");
  if (channels == 0) throw UsageError("sweep: channels must be positive");
  if (runs != 0) {
    if (warmup < 3) throw UsageError("sweep: need at least 3 warmup runs");
    if (runs < 10) throw UsageError("sweep: need at least 10 measured runs");
  }
}

namespace {

uint64_t median_ns(std::vector<uint64_t>& samples) {
  std::sort(samples.begin(), samples.end());
  size_t m = samples.size() / 2;
  if (samples.size() % 2 == 1) return samples[m];
  return (samples[m - 1] + samples[m]) / 2;
}

template <typename F>
uint64_t time_forward(const F& forward, size_t warmup, size_t runs) {
  NoGradGuard eval;
  for (size_t i = 0; i < warmup; ++i) (void)forward();
  std::vector<uint64_t> samples;
  samples.reserve(runs);
  for (size_t i = 0; i < runs; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    (void)forward();
    auto t1 = std::chrono::steady_clock::now();
    samples.push_back(uint64_t(
        std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0)
            .count()));
  }
  return median_ns(samples);
}

void apply_wall(CostReport& rep, uint64_t ns) {
  rep.wall_ns = ns;
  rep.timer_warning = ns > 0 && ns < 100000;
}

}  // namespace

std::vector<CostReport> sweep(const SweepConfig& cfg) {
  cfg.validate();
  SpaConfig scfg;
  scfg.s_points = cfg.s_points;
  scfg.attn.channels = cfg.channels;
  scfg.attn.hidden = cfg.hidden;

  Rng rng(cfg.seed);
  SpaParams spa_params = make_spa_params(scfg, rng);
  CwpaParams gsa_params = make_cwpa_params(scfg.attn, rng);

  std::vector<CostReport> out;
  for (size_t n : cfg.n_values) {
    CostReport spa_rep = count_spa(scfg, n);
    CostReport gsa_rep = count_gsa(scfg.attn, n);
    if (cfg.runs > 0 && n <= cfg.measure_max_n) {
      Tensor x = Tensor::randn({n, 3}, rng, 1.0, false);
      Tensor f = Tensor::randn({n, cfg.channels}, rng, 1.0, false);
      apply_wall(spa_rep, time_forward(
                              [&] { return spa_forward(x, f, scfg,
                                                       spa_params); },
                              cfg.warmup, cfg.runs));
      apply_wall(gsa_rep, time_forward(
                              [&] { return gsa_forward(x, f, scfg.attn,
                                                       gsa_params); },
                              cfg.warmup, cfg.runs));
    }
    out.push_back(std::move(spa_rep));
    out.push_back(std::move(gsa_rep));
  }
  return out;
}

std::string bench_csv(const std::vector<CostReport>& reports) {
  std::string out = "variant,N,S,C,flops,params,act_bytes,wall_ns_median\n";
  char line[256];
  for (const CostReport& r : reports) {
    std::snprintf(line, sizeof(line),
                  "%s,%zu,%zu,%zu,%llu,%llu,%llu,%llu\n", r.variant.c_str(),
                  r.n, r.s, r.c, (unsigned long long)r.flops,
                  (unsigned long long)r.params,
                  (unsigned long long)r.act_bytes,
                  (unsigned long long)r.wall_ns);
    out += line;
  }
  return out;
}

double loglog_slope(const std::vector<size_t>& n,
                    const std::vector<uint64_t>& y) {
  if (n.size() != y.size() || n.size() < 2)
    throw UsageError("loglog_slope: need two or more matched samples");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  double m = double(n.size());
  for (size_t i = 0; i < n.size(); ++i) {
    if (n[i] == 0 || y[i] == 0)
      throw UsageError("loglog_slope: samples must be positive");
    double lx = std::log(double(n[i]));
    double ly = std::log(double(y[i]));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

}  // namespace spotr
