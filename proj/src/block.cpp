#include "spotr/block.hpp"

#include <cmath>
#include <numeric>

#include "spotr/common.hpp"

namespace spotr {

namespace {

PairSet group_pairs(const std::vector<Group>& groups) {
  PairSet ps;
  ps.offsets.push_back(0);
  for (size_t g = 0; g < groups.size(); ++g) {
    for (size_t m : groups[g].members) {
      ps.qidx.push_back(g);
      ps.kidx.push_back(m);
    }
    ps.offsets.push_back(ps.qidx.size());
  }
  return ps;
}

Tensor group_phi(const Tensor& anchor_x, const Tensor& x, const PairSet& ps,
                 double radius) {
  Tensor xq = gather_rows(anchor_x, ps.qidx);
  Tensor xk = gather_rows(x, ps.kidx);
  return rel_pos_rows(xq, xk, radius);
}

}  // namespace

SpaMode spa_mode_from_name(const std::string& name) {
  if (name == "full") return SpaMode::Learned;
  if (name == "spatial_only") return SpaMode::LearnedUniform;
  if (name == "fps_sp") return SpaMode::FpsUniform;
  if (name == "no_spa") return SpaMode::Off;
  throw UsageError("unknown variant: " + name);
}

const char* spa_mode_name(SpaMode mode) {
  switch (mode) {
    case SpaMode::Learned:
      return "full";
    case SpaMode::LearnedUniform:
      return "spatial_only";
    case SpaMode::FpsUniform:
      return "fps_sp";
    case SpaMode::Off:
      return "no_spa";
  }
  throw UsageError("unknown variant");
}

void BlockConfig::validate() const {
  if (in_channels == 0 || out_channels == 0)
    throw UsageError("block: channel widths must be positive");
  if (!(radius > 0.0)) throw UsageError("block: radius must be positive");
  if (cap == 0) throw UsageError("block: group cap must be at least 1");
  if (lpa.channels != in_channels)
    throw UsageError("block: lpa width must match in_channels");
  if (spa_mode != SpaMode::Off) {
    if (spa.attn.channels != in_channels)
      throw UsageError("block: spa width must match in_channels");
    spa.validate();
  }
  if (force_alpha) {
    double a = *force_alpha;
    if (a != 0.0 && a != 1.0)
      throw UsageError("block: force_alpha must be 0 or 1");
    if (spa_mode == SpaMode::Off && a == 1.0)
      throw UsageError("block: force_alpha=1 needs an SPA branch");
  }
}

BlockParams make_block_params(const BlockConfig& cfg, Rng& rng) {
  cfg.validate();
  BlockParams p;
  if (cfg.spa_mode == SpaMode::FpsUniform) {
    // FPS-anchored SP points leave the latents out entirely.
    p.has_spa = true;
    p.spa.cwpa = make_cwpa_params(cfg.spa.attn, rng);
  } else if (cfg.spa_mode != SpaMode::Off) {
    p.has_spa = true;
    p.spa = make_spa_params(cfg.spa, rng);
  }
  p.gate_lpa = make_cwpa_params(cfg.lpa, rng);
  p.gate_a = Tensor::zeros({1}, true);
  for (size_t i = 0; i <= cfg.extra_lpa_layers; ++i)
    p.post_lpa.push_back(make_cwpa_params(cfg.lpa, rng));
  p.post_mlp = make_mlp(cfg.in_channels, cfg.out_channels, cfg.out_channels,
                        rng);
  if (cfg.in_channels != cfg.out_channels)
    p.res_proj = Tensor::randn({cfg.in_channels, cfg.out_channels}, rng,
                               1.0 / std::sqrt(double(cfg.in_channels)));
  p.norm_gain = Tensor::full({cfg.out_channels}, 1.0, true);
  p.norm_bias = Tensor::zeros({cfg.out_channels}, true);
  return p;
}

void append_params(std::vector<Tensor>& out, const BlockParams& p) {
  if (p.has_spa) {
    if (p.spa.z.defined()) out.push_back(p.spa.z);
    append_params(out, p.spa.cwpa);
  }
  append_params(out, p.gate_lpa);
  out.push_back(p.gate_a);
  for (const CwpaParams& layer : p.post_lpa) append_params(out, layer);
  append_params(out, p.post_mlp);
  if (p.res_proj.defined()) out.push_back(p.res_proj);
  out.push_back(p.norm_gain);
  out.push_back(p.norm_bias);
}

BlockPlan plan_block(const Tensor& x, const BlockConfig& cfg) {
  cfg.validate();
  if (x.ndim() != 2 || x.cols() != 3)
    throw UsageError("block: positions must be [N x 3]");
  const size_t n = x.rows();
  BlockPlan plan;
  if (cfg.downsample) {
    plan.anchors = fps(x, (n + 3) / 4);
  } else {
    plan.anchors.resize(n);
    std::iota(plan.anchors.begin(), plan.anchors.end(), size_t{0});
  }
  NoGradGuard ng;
  plan.anchor_x = gather_rows(x, plan.anchors);
  plan.gate_groups = ball_query(x, plan.anchors, cfg.radius, cfg.cap);
  std::vector<size_t> all(plan.anchors.size());
  std::iota(all.begin(), all.end(), size_t{0});
  // Anchor spacing roughly doubles after 1/4 sampling, so the
  // anchor-level regrouping widens the ball to match.
  plan.post_groups = ball_query(plan.anchor_x, all, 2.0 * cfg.radius, cfg.cap);
  return plan;
}

Tensor lpa_forward(const Tensor& anchor_x, const Tensor& anchor_f,
                   const Tensor& x, const Tensor& f,
                   const std::vector<Group>& groups, double radius,
                   const AttnConfig& cfg, const CwpaParams& params,
                   Tensor* attn_out) {
  if (groups.empty()) throw UsageError("lpa: at least one group required");
  if (groups.size() != anchor_x.rows() || groups.size() != anchor_f.rows())
    throw UsageError("lpa: one anchor row per group required");
  PairSet ps = group_pairs(groups);
  Tensor phi = group_phi(anchor_x, x, ps, radius);
  return cwpa_pairs(anchor_f, f, phi, ps, cfg, params, attn_out);
}

Tensor spotr_block(const Tensor& x, const Tensor& f, const BlockPlan& plan,
                   const BlockConfig& cfg, const BlockParams& params,
                   BlockTrace* trace) {
  cfg.validate();
  if (x.rows() != f.rows())
    throw UsageError("block: positions and features disagree on N");
  if (f.cols() != cfg.in_channels)
    throw UsageError("block: feature width must match in_channels");
  if (plan.gate_groups.size() != plan.anchors.size())
    throw UsageError("block: plan does not match config");

  const bool use_spa = cfg.spa_mode != SpaMode::Off;
  const bool pin0 = cfg.force_alpha && *cfg.force_alpha == 0.0;
  const bool pin1 = cfg.force_alpha && *cfg.force_alpha == 1.0;
  Tensor anchor_f = gather_rows(f, plan.anchors);

  Tensor f_spa;
  if (use_spa && !pin0) {
    SpaConfig scfg = cfg.spa;
    if (cfg.spa_mode == SpaMode::LearnedUniform) scfg.uniform_h = true;
    SpaTrace* st = trace ? &trace->spa : nullptr;
    f_spa = cfg.spa_mode == SpaMode::FpsUniform
                ? spa_ablation_fps(x, f, scfg, params.spa.cwpa, plan.anchors,
                                   st)
                : spa_forward(x, f, scfg, params.spa, plan.anchors, st);
  }
  Tensor f_lpa;
  if (!use_spa || !pin1)
    f_lpa = lpa_forward(plan.anchor_x, anchor_f, x, f, plan.gate_groups,
                        cfg.radius, cfg.lpa, params.gate_lpa);

  Tensor mixed;
  double alpha_val = 0.0;
  if (!use_spa || pin0) {
    mixed = f_lpa;
  } else if (pin1) {
    mixed = f_spa;
    alpha_val = 1.0;
  } else {
    Tensor alpha = sigmoid(params.gate_a);
    alpha_val = alpha.item();
    mixed = mix(f_spa, f_lpa, alpha);
  }

  Tensor cur = mixed;
  for (const CwpaParams& layer : params.post_lpa)
    cur = lpa_forward(plan.anchor_x, cur, plan.anchor_x, cur,
                      plan.post_groups, 2.0 * cfg.radius, cfg.lpa, layer);
  Tensor y = mlp2(cur, params.post_mlp);
  Tensor res =
      params.res_proj.defined() ? matmul(mixed, params.res_proj) : mixed;
  Tensor out = layer_norm(add(y, res), params.norm_gain, params.norm_bias);

  if (trace) {
    trace->f_spa = f_spa;
    trace->f_lpa = f_lpa;
    trace->mixed = mixed;
    trace->alpha = alpha_val;
  }
  return out;
}

Tensor set_abstraction(const Tensor& x, const Tensor& f,
                       const std::vector<Group>& groups, double radius,
                       const MlpParams& mlp) {
  if (groups.empty()) throw UsageError("set_abstraction: empty group list");
  std::vector<size_t> anchors;
  anchors.reserve(groups.size());
  for (const Group& g : groups) anchors.push_back(g.anchor);
  Tensor anchor_x = gather_rows(x, anchors);
  PairSet ps = group_pairs(groups);
  Tensor phi = group_phi(anchor_x, x, ps, radius);
  return cwpa_maxpool_pairs(f, phi, ps, mlp);
}

}  // namespace spotr
