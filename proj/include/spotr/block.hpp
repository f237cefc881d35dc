#pragma once

#include <optional>
#include <vector>

#include "spotr/attention.hpp"
#include "spotr/geometry.hpp"
#include "spotr/spa.hpp"
#include "spotr/tensor.hpp"

namespace spotr {

/// Which global branch the block runs: learned SP points (optionally with
/// uniform aggregation weights), FPS-anchored SP points, or no global
/// branch at all (the LPA-only baseline).
enum class SpaMode { Learned, LearnedUniform, FpsUniform, Off };

SpaMode spa_mode_from_name(const std::string& name);
const char* spa_mode_name(SpaMode mode);

struct BlockConfig {
  size_t in_channels = 0;
  size_t out_channels = 0;
  double radius = 0.4;
  size_t cap = 16;
  bool downsample = true;  // anchors = FPS ceil(N/4), else every point
  SpaMode spa_mode = SpaMode::Learned;
  SpaConfig spa;
  AttnConfig lpa;
  size_t extra_lpa_layers = 0;
  // Pins the gate instead of sigmoid(a): 0 drops the SPA branch, 1 drops
  // the gate-side LPA branch. The skipped branch is never evaluated.
  std::optional<double> force_alpha;

  void validate() const;
};

struct BlockParams {
  bool has_spa = false;
  SpaParams spa;
  CwpaParams gate_lpa;
  Tensor gate_a;  // scalar; alpha = sigmoid(gate_a)
  std::vector<CwpaParams> post_lpa;
  MlpParams post_mlp;
  Tensor res_proj;  // [C x C'], defined only when widths differ
  Tensor norm_gain, norm_bias;
};

BlockParams make_block_params(const BlockConfig& cfg, Rng& rng);
void append_params(std::vector<Tensor>& out, const BlockParams& p);

/// Position-only precomputation for one block application; reusable across
/// forward passes on the same cloud.
struct BlockPlan {
  std::vector<size_t> anchors;
  Tensor anchor_x;                 // [M x 3]
  std::vector<Group> gate_groups;  // anchors grouped against the full cloud
  // Anchors grouped among themselves at twice the stage radius, since
  // point spacing roughly doubles after 1/4 downsampling.
  std::vector<Group> post_groups;
};

BlockPlan plan_block(const Tensor& x, const BlockConfig& cfg);

/// Local points attention: each group's anchor queries its members.
/// `anchor_f` holds one feature row per group (query features); keys are
/// rows of `f` indexed by group members. phi is scaled by the ball radius.
Tensor lpa_forward(const Tensor& anchor_x, const Tensor& anchor_f,
                   const Tensor& x, const Tensor& f,
                   const std::vector<Group>& groups, double radius,
                   const AttnConfig& cfg, const CwpaParams& params,
                   Tensor* attn_out = nullptr);

struct BlockTrace {
  Tensor f_spa;   // gate SPA branch output
  Tensor f_lpa;   // gate LPA branch output
  Tensor mixed;   // gated combination
  double alpha = -1.0;
  SpaTrace spa;
};

/// One SPoTr block: gate-combined SPA/LPA at the anchors, then LPA, a
/// width-changing MLP, and a layer-normalized residual.
Tensor spotr_block(const Tensor& x, const Tensor& f, const BlockPlan& plan,
                   const BlockConfig& cfg, const BlockParams& params,
                   BlockTrace* trace = nullptr);

/// Max-pool set abstraction over groups: per group, the per-channel max of
/// mlp([f_member; phi]).
Tensor set_abstraction(const Tensor& x, const Tensor& f,
                       const std::vector<Group>& groups, double radius,
                       const MlpParams& mlp);

}  // namespace spotr
