#pragma once

#include <string>
#include <vector>

#include "spotr/block.hpp"
#include "spotr/geometry.hpp"

namespace spotr {

enum class Task { Classify, Segment };

Task task_from_name(const std::string& name);
const char* task_name(Task task);

struct StageConfig {
  size_t channels = 0;
  double radius = 0.0;
  size_t cap = 16;
  size_t s_points = 16;
  double gamma = 16.0;
};

struct ModelConfig {
  Task task = Task::Classify;
  std::vector<StageConfig> stages;
  size_t embed_width = 32;
  size_t head_hidden = 128;
  size_t num_classes = 4;
  size_t num_parts = 8;
  SpaMode variant = SpaMode::Learned;
  Relation relation = Relation::Sub;
  double tau = 1.0;
  size_t extra_lpa_layers = 0;

  void validate() const;
  /// Feature width entering stage i (embed width for stage 0).
  size_t stage_in_width(size_t i) const;
  /// Width at pyramid level i: level 0 is the embedded input, level i >= 1
  /// the output of stage i-1.
  size_t level_width(size_t i) const;
  static ModelConfig toy(Task task);
};

BlockConfig stage_block_config(const ModelConfig& cfg, size_t stage);

struct ModelParams {
  MlpParams embed;  // per-point lift 3 -> E -> E
  std::vector<BlockParams> blocks;
  MlpParams head;                  // classification head
  std::vector<MlpParams> fp_mlps;  // segmentation decoder, one per level
  MlpParams seg_head;              // per-point part head
};

ModelParams make_model_params(const ModelConfig& cfg, Rng& rng);
/// Every learnable tensor in a fixed declaration order (the checkpoint and
/// optimizer-state order).
std::vector<Tensor> collect_params(const ModelParams& p);
/// Exact learnable scalar count, computed from the config alone.
size_t param_count(const ModelConfig& cfg);

/// Inverse-distance-squared interpolation plan from a coarse point set onto
/// a fine one: k = min(3, coarse size) neighbors per fine point, weights
/// 1/d^2 normalized to sum 1; a fine point coinciding with a coarse point
/// takes that coarse row with weight 1.
struct FpPlan {
  PairSet pairs;                // queries = fine points, keys = coarse points
  std::vector<double> weights;  // per pair, normalized per fine point
};

FpPlan plan_fp(const Tensor& coarse_x, const Tensor& fine_x);
Tensor fp_interpolate(const FpPlan& plan, const Tensor& coarse_f);
/// Full feature-propagation step: interpolate, concatenate the skip
/// features, and apply the level MLP.
Tensor feature_propagation(const Tensor& coarse_x, const Tensor& coarse_f,
                           const Tensor& fine_x, const Tensor& skip_f,
                           const MlpParams& mlp);

/// Position-only precomputation for a whole forward pass on one cloud.
struct ModelPlan {
  std::vector<BlockPlan> blocks;
  std::vector<FpPlan> fp;  // segmentation: fp[i] maps level i+1 down to i
};

ModelPlan plan_model(const Tensor& x, const ModelConfig& cfg);

struct ModelTrace {
  std::vector<BlockTrace> blocks;
};

/// Classification: embed -> blocks (1/4 sampling each) -> global max-pool
/// -> head. Returns logits [num_classes].
Tensor classify_forward(const Tensor& x, const ModelConfig& cfg,
                        const ModelParams& params, const ModelPlan& plan,
                        ModelTrace* trace = nullptr);
Tensor classify_forward(const Tensor& x, const ModelConfig& cfg,
                        const ModelParams& params);

/// Segmentation U-net: encoder blocks, then feature propagation with skip
/// concatenation back to full resolution, then a per-point head.
/// Returns logits [N x num_parts].
Tensor segment_forward(const Tensor& x, const ModelConfig& cfg,
                       const ModelParams& params, const ModelPlan& plan,
                       ModelTrace* trace = nullptr);
Tensor segment_forward(const Tensor& x, const ModelConfig& cfg,
                       const ModelParams& params);

/// Text header (key = value config) followed by the raw float64 parameter
/// blob in collect_params order; round-trips bit-exactly.
void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ModelParams& params);

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace spotr
