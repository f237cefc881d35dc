#pragma once

#include <string>
#include <vector>

#include "spotr/model.hpp"

namespace spotr {

enum class Optimizer { Sgd, Adam };

Optimizer optimizer_from_name(const std::string& name);
const char* optimizer_name(Optimizer opt);

struct TrainConfig {
  size_t epochs = 50;
  size_t batch_size = 16;
  double lr = 1e-3;
  uint64_t seed = 7;
  Optimizer optimizer = Optimizer::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Stop once the running train OA reaches this; values > 1 disable.
  double target_train_oa = 2.0;

  void validate() const;
};

struct Metrics {
  double loss = 0.0;
  double oa = 0.0;
  double macc = 0.0;
  double miou = -1.0;              // segmentation only, else -1
  std::vector<double> per_class;   // accuracy per class; -1 when absent
};

/// Metrics from prediction/label pairs alone (the recount core of
/// evaluate). Classes absent from the ground truth are excluded from macc.
Metrics classification_metrics(const std::vector<int>& pred,
                               const std::vector<int>& gt,
                               size_t num_classes);
/// Per-point metrics plus instance-average IoU: per sample, IoU is averaged
/// over the parts present in that sample's prediction or ground truth.
Metrics segmentation_metrics(const std::vector<std::vector<int>>& pred,
                             const std::vector<std::vector<int>>& gt,
                             size_t num_parts);

/// Adam first/second moments, one pair of buffers per parameter tensor.
struct AdamState {
  std::vector<std::vector<double>> m, v;
  size_t t = 0;
};

void sgd_step(std::vector<Tensor>& params, double lr);
void adam_step(std::vector<Tensor>& params, AdamState& state,
               const TrainConfig& cfg);

/// Forward the whole dataset without recording gradients. Plans may be
/// passed to reuse cached geometry; otherwise they are built on the fly.
Metrics evaluate(const std::vector<PointCloud>& data, const ModelConfig& cfg,
                 const ModelParams& params,
                 const std::vector<ModelPlan>* plans = nullptr);

struct TrainResult {
  ModelParams params;
  size_t epochs_run = 0;
  double final_train_oa = 0.0;
  double final_test_oa = -1.0;
  std::vector<std::string> csv;  // header + one row per epoch per split
};

/// Deterministic training: parameters start from make_model_params(seed),
/// epoch shuffles come from the same generator, gradients accumulate in
/// sample order, and one optimizer step runs per batch. Train-split rows
/// carry running (during-epoch) metrics; the test split, when nonempty, is
/// re-evaluated after every epoch. Divergence raises NumericError.
TrainResult train(const std::vector<PointCloud>& train_set,
                  const std::vector<PointCloud>& test_set,
                  const ModelConfig& mcfg, const TrainConfig& tcfg);

}  // namespace spotr
