#include "spotr/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "spotr/common.hpp"

namespace spotr {

namespace {

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

size_t argmax_row(const Tensor& t, size_t row, size_t cols) {
  size_t best = 0;
  for (size_t j = 1; j < cols; ++j)
    if (t.at(row * cols + j) > t.at(row * cols + best)) best = j;
  return best;
}

int cloud_class(const PointCloud& pc) {
  if (pc.cloud_label < 0)
    throw UsageError("train: cloud lacks a class label");
  return pc.cloud_label;
}

Tensor sample_loss(const PointCloud& pc, const ModelConfig& cfg,
                   const ModelParams& params, const ModelPlan& plan,
                   std::vector<int>* pred_out) {
  if (cfg.task == Task::Classify) {
    Tensor logits = classify_forward(pc.positions, cfg, params, plan);
    if (pred_out)
      *pred_out = {int(argmax_row(logits, 0, cfg.num_classes))};
    return cross_entropy(logits, size_t(cloud_class(pc)));
  }
  if (pc.point_labels.size() != pc.size())
    throw UsageError("train: cloud lacks per-point labels");
  Tensor logits = segment_forward(pc.positions, cfg, params, plan);
  Tensor loss;
  if (pred_out) pred_out->resize(pc.size());
  for (size_t i = 0; i < pc.size(); ++i) {
    Tensor row = cross_entropy(gather_rows(logits, {i}),
                               size_t(pc.point_labels[i]));
    loss = loss.defined() ? add(loss, row) : row;
    if (pred_out)
      (*pred_out)[i] = int(argmax_row(logits, i, cfg.num_parts));
  }
  return scale(loss, 1.0 / double(pc.size()));
}

std::string csv_row(size_t epoch, const char* split, const Metrics& m,
                    bool with_miou) {
  std::string line = std::to_string(epoch);
  line += ",";
  line += split;
  line += "," + fmt_g(m.loss) + "," + fmt_g(m.oa) + "," + fmt_g(m.macc);
  if (with_miou) line += "," + fmt_g(m.miou);
  return line;
}

}  // namespace

Optimizer optimizer_from_name(const std::string& name) {
  if (name == "sgd") return Optimizer::Sgd;
  if (name == "adam") return Optimizer::Adam;
  throw UsageError("unknown optimizer: " + name);
}

const char* optimizer_name(Optimizer opt) {
  return opt == Optimizer::Sgd ? "sgd" : "adam";
}

void TrainConfig::validate() const {
  if (epochs == 0) throw UsageError("train: epochs must be positive");
  if (batch_size == 0) throw UsageError("train: batch size must be positive");
  if (lr < 0.0) throw UsageError("train: learning rate must be nonnegative");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw UsageError("train: adam betas must lie in [0, 1)");
  if (adam_eps <= 0.0) throw UsageError("train: adam epsilon must be positive");
}

Metrics classification_metrics(const std::vector<int>& pred,
                               const std::vector<int>& gt,
                               size_t num_classes) {
  if (pred.size() != gt.size() || gt.empty())
    throw UsageError("metrics: prediction/label size mismatch");
  Metrics m;
  m.per_class.assign(num_classes, -1.0);
  std::vector<size_t> correct(num_classes, 0), total(num_classes, 0);
  size_t hits = 0;
  for (size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] < 0 || size_t(gt[i]) >= num_classes)
      throw UsageError("metrics: label out of range");
    ++total[gt[i]];
    if (pred[i] == gt[i]) {
      ++hits;
      ++correct[gt[i]];
    }
  }
  m.oa = double(hits) / double(gt.size());
  double acc_sum = 0.0;
  size_t present = 0;
  for (size_t c = 0; c < num_classes; ++c) {
    if (total[c] == 0) continue;
    m.per_class[c] = double(correct[c]) / double(total[c]);
    acc_sum += m.per_class[c];
    ++present;
  }
  m.macc = present ? acc_sum / double(present) : 0.0;
  return m;
}

Metrics segmentation_metrics(const std::vector<std::vector<int>>& pred,
                             const std::vector<std::vector<int>>& gt,
                             size_t num_parts) {
  if (pred.size() != gt.size() || gt.empty())
    throw UsageError("metrics: prediction/label size mismatch");
  std::vector<int> flat_pred, flat_gt;
  double iou_sum = 0.0;
  for (size_t s = 0; s < gt.size(); ++s) {
    if (pred[s].size() != gt[s].size() || gt[s].empty())
      throw UsageError("metrics: per-point size mismatch");
    flat_pred.insert(flat_pred.end(), pred[s].begin(), pred[s].end());
    flat_gt.insert(flat_gt.end(), gt[s].begin(), gt[s].end());
    std::set<int> parts(gt[s].begin(), gt[s].end());
    parts.insert(pred[s].begin(), pred[s].end());
    double sample_iou = 0.0;
    for (int p : parts) {
      size_t inter = 0, uni = 0;
      for (size_t i = 0; i < gt[s].size(); ++i) {
        bool a = pred[s][i] == p, b = gt[s][i] == p;
        inter += a && b;
        uni += a || b;
      }
      sample_iou += double(inter) / double(uni);
    }
    iou_sum += sample_iou / double(parts.size());
  }
  Metrics m = classification_metrics(flat_pred, flat_gt, num_parts);
  m.miou = iou_sum / double(gt.size());
  return m;
}

void sgd_step(std::vector<Tensor>& params, double lr) {
  for (Tensor& p : params) {
    const std::vector<double>& g = p.grad();
    std::vector<double>& w = p.mutable_data();
    for (size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
  }
}

void adam_step(std::vector<Tensor>& params, AdamState& state,
               const TrainConfig& cfg) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t j = 0; j < params.size(); ++j) {
      state.m[j].assign(params[j].size(), 0.0);
      state.v[j].assign(params[j].size(), 0.0);
    }
  }
  ++state.t;
  double c1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  double c2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  for (size_t j = 0; j < params.size(); ++j) {
    const std::vector<double>& g = params[j].grad();
    std::vector<double>& w = params[j].mutable_data();
    for (size_t i = 0; i < w.size(); ++i) {
      state.m[j][i] = cfg.beta1 * state.m[j][i] + (1.0 - cfg.beta1) * g[i];
      state.v[j][i] =
          cfg.beta2 * state.v[j][i] + (1.0 - cfg.beta2) * g[i] * g[i];
      double mhat = state.m[j][i] / c1;
      double vhat = state.v[j][i] / c2;
      w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

Metrics evaluate(const std::vector<PointCloud>& data, const ModelConfig& cfg,
                 const ModelParams& params,
                 const std::vector<ModelPlan>* plans) {
  cfg.validate();
  if (data.empty()) throw UsageError("evaluate: empty dataset");
  if (plans && plans->size() != data.size())
    throw UsageError("evaluate: plan cache does not match dataset");
  NoGradGuard ng;
  double loss_sum = 0.0;
  std::vector<int> cls_pred, cls_gt;
  std::vector<std::vector<int>> seg_pred, seg_gt;
  for (size_t s = 0; s < data.size(); ++s) {
    ModelPlan local;
    const ModelPlan* plan = plans ? &(*plans)[s] : nullptr;
    if (!plan) {
      local = plan_model(data[s].positions, cfg);
      plan = &local;
    }
    std::vector<int> pred;
    loss_sum += sample_loss(data[s], cfg, params, *plan, &pred).item();
    if (cfg.task == Task::Classify) {
      cls_pred.push_back(pred[0]);
      cls_gt.push_back(cloud_class(data[s]));
    } else {
      seg_pred.push_back(std::move(pred));
      seg_gt.push_back(data[s].point_labels);
    }
  }
  Metrics m = cfg.task == Task::Classify
                  ? classification_metrics(cls_pred, cls_gt, cfg.num_classes)
                  : segmentation_metrics(seg_pred, seg_gt, cfg.num_parts);
  m.loss = loss_sum / double(data.size());
  return m;
}

TrainResult train(const std::vector<PointCloud>& train_set,
                  const std::vector<PointCloud>& test_set,
                  const ModelConfig& mcfg, const TrainConfig& tcfg) {
  mcfg.validate();
  tcfg.validate();
  if (train_set.empty()) throw UsageError("train: empty dataset");

  Rng rng(tcfg.seed);
  TrainResult res;
  res.params = make_model_params(mcfg, rng);
  std::vector<Tensor> reg = collect_params(res.params);
  AdamState adam;

  std::vector<ModelPlan> plans, test_plans;
  plans.reserve(train_set.size());
  for (const PointCloud& pc : train_set)
    plans.push_back(plan_model(pc.positions, mcfg));
  test_plans.reserve(test_set.size());
  for (const PointCloud& pc : test_set)
    test_plans.push_back(plan_model(pc.positions, mcfg));

  const bool with_miou = mcfg.task == Task::Segment;
  res.csv.push_back(with_miou ? "epoch,split,loss,oa,macc,miou"
                              : "epoch,split,loss,oa,macc");

  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::vector<int> cls_pred, cls_gt;
    std::vector<std::vector<int>> seg_pred, seg_gt;

    for (size_t start = 0; start < order.size(); start += tcfg.batch_size) {
      size_t stop = std::min(order.size(), start + tcfg.batch_size);
      for (Tensor& p : reg) p.zero_grad();
      for (size_t k = start; k < stop; ++k) {
        const PointCloud& pc = train_set[order[k]];
        std::vector<int> pred;
        Tensor loss =
            sample_loss(pc, mcfg, res.params, plans[order[k]], &pred);
        double lv = loss.item();
        if (!std::isfinite(lv))
          throw NumericError("train: loss diverged at epoch " +
                             std::to_string(epoch));
        loss_sum += lv;
        backward(scale(loss, 1.0 / double(stop - start)));
        if (mcfg.task == Task::Classify) {
          cls_pred.push_back(pred[0]);
          cls_gt.push_back(cloud_class(pc));
        } else {
          seg_pred.push_back(std::move(pred));
          seg_gt.push_back(pc.point_labels);
        }
      }
      if (tcfg.optimizer == Optimizer::Sgd)
        sgd_step(reg, tcfg.lr);
      else
        adam_step(reg, adam, tcfg);
    }

    Metrics tm = mcfg.task == Task::Classify
                     ? classification_metrics(cls_pred, cls_gt,
                                              mcfg.num_classes)
                     : segmentation_metrics(seg_pred, seg_gt, mcfg.num_parts);
    tm.loss = loss_sum / double(train_set.size());
    res.csv.push_back(csv_row(epoch, "train", tm, with_miou));
    res.final_train_oa = tm.oa;
    res.epochs_run = epoch;

    if (!test_set.empty()) {
      Metrics em = evaluate(test_set, mcfg, res.params, &test_plans);
      res.csv.push_back(csv_row(epoch, "test", em, with_miou));
      res.final_test_oa = em.oa;
    }
    if (tm.oa >= tcfg.target_train_oa) break;
  }
  return res;
}

}  // namespace spotr
