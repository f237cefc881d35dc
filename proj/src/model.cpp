#include "spotr/model.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "spotr/common.hpp"

namespace spotr {

namespace {

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

size_t mlp_count(size_t in, size_t hidden, size_t out) {
  return in * hidden + hidden + hidden * out + out;
}

size_t cwpa_count(size_t c) { return 2 * mlp_count(c + 3, c, c); }

size_t block_count(const BlockConfig& bc) {
  size_t c_in = bc.in_channels, c_out = bc.out_channels;
  size_t total = 0;
  if (bc.spa_mode == SpaMode::Learned || bc.spa_mode == SpaMode::LearnedUniform)
    total += bc.spa.s_points * c_in + cwpa_count(c_in);
  else if (bc.spa_mode == SpaMode::FpsUniform)
    total += cwpa_count(c_in);
  total += cwpa_count(c_in) + 1;                         // gate LPA + gate
  total += (1 + bc.extra_lpa_layers) * cwpa_count(c_in); // post LPA stack
  total += mlp_count(c_in, c_out, c_out);
  if (c_in != c_out) total += c_in * c_out;
  total += 2 * c_out;
  return total;
}

}  // namespace

Task task_from_name(const std::string& name) {
  if (name == "classify") return Task::Classify;
  if (name == "segment") return Task::Segment;
  throw UsageError("unknown task: " + name);
}

const char* task_name(Task task) {
  return task == Task::Classify ? "classify" : "segment";
}

void ModelConfig::validate() const {
  if (stages.empty()) throw UsageError("model: at least one stage required");
  if (embed_width == 0) throw UsageError("model: embed width must be positive");
  if (head_hidden == 0) throw UsageError("model: head width must be positive");
  if (task == Task::Classify && num_classes < 2)
    throw UsageError("model: need at least two classes");
  if (task == Task::Segment && num_parts < 2)
    throw UsageError("model: need at least two parts");
  for (size_t i = 0; i < stages.size(); ++i) stage_block_config(*this, i).validate();
}

size_t ModelConfig::stage_in_width(size_t i) const {
  return i == 0 ? embed_width : stages[i - 1].channels;
}

size_t ModelConfig::level_width(size_t i) const {
  return i == 0 ? embed_width : stages[i - 1].channels;
}

ModelConfig ModelConfig::toy(Task task) {
  ModelConfig cfg;
  cfg.task = task;
  cfg.stages = {{32, 0.2, 16, 16, 16.0},
                {64, 0.4, 16, 16, 16.0},
                {128, 0.8, 16, 16, 16.0},
                {256, 1.6, 16, 16, 16.0}};
  return cfg;
}

BlockConfig stage_block_config(const ModelConfig& cfg, size_t stage) {
  if (stage >= cfg.stages.size()) throw UsageError("model: stage out of range");
  const StageConfig& sc = cfg.stages[stage];
  BlockConfig bc;
  bc.in_channels = cfg.stage_in_width(stage);
  bc.out_channels = sc.channels;
  bc.radius = sc.radius;
  bc.cap = sc.cap;
  bc.downsample = true;
  bc.spa_mode = cfg.variant;
  bc.spa.s_points = sc.s_points;
  bc.spa.gamma = sc.gamma;
  bc.spa.attn.channels = bc.in_channels;
  bc.spa.attn.relation = cfg.relation;
  bc.spa.attn.tau = cfg.tau;
  bc.lpa = bc.spa.attn;
  bc.extra_lpa_layers = cfg.extra_lpa_layers;
  return bc;
}

ModelParams make_model_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams p;
  p.embed = make_mlp(3, cfg.embed_width, cfg.embed_width, rng);
  for (size_t i = 0; i < cfg.stages.size(); ++i)
    p.blocks.push_back(make_block_params(stage_block_config(cfg, i), rng));
  if (cfg.task == Task::Classify) {
    p.head = make_mlp(cfg.stages.back().channels, cfg.head_hidden,
                      cfg.num_classes, rng);
  } else {
    for (size_t i = 0; i < cfg.stages.size(); ++i) {
      size_t fine_w = cfg.level_width(i), coarse_w = cfg.level_width(i + 1);
      p.fp_mlps.push_back(make_mlp(coarse_w + fine_w, fine_w, fine_w, rng));
    }
    p.seg_head = make_mlp(cfg.embed_width, cfg.head_hidden, cfg.num_parts,
                          rng);
  }
  return p;
}

std::vector<Tensor> collect_params(const ModelParams& p) {
  std::vector<Tensor> out;
  append_params(out, p.embed);
  for (const BlockParams& b : p.blocks) append_params(out, b);
  if (p.head.w1.defined()) append_params(out, p.head);
  for (const MlpParams& m : p.fp_mlps) append_params(out, m);
  if (p.seg_head.w1.defined()) append_params(out, p.seg_head);
  return out;
}

size_t param_count(const ModelConfig& cfg) {
  cfg.validate();
  size_t total = mlp_count(3, cfg.embed_width, cfg.embed_width);
  for (size_t i = 0; i < cfg.stages.size(); ++i)
    total += block_count(stage_block_config(cfg, i));
  if (cfg.task == Task::Classify) {
    total += mlp_count(cfg.stages.back().channels, cfg.head_hidden,
                       cfg.num_classes);
  } else {
    for (size_t i = 0; i < cfg.stages.size(); ++i)
      total += mlp_count(cfg.level_width(i + 1) + cfg.level_width(i),
                         cfg.level_width(i), cfg.level_width(i));
    total += mlp_count(cfg.embed_width, cfg.head_hidden, cfg.num_parts);
  }
  return total;
}

FpPlan plan_fp(const Tensor& coarse_x, const Tensor& fine_x) {
  if (coarse_x.ndim() != 2 || coarse_x.cols() != 3 || fine_x.ndim() != 2 ||
      fine_x.cols() != 3)
    throw UsageError("fp: positions must be [N x 3]");
  const size_t m = coarse_x.rows(), n = fine_x.rows();
  if (m == 0) throw UsageError("fp: empty coarse set");
  const size_t k = std::min<size_t>(3, m);

  FpPlan plan;
  plan.pairs.offsets.push_back(0);
  std::vector<std::pair<double, size_t>> cand(m);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < m; ++j) {
      double d2 = 0.0;
      for (size_t d = 0; d < 3; ++d) {
        double diff = fine_x.at(i, d) - coarse_x.at(j, d);
        d2 += diff * diff;
      }
      cand[j] = {d2, j};
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    if (cand[0].first == 0.0) {
      plan.pairs.qidx.push_back(i);
      plan.pairs.kidx.push_back(cand[0].second);
      plan.weights.push_back(1.0);
    } else {
      double sum = 0.0;
      for (size_t j = 0; j < k; ++j) sum += 1.0 / cand[j].first;
      for (size_t j = 0; j < k; ++j) {
        plan.pairs.qidx.push_back(i);
        plan.pairs.kidx.push_back(cand[j].second);
        plan.weights.push_back(1.0 / cand[j].first / sum);
      }
    }
    plan.pairs.offsets.push_back(plan.pairs.qidx.size());
  }
  return plan;
}

Tensor fp_interpolate(const FpPlan& plan, const Tensor& coarse_f) {
  const size_t t = plan.weights.size(), c = coarse_f.cols();
  Tensor rows = gather_rows(coarse_f, plan.pairs.kidx);
  std::vector<double> w(t * c);
  for (size_t p = 0; p < t; ++p)
    for (size_t j = 0; j < c; ++j) w[p * c + j] = plan.weights[p];
  Tensor wmat = Tensor::from({t, c}, std::move(w));
  return segment_sum(mul(rows, wmat), plan.pairs.offsets);
}

Tensor feature_propagation(const Tensor& coarse_x, const Tensor& coarse_f,
                           const Tensor& fine_x, const Tensor& skip_f,
                           const MlpParams& mlp) {
  FpPlan plan = plan_fp(coarse_x, fine_x);
  Tensor interp = fp_interpolate(plan, coarse_f);
  return mlp2(concat_cols(interp, skip_f), mlp);
}

ModelPlan plan_model(const Tensor& x, const ModelConfig& cfg) {
  cfg.validate();
  ModelPlan plan;
  Tensor cur = x;
  std::vector<Tensor> level_x = {x};
  for (size_t i = 0; i < cfg.stages.size(); ++i) {
    plan.blocks.push_back(plan_block(cur, stage_block_config(cfg, i)));
    cur = plan.blocks.back().anchor_x;
    level_x.push_back(cur);
  }
  if (cfg.task == Task::Segment)
    for (size_t i = 0; i < cfg.stages.size(); ++i)
      plan.fp.push_back(plan_fp(level_x[i + 1], level_x[i]));
  return plan;
}

namespace {

std::vector<Tensor> encoder_pass(const Tensor& x, const ModelConfig& cfg,
                                 const ModelParams& params,
                                 const ModelPlan& plan, ModelTrace* trace) {
  if (plan.blocks.size() != cfg.stages.size())
    throw UsageError("model: plan does not match config");
  if (trace) trace->blocks.resize(cfg.stages.size());
  std::vector<Tensor> level_f;
  level_f.push_back(mlp2(x, params.embed));
  Tensor cur_x = x;
  for (size_t i = 0; i < cfg.stages.size(); ++i) {
    BlockTrace* bt = trace ? &trace->blocks[i] : nullptr;
    level_f.push_back(spotr_block(cur_x, level_f.back(), plan.blocks[i],
                                  stage_block_config(cfg, i),
                                  params.blocks[i], bt));
    cur_x = plan.blocks[i].anchor_x;
  }
  return level_f;
}

}  // namespace

Tensor classify_forward(const Tensor& x, const ModelConfig& cfg,
                        const ModelParams& params, const ModelPlan& plan,
                        ModelTrace* trace) {
  if (cfg.task != Task::Classify)
    throw UsageError("model: config is not a classification config");
  std::vector<Tensor> level_f = encoder_pass(x, cfg, params, plan, trace);
  Tensor deep = level_f.back();
  Tensor pooled = reshape(reduce_max(deep, 0), {1, deep.cols()});
  Tensor logits = mlp2(pooled, params.head);
  return reshape(logits, {cfg.num_classes});
}

Tensor classify_forward(const Tensor& x, const ModelConfig& cfg,
                        const ModelParams& params) {
  return classify_forward(x, cfg, params, plan_model(x, cfg));
}

Tensor segment_forward(const Tensor& x, const ModelConfig& cfg,
                       const ModelParams& params, const ModelPlan& plan,
                       ModelTrace* trace) {
  if (cfg.task != Task::Segment)
    throw UsageError("model: config is not a segmentation config");
  if (plan.fp.size() != cfg.stages.size())
    throw UsageError("model: plan lacks propagation levels");
  std::vector<Tensor> level_f = encoder_pass(x, cfg, params, plan, trace);
  Tensor dec = level_f.back();
  for (size_t i = cfg.stages.size(); i-- > 0;) {
    Tensor interp = fp_interpolate(plan.fp[i], dec);
    dec = mlp2(concat_cols(interp, level_f[i]), params.fp_mlps[i]);
  }
  return mlp2(dec, params.seg_head);
}

Tensor segment_forward(const Tensor& x, const ModelConfig& cfg,
                       const ModelParams& params) {
  return segment_forward(x, cfg, params, plan_model(x, cfg));
}

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ModelParams& params) {
  cfg.validate();
  std::vector<Tensor> reg = collect_params(params);
  size_t total = 0;
  for (const Tensor& t : reg) total += t.size();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out << "SPOTR-CKPT 1\n";
  out << "task = " << task_name(cfg.task) << "\n";
  out << "variant = " << spa_mode_name(cfg.variant) << "\n";
  out << "relation = " << relation_name(cfg.relation) << "\n";
  out << "tau = " << fmt_g(cfg.tau) << "\n";
  out << "embed_width = " << cfg.embed_width << "\n";
  out << "head_hidden = " << cfg.head_hidden << "\n";
  out << "num_classes = " << cfg.num_classes << "\n";
  out << "num_parts = " << cfg.num_parts << "\n";
  out << "extra_lpa_layers = " << cfg.extra_lpa_layers << "\n";
  out << "stages = " << cfg.stages.size() << "\n";
  for (const StageConfig& s : cfg.stages)
    out << "stage = " << s.channels << " " << fmt_g(s.radius) << " " << s.cap
        << " " << s.s_points << " " << fmt_g(s.gamma) << "\n";
  out << "param_values = " << total << "\n";
  out << "BLOB\n";
  for (const Tensor& t : reg)
    out.write(reinterpret_cast<const char*>(t.data().data()),
              std::streamsize(t.size() * sizeof(double)));
  if (!out) throw IoError("short write on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "SPOTR-CKPT 1")
    throw IoError("not a checkpoint file: " + path);

  ModelConfig cfg;
  cfg.stages.clear();
  size_t expect_stages = 0, expect_values = 0;
  bool saw_blob = false;
  while (std::getline(in, line)) {
    if (line == "BLOB") {
      saw_blob = true;
      break;
    }
    std::istringstream ls(line);
    std::string key, eq;
    ls >> key >> eq;
    if (eq != "=") throw IoError("malformed checkpoint line: " + line);
    if (key == "task") {
      std::string v;
      ls >> v;
      cfg.task = task_from_name(v);
    } else if (key == "variant") {
      std::string v;
      ls >> v;
      cfg.variant = spa_mode_from_name(v);
    } else if (key == "relation") {
      std::string v;
      ls >> v;
      cfg.relation = relation_from_name(v);
    } else if (key == "tau") {
      ls >> cfg.tau;
    } else if (key == "embed_width") {
      ls >> cfg.embed_width;
    } else if (key == "head_hidden") {
      ls >> cfg.head_hidden;
    } else if (key == "num_classes") {
      ls >> cfg.num_classes;
    } else if (key == "num_parts") {
      ls >> cfg.num_parts;
    } else if (key == "extra_lpa_layers") {
      ls >> cfg.extra_lpa_layers;
    } else if (key == "stages") {
      ls >> expect_stages;
    } else if (key == "stage") {
      StageConfig s;
      ls >> s.channels >> s.radius >> s.cap >> s.s_points >> s.gamma;
      cfg.stages.push_back(s);
    } else if (key == "param_values") {
      ls >> expect_values;
    } else {
      throw IoError("unknown checkpoint key: " + key);
    }
    if (ls.fail()) throw IoError("malformed checkpoint line: " + line);
  }
  if (!saw_blob) throw IoError("checkpoint missing parameter blob: " + path);
  if (cfg.stages.size() != expect_stages)
    throw IoError("checkpoint stage count mismatch: " + path);
  if (expect_values != param_count(cfg))
    throw IoError("checkpoint parameter count mismatch: " + path);

  Rng rng(0);
  Checkpoint ckpt{cfg, make_model_params(cfg, rng)};
  for (Tensor& t : collect_params(ckpt.params)) {
    in.read(reinterpret_cast<char*>(t.mutable_data().data()),
            std::streamsize(t.size() * sizeof(double)));
    if (!in) throw IoError("checkpoint blob truncated: " + path);
  }
  char extra;
  if (in.read(&extra, 1)) throw IoError("trailing bytes in checkpoint: " + path);
  return ckpt;
}

}  // namespace spotr
