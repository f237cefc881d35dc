// Command-line front end: dataset generation, training, evaluation,
// ablation sweeps, cost benchmarks, and SP-point diagnostics. One command
// per process; every artifact lands under --out.
#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "spotr/bench.hpp"
#include "spotr/model.hpp"
#include "spotr/train.hpp"

namespace fs = std::filesystem;
using namespace spotr;

namespace {

// ---------------------------------------------------------------- utilities

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(),
                 nullptr) != 1)
    throw IoError("sha256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

size_t parse_sz(const std::string& s, const std::string& what) {
  try {
    size_t pos = 0;
    unsigned long long v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return static_cast<size_t>(v);
  } catch (const std::exception&) {
    throw UsageError("bad integer '" + s + "' for " + what);
  }
}

double parse_dbl(const std::string& s, const std::string& what) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw UsageError("bad number '" + s + "' for " + what);
  }
}

// ------------------------------------------------------ config file + flags

// Flat `key = value` lines grouped under `[section]` headers; `#` starts a
// comment. Values become "section.key" entries.
using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  ConfigMap out;
  std::string line, section;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    std::string where = path + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3)
        throw UsageError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(where + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw UsageError(where + ": empty key");
    if (section.empty())
      throw UsageError(where + ": key outside any [section]");
    out[section + "." + key] = value;
  }
  return out;
}

// One settable knob: a CLI flag plus its config-file key. Config values
// apply only when the flag was not passed; sections owned by another
// command are skipped, but an unknown key inside an owned section is an
// error.
struct Binding {
  std::string key;
  CLI::Option* opt;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

struct Bindings {
  std::vector<Binding> items;
  std::set<std::string> sections;

  template <typename T>
  CLI::Option* add(CLI::App* cmd, const std::string& flag, T& var,
                   const std::string& help, const std::string& key) {
    CLI::Option* opt = cmd->add_option(flag, var, help);
    sections.insert(key.substr(0, key.find('.')));
    items.push_back(
        {key, opt,
         [&var, key](const std::string& s) {
           if constexpr (std::is_same_v<T, std::string>)
             var = s;
           else if constexpr (std::is_floating_point_v<T>)
             var = static_cast<T>(parse_dbl(s, key));
           else
             var = static_cast<T>(parse_sz(s, key));
         },
         [&var] {
           if constexpr (std::is_same_v<T, std::string>)
             return var;
           else if constexpr (std::is_floating_point_v<T>)
             return fmt_g(var);
           else
             return std::to_string(var);
         }});
    return opt;
  }

  void apply(const ConfigMap& file) const {
    for (const auto& [key, value] : file) {
      std::string section = key.substr(0, key.find('.'));
      if (!sections.count(section)) continue;
      const Binding* hit = nullptr;
      for (const Binding& b : items)
        if (b.key == key) {
          hit = &b;
          break;
        }
      if (!hit) throw UsageError("config: unknown key '" + key + "'");
      if (hit->opt->count() == 0) hit->set(value);
    }
  }

  std::string resolved() const {
    std::string out;
    for (const Binding& b : items) out += b.key + " = " + b.get() + "\n";
    return out;
  }
};

// ------------------------------------------------------------ domain glue

std::vector<ShapeKind> parse_classes(const std::string& csv) {
  std::vector<ShapeKind> out;
  for (const std::string& name : split(csv, ','))
    out.push_back(shape_from_name(trim(name)));
  if (out.empty()) throw UsageError("need at least one shape class");
  return out;
}

std::string canonical_classes(const std::vector<ShapeKind>& kinds) {
  std::string out;
  for (size_t i = 0; i < kinds.size(); ++i) {
    if (i) out += ",";
    out += shape_name(kinds[i]);
  }
  return out;
}

std::vector<StageConfig> parse_stages(const std::string& spec) {
  std::vector<StageConfig> out;
  for (const std::string& part : split(spec, ',')) {
    std::vector<std::string> f = split(part, ':');
    if (f.size() < 2 || f.size() > 5)
      throw UsageError(
          "stage spec must be channels:radius[:cap[:s_points[:gamma]]], "
          "got '" +
          part + "'");
    StageConfig s;
    s.channels = parse_sz(f[0], "stage channels");
    s.radius = parse_dbl(f[1], "stage radius");
    if (f.size() >= 3) s.cap = parse_sz(f[2], "stage cap");
    if (f.size() >= 4) s.s_points = parse_sz(f[3], "stage s_points");
    if (f.size() == 5) s.gamma = parse_dbl(f[4], "stage gamma");
    out.push_back(s);
  }
  return out;
}

std::string canonical_stages(const std::vector<StageConfig>& stages) {
  std::string out;
  for (size_t i = 0; i < stages.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(stages[i].channels) + ":" + fmt_g(stages[i].radius) +
           ":" + std::to_string(stages[i].cap) + ":" +
           std::to_string(stages[i].s_points) + ":" + fmt_g(stages[i].gamma);
  }
  return out;
}

std::vector<size_t> parse_size_list(const std::string& csv,
                                    const std::string& what) {
  std::vector<size_t> out;
  for (const std::string& part : split(csv, ','))
    out.push_back(parse_sz(trim(part), what));
  return out;
}

std::vector<std::pair<std::string, std::string>> hash_dir(
    const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir + " is not a directory");
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".pcd")
      names.push_back(entry.path().filename().string());
  std::sort(names.begin(), names.end());
  if (names.empty()) throw IoError("no .pcd files in " + dir);
  std::vector<std::pair<std::string, std::string>> out;
  for (const std::string& name : names)
    out.emplace_back(name, sha256_hex(read_file(fs::path(dir) / name)));
  return out;
}

std::string dataset_hash(const std::string& dir) {
  std::string acc;
  for (const auto& [name, hash] : hash_dir(dir)) acc += name + " " + hash + "\n";
  return sha256_hex(acc);
}

std::vector<PointCloud> load_dataset(const std::string& dir) {
  std::vector<PointCloud> out;
  for (const auto& [name, hash] : hash_dir(dir))
    out.push_back(read_pc((fs::path(dir) / name).string()));
  return out;
}

// Stratified tail split: the last floor(frac * count) clouds of every class
// (in file order) become the test set.
std::pair<std::vector<PointCloud>, std::vector<PointCloud>> split_dataset(
    std::vector<PointCloud> all, double frac) {
  if (frac < 0.0 || frac >= 1.0)
    throw UsageError("test fraction must be in [0, 1)");
  if (frac == 0.0) return {std::move(all), {}};
  std::map<int, std::vector<size_t>> by_class;
  for (size_t i = 0; i < all.size(); ++i)
    by_class[all[i].cloud_label].push_back(i);
  std::set<size_t> test_idx;
  for (const auto& [cls, idxs] : by_class) {
    size_t k = static_cast<size_t>(frac * double(idxs.size()) + 1e-9);
    for (size_t j = idxs.size() - k; j < idxs.size(); ++j)
      test_idx.insert(idxs[j]);
  }
  std::vector<PointCloud> train_set, test_set;
  for (size_t i = 0; i < all.size(); ++i) {
    if (test_idx.count(i))
      test_set.push_back(std::move(all[i]));
    else
      train_set.push_back(std::move(all[i]));
  }
  return {std::move(train_set), std::move(test_set)};
}

// --------------------------------------------------------------- commands

struct ModelFlags {
  std::string task = "classify";
  std::string stages;  // empty: the built-in toy pyramid for the task
  size_t embed_width = 32;
  size_t head_hidden = 128;
  size_t num_classes = 4;
  size_t num_parts = 8;
  std::string variant = "full";
  std::string relation = "sub";
  double tau = 1.0;
  size_t extra_lpa_layers = 0;
};

struct TrainFlags {
  size_t epochs = 50;
  size_t batch_size = 16;
  double lr = 1e-3;
  std::string optimizer = "adam";
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double target_train_oa = 2.0;  // above 1: never stop early
  double test_frac = 0.0;
  uint64_t seed = 7;
};

void bind_model(CLI::App* cmd, Bindings& b, ModelFlags& m) {
  b.add(cmd, "--task", m.task, "classify or segment", "model.task");
  b.add(cmd, "--stages", m.stages,
        "Stage list channels:radius[:cap[:s_points[:gamma]]],...",
        "model.stages");
  b.add(cmd, "--embed-width", m.embed_width, "Per-point embedding width",
        "model.embed_width");
  b.add(cmd, "--head-hidden", m.head_hidden, "Head hidden width",
        "model.head_hidden");
  b.add(cmd, "--num-classes", m.num_classes, "Classification classes",
        "model.num_classes");
  b.add(cmd, "--num-parts", m.num_parts, "Segmentation part labels",
        "model.num_parts");
  b.add(cmd, "--variant", m.variant,
        "Ablation variant: full, no_spa, fps_sp, spatial_only",
        "model.variant");
  b.add(cmd, "--relation", m.relation,
        "Attention relation: sub, key_only, add, mul", "model.relation");
  b.add(cmd, "--tau", m.tau, "Attention temperature", "model.tau");
  b.add(cmd, "--extra-lpa-layers", m.extra_lpa_layers,
        "Extra local attention layers per block", "model.extra_lpa_layers");
}

void bind_train(CLI::App* cmd, Bindings& b, TrainFlags& t) {
  b.add(cmd, "--epochs", t.epochs, "Training epochs", "train.epochs");
  b.add(cmd, "--batch-size", t.batch_size, "Minibatch size",
        "train.batch_size");
  b.add(cmd, "--lr", t.lr, "Learning rate", "train.lr");
  b.add(cmd, "--optimizer", t.optimizer, "sgd or adam", "train.optimizer");
  b.add(cmd, "--beta1", t.beta1, "Adam beta1", "train.beta1");
  b.add(cmd, "--beta2", t.beta2, "Adam beta2", "train.beta2");
  b.add(cmd, "--adam-eps", t.adam_eps, "Adam epsilon", "train.adam_eps");
  b.add(cmd, "--target-train-oa", t.target_train_oa,
        "Stop once train overall accuracy reaches this (>1 disables)",
        "train.target_train_oa");
  b.add(cmd, "--test-frac", t.test_frac,
        "Held-out fraction per class, taken from the tail",
        "train.test_frac");
  b.add(cmd, "--seed", t.seed, "Master seed (init + shuffling)",
        "train.seed");
}

ModelConfig to_model_config(ModelFlags& m) {
  ModelConfig cfg;
  cfg.task = task_from_name(m.task);
  cfg.stages = m.stages.empty() ? ModelConfig::toy(cfg.task).stages
                                : parse_stages(m.stages);
  cfg.embed_width = m.embed_width;
  cfg.head_hidden = m.head_hidden;
  cfg.num_classes = m.num_classes;
  cfg.num_parts = m.num_parts;
  cfg.variant = spa_mode_from_name(m.variant);
  cfg.relation = relation_from_name(m.relation);
  cfg.tau = m.tau;
  cfg.extra_lpa_layers = m.extra_lpa_layers;
  cfg.validate();
  // Echo canonical forms so the printed record is unambiguous.
  m.task = task_name(cfg.task);
  m.stages = canonical_stages(cfg.stages);
  m.variant = spa_mode_name(cfg.variant);
  m.relation = relation_name(cfg.relation);
  return cfg;
}

TrainConfig to_train_config(const TrainFlags& t) {
  TrainConfig cfg;
  cfg.epochs = t.epochs;
  cfg.batch_size = t.batch_size;
  cfg.lr = t.lr;
  cfg.seed = t.seed;
  cfg.optimizer = optimizer_from_name(t.optimizer);
  cfg.beta1 = t.beta1;
  cfg.beta2 = t.beta2;
  cfg.adam_eps = t.adam_eps;
  cfg.target_train_oa = t.target_train_oa;
  cfg.validate();
  return cfg;
}

std::string echo_header(const std::string& command,
                        const std::vector<std::pair<std::string,
                                                    std::string>>& paths,
                        const Bindings& b) {
  std::string out = "command = " + command + "\n";
  for (const auto& [key, value] : paths) out += key + " = " + value + "\n";
  out += b.resolved();
  return out;
}

struct GenOpts {
  std::string out, config;
  bool force = false;
  std::string classes = "sphere,cube,torus,cylinder";
  size_t n_points = 256;
  size_t n_samples = 100;
  uint64_t seed = 7;
  double jitter = 0.02;
};

void cmd_gen_data(GenOpts& o, const Bindings& b) {
  if (o.n_samples == 0) throw UsageError("gen-data: n_samples must be positive");
  std::vector<ShapeKind> kinds = parse_classes(o.classes);
  o.classes = canonical_classes(kinds);
  fs::create_directories(o.out);
  if (!fs::is_empty(o.out) && !o.force)
    throw UsageError("gen-data: " + o.out +
                     " is not empty; pass --force to write anyway");
  std::string echo = echo_header("gen-data", {{"out", o.out}}, b);
  std::cout << echo;

  std::vector<PointCloud> clouds =
      gen_shapes(kinds, o.n_points, o.n_samples, o.seed, o.jitter);
  std::string listing;
  for (size_t i = 0; i < clouds.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "cloud_%04zu.pcd", i);
    fs::path path = fs::path(o.out) / name;
    write_pc(path.string(), clouds[i]);
    listing += std::string(name) + " " + sha256_hex(read_file(path)) + "\n";
  }
  std::string manifest = b.resolved();  // out path deliberately omitted
  std::istringstream rows(listing);
  std::string row;
  while (std::getline(rows, row)) manifest += "file " + row + "\n";
  manifest += "dataset_hash = " + sha256_hex(listing) + "\n";
  write_file(fs::path(o.out) / "manifest.txt", manifest);
  std::cout << "wrote " << clouds.size() << " clouds to " << o.out << "\n"
            << "dataset_hash = " << sha256_hex(listing) << "\n";
}

struct TrainOpts {
  std::string data, out, config;
  ModelFlags model;
  TrainFlags train;
};

void cmd_train(TrainOpts& o, const Bindings& b) {
  std::vector<PointCloud> all = load_dataset(o.data);
  auto [train_set, test_set] = split_dataset(std::move(all),
                                             o.train.test_frac);
  ModelConfig mcfg = to_model_config(o.model);
  TrainConfig tcfg = to_train_config(o.train);
  std::string echo =
      echo_header("train", {{"data", o.data}, {"out", o.out}}, b);
  std::string dhash = dataset_hash(o.data);
  echo += "dataset_hash = " + dhash + "\n";
  std::cout << echo << "train_clouds = " << train_set.size()
            << "\ntest_clouds = " << test_set.size() << "\n";

  TrainResult res = train(train_set, test_set, mcfg, tcfg);

  fs::create_directories(o.out);
  std::string csv;
  for (const std::string& line : res.csv) csv += line + "\n";
  write_file(fs::path(o.out) / "metrics.csv", csv);
  save_checkpoint((fs::path(o.out) / "model.ckpt").string(), mcfg,
                  res.params);
  std::string record = echo;
  record += "epochs_run = " + std::to_string(res.epochs_run) + "\n";
  record += "final_train_oa = " + fmt_g(res.final_train_oa) + "\n";
  if (!test_set.empty())
    record += "final_test_oa = " + fmt_g(res.final_test_oa) + "\n";
  write_file(fs::path(o.out) / "record.txt", record);
  std::cout << "epochs_run = " << res.epochs_run
            << "\nfinal_train_oa = " << fmt_g(res.final_train_oa) << "\n";
  if (!test_set.empty())
    std::cout << "final_test_oa = " << fmt_g(res.final_test_oa) << "\n";
}

struct EvalOpts {
  std::string data, checkpoint, out, config;
  uint64_t seed = 7;
};

void cmd_eval(EvalOpts& o, const Bindings& b) {
  Checkpoint ck = load_checkpoint(o.checkpoint);
  std::vector<PointCloud> data = load_dataset(o.data);
  std::string echo = echo_header(
      "eval", {{"data", o.data}, {"checkpoint", o.checkpoint},
               {"out", o.out}}, b);
  echo += "dataset_hash = " + dataset_hash(o.data) + "\n";
  std::cout << echo;

  Metrics m = evaluate(data, ck.config, ck.params);
  bool with_miou = ck.config.task == Task::Segment;
  std::string csv = with_miou ? "epoch,split,loss,oa,macc,miou\n"
                              : "epoch,split,loss,oa,macc\n";
  csv += "0,eval," + fmt_g(m.loss) + "," + fmt_g(m.oa) + "," + fmt_g(m.macc);
  if (with_miou) csv += "," + fmt_g(m.miou);
  csv += "\n";
  fs::create_directories(o.out);
  write_file(fs::path(o.out) / "metrics.csv", csv);
  std::cout << "loss = " << fmt_g(m.loss) << "\noa = " << fmt_g(m.oa)
            << "\nmacc = " << fmt_g(m.macc) << "\n";
  if (with_miou) std::cout << "miou = " << fmt_g(m.miou) << "\n";
}

struct AblateOpts {
  std::string data, out, config;
  std::string rows = "full,no_spa,fps_sp,spatial_only";
  std::string relations = "sub";
  ModelFlags model;
  TrainFlags train;
};

void cmd_ablate(AblateOpts& o, const Bindings& b) {
  std::vector<PointCloud> all = load_dataset(o.data);
  auto [train_set, test_set] = split_dataset(std::move(all),
                                             o.train.test_frac);
  ModelConfig base = to_model_config(o.model);
  TrainConfig tcfg = to_train_config(o.train);
  std::cout << echo_header("ablate", {{"data", o.data}, {"out", o.out}}, b);

  std::string csv = "variant,relation,oa,macc\n";
  for (const std::string& row : split(o.rows, ',')) {
    SpaMode mode = spa_mode_from_name(trim(row));
    for (const std::string& rel : split(o.relations, ',')) {
      ModelConfig mcfg = base;
      mcfg.variant = mode;
      mcfg.relation = relation_from_name(trim(rel));
      TrainResult res = train(train_set, test_set, mcfg, tcfg);
      const std::vector<PointCloud>& scored =
          test_set.empty() ? train_set : test_set;
      Metrics m = evaluate(scored, mcfg, res.params);
      csv += std::string(spa_mode_name(mode)) + "," +
             relation_name(mcfg.relation) + "," + fmt_g(m.oa) + "," +
             fmt_g(m.macc) + "\n";
      std::cout << "done " << spa_mode_name(mode) << "/"
                << relation_name(mcfg.relation) << " oa = " << fmt_g(m.oa)
                << " macc = " << fmt_g(m.macc) << "\n";
    }
  }
  fs::create_directories(o.out);
  write_file(fs::path(o.out) / "ablation.csv", csv);
}

struct BenchOpts {
  std::string out, config;
  std::string n_list = "256,512,1024,2048,4096,8192";
  size_t s_points = 16;
  size_t channels = 64;
  size_t hidden = 0;
  size_t warmup = 3;
  size_t runs = 10;
  size_t measure_max_n = 2048;
  uint64_t seed = 1;
};

void cmd_bench(BenchOpts& o, const Bindings& b) {
  SweepConfig cfg;
  cfg.n_values = parse_size_list(o.n_list, "bench.n_list");
  cfg.s_points = o.s_points;
  cfg.channels = o.channels;
  cfg.hidden = o.hidden;
  cfg.warmup = o.warmup;
  cfg.runs = o.runs;
  cfg.measure_max_n = o.measure_max_n;
  cfg.seed = o.seed;
  std::cout << echo_header("bench", {{"out", o.out}}, b);

  std::vector<CostReport> reports = sweep(cfg);
  fs::create_directories(o.out);
  std::string csv = bench_csv(reports);
  write_file(fs::path(o.out) / "bench.csv", csv);
  std::cout << csv;
  for (const CostReport& r : reports)
    if (r.timer_warning)
      std::cerr << "warning: " << r.variant << " N=" << r.n
                << " median below 100us; treat the timing as noisy\n";
}

struct InspectOpts {
  std::string checkpoint, input, out, config;
  size_t layer = 0;
};

void cmd_inspect(InspectOpts& o, const Bindings& b) {
  Checkpoint ck = load_checkpoint(o.checkpoint);
  PointCloud pc = read_pc(o.input);
  std::cout << echo_header(
      "inspect", {{"checkpoint", o.checkpoint}, {"input", o.input},
                  {"out", o.out}}, b);

  ModelPlan plan = plan_model(pc.positions, ck.config);
  ModelTrace trace;
  NoGradGuard inference;
  if (ck.config.task == Task::Classify)
    (void)classify_forward(pc.positions, ck.config, ck.params, plan, &trace);
  else
    (void)segment_forward(pc.positions, ck.config, ck.params, plan, &trace);

  if (o.layer >= trace.blocks.size())
    throw UsageError("inspect: layer " + std::to_string(o.layer) +
                     " out of range (model has " +
                     std::to_string(trace.blocks.size()) + " stages)");
  const SpaTrace& spa = trace.blocks[o.layer].spa;
  if (!spa.delta.defined())
    throw UsageError("inspect: no SP points at layer " +
                     std::to_string(o.layer) + " under variant '" +
                     spa_mode_name(ck.config.variant) + "'");
  const Tensor& level_x =
      o.layer == 0 ? pc.positions : plan.blocks[o.layer - 1].anchor_x;

  size_t s = spa.delta.rows(), n = level_x.rows();
  std::string sp_csv = "s,x,y,z\n";
  for (size_t i = 0; i < s; ++i)
    sp_csv += std::to_string(i) + "," + fmt_g(spa.delta.at(i, 0)) + "," +
              fmt_g(spa.delta.at(i, 1)) + "," + fmt_g(spa.delta.at(i, 2)) +
              "\n";

  std::string kern_csv = "s,i,g,h,w\n";
  for (size_t si = 0; si < s; ++si)
    for (size_t i = 0; i < n; ++i) {
      double h = spa.h.defined() ? spa.h.at(si, i)
                                 : std::numeric_limits<double>::quiet_NaN();
      kern_csv += std::to_string(si) + "," + std::to_string(i) + "," +
                  fmt_g(spa.g.at(si, i)) + "," + fmt_g(h) + "," +
                  fmt_g(spa.w.at(si, i)) + "\n";
    }

  std::vector<std::array<double, 3>> points;
  std::vector<std::array<uint8_t, 3>> colors;
  for (size_t i = 0; i < n; ++i) {
    points.push_back({level_x.at(i, 0), level_x.at(i, 1), level_x.at(i, 2)});
    colors.push_back({180, 180, 180});
  }
  for (size_t i = 0; i < s; ++i) {
    points.push_back({spa.delta.at(i, 0), spa.delta.at(i, 1),
                      spa.delta.at(i, 2)});
    colors.push_back({230, 60, 60});
  }

  fs::create_directories(o.out);
  write_file(fs::path(o.out) / "sp_points.csv", sp_csv);
  write_file(fs::path(o.out) / "kernels.csv", kern_csv);
  write_ply((fs::path(o.out) / "overlay.ply").string(), points, colors);
  std::cout << "wrote sp_points.csv, kernels.csv, overlay.ply (" << s
            << " SP points over " << n << " inputs)\n";
}

void apply_config(const std::string& path, const Bindings& b) {
  if (!path.empty()) b.apply(parse_config_file(path));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point-cloud attention workbench"};
  app.require_subcommand(1);

  GenOpts go;
  CLI::App* gen = app.add_subcommand("gen-data",
                                     "Generate a synthetic shape dataset");
  Bindings gb;
  gen->add_option("--out", go.out, "Output directory")->required();
  gen->add_option("--config", go.config, "Config file");
  gen->add_flag("--force", go.force, "Write into a non-empty directory");
  gb.add(gen, "--classes", go.classes, "Comma-separated shape names",
         "data.classes");
  gb.add(gen, "--n-points", go.n_points, "Points per cloud", "data.n_points");
  gb.add(gen, "--n-samples", go.n_samples, "Total clouds (split evenly)",
         "data.n_samples");
  gb.add(gen, "--seed", go.seed, "Generation seed", "data.seed");
  gb.add(gen, "--jitter", go.jitter, "Gaussian surface jitter",
         "data.jitter");

  TrainOpts to;
  CLI::App* tr = app.add_subcommand("train", "Train a model on a dataset");
  Bindings tb;
  tr->add_option("--data", to.data, "Dataset directory")->required();
  tr->add_option("--out", to.out, "Output directory")->required();
  tr->add_option("--config", to.config, "Config file");
  bind_model(tr, tb, to.model);
  bind_train(tr, tb, to.train);

  EvalOpts eo;
  CLI::App* ev = app.add_subcommand("eval",
                                    "Evaluate a checkpoint on a dataset");
  Bindings eb;
  ev->add_option("--data", eo.data, "Dataset directory")->required();
  ev->add_option("--checkpoint", eo.checkpoint, "Checkpoint file")
      ->required();
  ev->add_option("--out", eo.out, "Output directory")->required();
  ev->add_option("--config", eo.config, "Config file");
  eb.add(ev, "--seed", eo.seed, "Unused; echoed for the record",
         "train.seed");

  AblateOpts ao;
  CLI::App* ab = app.add_subcommand(
      "ablate", "Train every variant/relation pair and tabulate accuracy");
  Bindings abb;
  ab->add_option("--data", ao.data, "Dataset directory")->required();
  ab->add_option("--out", ao.out, "Output directory")->required();
  ab->add_option("--config", ao.config, "Config file");
  abb.add(ab, "--rows", ao.rows, "Variants to train", "ablate.rows");
  abb.add(ab, "--relations", ao.relations, "Relations to train",
          "ablate.relations");
  bind_model(ab, abb, ao.model);
  bind_train(ab, abb, ao.train);

  BenchOpts bo;
  CLI::App* be = app.add_subcommand(
      "bench", "Cost accounting and wall-clock scaling sweep");
  Bindings bb;
  be->add_option("--out", bo.out, "Output directory")->required();
  be->add_option("--config", bo.config, "Config file");
  bb.add(be, "--n-list", bo.n_list, "Comma-separated point counts",
         "bench.n_list");
  bb.add(be, "--s-points", bo.s_points, "SP points", "bench.s_points");
  bb.add(be, "--channels", bo.channels, "Feature channels", "bench.channels");
  bb.add(be, "--hidden", bo.hidden, "Attention hidden width (0: channels)",
         "bench.hidden");
  bb.add(be, "--warmup", bo.warmup, "Warmup runs", "bench.warmup");
  bb.add(be, "--runs", bo.runs, "Measured runs (0: skip timing)",
         "bench.runs");
  bb.add(be, "--measure-max-n", bo.measure_max_n,
         "Largest N to time (analytic columns still cover all)",
         "bench.measure_max_n");
  bb.add(be, "--seed", bo.seed, "Input generation seed", "bench.seed");

  InspectOpts io;
  CLI::App* in = app.add_subcommand(
      "inspect", "Dump SP points, kernels, and a PLY overlay for one cloud");
  Bindings ib;
  in->add_option("--checkpoint", io.checkpoint, "Checkpoint file")
      ->required();
  in->add_option("--input", io.input, "Input cloud (.pcd)")->required();
  in->add_option("--out", io.out, "Output directory")->required();
  in->add_option("--config", io.config, "Config file");
  ib.add(in, "--layer", io.layer, "Stage whose SPA to inspect",
         "inspect.layer");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(gen)) {
      apply_config(go.config, gb);
      cmd_gen_data(go, gb);
    } else if (app.got_subcommand(tr)) {
      apply_config(to.config, tb);
      cmd_train(to, tb);
    } else if (app.got_subcommand(ev)) {
      apply_config(eo.config, eb);
      cmd_eval(eo, eb);
    } else if (app.got_subcommand(ab)) {
      apply_config(ao.config, abb);
      cmd_ablate(ao, abb);
    } else if (app.got_subcommand(be)) {
      apply_config(bo.config, bb);
      cmd_bench(bo, bb);
    } else if (app.got_subcommand(in)) {
      apply_config(io.config, ib);
      cmd_inspect(io, ib);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
