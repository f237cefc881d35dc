#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "spotr/model.hpp"

namespace fs = std::filesystem;
using namespace spotr;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "spotr_cli_scratch";

struct GlobalScratch {
  GlobalScratch() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
} g_scratch;

std::string p(const std::string& rel) { return (kRoot / rel).string(); }

int run(const std::string& args) {
  std::string cmd = std::string(SPOTR_BIN) + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

size_t count_lines(const std::string& s) {
  size_t n = 0;
  for (char c : s)
    if (c == '\n') ++n;
  return n;
}

size_t count_substr(const std::string& s, const std::string& needle) {
  size_t n = 0, pos = 0;
  while ((pos = s.find(needle, pos)) != std::string::npos) {
    ++n;
    pos += needle.size();
  }
  return n;
}

const std::string kTinyModel =
    " --stages 8:0.6:4:2:8 --embed-width 6 --head-hidden 10 --num-classes 2";

// Shared tiny two-class dataset, generated once.
const std::string& tiny_data() {
  static std::string dir = [] {
    std::string d = p("data");
    REQUIRE(run("gen-data --out " + d +
                " --classes sphere,cube --n-points 32 --n-samples 8 "
                "--seed 5") == 0);
    return d;
  }();
  return dir;
}

// Shared trained checkpoint, produced by one short CLI training run.
const std::string& tiny_run() {
  static std::string dir = [] {
    std::string d = p("base_run");
    REQUIRE(run("train --data " + tiny_data() + " --out " + d + kTinyModel +
                " --epochs 2 --batch-size 2 --seed 3 --test-frac 0.25") ==
            0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("gen-data writes one file per cloud plus a stable manifest") {
  REQUIRE(run("gen-data --out " + p("gen_a") +
              " --classes sphere,cube --n-points 32 --n-samples 8 "
              "--seed 5") == 0);
  size_t pcd = 0;
  for (const auto& e : fs::directory_iterator(p("gen_a")))
    if (e.path().extension() == ".pcd") ++pcd;
  CHECK(pcd == 8);
  CHECK(fs::exists(fs::path(p("gen_a")) / "manifest.txt"));

  REQUIRE(run("gen-data --out " + p("gen_b") +
              " --classes sphere,cube --n-points 32 --n-samples 8 "
              "--seed 5") == 0);
  CHECK(slurp(fs::path(p("gen_a")) / "manifest.txt") ==
        slurp(fs::path(p("gen_b")) / "manifest.txt"));

  REQUIRE(run("gen-data --out " + p("gen_c") +
              " --n-points 16 --n-samples 100 --seed 2") == 0);
  size_t all4 = 0;
  for (const auto& e : fs::directory_iterator(p("gen_c")))
    if (e.path().extension() == ".pcd") ++all4;
  CHECK(all4 == 100);
}

TEST_CASE("gen-data refuses bad sample counts and non-empty targets") {
  CHECK(run("gen-data --out " + p("gen_zero") + " --n-samples 0") == 2);
  CHECK(run("gen-data --out " + p("gen_d") +
            " --classes sphere --n-points 8 --n-samples 2 --seed 1") == 0);
  CHECK(run("gen-data --out " + p("gen_d") +
            " --classes sphere --n-points 8 --n-samples 2 --seed 1") == 2);
  CHECK(run("gen-data --out " + p("gen_d") +
            " --classes sphere --n-points 8 --n-samples 2 --seed 1 "
            "--force") == 0);
  CHECK(run("gen-data --out " + p("gen_e") +
            " --classes sphere,cube --n-points 8 --n-samples 3 --seed 1") ==
        2);  // 3 % 2 != 0
}

TEST_CASE("train writes metrics, checkpoint, and record deterministically") {
  std::string out = tiny_run();
  std::string metrics = slurp(fs::path(out) / "metrics.csv");
  CHECK(metrics.substr(0, metrics.find('\n')) == "epoch,split,loss,oa,macc");
  CHECK(count_lines(metrics) == 1 + 2 * 2);  // header + train/test per epoch
  std::string ckpt = slurp(fs::path(out) / "model.ckpt");
  std::string record = slurp(fs::path(out) / "record.txt");
  CHECK(record.find("train.seed = 3") != std::string::npos);
  CHECK(record.find("dataset_hash = ") != std::string::npos);

  REQUIRE(run("train --data " + tiny_data() + " --out " + out + kTinyModel +
              " --epochs 2 --batch-size 2 --seed 3 --test-frac 0.25") == 0);
  CHECK(slurp(fs::path(out) / "metrics.csv") == metrics);
  CHECK(slurp(fs::path(out) / "model.ckpt") == ckpt);
  CHECK(slurp(fs::path(out) / "record.txt") == record);

  Checkpoint ck = load_checkpoint((fs::path(out) / "model.ckpt").string());
  CHECK(ck.config.num_classes == 2);
  CHECK(ck.config.stages.size() == 1);
}

TEST_CASE("eval scores a checkpoint and reports missing files clearly") {
  std::string out = p("eval_out");
  REQUIRE(run("eval --data " + tiny_data() + " --checkpoint " +
              (fs::path(tiny_run()) / "model.ckpt").string() + " --out " +
              out) == 0);
  std::string metrics = slurp(fs::path(out) / "metrics.csv");
  CHECK(metrics.substr(0, metrics.find('\n')) == "epoch,split,loss,oa,macc");
  CHECK(count_lines(metrics) == 2);
  CHECK(metrics.find("0,eval,") != std::string::npos);

  CHECK(run("eval --data " + tiny_data() + " --checkpoint " +
            p("nonexistent.ckpt") + " --out " + p("eval_bad")) == 4);
}

TEST_CASE("eval of an untrained model lands in the chance band") {
  REQUIRE(run("gen-data --out " + p("band_data") +
              " --n-points 24 --n-samples 100 --seed 11") == 0);
  ModelConfig cfg;
  cfg.stages = {{8, 0.6, 4, 2, 8.0}};
  cfg.embed_width = 6;
  cfg.head_hidden = 10;
  cfg.num_classes = 4;
  Rng rng(99);
  ModelParams params = make_model_params(cfg, rng);
  save_checkpoint(p("fresh.ckpt"), cfg, params);

  REQUIRE(run("eval --data " + p("band_data") + " --checkpoint " +
              p("fresh.ckpt") + " --out " + p("band_out")) == 0);
  std::string metrics = slurp(fs::path(p("band_out")) / "metrics.csv");
  std::istringstream rows(metrics);
  std::string header, row, cell;
  REQUIRE(std::getline(rows, header));
  REQUIRE(std::getline(rows, row));
  std::istringstream cells(row);
  for (int i = 0; i <= 3; ++i) REQUIRE(std::getline(cells, cell, ','));
  double oa = std::stod(cell);
  CHECK(oa >= 0.10);
  CHECK(oa <= 0.45);
}

TEST_CASE("ablate emits one table row per variant and relation") {
  std::string out = p("abl_out");
  REQUIRE(run("ablate --data " + tiny_data() + " --out " + out + kTinyModel +
              " --rows full,no_spa --relations sub --epochs 1 "
              "--batch-size 4 --seed 3 --test-frac 0.25") == 0);
  std::string csv = slurp(fs::path(out) / "ablation.csv");
  CHECK(csv.substr(0, csv.find('\n')) == "variant,relation,oa,macc");
  CHECK(count_lines(csv) == 3);
  CHECK(csv.find("full,sub,") != std::string::npos);
  CHECK(csv.find("no_spa,sub,") != std::string::npos);

  CHECK(run("ablate --data " + tiny_data() + " --out " + p("abl_bad") +
            kTinyModel + " --rows full,bogus --epochs 1") == 2);
}

TEST_CASE("bench without measurement is bit-identical across runs") {
  std::string args = "bench --n-list 64,128 --s-points 8 --channels 16 "
                     "--runs 0 --out ";
  REQUIRE(run(args + p("bench_a")) == 0);
  REQUIRE(run(args + p("bench_b")) == 0);
  std::string csv = slurp(fs::path(p("bench_a")) / "bench.csv");
  CHECK(csv == slurp(fs::path(p("bench_b")) / "bench.csv"));
  CHECK(csv.substr(0, csv.find('\n')) ==
        "variant,N,S,C,flops,params,act_bytes,wall_ns_median");
  CHECK(count_lines(csv) == 5);
  CHECK(count_substr(csv, "spa,") == 2);
  CHECK(count_substr(csv, "gsa,") == 2);
  CHECK(run("bench --n-list 64 --runs 5 --out " + p("bench_c")) == 2);
}

TEST_CASE("inspect dumps sp points, kernels, and a colored overlay") {
  std::string ckpt = (fs::path(tiny_run()) / "model.ckpt").string();
  std::string cloud = (fs::path(tiny_data()) / "cloud_0000.pcd").string();
  std::string out = p("insp_a");
  REQUIRE(run("inspect --checkpoint " + ckpt + " --input " + cloud +
              " --out " + out) == 0);

  std::string sp = slurp(fs::path(out) / "sp_points.csv");
  CHECK(sp.substr(0, sp.find('\n')) == "s,x,y,z");
  CHECK(count_lines(sp) == 1 + 2);  // header + the stage's two SP points

  std::string kern = slurp(fs::path(out) / "kernels.csv");
  CHECK(kern.substr(0, kern.find('\n')) == "s,i,g,h,w");
  CHECK(count_lines(kern) == 1 + 2 * 32);

  std::string ply = slurp(fs::path(out) / "overlay.ply");
  CHECK(ply.find("element vertex 34") != std::string::npos);
  CHECK(count_substr(ply, " 230 60 60") == 2);
  CHECK(count_substr(ply, " 180 180 180") == 32);

  REQUIRE(run("inspect --checkpoint " + ckpt + " --input " + cloud +
              " --out " + p("insp_b")) == 0);
  CHECK(slurp(fs::path(p("insp_b")) / "overlay.ply") == ply);
  CHECK(slurp(fs::path(p("insp_b")) / "sp_points.csv") == sp);
  CHECK(slurp(fs::path(p("insp_b")) / "kernels.csv") == kern);

  CHECK(run("inspect --checkpoint " + ckpt + " --input " + cloud +
            " --out " + p("insp_c") + " --layer 9") == 2);
}

TEST_CASE("config files fill unset flags and flags win") {
  std::ofstream cfg(p("exp.cfg"));
  cfg << "# experiment\n[train]\nepochs = 3\n[model]\nembed_width = 4\n"
      << "[bench]\nruns = 0\n";
  cfg.close();

  REQUIRE(run("train --data " + tiny_data() + " --out " + p("cfg_a") +
              " --config " + p("exp.cfg") +
              " --stages 8:0.6:4:2:8 --head-hidden 10 --num-classes 2"
              " --batch-size 4 --seed 3") == 0);
  std::string rec = slurp(fs::path(p("cfg_a")) / "record.txt");
  CHECK(rec.find("train.epochs = 3") != std::string::npos);
  CHECK(rec.find("model.embed_width = 4") != std::string::npos);

  REQUIRE(run("train --data " + tiny_data() + " --out " + p("cfg_b") +
              " --config " + p("exp.cfg") + " --epochs 1" +
              " --stages 8:0.6:4:2:8 --head-hidden 10 --num-classes 2"
              " --batch-size 4 --seed 3") == 0);
  CHECK(slurp(fs::path(p("cfg_b")) / "record.txt")
            .find("train.epochs = 1") != std::string::npos);

  std::ofstream bad(p("bad.cfg"));
  bad << "[train]\nepochz = 3\n";
  bad.close();
  CHECK(run("train --data " + tiny_data() + " --out " + p("cfg_c") +
            " --config " + p("bad.cfg") + kTinyModel +
            " --epochs 1 --batch-size 4") == 2);
}

TEST_CASE("unknown flags and subcommands are rejected") {
  CHECK(run("train --data x --out y --bogus 1") == 2);
  CHECK(run("frobnicate --out z") == 2);
  CHECK(run("--help") == 0);
  CHECK(run("train --help") == 0);
}
