#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "spotr/bench.hpp"
#include "support/checks.hpp"

using namespace spotr;

namespace {

SpaConfig spa_cfg(size_t s, size_t c) {
  SpaConfig cfg;
  cfg.s_points = s;
  cfg.attn.channels = c;
  return cfg;
}

uint64_t tensor_count(const std::vector<Tensor>& ts) {
  uint64_t total = 0;
  for (const Tensor& t : ts) total += t.size();
  return total;
}

}  // namespace

TEST_CASE("spa analytic count equals an instrumented forward") {
  struct Case {
    size_t n, s, c, hidden;
    Relation rel;
    bool uniform_h, renorm, tied;
    double tau;
  };
  std::vector<Case> cases = {
      {64, 8, 16, 0, Relation::Sub, false, false, false, 1.0},
      {128, 16, 32, 0, Relation::Sub, false, false, false, 1.0},
      {96, 4, 16, 24, Relation::Mul, false, false, false, 0.5},
      {256, 8, 8, 0, Relation::Add, true, false, false, 1.0},
      {50, 8, 16, 0, Relation::KeyOnly, false, true, true, 1e-6},
      {512, 16, 16, 8, Relation::Sub, true, true, false, 2.0},
  };
  Rng rng(31);
  for (const Case& k : cases) {
    SpaConfig cfg = spa_cfg(k.s, k.c);
    cfg.attn.hidden = k.hidden;
    cfg.attn.relation = k.rel;
    cfg.attn.tau = k.tau;
    cfg.uniform_h = k.uniform_h;
    cfg.renormalize = k.renorm;
    SpaParams params = make_spa_params(cfg, rng);
    params.cwpa.tied = k.tied;
    Tensor x = Tensor::randn({k.n, 3}, rng, 1.0, false);
    Tensor f = Tensor::randn({k.n, k.c}, rng, 1.0, false);

    CostReport rep = count_spa(cfg, k.n, k.tied);
    flops_reset();
    (void)spa_forward(x, f, cfg, params);
    CHECK(flops_count() == rep.flops);
  }
}

TEST_CASE("gsa analytic count equals an instrumented forward") {
  struct Case {
    size_t n, c;
    Relation rel;
    bool tied;
  };
  std::vector<Case> cases = {
      {64, 16, Relation::Sub, false},
      {128, 8, Relation::KeyOnly, false},
      {48, 12, Relation::Mul, true},
  };
  Rng rng(32);
  for (const Case& k : cases) {
    AttnConfig cfg;
    cfg.channels = k.c;
    cfg.relation = k.rel;
    CwpaParams params = make_cwpa_params(cfg, rng);
    params.tied = k.tied;
    Tensor x = Tensor::randn({k.n, 3}, rng, 1.0, false);
    Tensor f = Tensor::randn({k.n, k.c}, rng, 1.0, false);

    CostReport rep = count_gsa(cfg, k.n, k.tied);
    flops_reset();
    (void)gsa_forward(x, f, cfg, params);
    CHECK(flops_count() == rep.flops);
  }
}

TEST_CASE("gsa formula is the spa attention stage with keys equal to n") {
  for (size_t n : {16, 40, 128}) {
    CostReport spa = count_spa(n, n, 24);
    CostReport gsa = count_gsa(n, 24);
    CHECK(spa.layer_flops("attention") == gsa.flops);
    CHECK(spa.layers.back().act_bytes == gsa.act_bytes);
  }
}

TEST_CASE("doubling n doubles spa flops and quadruples gsa flops") {
  for (size_t n : {64, 256, 1024}) {
    CHECK(count_spa(2 * n, 16, 32).flops == 2 * count_spa(n, 16, 32).flops);
    CHECK(count_gsa(2 * n, 32).flops == 4 * count_gsa(n, 32).flops);
  }
}

TEST_CASE("log-log slopes separate linear from quadratic scaling") {
  std::vector<size_t> ns = {256, 512, 1024, 2048, 4096, 8192};
  std::vector<uint64_t> spa_flops, gsa_flops;
  for (size_t n : ns) {
    spa_flops.push_back(count_spa(n, 16, 64).flops);
    gsa_flops.push_back(count_gsa(n, 64).flops);
  }
  CHECK(std::abs(loglog_slope(ns, spa_flops) - 1.0) < 1e-9);
  CHECK(std::abs(loglog_slope(ns, gsa_flops) - 2.0) < 1e-9);
}

TEST_CASE("flop ratio is small at scale and shrinks with n") {
  double r2048 = double(count_spa(2048, 16, 64).flops) /
                 double(count_gsa(2048, 64).flops);
  CHECK(r2048 < 0.15);
  double prev = 2.0;
  for (size_t n : {256, 512, 1024, 2048, 4096}) {
    double r = double(count_spa(n, 16, 64).flops) /
               double(count_gsa(n, 64).flops);
    CHECK(r < prev);
    prev = r;
  }
}

TEST_CASE("analytic parameter counts match the real parameter tensors") {
  Rng rng(33);
  SpaConfig cfg = spa_cfg(8, 16);
  SpaParams params = make_spa_params(cfg, rng);
  std::vector<Tensor> reg;
  append_params(reg, params);
  CHECK(count_spa(cfg, 10).params == tensor_count(reg));

  params.cwpa.tied = true;
  reg.clear();
  append_params(reg, params);
  CHECK(count_spa(cfg, 10, true).params == tensor_count(reg));

  AttnConfig acfg;
  acfg.channels = 16;
  acfg.hidden = 24;
  CwpaParams cw = make_cwpa_params(acfg, rng);
  reg.clear();
  append_params(reg, cw);
  CHECK(count_gsa(acfg, 10).params == tensor_count(reg));
}

TEST_CASE("deterministic sweep emits stable csv with zero wall times") {
  SweepConfig cfg;
  cfg.n_values = {64, 128};
  cfg.s_points = 8;
  cfg.channels = 16;
  cfg.runs = 0;
  std::vector<CostReport> reports = sweep(cfg);
  REQUIRE(reports.size() == 4);
  CHECK(reports[0].variant == "spa");
  CHECK(reports[1].variant == "gsa");
  CHECK(reports[1].s == 64);
  for (const CostReport& r : reports) {
    CHECK(r.wall_ns == 0);
    CHECK_FALSE(r.timer_warning);
  }
  std::string csv = bench_csv(reports);
  CHECK(csv.substr(0, csv.find('\n')) ==
        "variant,N,S,C,flops,params,act_bytes,wall_ns_median");
  CHECK(csv == bench_csv(sweep(cfg)));
}

TEST_CASE("measured sweep respects the measurement cap") {
  SweepConfig cfg;
  cfg.n_values = {48, 4096};
  cfg.s_points = 4;
  cfg.channels = 8;
  cfg.runs = 11;
  cfg.measure_max_n = 64;
  std::vector<CostReport> reports = sweep(cfg);
  REQUIRE(reports.size() == 4);
  CHECK(reports[0].wall_ns > 0);
  CHECK(reports[1].wall_ns > 0);
  CHECK(reports[2].wall_ns == 0);
  CHECK(reports[3].wall_ns == 0);
  for (const CostReport& r : reports)
    CHECK(r.timer_warning == (r.wall_ns > 0 && r.wall_ns < 100000));
}

TEST_CASE("bench validation rejects degenerate setups") {
  CHECK_THROWS_AS(count_spa(0, 8, 16), UsageError);
  CHECK_THROWS_AS(count_spa(16, 0, 16), UsageError);
  CHECK_THROWS_AS(count_gsa(0, 16), UsageError);
  CHECK_THROWS_AS(count_gsa(16, 0), UsageError);
  CHECK_THROWS_AS(count_spa(16, 8, 16).layer_flops("pooling"), UsageError);

  SweepConfig cfg;
  CHECK_THROWS_AS(cfg.validate(), UsageError);  // no point counts
  cfg.n_values = {64};
  cfg.runs = 5;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg.runs = 10;
  cfg.warmup = 2;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg.warmup = 3;
  cfg.s_points = 0;
  CHECK_THROWS_AS(cfg.validate(), UsageError);

  CHECK_THROWS_AS(loglog_slope({1, 2}, {3}), UsageError);
  CHECK_THROWS_AS(loglog_slope({4}, {3}), UsageError);
  CHECK_THROWS_AS(loglog_slope({1, 2}, {0, 3}), UsageError);
}
