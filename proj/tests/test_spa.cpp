#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "spotr/geometry.hpp"
#include "spotr/spa.hpp"
#include "support/checks.hpp"
#include "support/hull.hpp"

using namespace spotr;
using spotr::testing::gradcheck;
using spotr::testing::in_convex_hull;
using spotr::testing::max_abs_diff;

namespace {

Tensor random_leaf(Shape shape, Rng& rng, bool grad = false) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = -1.0 + 2.0 * rng.uniform();
  return Tensor::from(std::move(shape), std::move(v), grad);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::sqrt(na * nb);
}

// Naive double-loop reference for the disentangled aggregation.
std::vector<double> aggregate_oracle(const Tensor& x, const Tensor& f,
                                     const Tensor& delta, const Tensor& h,
                                     double gamma, bool uniform_h,
                                     bool renormalize) {
  size_t s_count = delta.rows(), n = x.rows(), c = f.cols();
  std::vector<double> psi(s_count * c, 0.0);
  for (size_t s = 0; s < s_count; ++s) {
    std::vector<double> w(n);
    for (size_t i = 0; i < n; ++i) {
      double d2 = 0.0;
      for (size_t k = 0; k < 3; ++k) {
        double d = delta.at(s, k) - x.at(i, k);
        d2 += d * d;
      }
      double g = std::exp(-gamma * d2);
      w[i] = g * (uniform_h ? 1.0 / static_cast<double>(n) : h.at(s, i));
    }
    if (renormalize) {
      double total = 0.0;
      for (double v : w) total += v;
      for (double& v : w) v /= total;
    }
    for (size_t i = 0; i < n; ++i)
      for (size_t k = 0; k < c; ++k) psi[s * c + k] += w[i] * f.at(i, k);
  }
  return psi;
}

}  // namespace

TEST_CASE("sp_positions lands midway when logits are flat") {
  Tensor x = Tensor::from({2, 3}, {0, 0, 0, 1, 0, 0});
  Tensor f = Tensor::zeros({2, 4});
  Rng rng(3);
  Tensor z = random_leaf({3, 4}, rng);
  Tensor delta = sp_positions(f, x, z);
  for (size_t s = 0; s < 3; ++s) {
    CHECK(delta.at(s, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(delta.at(s, 1) == 0.0);
    CHECK(delta.at(s, 2) == 0.0);
  }
}

TEST_CASE("sp_positions saturates to the dominant point") {
  Tensor x = Tensor::from({3, 3}, {0, 0, 0, 0.3, -0.2, 0.9, -1, 1, 0.5});
  Tensor f = Tensor::from({3, 2}, {0, 0, 1000, 0, 0, 0});
  Tensor z = Tensor::from({1, 2}, {1, 0});
  Tensor delta = sp_positions(f, x, z);
  CHECK(std::fabs(delta.at(0, 0) - 0.3) < 1e-9);
  CHECK(std::fabs(delta.at(0, 1) + 0.2) < 1e-9);
  CHECK(std::fabs(delta.at(0, 2) - 0.9) < 1e-9);
}

TEST_CASE("sp positions stay in the convex hull") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    size_t n = 4 + rng.below(61), s_count = 1 + rng.below(8), c = 4;
    Tensor x = random_leaf({n, 3}, rng);
    Tensor f = random_leaf({n, c}, rng);
    Tensor z = random_leaf({s_count, c}, rng);
    Tensor delta = sp_positions(f, x, z);
    for (size_t s = 0; s < s_count; ++s)
      CHECK(in_convex_hull(
          x, {delta.at(s, 0), delta.at(s, 1), delta.at(s, 2)}, 1e-9));
  }
}

TEST_CASE("hull oracle rejects outside points") {
  Tensor x = Tensor::from({4, 3}, {0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(in_convex_hull(x, {0.25, 0.25, 0.25}, 1e-9));
  CHECK_FALSE(in_convex_hull(x, {1.0, 1.0, 1.0}, 1e-9));
  CHECK_FALSE(in_convex_hull(x, {-0.01, 0.0, 0.0}, 1e-9));
}

TEST_CASE("spatial kernel values") {
  CHECK(spatial_kernel({1, 2, 3}, {1, 2, 3}, 5.0) == 1.0);
  CHECK(spatial_kernel({0, 0, 0}, {1, 0, 0}, 1.0) ==
        doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  double near = spatial_kernel({0, 0, 0}, {0.5, 0, 0}, 2.0);
  double far = spatial_kernel({0, 0, 0}, {0.5, 0, 0}, 8.0);
  CHECK(far < near);
}

TEST_CASE("semantic kernel rows are distributions") {
  Rng rng(11);
  Tensor f1 = random_leaf({1, 4}, rng);
  Tensor z = random_leaf({2, 4}, rng);
  Tensor h1 = semantic_kernel(z, f1);
  CHECK(h1.at(0, 0) == 1.0);
  CHECK(h1.at(1, 0) == 1.0);

  Tensor f = random_leaf({9, 4}, rng);
  Tensor h = semantic_kernel(z, f);
  for (size_t s = 0; s < 2; ++s) {
    double total = 0.0;
    for (size_t i = 0; i < 9; ++i) total += h.at(s, i);
    CHECK(std::fabs(total - 1.0) <= 1e-12);
  }

  Tensor z0 = Tensor::zeros({1, 4});
  Tensor uniform = semantic_kernel(z0, f);
  for (size_t i = 0; i < 9; ++i)
    CHECK(uniform.at(0, i) == doctest::Approx(1.0 / 9.0).epsilon(1e-14));
}

TEST_CASE("aggregate with flat spatial kernel returns the shared feature") {
  Rng rng(13);
  Tensor x = random_leaf({6, 3}, rng);
  std::vector<double> fv;
  std::vector<double> feature{0.3, -1.2, 0.7};
  for (int i = 0; i < 6; ++i) fv.insert(fv.end(), feature.begin(), feature.end());
  Tensor f = Tensor::from({6, 3}, std::move(fv));
  Tensor z = random_leaf({2, 3}, rng);
  Tensor h = semantic_kernel(z, f);
  Tensor delta = matmul(h, x);
  Tensor psi = aggregate(x, f, delta, h, 1e-14, false, false);
  for (size_t s = 0; s < 2; ++s)
    for (size_t k = 0; k < 3; ++k)
      CHECK(std::fabs(psi.at(s, k) - feature[k]) < 1e-12);
}

TEST_CASE("aggregate collapses to the anchored point for huge gamma") {
  Rng rng(17);
  Tensor x = random_leaf({5, 3}, rng);
  Tensor f = random_leaf({5, 4}, rng);
  Tensor z = random_leaf({1, 4}, rng);
  Tensor h = semantic_kernel(z, f);
  size_t j = 2;
  Tensor delta = gather_rows(x, {j});
  Tensor psi = aggregate(x, f, delta, h, 1e6, false, false);
  for (size_t k = 0; k < 4; ++k)
    CHECK(std::fabs(psi.at(0, k) - h.at(0, j) * f.at(j, k)) < 1e-12);
}

TEST_CASE("aggregate matches the double-loop oracle") {
  Rng rng(19);
  for (bool uniform : {false, true})
    for (bool renorm : {false, true}) {
      Tensor x = random_leaf({12, 3}, rng);
      Tensor f = random_leaf({12, 5}, rng);
      Tensor z = random_leaf({3, 5}, rng);
      Tensor h = semantic_kernel(z, f);
      Tensor delta = matmul(h, x);
      Tensor psi = aggregate(x, f, delta, h, 4.0, uniform, renorm);
      auto want = aggregate_oracle(x, f, delta, h, 4.0, uniform, renorm);
      CHECK(max_abs_diff(psi.data(), want) < 1e-12);
    }
}

TEST_CASE("spa_forward with one SP point gives unit attention") {
  Rng rng(23);
  SpaConfig cfg;
  cfg.s_points = 1;
  cfg.gamma = 4.0;
  cfg.attn.channels = 4;
  SpaParams params = make_spa_params(cfg, rng);
  Tensor x = random_leaf({7, 3}, rng);
  Tensor f = random_leaf({7, 4}, rng);
  SpaTrace trace;
  Tensor out = spa_forward(x, f, cfg, params, {}, &trace);
  CHECK(out.rows() == 7);
  REQUIRE(trace.attn.defined());
  for (size_t i = 0; i < trace.attn.size(); ++i)
    CHECK(trace.attn.at(i) == 1.0);
}

TEST_CASE("spa_forward is permutation-equivariant") {
  Rng rng(29);
  SpaConfig cfg;
  cfg.s_points = 4;
  cfg.gamma = 8.0;
  cfg.attn.channels = 6;
  SpaParams params = make_spa_params(cfg, rng);
  size_t n = 20;
  Tensor x = random_leaf({n, 3}, rng);
  Tensor f = random_leaf({n, 6}, rng);
  Tensor base = spa_forward(x, f, cfg, params);

  std::vector<size_t> perm(n);
  for (size_t i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm);
  std::vector<double> xp(n * 3), fp(n * 6);
  for (size_t i = 0; i < n; ++i) {
    for (size_t k = 0; k < 3; ++k) xp[i * 3 + k] = x.at(perm[i], k);
    for (size_t k = 0; k < 6; ++k) fp[i * 6 + k] = f.at(perm[i], k);
  }
  Tensor out = spa_forward(Tensor::from({n, 3}, std::move(xp)),
                           Tensor::from({n, 6}, std::move(fp)), cfg, params);
  double worst = 0.0;
  for (size_t i = 0; i < n; ++i)
    for (size_t k = 0; k < 6; ++k)
      worst = std::max(worst,
                       std::fabs(out.at(i, k) - base.at(perm[i], k)));
  CHECK(worst < 1e-9);
}

TEST_CASE("spa_forward supports query subsets") {
  Rng rng(31);
  SpaConfig cfg;
  cfg.s_points = 3;
  cfg.attn.channels = 4;
  SpaParams params = make_spa_params(cfg, rng);
  Tensor x = random_leaf({10, 3}, rng);
  Tensor f = random_leaf({10, 4}, rng);
  Tensor all = spa_forward(x, f, cfg, params);
  Tensor some = spa_forward(x, f, cfg, params, {2, 7});
  CHECK(some.rows() == 2);
  for (size_t k = 0; k < 4; ++k) {
    CHECK(some.at(0, k) == all.at(2, k));
    CHECK(some.at(1, k) == all.at(7, k));
  }
}

TEST_CASE("spa gradients match finite differences end to end") {
  Rng rng(37);
  SpaConfig cfg;
  cfg.s_points = 3;
  cfg.gamma = 2.0;
  cfg.attn.channels = 5;
  SpaParams params = make_spa_params(cfg, rng);
  Tensor x = random_leaf({8, 3}, rng);
  Tensor f = random_leaf({8, 5}, rng, true);
  Tensor w = random_leaf({8, 5}, rng);
  std::vector<Tensor> leaves{f};
  append_params(leaves, params);
  auto loss_fn = [&] {
    return sum_all(mul(spa_forward(x, f, cfg, params), w));
  };
  CHECK(gradcheck(loss_fn, leaves) < 1e-4);
}

TEST_CASE("spa gradients with renormalized uniform weights") {
  Rng rng(41);
  SpaConfig cfg;
  cfg.s_points = 2;
  cfg.gamma = 2.0;
  cfg.attn.channels = 4;
  cfg.uniform_h = true;
  cfg.renormalize = true;
  SpaParams params = make_spa_params(cfg, rng);
  Tensor x = random_leaf({6, 3}, rng);
  Tensor f = random_leaf({6, 4}, rng, true);
  Tensor w = random_leaf({6, 4}, rng);
  std::vector<Tensor> leaves{f};
  append_params(leaves, params);
  auto loss_fn = [&] {
    return sum_all(mul(spa_forward(x, f, cfg, params), w));
  };
  CHECK(gradcheck(loss_fn, leaves) < 1e-4);
}

TEST_CASE("disentangled aggregation isolates the aligned cluster") {
  // Two spatially adjacent clusters with orthogonal features. The SP
  // latent aligns with cluster A's feature direction; g*h must recover
  // that direction while g-only blends the clusters.
  Rng rng(43);
  size_t per = 16, c = 8;
  std::vector<double> xs, fs;
  for (size_t i = 0; i < 2 * per; ++i) {
    bool in_a = i < per;
    double cx = in_a ? 0.0 : 0.1;
    xs.push_back(cx + 0.02 * rng.normal());
    xs.push_back(0.02 * rng.normal());
    xs.push_back(0.02 * rng.normal());
    for (size_t k = 0; k < c; ++k)
      fs.push_back(k == (in_a ? 0 : 1) ? 1.0 : 0.0);
  }
  Tensor x = Tensor::from({2 * per, 3}, std::move(xs));
  Tensor f = Tensor::from({2 * per, c}, std::move(fs));
  std::vector<double> zv(c, 0.0);
  zv[0] = 50.0;
  Tensor z = Tensor::from({1, c}, std::move(zv));

  Tensor h = semantic_kernel(z, f);
  Tensor delta = matmul(h, x);
  Tensor with_h = aggregate(x, f, delta, h, 16.0, false, false);
  Tensor g_only = aggregate(x, f, delta, h, 16.0, true, false);

  std::vector<double> ea(c, 0.0), eb(c, 0.0);
  ea[0] = 1.0;
  eb[1] = 1.0;
  CHECK(cosine(with_h.data(), ea) >= 0.99);
  CHECK(cosine(g_only.data(), ea) < 0.9);
  CHECK(cosine(g_only.data(), eb) < 0.9);
}

TEST_CASE("fps ablation uses input positions and runs deterministically") {
  Rng rng(47);
  SpaConfig cfg;
  cfg.s_points = 4;
  cfg.attn.channels = 4;
  SpaParams params = make_spa_params(cfg, rng);
  Tensor x = random_leaf({12, 3}, rng);
  Tensor f = random_leaf({12, 4}, rng);

  SpaTrace t1, t2;
  Tensor a = spa_ablation_fps(x, f, cfg, params.cwpa, {}, &t1);
  Tensor b = spa_ablation_fps(x, f, cfg, params.cwpa, {}, &t2);
  CHECK(max_abs_diff(a.data(), b.data()) == 0.0);

  auto anchors = fps(x, 4);
  for (size_t s = 0; s < 4; ++s)
    for (size_t k = 0; k < 3; ++k)
      CHECK(t1.delta.at(s, k) == x.at(anchors[s], k));

  Tensor learned = spa_forward(x, f, cfg, params);
  CHECK(max_abs_diff(learned.data(), a.data()) > 1e-6);
}

TEST_CASE("fps ablation with S equal to N keys on every input point") {
  Rng rng(53);
  SpaConfig cfg;
  cfg.s_points = 6;
  cfg.attn.channels = 3;
  SpaParams params = make_spa_params(cfg, rng);
  Tensor x = random_leaf({6, 3}, rng);
  Tensor f = random_leaf({6, 3}, rng);
  SpaTrace trace;
  (void)spa_ablation_fps(x, f, cfg, params.cwpa, {}, &trace);
  std::multiset<std::array<double, 3>> want, got;
  for (size_t i = 0; i < 6; ++i) {
    want.insert({x.at(i, 0), x.at(i, 1), x.at(i, 2)});
    got.insert({trace.delta.at(i, 0), trace.delta.at(i, 1),
                trace.delta.at(i, 2)});
  }
  CHECK(want == got);
}

TEST_CASE("spa config validation") {
  SpaConfig cfg;
  cfg.attn.channels = 4;
  cfg.gamma = 0.0;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg.gamma = 1.0;
  cfg.s_points = 0;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
}
