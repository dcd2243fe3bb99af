#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "jumpflow/density.hpp"
#include "jumpflow/rng.hpp"

namespace density = jumpflow::density;
using density::DensityEstimate;
using density::GridSpec;
using jumpflow::rng::Stream;

namespace {

double normal_pdf(double x, double mu, double sd) {
  const double z = (x - mu) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

std::vector<double> normal_samples(std::size_t n, std::uint64_t seed) {
  Stream rs(seed, 0);
  std::vector<double> s(n);
  for (auto& v : s) v = rs.gaussian();
  return s;
}

}  // namespace

TEST_CASE("kde input validation") {
  GridSpec g;
  g.lo = {-1.0};
  g.hi = {1.0};
  g.points = {11};
  std::vector<double> few(50, 0.5);
  CHECK_THROWS_AS(density::kde(few, 1, g), std::invalid_argument);

  std::vector<double> flat(200, 0.25);  // zero variance: no usable bandwidth
  CHECK_THROWS_AS(density::kde(flat, 1, g), std::invalid_argument);

  std::vector<double> ok = normal_samples(200, 1);
  std::vector<double> bad_bw{-0.1};
  CHECK_THROWS_AS(density::kde(ok, 1, g, bad_bw), std::invalid_argument);
  CHECK_THROWS_AS(density::kde(ok, 4, g), std::invalid_argument);  // e > 3
  GridSpec mism;
  mism.lo = {-1.0, -1.0};
  mism.hi = {1.0, 1.0};
  mism.points = {5, 5};
  CHECK_THROWS_AS(density::kde(ok, 1, mism), std::invalid_argument);
}

TEST_CASE("kde of a large normal sample tracks the true density") {
  auto s = normal_samples(100000, 7);
  auto grid = density::default_grid(s, 1, 401);
  auto est = density::kde(s, 1, grid);
  CHECK(est.n_samples == 100000);
  REQUIRE(est.values.size() == 401);

  double maxdev = 0.0;
  for (int i = 0; i < grid.points[0]; ++i) {
    const double x = grid.coord(0, i);
    maxdev = std::max(maxdev, std::abs(est.values[static_cast<std::size_t>(i)] -
                                       normal_pdf(x, 0.0, 1.0)));
  }
  CHECK(maxdev <= 0.01);
  CHECK(est.integral() >= 0.95);
  CHECK(est.integral() <= 1.02);
}

TEST_CASE("kde is equivariant under translation") {
  auto s = normal_samples(500, 11);
  const double c = 3.25;
  auto shifted = s;
  for (auto& v : shifted) v += c;

  GridSpec g;
  g.lo = {-4.0};
  g.hi = {4.0};
  g.points = {101};
  GridSpec gc = g;
  gc.lo = {-4.0 + c};
  gc.hi = {4.0 + c};

  std::vector<double> bw{0.3};
  auto a = density::kde(s, 1, g, bw);
  auto b = density::kde(shifted, 1, gc, bw);
  for (std::size_t i = 0; i < a.values.size(); ++i)
    CHECK(b.values[i] == Catch::Approx(a.values[i]).epsilon(1e-10).margin(1e-12));
}

TEST_CASE("kde does not depend on sample order") {
  auto s = normal_samples(400, 13);
  auto shuffled = s;
  std::mt19937_64 g(5);
  std::shuffle(shuffled.begin(), shuffled.end(), g);

  GridSpec grid;
  grid.lo = {-3.0};
  grid.hi = {3.0};
  grid.points = {61};
  std::vector<double> bw{0.4};
  auto a = density::kde(s, 1, grid, bw);
  auto b = density::kde(shuffled, 1, grid, bw);
  for (std::size_t i = 0; i < a.values.size(); ++i)
    CHECK(b.values[i] == Catch::Approx(a.values[i]).epsilon(1e-12));
}

TEST_CASE("kde in two dimensions integrates to one") {
  Stream rs(3, 0);
  const std::size_t n = 5000;
  std::vector<double> s(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    s[2 * i] = rs.gaussian();
    s[2 * i + 1] = 0.5 * rs.gaussian();
  }
  auto grid = density::default_grid(s, 2, 81);
  auto est = density::kde(s, 2, grid);
  CHECK(est.integral() == Catch::Approx(1.0).margin(0.05));
  CHECK(est.values.size() == 81u * 81u);
}

TEST_CASE("derivative proxies on an exact normal density") {
  GridSpec g;
  g.lo = {-6.0};
  g.hi = {6.0};
  g.points = {401};
  DensityEstimate est;
  est.grid = g;
  est.values.resize(401);
  for (int i = 0; i < 401; ++i)
    est.values[static_cast<std::size_t>(i)] = normal_pdf(g.coord(0, i), 0.0, 1.0);
  est.n_samples = 1;

  // max |phi'| / max phi = exp(-1/2); max |phi''| / max phi = 1
  CHECK(density::smoothness_proxy(est, 1) ==
        Catch::Approx(std::exp(-0.5)).epsilon(0.02));
  CHECK(density::smoothness_proxy(est, 2) == Catch::Approx(1.0).epsilon(0.02));

  // a constant density has no variation at all
  DensityEstimate flat = est;
  std::fill(flat.values.begin(), flat.values.end(), 0.7);
  CHECK(density::smoothness_proxy(flat, 1) == 0.0);
  CHECK(density::smoothness_proxy(flat, 2) == 0.0);

  CHECK_THROWS_AS(density::smoothness_proxy(est, 3), std::invalid_argument);
  DensityEstimate tiny;
  tiny.grid.lo = {0.0};
  tiny.grid.hi = {1.0};
  tiny.grid.points = {4};
  tiny.values.assign(4, 1.0);
  CHECK_THROWS_AS(density::smoothness_proxy(tiny, 1), std::invalid_argument);
}

TEST_CASE("simulated endpoint density converges to the exact gaussian law") {
  jumpflow::engine::SimConfig cfg;
  cfg.T = 1.0;
  cfg.dt = 1e-2;
  const double a = -1.0, sigma = 1.0, x0 = 0.0;

  auto l1_at = [&](std::size_t n, std::uint64_t seed) {
    cfg.seed = seed;
    auto rep = density::gaussian_baseline_report(a, sigma, x0, cfg, n);
    CHECK(rep.mean == Catch::Approx(0.0).margin(1e-12));
    CHECK(rep.sd == Catch::Approx(std::sqrt((1.0 - std::exp(-2.0)) / 2.0)));
    return rep.l1_error;
  };

  const double coarse = 0.5 * (l1_at(10000, 1) + l1_at(10000, 2));
  const double fine = 0.5 * (l1_at(100000, 1) + l1_at(100000, 2));
  CHECK(fine < coarse);
  CHECK(fine < 0.05);  // includes the O(dt) discretization bias at dt = 1e-2
}
