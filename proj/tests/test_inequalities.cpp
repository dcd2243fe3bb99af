#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "jumpflow/inequalities.hpp"
#include "jumpflow/rng.hpp"

using jumpflow::dsl::Expr;
using jumpflow::levy::LevyMeasure;
namespace ineq = jumpflow::inequalities;

namespace {

ineq::EmiInstance small_emi() {
  ineq::EmiInstance inst;
  inst.f = Expr::parse("0.05*y1", 0, 1);
  inst.G = LevyMeasure::finite_activity_uniform(5.0, 1.0);
  inst.A = 0.1;
  inst.delta = 0.5;
  inst.rho = 0.02;
  inst.T = 1.0;
  inst.cut = 1e-3;
  inst.dt = 1e-2;
  return inst;
}

}  // namespace

TEST_CASE("exponential tail bound evaluates to its closed form") {
  auto inst = small_emi();
  inst.A = 0.1;
  inst.delta = 3.0;
  inst.rho = 1.0;
  CHECK(inst.bound() ==
        Catch::Approx(2.0 * std::exp(-9.0 / (2.0 * (0.3 + 1.0)))));
  inst.delta = 0.5;
  inst.rho = 0.02;
  CHECK(inst.bound() == Catch::Approx(2.0 * std::exp(-0.25 / 0.14)));
}

TEST_CASE("integrands that reach the uniform bound are rejected") {
  auto inst = small_emi();
  inst.A = 0.04;  // |f| reaches 0.05 at y = 1
  CHECK_THROWS_AS(inst.check_dominated(), std::invalid_argument);
  CHECK_THROWS_AS(ineq::emi_experiment(inst, 100, 1), std::invalid_argument);
  inst.A = 0.0500001;
  CHECK_NOTHROW(inst.check_dominated());
}

TEST_CASE("the quadratic bracket of the truncated martingale is deterministic") {
  auto inst = small_emi();
  auto res = ineq::emi_experiment(inst, 200, 5);
  // T * ∫_{|y|>cut} (0.05 y)^2 · 2.5 dy over both signs
  const double cut3 = std::pow(inst.cut, 3.0);
  const double expect = 2.0 * 2.5 * 0.0025 * (1.0 - cut3) / 3.0;
  CHECK(res.bracket == Catch::Approx(expect).epsilon(1e-9));
  CHECK(res.bound == Catch::Approx(inst.bound()));
}

TEST_CASE("empirical exceedance stays below the bound") {
  auto inst = small_emi();
  auto res = ineq::emi_experiment(inst, 20000, 42);
  CHECK(res.empirical.n == 20000);
  CHECK(res.empirical.value <= res.bound + 3.0 * res.empirical.se);
  // with delta = 0.5 and |f| <= 0.05 the sup essentially never clears it
  CHECK(res.empirical.value < 0.01);
}

TEST_CASE("a tighter threshold cannot make the event more likely") {
  auto lo = small_emi();
  lo.delta = 0.08;
  auto hi = lo;
  hi.delta = 0.15;
  auto rl = ineq::emi_experiment(lo, 20000, 9);
  auto rh = ineq::emi_experiment(hi, 20000, 9);
  CHECK(rl.empirical.value >= rh.empirical.value);
  CHECK(rl.empirical.value <= rl.bound + 3.0 * rl.empirical.se);
  CHECK(rh.empirical.value <= rh.bound + 3.0 * rh.empirical.se);
}

TEST_CASE("norris instances validate their exponent web") {
  auto in = ineq::pure_diffusion_instance();
  CHECK_NOTHROW(in.validate());
  CHECK(in.z() == Catch::Approx(3.6));

  auto bad = in;
  bad.kappa = 0.5;  // below the mark dimension
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = in;
  bad.q = 8.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = in;
  bad.r = 0.05;
  bad.v = 0.02;  // 18r + 9v = 1.08 >= q - 8
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = in;
  bad.w = 2.0;  // delta/w falls below the floor
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  CHECK_THROWS_AS(ineq::norris_instance_by_name("nope"), std::invalid_argument);
  CHECK_NOTHROW(ineq::norris_instance_by_name("small_jump").validate());
}

TEST_CASE("norris joint-event probability decays as epsilon shrinks") {
  auto in = ineq::pure_diffusion_instance();
  std::vector<double> grid{0.5, 0.3};
  auto pts = ineq::norris_experiment(in, grid, 2000, 7);
  REQUIRE(pts.size() == 2);
  CHECK(pts[0].eps == 0.5);
  CHECK(pts[0].lhs_prob.value > pts[1].lhs_prob.value);
  // pinned against a separate long run: p(0.5) ~ 0.40, p(0.3) ~ 0.09
  CHECK(pts[0].lhs_prob.value == Catch::Approx(0.404).margin(0.05));
  CHECK(pts[1].lhs_prob.value == Catch::Approx(0.087).margin(0.03));

  std::vector<double> bad{1.5};
  CHECK_THROWS_AS(ineq::norris_experiment(in, bad, 100, 1),
                  std::invalid_argument);
}

TEST_CASE("norris small-jump instance runs and decays") {
  auto in = ineq::small_jump_instance();
  std::vector<double> grid{0.5, 0.2};
  auto pts = ineq::norris_experiment(in, grid, 500, 3);
  REQUIRE(pts.size() == 2);
  CHECK(pts[0].lhs_prob.value >= pts[1].lhs_prob.value);
  CHECK(pts[1].lhs_prob.value <= 0.2);
}

TEST_CASE("longest-interval law: closed-form values") {
  using ineq::longest_interval_cdf;
  // m=1: two spacings on [0,1]; max uniform on [1/2, 1]: F(x) = 2x - 1
  CHECK(longest_interval_cdf(1, 1.0, 0.75).standard_formula ==
        Catch::Approx(0.5).margin(1e-12));
  CHECK(longest_interval_cdf(1, 1.0, 0.5).standard_formula ==
        Catch::Approx(0.0).margin(1e-12));
  // m=5 reference point
  CHECK(longest_interval_cdf(5, 1.0, 0.5).standard_formula ==
        Catch::Approx(0.8125).margin(1e-12));
  // the alternate series as written is NOT a distribution function; pin its
  // value at the same point so any silent change is caught
  CHECK(longest_interval_cdf(5, 1.0, 0.5).alternate_series ==
        Catch::Approx(-5.0).margin(1e-12));
  // boundary behavior of the standard form
  CHECK(longest_interval_cdf(5, 1.0, 1.0).standard_formula ==
        Catch::Approx(1.0).margin(1e-12));
  CHECK(longest_interval_cdf(5, 1.0, 1.0 / 6.0).standard_formula ==
        Catch::Approx(0.0).margin(1e-10));
  CHECK(longest_interval_cdf(5, 1.0, 0.0).standard_formula ==
        Catch::Approx(0.0).margin(1e-12));
  // scale equivariance: F(x; t0) = F(x/t0; 1)
  CHECK(longest_interval_cdf(5, 2.0, 1.0).standard_formula ==
        Catch::Approx(longest_interval_cdf(5, 1.0, 0.5).standard_formula));
  CHECK_THROWS_AS(longest_interval_cdf(0, 1.0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(longest_interval_cdf(5, 1.0, 2.0), std::invalid_argument);
}

TEST_CASE("longest-interval law: monotone in x and matches simulation") {
  using ineq::longest_interval_cdf;
  const int m = 4;
  double prev = 0.0;
  for (int k = 1; k <= 20; ++k) {
    const double x = k / 20.0;
    const double F = longest_interval_cdf(m, 1.0, x).standard_formula;
    CHECK(F >= prev - 1e-12);
    CHECK(F >= 0.0);
    CHECK(F <= 1.0 + 1e-12);
    prev = F;
  }

  // direct Monte Carlo of the maximal spacing among m uniform points
  jumpflow::rng::Stream rs(123, 0);
  const int reps = 20000;
  std::vector<double> pts(m);
  const double x_probe = 0.5;
  int hits = 0;
  for (int r = 0; r < reps; ++r) {
    for (auto& p : pts) p = rs.uniform();
    std::sort(pts.begin(), pts.end());
    double longest = pts[0];
    for (int i = 1; i < m; ++i) longest = std::max(longest, pts[i] - pts[i - 1]);
    longest = std::max(longest, 1.0 - pts[m - 1]);
    if (longest < x_probe) ++hits;
  }
  const double emp = static_cast<double>(hits) / reps;
  const double ref = longest_interval_cdf(m, 1.0, x_probe).standard_formula;
  CHECK(std::abs(emp - ref) < 4.0 * std::sqrt(ref * (1.0 - ref) / reps));
}
