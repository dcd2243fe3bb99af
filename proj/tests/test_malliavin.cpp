#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "jumpflow/engine.hpp"
#include "jumpflow/malliavin.hpp"
#include "jumpflow/models.hpp"

using jumpflow::engine::Path;
using jumpflow::engine::SimConfig;
using jumpflow::rng::Stream;
namespace engine = jumpflow::engine;
namespace malliavin = jumpflow::malliavin;

namespace {

// Deterministic hypoelliptic fixture: V1 = e1 and Z = (0, x1) give
// v_s = J_inv(s) V(x_s) = (1, -s), so the time-integrated outer product is
// C_T = [[T, -T^2/2], [-T^2/2, T^3/3]] independent of the noise.
jumpflow::engine::FieldSystem classic() {
  jumpflow::engine::FieldSystem sys;
  sys.e = 2;
  sys.d = 1;
  sys.Z = {jumpflow::dsl::Expr::parse("0", 2, 0),
           jumpflow::dsl::Expr::parse("x1", 2, 0)};
  sys.V = {{jumpflow::dsl::Expr::parse("1", 2, 0),
            jumpflow::dsl::Expr::parse("0", 2, 0)}};
  return sys;
}

double exact_lambda_min() {
  // smallest eigenvalue of [[1, -1/2], [-1/2, 1/3]]
  const double tr = 1.0 + 1.0 / 3.0;
  const double det = 1.0 / 3.0 - 0.25;
  return 0.5 * (tr - std::sqrt(tr * tr - 4.0 * det));
}

}  // namespace

TEST_CASE("reduced covariance of the deterministic fixture") {
  auto sys = classic();
  SimConfig cfg;
  cfg.T = 1.0;
  cfg.dt = 1e-4;
  std::vector<double> x0{0.0, 0.0};
  Stream rs(1, 0);
  Path p = engine::simulate_path(sys, x0, cfg, rs);
  auto cov = malliavin::reduced_covariance(p, sys.V);
  CHECK(cov.t == Catch::Approx(1.0));
  CHECK(cov.C[0] == Catch::Approx(1.0).epsilon(1e-2));
  CHECK(cov.C[1] == Catch::Approx(-0.5).epsilon(1e-2));
  CHECK(cov.C[2] == cov.C[1]);
  CHECK(cov.C[3] == Catch::Approx(1.0 / 3.0).epsilon(1e-2));
  CHECK(cov.lambda_min == Catch::Approx(exact_lambda_min()).epsilon(1e-2));

  // The matrix is noise-independent: different seeds agree to the
  // integration error, and at fixed dt the spread is far tighter still.
  Stream rs2(999, 5);
  Path p2 = engine::simulate_path(sys, x0, cfg, rs2);
  auto cov2 = malliavin::reduced_covariance(p2, sys.V);
  for (int c = 0; c < 4; ++c)
    CHECK(std::abs(cov.C[c] - cov2.C[c]) < 1e-6);
  CHECK(std::abs(cov.lambda_min - cov2.lambda_min) < 1e-6);
}

TEST_CASE("covariance scales quadratically in the diffusion coefficient") {
  // V -> s*V multiplies C by s^2 exactly, path by path.
  auto sys = classic();
  auto sys2 = classic();
  const double s = 3.0;
  sys2.V = {{jumpflow::dsl::Expr::parse("3", 2, 0),
             jumpflow::dsl::Expr::parse("0", 2, 0)}};
  SimConfig cfg;
  cfg.T = 1.0;
  cfg.dt = 1e-3;
  std::vector<double> x0{0.0, 0.0};
  Stream rs(4, 2), rs2(4, 2);
  auto c1 = malliavin::reduced_covariance(engine::simulate_path(sys, x0, cfg, rs),
                                          sys.V);
  auto c2 = malliavin::reduced_covariance(engine::simulate_path(sys2, x0, cfg, rs2),
                                          sys2.V);
  // same drift, same draws; only the diffusion read-out differs...
  // (x2 differs between the two runs because V scales the state too — use
  //  the deterministic structure instead: both runs have v = (1,-s)·scale)
  for (int c = 0; c < 4; ++c)
    CHECK(c2.C[c] == Catch::Approx(s * s * c1.C[c]).epsilon(1e-9));
  CHECK(c2.lambda_min == Catch::Approx(s * s * c1.lambda_min).epsilon(1e-9));
}

TEST_CASE("tail probabilities are monotone and the fit reports a slope") {
  auto m = jumpflow::models::heisenberg();
  std::vector<double> x0{0.1, 0.0};
  SimConfig cfg;
  cfg.T = 1.0;
  cfg.dt = 1e-2;
  std::vector<double> grid{1e-1, 1e-2, 1e-3, 1e-4};
  auto est = malliavin::tail_probability(m.sys, x0, cfg, grid, 2000);
  REQUIRE(est.probs.size() == 4);
  for (std::size_t i = 0; i + 1 < est.probs.size(); ++i)
    CHECK(est.probs[i].value + 1e-12 >= est.probs[i + 1].value);
  for (const auto& pr : est.probs) {
    CHECK(pr.n == 2000);
    CHECK(pr.value >= 0.0);
    CHECK(pr.value <= 1.0);
  }
  REQUIRE(est.fitted_slope.has_value());
  CHECK(*est.fitted_slope > 0.0);
}

TEST_CASE("tail estimation validates its inputs") {
  auto m = jumpflow::models::heisenberg();
  SimConfig cfg;
  cfg.T = 0.5;
  cfg.dt = 1e-2;
  std::vector<double> bad_grid{1e-3, 1e-2};  // increasing
  CHECK_THROWS_AS(
      malliavin::tail_probability(m.sys, m.x0, cfg, bad_grid, 1000),
      std::invalid_argument);
  std::vector<double> grid{1e-2, 1e-3};
  CHECK_THROWS_AS(malliavin::tail_probability(m.sys, m.x0, cfg, grid, 50),
                  std::invalid_argument);
}

TEST_CASE("floor-truncated inverse moments") {
  // Deterministic fixture: Λ is a known constant, so E[max(Λ,floor)^{-p}]
  // is exact and the standard error collapses.
  auto sys = classic();
  SimConfig cfg;
  cfg.T = 1.0;
  cfg.dt = 1e-2;
  std::vector<double> x0{0.0, 0.0};
  auto est = malliavin::inverse_moment(sys, x0, cfg, 2.0, 200, 1e-12);
  const double lam = exact_lambda_min();
  CHECK(est.value == Catch::Approx(std::pow(lam, -2.0)).epsilon(2e-2));
  CHECK(est.se < 1e-6);

  // A floor above Λ pins the estimate at floor^{-p} exactly.
  auto clipped = malliavin::inverse_moment(sys, x0, cfg, 2.0, 200, 0.5);
  CHECK(clipped.value == Catch::Approx(4.0));
}
