#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "jumpflow/fields.hpp"
#include "jumpflow/models.hpp"

using jumpflow::dsl::Expr;
using jumpflow::engine::FieldSystem;
using jumpflow::levy::LevyMeasure;
namespace fields = jumpflow::fields;

namespace {

// [A,B](x) = DB(x)A(x) - DA(x)B(x), assembled by finite differences.
std::vector<double> fd_bracket(std::span<const Expr> A, std::span<const Expr> B,
                               std::span<const double> x) {
  const std::size_t e = A.size();
  const double h = 1e-6;
  std::vector<double> y, out(e, 0.0);
  std::vector<double> ax(e), bx(e);
  for (std::size_t i = 0; i < e; ++i) {
    ax[i] = A[i].eval(x, y, 0.0);
    bx[i] = B[i].eval(x, y, 0.0);
  }
  std::vector<double> xp(x.begin(), x.end()), xm(x.begin(), x.end());
  for (std::size_t j = 0; j < e; ++j) {
    xp[j] += h;
    xm[j] -= h;
    for (std::size_t i = 0; i < e; ++i) {
      double dB = (B[i].eval(xp, y, 0.0) - B[i].eval(xm, y, 0.0)) / (2 * h);
      double dA = (A[i].eval(xp, y, 0.0) - A[i].eval(xm, y, 0.0)) / (2 * h);
      out[i] += dB * ax[j] - dA * bx[j];
    }
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return out;
}

FieldSystem classic_heisenberg() {
  FieldSystem sys;
  sys.e = 2;
  sys.d = 1;
  sys.Z = {Expr::parse("0", 2, 0), Expr::parse("x1", 2, 0)};
  sys.V = {{Expr::parse("1", 2, 0), Expr::parse("0", 2, 0)}};
  return sys;
}

}  // namespace

TEST_CASE("lie bracket of known pairs") {
  std::vector<double> y;
  {
    // [e1, (0, x1)] = (0, 1)
    std::vector<Expr> A{Expr::parse("1", 2, 0), Expr::parse("0", 2, 0)};
    std::vector<Expr> B{Expr::parse("0", 2, 0), Expr::parse("x1", 2, 0)};
    auto br = fields::lie_bracket(A, B);
    std::vector<double> x{3.0, -1.0};
    CHECK(br[0].eval(x, y, 0.0) == 0.0);
    CHECK(br[1].eval(x, y, 0.0) == 1.0);
  }
  {
    // brackets of constant fields vanish identically
    std::vector<Expr> A{Expr::constant(2.0), Expr::constant(1.0)};
    std::vector<Expr> B{Expr::constant(-1.0), Expr::constant(4.0)};
    auto br = fields::lie_bracket(A, B);
    CHECK(br[0].is_zero());
    CHECK(br[1].is_zero());
  }
  CHECK_THROWS_AS(
      fields::lie_bracket(std::vector<Expr>{Expr::constant(1.0)},
                          std::vector<Expr>{Expr::constant(1.0),
                                            Expr::constant(0.0)}),
      std::invalid_argument);
}

TEST_CASE("symbolic brackets match finite differences on random polynomials") {
  std::mt19937_64 g(314);
  std::uniform_real_distribution<double> c(-1.5, 1.5), u(-0.8, 0.8);
  auto poly = [&]() {
    // quadratic polynomial in (x1, x2) with random coefficients
    char buf[160];
    std::snprintf(buf, sizeof buf, "%.6f + %.6f*x1 + %.6f*x2 + %.6f*x1*x2 + %.6f*x1*x1",
                  c(g), c(g), c(g), c(g), c(g));
    return Expr::parse(buf, 2, 0);
  };
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<Expr> A{poly(), poly()}, B{poly(), poly()};
    auto br = fields::lie_bracket(A, B);
    for (int pt = 0; pt < 10; ++pt) {
      std::vector<double> x{u(g), u(g)}, y;
      auto ref = fd_bracket(A, B, x);
      for (int i = 0; i < 2; ++i) {
        double got = br[i].eval(x, y, 0.0);
        CHECK(std::abs(got - ref[i]) <= 1e-5 * std::max(1.0, std::abs(got)));
      }
    }
  }
}

TEST_CASE("stratonovich-corrected drift") {
  // Z = (0, x1), V = {(1,0)}: DV V = 0 so V0 = Z.
  auto sys = classic_heisenberg();
  auto v0 = fields::compute_v0(sys.Z, sys.V);
  std::vector<double> x{5.0, 2.0}, y;
  CHECK(v0[0].eval(x, y, 0.0) == 0.0);
  CHECK(v0[1].eval(x, y, 0.0) == 5.0);

  // V = {(x1, 0)}: DV V = (x1, 0), so V0 = Z - (x1/2, 0).
  std::vector<std::vector<Expr>> V{{Expr::parse("x1", 2, 0), Expr::parse("0", 2, 0)}};
  auto v0b = fields::compute_v0(sys.Z, V);
  CHECK(v0b[0].eval(x, y, 0.0) == Catch::Approx(-2.5));
  CHECK(v0b[1].eval(x, y, 0.0) == 5.0);
}

TEST_CASE("hierarchy on the classic hypoelliptic example") {
  auto sys = classic_heisenberg();
  auto h = fields::bracket_hierarchy(sys, 4);
  // level 0: V1; level 1 adds [V0, V1] which spans the missing direction
  REQUIRE(h.members.size() >= 2);
  CHECK(h.first_level[0] == 0);

  double blo[2] = {-1.0, -1.0}, bhi[2] = {1.0, 1.0};
  auto rep = fields::uh_check_hierarchy(h, nullptr, std::span<const double>(blo, 2),
                                        std::span<const double>(bhi, 2), 32);
  REQUIRE(rep.j0.has_value());
  CHECK(*rep.j0 == 1);
  // V1 = e1 and [V0,V1] = -e2 give an orthonormal pair: Gram = I everywhere.
  CHECK(rep.c_est == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("an orthonormal frame is elliptic (level zero)") {
  FieldSystem sys;
  sys.e = 2;
  sys.d = 2;
  sys.Z = {Expr::parse("0", 2, 0), Expr::parse("0", 2, 0)};
  sys.V = {{Expr::parse("1", 2, 0), Expr::parse("0", 2, 0)},
           {Expr::parse("0", 2, 0), Expr::parse("1", 2, 0)}};
  double blo[2] = {-2.0, -2.0}, bhi[2] = {2.0, 2.0};
  auto rep = fields::uh_check(sys, 3, std::span<const double>(blo, 2),
                              std::span<const double>(bhi, 2), 16);
  REQUIRE(rep.j0.has_value());
  CHECK(*rep.j0 == 0);
  CHECK(rep.c_est == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("a degenerate system never spans") {
  // One constant field, no drift rotation, no jumps: span stays 1-dimensional.
  FieldSystem sys;
  sys.e = 2;
  sys.d = 1;
  sys.Z = {Expr::parse("0", 2, 0), Expr::parse("0", 2, 0)};
  sys.V = {{Expr::parse("1", 2, 0), Expr::parse("0", 2, 0)}};
  double blo[2] = {-1.0, -1.0}, bhi[2] = {1.0, 1.0};
  auto rep = fields::uh_check(sys, 5, std::span<const double>(blo, 2),
                              std::span<const double>(bhi, 2), 16);
  CHECK_FALSE(rep.j0.has_value());
  for (double lm : rep.level_min) CHECK(lm < 1e-10);
}

TEST_CASE("duplicate brackets are pruned from the hierarchy") {
  // Two copies of the same diffusion field must not inflate the member list.
  FieldSystem sys;
  sys.e = 2;
  sys.d = 2;
  sys.Z = {Expr::parse("0", 2, 0), Expr::parse("x1", 2, 0)};
  sys.V = {{Expr::parse("1", 2, 0), Expr::parse("0", 2, 0)},
           {Expr::parse("1", 2, 0), Expr::parse("0", 2, 0)}};
  auto h = fields::bracket_hierarchy(sys, 3);
  auto single = classic_heisenberg();
  auto hs = fields::bracket_hierarchy(single, 3);
  CHECK(h.members.size() == hs.members.size());
}

TEST_CASE("jump-corrected hierarchy members carry mark kernels") {
  auto m = jumpflow::models::by_name("tanh_jump", 1.5);
  auto h = fields::bracket_hierarchy(m.sys, 3);
  bool any_kernel = false;
  for (const auto& f : h.members)
    if (!f.kernels.empty()) any_kernel = true;
  CHECK(any_kernel);
}

TEST_CASE("quantitative bracket-vs-tail comparison") {
  {
    auto r = fields::bracket_condition_check(1, 1.5, 1, 0.5, 0.1, 0.1);
    CHECK(r.lhs == Catch::Approx(1.0));
    CHECK(r.rhs == Catch::Approx(11.925));
    CHECK_FALSE(r.holds);
  }
  {
    // kappa at the mark dimension: the tail side collapses to zero.
    for (int j0 = 0; j0 <= 10; ++j0) {
      auto r = fields::bracket_condition_check(j0, 1.0, 1, 0.5, 0.1, 0.1);
      CHECK(r.rhs == 0.0);
      CHECK(r.holds);
    }
  }
  {
    // elliptic case with a barely-supercritical tail
    auto r = fields::bracket_condition_check(0, 1.001, 1, 2.0, 0.1, 0.1);
    CHECK(r.lhs == 16.0);
    CHECK(r.holds);
  }
  CHECK_THROWS_AS(fields::bracket_condition_check(-1, 1.5, 1, 0.5, 0.1, 0.1),
                  std::invalid_argument);
  CHECK_THROWS_AS(fields::bracket_condition_check(1, 0.5, 1, 0.5, 0.1, 0.1),
                  std::invalid_argument);
  CHECK_THROWS_AS(fields::bracket_condition_check(1, 1.5, 1, 0.0, 0.1, 0.1),
                  std::invalid_argument);
  CHECK_THROWS_AS(fields::bracket_condition_check(1, 1.5, 1, 0.5, 0.4, 0.2),
                  std::invalid_argument);  // 18r + 9v = 9 >= 8
}
