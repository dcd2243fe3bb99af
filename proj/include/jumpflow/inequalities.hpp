#pragma once

// Monte Carlo harnesses for two probability inequalities on compensated jump
// integrals, plus the longest-interval distribution of uniform spacings.
//
//  * Exponential martingale inequality: for M_t = ∫∫ f(s,y)(μ−ν)(dy,ds) with
//    |f| <= A, P(sup|M| >= δ, <M>_T < ρ) <= 2 exp(−δ²/(2(Aδ+ρ))). The
//    harness simulates M with jump truncation and checks the empirical
//    frequency against the bound.
//  * Norris-type decay: the coupled pair (a, Y) driven by shared Brownian
//    noise and small jumps confined to |y| < ε^z; the probability of
//    {∫Y²dt < ε^{qw}} ∩ {∫(|a − ∫fG|² + |u|²)dt >= lε^w} must decay as ε
//    shrinks. The harness reports the empirical probabilities per ε.
//
// Coefficients are DSL expressions over time, the mark, and the simulated
// pair itself, so instances are concrete and reproducible.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "jumpflow/engine.hpp"
#include "jumpflow/expr.hpp"
#include "jumpflow/levy.hpp"
#include "jumpflow/linalg.hpp"
#include "jumpflow/rng.hpp"

namespace jumpflow::inequalities {

struct EmiInstance {
  dsl::Expr f;  // integrand over (t, y): parse with state_dim 0, mark_dim 1
  levy::LevyMeasure G;
  double A = 1.0;      // uniform bound on |f| (must strictly dominate)
  double delta = 1.0;  // sup-threshold on |M|
  double rho = 1.0;    // bracket threshold
  double T = 1.0;
  double cut = 1e-3;  // simulation truncation
  double dt = 1e-3;   // base grid for the drift and bracket accumulation

  double bound() const {
    return 2.0 * std::exp(-delta * delta / (2.0 * (A * delta + rho)));
  }

  // |f| < A sampled on a dense (t, y) lattice over [0,T] x support.
  void check_dominated() const {
    const int nt = 101, ny = 201;
    for (int it = 0; it < nt; ++it) {
      const double t = T * it / (nt - 1);
      for (int iy = 0; iy < ny; ++iy) {
        const double mag = G.lo + (G.hi - G.lo) * (iy + 1) / ny;
        for (const double y : {mag, G.symmetric ? -mag : mag}) {
          const double ys[1] = {y};
          const double v =
              std::fabs(f.eval({}, std::span<const double>(ys, 1), t));
          if (!(v < A))
            throw std::invalid_argument(
                "emi: |f| reaches the bound A at (t,y)=(" + std::to_string(t) +
                "," + std::to_string(y) + ")");
        }
      }
    }
  }
};

struct EmiResult {
  engine::McEstimate empirical;
  double bound = 0.0;
  double bracket = 0.0;  // deterministic <M>_T of the truncated integrand
};

// Empirical frequency of {sup_s |M_s| >= δ} ∩ {<M>_T < ρ} against the
// closed-form bound. The predictable bracket of a deterministic integrand is
// deterministic, so it is accumulated once on the base grid.
inline EmiResult emi_experiment(const EmiInstance& inst, std::size_t n_paths,
                                std::uint64_t master_seed, int n_threads = 0) {
  inst.check_dominated();
  if (!(inst.dt > 0.0) || !(inst.T >= inst.dt) || !(inst.cut > 0.0))
    throw std::invalid_argument("emi: bad dt/T/cut");

  const auto base = engine::detail::build_base_grid(inst.T, inst.dt);
  const bool time_dep = inst.f.uses_time();

  // Per-step tail integrals of f and f² (constant unless f depends on t).
  auto tail_pair = [&](double t) {
    const double drift = levy::band_integral(
        inst.G,
        [&](double y) {
          const double ys[1] = {y};
          return inst.f.eval({}, std::span<const double>(ys, 1), t);
        },
        inst.cut, inst.G.hi, 1e-9);
    const double q2 = levy::band_integral(
        inst.G,
        [&](double y) {
          const double ys[1] = {y};
          const double v = inst.f.eval({}, std::span<const double>(ys, 1), t);
          return v * v;
        },
        inst.cut, inst.G.hi, 1e-9);
    return std::pair<double, double>(drift, q2);
  };

  std::vector<double> drifts(base.size() - 1), q2s(base.size() - 1);
  if (time_dep) {
    for (std::size_t k = 0; k + 1 < base.size(); ++k) {
      const auto [dr, q2] = tail_pair(base[k]);
      drifts[k] = dr;
      q2s[k] = q2;
    }
  } else {
    const auto [dr, q2] = tail_pair(0.0);
    std::fill(drifts.begin(), drifts.end(), dr);
    std::fill(q2s.begin(), q2s.end(), q2);
  }
  double bracket = 0.0;
  for (std::size_t k = 0; k + 1 < base.size(); ++k)
    bracket += q2s[k] * (base[k + 1] - base[k]);

  std::vector<std::uint8_t> hit(n_paths, 0);
  engine::run_paths(master_seed, n_paths, n_threads, [&](std::size_t i,
                                                         rng::Stream& rs) {
    const auto jumps = levy::sample_jumps(inst.G, inst.cut, inst.T, rs);
    double M = 0.0, sup = 0.0;
    std::size_t ji = 0;
    for (std::size_t k = 0; k + 1 < base.size(); ++k) {
      // events inside (base[k], base[k+1]] in time order, drift in between
      double tcur = base[k];
      while (ji < jumps.size() && jumps[ji].time <= base[k + 1]) {
        M -= drifts[k] * (jumps[ji].time - tcur);
        const double ys[1] = {jumps[ji].mark};
        M += inst.f.eval({}, std::span<const double>(ys, 1), jumps[ji].time);
        sup = std::max(sup, std::fabs(M));
        tcur = jumps[ji].time;
        ++ji;
      }
      M -= drifts[k] * (base[k + 1] - tcur);
      sup = std::max(sup, std::fabs(M));
    }
    hit[i] = (sup >= inst.delta && bracket < inst.rho) ? 1 : 0;
  });

  EmiResult res;
  std::size_t hits = 0;
  for (const auto h : hit) hits += h;
  res.empirical = engine::wilson(hits, n_paths, master_seed);
  res.bound = inst.bound();
  res.bracket = bracket;
  return res;
}

struct NorrisInstance {
  int d = 1;                     // Brownian dimension
  dsl::Expr beta;                // over (t, x) with x = (a, Y)
  std::vector<dsl::Expr> gamma;  // d components, over (t, x)
  std::vector<dsl::Expr> u;      // d components, over (t, x)
  dsl::Expr zeta;                // over (t, y, x)
  dsl::Expr f;                   // over (t, y, x)
  levy::LevyMeasure G;
  double a0_init = 0.0;  // initial value of a (the lemma's first alpha)
  double y0_init = 0.0;
  double t0 = 1.0;
  double kappa = 1.5;
  int n = 1;
  double alpha_holder = 0.5;  // Hoelder exponent (the lemma's second alpha)
  double delta = 1.2;
  double q = 9.0;
  double r = 0.02;
  double v = 0.02;
  double w = 0.25;
  double l = 1.0;
  double dt = 1e-3;
  double cut = 1e-3;  // truncation inside the shrinking jump window

  // z is always derived, never stored: z = 3δ/(κ − n + α).
  double z() const { return 3.0 * delta / (kappa - n + alpha_holder); }

  void validate() const {
    if (static_cast<int>(gamma.size()) != d || static_cast<int>(u.size()) != d)
      throw std::invalid_argument("norris: gamma/u must have d components");
    if (!(kappa >= n) || !(alpha_holder > 0.0))
      throw std::invalid_argument("norris: need kappa >= n and alpha > 0");
    if (!(q > 8.0)) throw std::invalid_argument("norris: need q > 8");
    if (!(l > 0.0 && r > 0.0 && v > 0.0 && w > 0.0))
      throw std::invalid_argument("norris: need l, r, v, w > 0");
    if (!(18.0 * r + 9.0 * v < q - 8.0))
      throw std::invalid_argument("norris: need 18r + 9v < q - 8");
    const double lb = std::max(q / 2.0 - r + v / 2.0,
                               (kappa - n + alpha_holder) / (4.0 * alpha_holder));
    if (!(delta / w > lb))
      throw std::invalid_argument("norris: need delta/w > max(q/2-r+v/2, (kappa-n+alpha)/(4 alpha))");
    if (!(dt > 0.0) || !(t0 >= dt) || !(cut > 0.0))
      throw std::invalid_argument("norris: bad dt/t0/cut");
  }
};

struct NorrisPoint {
  double eps = 0.0;
  engine::McEstimate lhs_prob;
};

// Empirical probability of the lemma's joint event per ε. Jumps live in the
// band cut < |y| < ε^z; the event's ∫fG correction integrates the full inner
// window |y| < ε^z.
inline std::vector<NorrisPoint> norris_experiment(const NorrisInstance& inst,
                                                  std::span<const double> eps_grid,
                                                  std::size_t n_paths,
                                                  std::uint64_t master_seed,
                                                  int n_threads = 0) {
  inst.validate();
  for (const double eps : eps_grid)
    if (!(eps > 0.0 && eps < 1.0))
      throw std::invalid_argument("norris: eps grid must lie in (0,1)");

  std::vector<NorrisPoint> out;
  const auto base = engine::detail::build_base_grid(inst.t0, inst.dt);
  const double zz = inst.z();

  // Constant-coefficient fast paths: every built-in instance has ζ and f
  // free of time and state, so the three measure integrals hoist out of the
  // path loop entirely.
  const bool zeta_const = !inst.zeta.uses_time() && inst.zeta.state_mask() == 0;
  const bool f_const = !inst.f.uses_time() && inst.f.state_mask() == 0;

  for (const double eps : eps_grid) {
    const double window = std::pow(eps, zz);
    const double top = std::min(window, inst.G.hi);

    levy::LevyMeasure gwin = inst.G;  // marks restricted to (cut, top]
    gwin.hi = std::max(top, inst.G.lo);
    const bool any_jumps = gwin.hi > inst.cut;

    auto band = [&](const dsl::Expr& ex, double t, std::span<const double> x) {
      if (!any_jumps) return 0.0;
      return levy::band_integral(
          inst.G,
          [&](double y) {
            const double ys[1] = {y};
            return ex.eval(x, std::span<const double>(ys, 1), t);
          },
          inst.cut, top, 1e-9);
    };
    auto inner_f = [&](double t, std::span<const double> x) {
      if (!(top > inst.G.lo)) return 0.0;
      return levy::inner_integral(
          inst.G,
          [&](double y) {
            const double ys[1] = {y};
            return inst.f.eval(x, std::span<const double>(ys, 1), t);
          },
          top, 1e-9);
    };

    const double x00[2] = {inst.a0_init, inst.y0_init};
    const std::span<const double> x0s(x00, 2);
    const double zeta_comp0 = zeta_const ? band(inst.zeta, 0.0, x0s) : 0.0;
    const double f_comp0 = f_const ? band(inst.f, 0.0, x0s) : 0.0;
    const double f_inner0 = f_const ? inner_f(0.0, x0s) : 0.0;

    std::vector<std::uint8_t> hit(n_paths, 0);
    engine::run_paths(master_seed, n_paths, n_threads, [&](std::size_t i,
                                                           rng::Stream& rs) {
      std::vector<levy::Jump> jumps;
      if (any_jumps)
        jumps = levy::sample_jumps(gwin, inst.cut, inst.t0, rs);

      double a = inst.a0_init, Y = inst.y0_init;
      double I1 = 0.0, I2 = 0.0;
      std::size_t ji = 0;
      std::vector<double> dw(static_cast<std::size_t>(inst.d));
      for (std::size_t k = 0; k + 1 < base.size(); ++k) {
        const double t = base[k];
        const double h = base[k + 1] - t;
        const double x[2] = {a, Y};
        const std::span<const double> xs(x, 2);

        const double zc = zeta_const ? zeta_comp0 : band(inst.zeta, t, xs);
        const double fc = f_const ? f_comp0 : band(inst.f, t, xs);
        const double fi = f_const ? f_inner0 : inner_f(t, xs);

        // left-endpoint event integrals
        double u2 = 0.0;
        for (int c = 0; c < inst.d; ++c) {
          const double uc = inst.u[static_cast<std::size_t>(c)].eval(xs, {}, t);
          u2 += uc * uc;
        }
        const double acorr = a - fi;
        I1 += Y * Y * h;
        I2 += (acorr * acorr + u2) * h;

        const double sqh = std::sqrt(h);
        for (int c = 0; c < inst.d; ++c)
          dw[static_cast<std::size_t>(c)] = sqh * rs.gaussian();
        double da = (inst.beta.eval(xs, {}, t) - zc) * h;
        double dY = (a - fc) * h;
        for (int c = 0; c < inst.d; ++c) {
          da += inst.gamma[static_cast<std::size_t>(c)].eval(xs, {}, t) *
                dw[static_cast<std::size_t>(c)];
          dY += inst.u[static_cast<std::size_t>(c)].eval(xs, {}, t) *
                dw[static_cast<std::size_t>(c)];
        }
        a += da;
        Y += dY;
        while (ji < jumps.size() && jumps[ji].time <= base[k + 1]) {
          const double ys[1] = {jumps[ji].mark};
          const double xj[2] = {a, Y};
          const std::span<const double> xjs(xj, 2);
          a += inst.zeta.eval(xjs, std::span<const double>(ys, 1), jumps[ji].time);
          Y += inst.f.eval(xjs, std::span<const double>(ys, 1), jumps[ji].time);
          ++ji;
        }
      }
      const double thresh1 = std::pow(eps, inst.q * inst.w);
      const double thresh2 = inst.l * std::pow(eps, inst.w);
      hit[i] = (I1 < thresh1 && I2 >= thresh2) ? 1 : 0;
    });

    NorrisPoint pt;
    pt.eps = eps;
    std::size_t hits = 0;
    for (const auto h : hit) hits += h;
    pt.lhs_prob = engine::wilson(hits, n_paths, master_seed);
    out.push_back(pt);
  }
  return out;
}

// Named instances used by the config runner and the test suite.
//
// pure_diffusion: a ≡ 0, Y = W (u ≡ 1, no jumps). The joint event reduces to
// {∫₀¹ W² dt < ε^{2.25}} with the second half always satisfied, so the decay
// is driven entirely by the Gaussian small-ball factor.
inline NorrisInstance pure_diffusion_instance() {
  NorrisInstance in;
  in.d = 1;
  in.beta = dsl::Expr::constant(0.0);
  in.gamma = {dsl::Expr::constant(0.0)};
  in.u = {dsl::Expr::constant(1.0)};
  in.zeta = dsl::Expr::parse("0", 2, 1);
  in.f = dsl::Expr::parse("0", 2, 1);
  in.G = levy::LevyMeasure::finite_activity_uniform(0.0, 1.0);  // inert
  in.kappa = 1.5;
  in.alpha_holder = 0.5;
  in.delta = 1.2;
  in.q = 9.0;
  in.r = 0.02;
  in.v = 0.02;
  in.w = 0.25;
  in.l = 1.0;
  in.t0 = 1.0;
  in.dt = 1e-3;
  in.validate();
  return in;
}

// small_jump: same skeleton plus Y jumping by the raw mark inside the
// shrinking window |y| < ε^z, marks drawn from the power-law density.
inline NorrisInstance small_jump_instance() {
  NorrisInstance in = pure_diffusion_instance();
  in.f = dsl::Expr::parse("y1", 2, 1);
  in.G = levy::LevyMeasure::power_law(1.5, 1.0);
  in.cut = 1e-4;
  in.validate();
  return in;
}

inline NorrisInstance norris_instance_by_name(const std::string& name) {
  if (name == "pure_diffusion") return pure_diffusion_instance();
  if (name == "small_jump") return small_jump_instance();
  throw std::invalid_argument("unknown norris instance: " + name);
}

struct IntervalCdf {
  double alternate_series = 0.0;
  double standard_formula = 0.0;
};

namespace detail {
inline double binom(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double b = 1.0;
  for (int i = 1; i <= k; ++i) b = b * (n - k + i) / i;
  return b;
}
inline double plus_pow(double z, int k) {
  const double base = std::max(z, 0.0);
  return std::pow(base, k);  // pow(0,0) = 1 by IEEE convention
}
}  // namespace detail

// CDF of the longest of the m+1 spacings made by m uniform points on
// [0, t0], evaluated two ways: the source formula transcribed literally
// (sum over i of (-1)^{-i} C(m,i) (1 - ix/t0)_+^{i-1}), and the classical
// spacings CDF (sum over j of (-1)^j C(m+1,j) (1 - jx/t0)_+^m). The two
// disagree; the Monte Carlo oracle in the test suite arbitrates which one
// matches the order-statistics law.
inline IntervalCdf longest_interval_cdf(int m, double t0, double x) {
  if (m < 1) throw std::invalid_argument("longest_interval_cdf: m >= 1");
  if (!(t0 > 0.0) || x < 0.0 || x > t0)
    throw std::invalid_argument("longest_interval_cdf: need 0 <= x <= t0");
  IntervalCdf res;
  for (int i = 1; i <= m; ++i)
    res.alternate_series += std::pow(-1.0, -i) * detail::binom(m, i) *
                         detail::plus_pow(1.0 - i * x / t0, i - 1);
  for (int j = 0; j <= m + 1; ++j)
    res.standard_formula += (j % 2 == 0 ? 1.0 : -1.0) *
                            detail::binom(m + 1, j) *
                            detail::plus_pow(1.0 - j * x / t0, m);
  // The alternating sum cancels to ~1e-16 noise near F=0; clamp so the
  // result is an honest CDF value. The transcribed series is left raw —
  // its excursions outside [0,1] are part of what gets reported.
  res.standard_formula = std::clamp(res.standard_formula, 0.0, 1.0);
  return res;
}

}  // namespace jumpflow::inequalities
