#pragma once

// Euler simulation of the coupled system (x_t, J_fwd, J_inv) for
//
//   dx = Z(x)dt + V(x)dW + dJumps,   jumps compensated above the cut,
//
// with event-exact jump insertion: the base grid is merged with the sampled
// jump times, the continuous dynamics advance to each event with the
// left-endpoint state, and the jump factors are applied at the event itself.
// J_fwd solves the forward linearization (factor I + D1Y at events, drift
// DZ - ∫D1Y G); J_inv solves its own SDE (factor (I+D1Y)^{-1}, drift
// -(DZ - ΣDV_i² - ∫(I+D1Y)^{-1}(D1Y)² G) + ∫(I+D1Y)^{-1}D1Y G) rather than
// being obtained by matrix inversion, so the product J_inv·J_fwd is a real
// consistency diagnostic, not a tautology.
//
// Per-path draw order (the determinism contract; mirror streams in tests and
// the thread-invariance of every aggregate rely on it):
//   1. jump events, iff the system has a jump field: Poisson count, then per
//      event time/magnitude/sign (see levy::sample_jumps);
//   2. per grid step: d Brownian normals in component order, then — only when
//      the Gaussian small-jump correction is enabled — e correction normals.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "jumpflow/expr.hpp"
#include "jumpflow/levy.hpp"
#include "jumpflow/linalg.hpp"
#include "jumpflow/quadrature.hpp"
#include "jumpflow/rng.hpp"

namespace jumpflow::engine {

// A jump factor I + D1Y failed to invert: the uniform-invertibility
// assumption on the jump linearization is violated at this state/mark.
struct ConditioningError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FieldSystem {
  int e = 0;  // state dimension
  int d = 0;  // Brownian dimension
  int n = 1;  // mark dimension (fixed at 1)
  std::vector<dsl::Expr> Z;               // e components
  std::vector<std::vector<dsl::Expr>> V;  // d fields, e components each
  std::vector<dsl::Expr> Y;               // e components over (x, y); empty = no jumps
  levy::LevyMeasure G;

  bool has_jumps() const {
    if (Y.empty()) return false;
    for (const auto& c : Y)
      if (!c.is_zero()) return true;
    return false;
  }

  void validate() const {
    if (e <= 0 || d < 0) throw std::invalid_argument("system: bad dimensions");
    if (static_cast<int>(Z.size()) != e)
      throw std::invalid_argument("system: Z must have e components");
    if (static_cast<int>(V.size()) != d)
      throw std::invalid_argument("system: V must have d fields");
    for (const auto& f : V)
      if (static_cast<int>(f.size()) != e)
        throw std::invalid_argument("system: each V_i must have e components");
    if (!Y.empty() && static_cast<int>(Y.size()) != e)
      throw std::invalid_argument("system: Y must be empty or have e components");
  }
};

struct SimConfig {
  double T = 1.0;
  double dt = 1e-3;
  double cut = 0.1;  // absolute mark size below which jumps are dropped
  std::uint64_t seed = 1;
  bool gaussian_smalljump_correction = false;
  bool record_jacobians = true;
  std::uint64_t max_events = 10'000'000;

  void validate() const {
    if (!(dt > 0.0) || !(T >= dt))
      throw std::invalid_argument("config: need 0 < dt <= T");
    if (!(cut > 0.0)) throw std::invalid_argument("config: cut must be > 0");
  }
};

struct McEstimate {
  double value = 0.0;
  double se = 0.0;
  std::uint64_t n = 0;
  std::uint64_t seed = 0;
};

// Wilson-score half-width at one standard normal unit; behaves sensibly at
// zero hits, where the plain binomial SE degenerates to 0.
inline McEstimate wilson(std::size_t hits, std::size_t n, std::uint64_t seed) {
  McEstimate est;
  est.n = n;
  est.seed = seed;
  const double nn = static_cast<double>(n);
  const double ph = static_cast<double>(hits) / nn;
  est.value = ph;
  est.se = std::sqrt(ph * (1.0 - ph) / nn + 0.25 / (nn * nn)) / (1.0 + 1.0 / nn);
  return est;
}

// grid[0]=0 always; states are post-jump at event times (the pre-jump value
// is what the update consumed). Jacobians are stored only when recorded.
struct Path {
  int e = 0;
  std::vector<double> grid;
  std::vector<double> x;      // grid.size() x e, row-major
  std::vector<double> J_fwd;  // grid.size() x e*e, row-major (may be empty)
  std::vector<double> J_inv;
  std::vector<levy::Jump> jumps;  // sampled events (also kept by the
                                  // truncated simulation, which skips them)

  std::size_t points() const { return grid.size(); }
  std::span<const double> state(std::size_t k) const {
    return {x.data() + k * static_cast<std::size_t>(e),
            static_cast<std::size_t>(e)};
  }
  std::span<const double> jac_fwd(std::size_t k) const {
    const std::size_t m = static_cast<std::size_t>(e) * e;
    return {J_fwd.data() + k * m, m};
  }
  std::span<const double> jac_inv(std::size_t k) const {
    const std::size_t m = static_cast<std::size_t>(e) * e;
    return {J_inv.data() + k * m, m};
  }
};

// Symbolic first derivatives of the fields, differentiated once up front and
// shared read-only between threads.
struct CompiledSystem {
  FieldSystem sys;
  std::vector<dsl::Expr> DZ;               // e*e, row-major d(Z_i)/d(x_j)
  std::vector<std::vector<dsl::Expr>> DV;  // d entries of e*e
  std::vector<dsl::Expr> D1Y;              // e*e over (x,y); empty if no jumps
  bool jumps = false;

  static CompiledSystem compile(const FieldSystem& system) {
    system.validate();
    CompiledSystem c;
    c.sys = system;
    c.jumps = system.has_jumps();
    const int e = system.e;
    auto jac = [e](std::span<const dsl::Expr> f) {
      std::vector<dsl::Expr> m;
      m.reserve(static_cast<std::size_t>(e) * e);
      for (int i = 0; i < e; ++i)
        for (int j = 0; j < e; ++j) m.push_back(f[i].diff_state(j));
      return m;
    };
    c.DZ = jac(system.Z);
    for (const auto& v : system.V) c.DV.push_back(jac(v));
    if (c.jumps) c.D1Y = jac(system.Y);
    return c;
  }
};

namespace detail {

// All measure integrals an Euler step needs at a fixed state, over the
// retained band {cut < |y| <= hi}:
//   comp      ∫ Y_i G(dy)                    (state compensator drift)
//   m0        ∫ D1Y G(dy)                    (J_fwd compensator drift)
//   m1        ∫ (I+D1Y)^{-1} D1Y G(dy)       (J_inv jump-compensator drift)
//   m2        ∫ (I+D1Y)^{-1} (D1Y)² G(dy)    (J_inv continuous drift)
//   small_var ∫_{|y|<cut} Y_i² G(dy)         (optional Gaussian correction)
struct StepIntegrals {
  std::vector<double> comp, m0, m1, m2, small_var;
};

struct XKey {
  std::vector<std::int64_t> q;
  bool operator==(const XKey& o) const { return q == o.q; }
};
struct XKeyHash {
  std::size_t operator()(const XKey& k) const {
    std::size_t h = 0xcbf29ce484222325ull;
    for (auto v : k.q) {
      h ^= static_cast<std::size_t>(v);
      h *= 0x100000001b3ull;
    }
    return h;
  }
};

class IntegralCache {
 public:
  IntegralCache(const CompiledSystem& cs, const SimConfig& cfg)
      : cs_(cs), cfg_(cfg) {}

  const StepIntegrals& at(std::span<const double> x) {
    XKey key;
    key.q.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
      key.q[i] = static_cast<std::int64_t>(std::llround(x[i] * 1e6));
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    return cache_.emplace(std::move(key), compute(x)).first->second;
  }

 private:
  StepIntegrals compute(std::span<const double> x) const {
    const int e = cs_.sys.e;
    const std::size_t m = static_cast<std::size_t>(e) * e;
    StepIntegrals s;
    s.comp.assign(static_cast<std::size_t>(e), 0.0);
    if (cfg_.record_jacobians) {
      s.m0.assign(m, 0.0);
      s.m1.assign(m, 0.0);
      s.m2.assign(m, 0.0);
    }
    const levy::LevyMeasure& g = cs_.sys.G;
    const double a = std::max(cfg_.cut, g.lo);
    const double b = g.hi;
    if (a < b) {
      // One signed-mark evaluation of every integrand component.
      const std::size_t dim = static_cast<std::size_t>(e) +
                              (cfg_.record_jacobians ? 3 * m : 0);
      std::vector<double> dmat(m), fmat(m), d2(m), s1, s2;
      auto eval_signed = [&](double y, std::span<double> out) {
        const double ys[1] = {y};
        const std::span<const double> yv(ys, 1);
        for (int i = 0; i < e; ++i) out[static_cast<std::size_t>(i)] =
            cs_.sys.Y[static_cast<std::size_t>(i)].eval(x, yv, 0.0);
        if (!cfg_.record_jacobians) return;
        for (std::size_t k = 0; k < m; ++k) dmat[k] = cs_.D1Y[k].eval(x, yv, 0.0);
        fmat = dmat;
        for (int i = 0; i < e; ++i) fmat[static_cast<std::size_t>(i) * e + i] += 1.0;
        linalg::matmul(dmat, dmat, d2, e);
        try {
          s1 = linalg::solve(fmat, dmat, e, e);  // (I+D)^{-1} D
          s2 = linalg::solve(fmat, d2, e, e);    // (I+D)^{-1} D²
        } catch (const linalg::SingularMatrixError&) {
          throw ConditioningError(
              "jump linearization I + D1Y is singular at |y|=" +
              std::to_string(std::fabs(y)));
        }
        const std::size_t base = static_cast<std::size_t>(e);
        for (std::size_t k = 0; k < m; ++k) {
          out[base + k] = dmat[k];
          out[base + m + k] = s1[k];
          out[base + 2 * m + k] = s2[k];
        }
      };
      std::vector<double> buf(dim), acc(dim);
      auto integrand = [&](double y, std::span<double> out) {
        const double dens = g.density_at(y);
        eval_signed(y, out);
        if (g.symmetric) {
          eval_signed(-y, buf);
          for (std::size_t k = 0; k < dim; ++k) out[k] = (out[k] + buf[k]) * dens;
        } else {
          for (std::size_t k = 0; k < dim; ++k) out[k] *= dens;
        }
      };
      quad::integrate_vec(integrand, dim, a, b, acc, 1e-8);
      for (int i = 0; i < e; ++i) s.comp[static_cast<std::size_t>(i)] = acc[i];
      if (cfg_.record_jacobians) {
        const double* o = acc.data() + e;
        s.m0.assign(o, o + m);
        s.m1.assign(o + m, o + 2 * m);
        s.m2.assign(o + 2 * m, o + 3 * m);
      }
    }
    if (cfg_.gaussian_smalljump_correction) {
      s.small_var.resize(static_cast<std::size_t>(e));
      for (int i = 0; i < e; ++i) {
        auto h = [&](double y) {
          const double ys[1] = {y};
          const double v = cs_.sys.Y[i].eval(x, std::span<const double>(ys, 1), 0.0);
          return v * v;
        };
        s.small_var[static_cast<std::size_t>(i)] =
            levy::inner_integral(g, h, cfg_.cut, 1e-8);
      }
    }
    return s;
  }

  const CompiledSystem& cs_;
  const SimConfig& cfg_;
  std::unordered_map<XKey, StepIntegrals, XKeyHash> cache_;
};

inline std::vector<double> build_base_grid(double T, double dt) {
  const auto n = static_cast<std::size_t>(std::ceil(T / dt - 1e-9));
  std::vector<double> g(n + 1);
  for (std::size_t k = 0; k < n; ++k) g[k] = static_cast<double>(k) * dt;
  g[n] = T;
  if (n >= 1 && g[n] - g[n - 1] < 1e-12 * dt) g.erase(g.begin() + (n - 1));
  return g;
}

inline Path simulate_impl(const CompiledSystem& cs, std::span<const double> x0,
                          const SimConfig& cfg, rng::Stream& rs,
                          bool apply_jumps) {
  cfg.validate();
  const int e = cs.sys.e;
  const int d = cs.sys.d;
  const std::size_t m = static_cast<std::size_t>(e) * e;
  if (static_cast<int>(x0.size()) != e)
    throw std::invalid_argument("simulate: x0 has wrong dimension");

  std::vector<levy::Jump> jumps;
  if (cs.jumps)
    jumps = levy::sample_jumps(cs.sys.G, cfg.cut, cfg.T, rs, cfg.max_events);

  // Merge the base grid with the event times; remember which grid points
  // carry a jump. Exact time collisions fold into one grid point.
  const std::vector<double> base = build_base_grid(cfg.T, cfg.dt);
  std::vector<double> grid;
  std::vector<int> jump_at;  // index into jumps, or -1
  grid.reserve(base.size() + jumps.size());
  jump_at.reserve(base.size() + jumps.size());
  std::size_t bi = 0, ji = 0;
  while (bi < base.size() || ji < jumps.size()) {
    const bool take_jump =
        ji < jumps.size() && (bi >= base.size() || jumps[ji].time <= base[bi]);
    if (take_jump) {
      if (!grid.empty() && jumps[ji].time == grid.back()) {
        jump_at.back() = static_cast<int>(ji);  // collision: same grid point
      } else {
        grid.push_back(jumps[ji].time);
        jump_at.push_back(static_cast<int>(ji));
      }
      ++ji;
    } else {
      if (!grid.empty() && base[bi] == grid.back()) {
        ++bi;
        continue;
      }
      grid.push_back(base[bi]);
      jump_at.push_back(-1);
      ++bi;
    }
  }

  Path path;
  path.e = e;
  path.grid = grid;
  path.jumps = std::move(jumps);
  path.x.resize(grid.size() * static_cast<std::size_t>(e));
  if (cfg.record_jacobians) {
    path.J_fwd.resize(grid.size() * m);
    path.J_inv.resize(grid.size() * m);
  }

  std::vector<double> x(x0.begin(), x0.end());
  std::vector<double> J = linalg::identity(e);
  std::vector<double> K = linalg::identity(e);

  IntegralCache cache(cs, cfg);
  std::vector<double> drift(static_cast<std::size_t>(e));
  std::vector<double> dw(static_cast<std::size_t>(d));
  std::vector<double> a_fwd(m), a_inv(m), tmp(m), tmp2(m), sq(m), dvx(m), xn(x);
  std::vector<std::vector<double>> dvs(static_cast<std::size_t>(d),
                                       std::vector<double>(m));

  auto store = [&](std::size_t k) {
    std::copy(x.begin(), x.end(),
              path.x.begin() + static_cast<std::ptrdiff_t>(k * e));
    if (cfg.record_jacobians) {
      std::copy(J.begin(), J.end(),
                path.J_fwd.begin() + static_cast<std::ptrdiff_t>(k * m));
      std::copy(K.begin(), K.end(),
                path.J_inv.begin() + static_cast<std::ptrdiff_t>(k * m));
    }
  };
  store(0);

  const bool need_integrals =
      cs.jumps || cfg.gaussian_smalljump_correction;
  const std::span<const double> no_marks{};

  for (std::size_t k = 1; k < grid.size(); ++k) {
    const double h = grid[k] - grid[k - 1];
    const double sqh = std::sqrt(h);
    const StepIntegrals* ints = nullptr;
    if (need_integrals && cs.jumps) ints = &cache.at(x);

    // --- continuous Euler step over (grid[k-1], grid[k]] with the
    // left-endpoint state everywhere.
    for (int i = 0; i < e; ++i) {
      drift[static_cast<std::size_t>(i)] =
          cs.sys.Z[static_cast<std::size_t>(i)].eval(x, no_marks, grid[k - 1]);
      if (ints) drift[static_cast<std::size_t>(i)] -= ints->comp[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < d; ++i) dw[static_cast<std::size_t>(i)] = sqh * rs.gaussian();
    for (int i = 0; i < e; ++i)
      xn[static_cast<std::size_t>(i)] =
          x[static_cast<std::size_t>(i)] + drift[static_cast<std::size_t>(i)] * h;
    for (int i = 0; i < d; ++i)
      for (int c = 0; c < e; ++c)
        xn[static_cast<std::size_t>(c)] +=
            cs.sys.V[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)].eval(
                x, no_marks, grid[k - 1]) *
            dw[static_cast<std::size_t>(i)];
    if (cfg.gaussian_smalljump_correction && cs.jumps) {
      const auto& var = ints->small_var;
      for (int i = 0; i < e; ++i)
        xn[static_cast<std::size_t>(i)] +=
            std::sqrt(h * var[static_cast<std::size_t>(i)]) * rs.gaussian();
    }

    if (cfg.record_jacobians) {
      for (std::size_t c = 0; c < m; ++c)
        a_fwd[c] = cs.DZ[c].eval(x, no_marks, grid[k - 1]);
      if (ints)
        for (std::size_t c = 0; c < m; ++c) a_fwd[c] -= ints->m0[c];
      // Inverse-flow drift -DZ + Σ DV_i², plus the jump compensators m1+m2.
      for (std::size_t c = 0; c < m; ++c)
        a_inv[c] = -a_fwd[c] - (ints ? ints->m0[c] : 0.0);
      if (ints)
        for (std::size_t c = 0; c < m; ++c) a_inv[c] += ints->m1[c] + ints->m2[c];
      for (int i = 0; i < d; ++i) {
        auto& dv = dvs[static_cast<std::size_t>(i)];
        for (std::size_t c = 0; c < m; ++c)
          dv[c] = cs.DV[static_cast<std::size_t>(i)][c].eval(x, no_marks, grid[k - 1]);
        linalg::matmul(dv, dv, sq, e);
        for (std::size_t c = 0; c < m; ++c) a_inv[c] += sq[c];
      }
      // J += a_fwd J h + Σ DV_i J dw_i ;  K += K a_inv h - Σ K DV_i dw_i
      linalg::matmul(a_fwd, J, tmp, e);
      linalg::matmul(K, a_inv, tmp2, e);
      for (std::size_t c = 0; c < m; ++c) {
        tmp[c] = J[c] + tmp[c] * h;
        tmp2[c] = K[c] + tmp2[c] * h;
      }
      for (int i = 0; i < d; ++i) {
        const auto& dv = dvs[static_cast<std::size_t>(i)];
        const double w = dw[static_cast<std::size_t>(i)];
        linalg::matmul(dv, J, sq, e);
        for (std::size_t c = 0; c < m; ++c) tmp[c] += sq[c] * w;
        linalg::matmul(K, dv, sq, e);
        for (std::size_t c = 0; c < m; ++c) tmp2[c] -= sq[c] * w;
      }
      J = tmp;
      K = tmp2;
    }
    x = xn;

    // --- event at grid[k]: update uses the pre-jump (s-) state just computed.
    const int jidx = jump_at[k];
    if (jidx >= 0 && apply_jumps) {
      const double yv = path.jumps[static_cast<std::size_t>(jidx)].mark;
      const double ys[1] = {yv};
      const std::span<const double> yspan(ys, 1);
      for (int i = 0; i < e; ++i)
        xn[static_cast<std::size_t>(i)] =
            x[static_cast<std::size_t>(i)] +
            cs.sys.Y[static_cast<std::size_t>(i)].eval(x, yspan, grid[k]);
      if (cfg.record_jacobians) {
        for (std::size_t c = 0; c < m; ++c)
          dvx[c] = cs.D1Y[c].eval(x, yspan, grid[k]);
        for (int i = 0; i < e; ++i) dvx[static_cast<std::size_t>(i) * e + i] += 1.0;
        linalg::matmul(dvx, J, tmp, e);  // (I+D) J
        try {
          tmp2 = linalg::solve_right(K, dvx, e);  // K (I+D)^{-1}
        } catch (const linalg::SingularMatrixError&) {
          throw ConditioningError(
              "jump linearization I + D1Y is singular at t=" +
              std::to_string(grid[k]));
        }
        J = tmp;
        K = tmp2;
      }
      x = xn;
    }
    store(k);
  }

  return path;
}

}  // namespace detail

inline Path simulate_path(const CompiledSystem& cs, std::span<const double> x0,
                          const SimConfig& cfg, rng::Stream& rs) {
  return detail::simulate_impl(cs, x0, cfg, rs, /*apply_jumps=*/true);
}

inline Path simulate_path(const FieldSystem& sys, std::span<const double> x0,
                          const SimConfig& cfg, rng::Stream& rs) {
  return simulate_path(CompiledSystem::compile(sys), x0, cfg, rs);
}

// Truncated dynamics: the sampled events are excluded from the state and the
// Jacobians while every compensator drift is retained, so the result is the
// conditioned process "no jumps above the cut" with the same draws (and the
// same merged grid) as simulate_path.
inline Path simulate_truncated_path(const CompiledSystem& cs,
                                    std::span<const double> x0,
                                    const SimConfig& cfg, rng::Stream& rs) {
  return detail::simulate_impl(cs, x0, cfg, rs, /*apply_jumps=*/false);
}

inline Path simulate_truncated_path(const FieldSystem& sys,
                                    std::span<const double> x0,
                                    const SimConfig& cfg, rng::Stream& rs) {
  return simulate_truncated_path(CompiledSystem::compile(sys), x0, cfg, rs);
}

// max over the grid of |J_inv(t)·J_fwd(t) − I|_∞ — the discretized version
// of the inverse-flow identity.
inline double jacobian_inverse_residual(const Path& p) {
  if (p.J_fwd.empty())
    throw std::invalid_argument("residual: path has no recorded Jacobians");
  const int e = p.e;
  std::vector<double> prod(static_cast<std::size_t>(e) * e);
  double worst = 0.0;
  for (std::size_t k = 0; k < p.points(); ++k) {
    linalg::matmul(p.jac_inv(k), p.jac_fwd(k), prod, e);
    worst = std::max(worst, linalg::identity_residual(prod, e));
  }
  return worst;
}

// Runs body(path_index, stream) for each path index with a per-index stream
// derived from the master seed; indices are pulled from an atomic counter so
// any thread count produces the same per-index results.
template <class Body>
void run_paths(std::uint64_t master_seed, std::size_t n_paths, int n_threads,
               Body&& body) {
  if (n_threads <= 0) {
    const unsigned hc = std::thread::hardware_concurrency();
    n_threads = hc == 0 ? 1 : static_cast<int>(hc);
  }
  n_threads = static_cast<int>(
      std::min<std::size_t>(static_cast<std::size_t>(n_threads),
                            std::max<std::size_t>(n_paths, 1)));
  if (n_threads == 1) {
    for (std::size_t i = 0; i < n_paths; ++i) {
      rng::Stream rs(master_seed, i);
      body(i, rs);
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(n_threads));
  for (int t = 0; t < n_threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
        if (i >= n_paths) return;
        try {
          rng::Stream rs(master_seed, i);
          body(i, rs);
        } catch (...) {
          std::lock_guard<std::mutex> lk(err_mu);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace jumpflow::engine
