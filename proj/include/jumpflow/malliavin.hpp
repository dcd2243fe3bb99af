#pragma once

// Reduced covariance along simulated paths and its small-eigenvalue
// diagnostics: the left-endpoint Riemann sum of Σ_i (J_inv V_i)(J_inv V_i)ᵀ
// over the path grid, Monte Carlo tails P(Λ <= ε) with Wilson-interval
// uncertainties and a log-log tail slope, and floor-truncated inverse
// moments E[max(Λ, floor)^{-p}] whose stability under a shrinking floor is
// the practical surrogate for inverse-moment finiteness.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "jumpflow/engine.hpp"
#include "jumpflow/expr.hpp"
#include "jumpflow/linalg.hpp"

namespace jumpflow::malliavin {

struct CovarianceMatrix {
  int e = 0;
  double t = 0.0;
  std::vector<double> C;  // e*e, symmetric PSD up to rounding
  double lambda_min = 0.0;
};

// Left-endpoint Riemann sum over the merged grid; at event points the stored
// (post-jump) values are the correct left-limit values for the subinterval
// that starts there.
inline CovarianceMatrix reduced_covariance(
    const engine::Path& p, std::span<const std::vector<dsl::Expr>> V) {
  if (p.J_inv.empty())
    throw std::invalid_argument("reduced_covariance: path has no Jacobians");
  const int e = p.e;
  CovarianceMatrix cov;
  cov.e = e;
  cov.t = p.grid.back();
  cov.C.assign(static_cast<std::size_t>(e) * e, 0.0);
  std::vector<double> vx(static_cast<std::size_t>(e));
  std::vector<double> w(static_cast<std::size_t>(e));
  for (std::size_t k = 0; k + 1 < p.points(); ++k) {
    const double h = p.grid[k + 1] - p.grid[k];
    const auto x = p.state(k);
    const auto jinv = p.jac_inv(k);
    for (const auto& vi : V) {
      for (int c = 0; c < e; ++c)
        vx[static_cast<std::size_t>(c)] =
            vi[static_cast<std::size_t>(c)].eval(x, {}, p.grid[k]);
      linalg::matvec(jinv, vx, w, e);
      for (int r = 0; r < e; ++r)
        for (int c = 0; c < e; ++c)
          cov.C[static_cast<std::size_t>(r) * e + c] +=
              h * w[static_cast<std::size_t>(r)] * w[static_cast<std::size_t>(c)];
    }
  }
  // Symmetrize away accumulation rounding before the eigen solve.
  for (int r = 0; r < e; ++r)
    for (int c = r + 1; c < e; ++c) {
      const double s = 0.5 * (cov.C[static_cast<std::size_t>(r) * e + c] +
                              cov.C[static_cast<std::size_t>(c) * e + r]);
      cov.C[static_cast<std::size_t>(r) * e + c] = s;
      cov.C[static_cast<std::size_t>(c) * e + r] = s;
    }
  cov.lambda_min = std::max(linalg::min_eigenvalue(cov.C, e), 0.0);
  return cov;
}

struct TailEstimate {
  std::vector<double> eps_grid;
  std::vector<engine::McEstimate> probs;
  std::optional<double> fitted_slope;
  std::optional<engine::McEstimate> p_moment;
};

namespace detail {

// One Λ (or uᵀCu) sample per path, in path-index order.
inline std::vector<double> covariance_samples(
    const engine::CompiledSystem& cs, std::span<const double> x0,
    const engine::SimConfig& cfg, std::size_t n_paths,
    std::span<const double> u, int n_threads) {
  engine::SimConfig c = cfg;
  c.record_jacobians = true;
  std::vector<double> out(n_paths, 0.0);
  const auto& V = cs.sys.V;
  std::vector<double> x0c(x0.begin(), x0.end());
  engine::run_paths(cfg.seed, n_paths, n_threads,
                    [&](std::size_t i, rng::Stream& rs) {
                      const auto path = engine::simulate_path(cs, x0c, c, rs);
                      const auto cov = reduced_covariance(path, V);
                      if (u.empty()) {
                        out[i] = cov.lambda_min;
                      } else {
                        double q = 0.0;
                        for (int r = 0; r < cov.e; ++r)
                          for (int s = 0; s < cov.e; ++s)
                            q += u[static_cast<std::size_t>(r)] *
                                 cov.C[static_cast<std::size_t>(r) * cov.e + s] *
                                 u[static_cast<std::size_t>(s)];
                        out[i] = q;
                      }
                    });
  return out;
}

}  // namespace detail

// MC tails of Λ (or of uᵀCu when a direction is supplied) over a decreasing
// ε grid. The slope comes from weighted least squares of log p on log ε over
// the grid entries with at least 5 hits (weights n·p/(1-p), the inverse
// delta-method variance of log p̂); fewer than 2 usable entries leave it
// unset.
inline TailEstimate tail_probability(const engine::CompiledSystem& cs,
                                     std::span<const double> x0,
                                     const engine::SimConfig& cfg,
                                     std::span<const double> eps_grid,
                                     std::size_t n_paths,
                                     std::span<const double> u = {},
                                     int n_threads = 0) {
  if (n_paths < 100)
    throw std::invalid_argument("tail_probability: need n_paths >= 100");
  for (std::size_t i = 0; i + 1 < eps_grid.size(); ++i)
    if (!(eps_grid[i] > eps_grid[i + 1]))
      throw std::invalid_argument("tail_probability: eps grid must decrease");
  if (!eps_grid.empty() && !(eps_grid.back() > 0.0))
    throw std::invalid_argument("tail_probability: eps must be positive");

  const auto lambdas =
      detail::covariance_samples(cs, x0, cfg, n_paths, u, n_threads);

  TailEstimate est;
  est.eps_grid.assign(eps_grid.begin(), eps_grid.end());
  std::vector<double> lx, ly, lw;
  for (const double eps : eps_grid) {
    std::size_t hits = 0;
    for (const double v : lambdas)
      if (v <= eps) ++hits;
    est.probs.push_back(engine::wilson(hits, n_paths, cfg.seed));
    if (hits >= 5 && hits < n_paths) {
      const double p = est.probs.back().value;
      lx.push_back(std::log(eps));
      ly.push_back(std::log(p));
      lw.push_back(static_cast<double>(n_paths) * p / (1.0 - p));
    }
  }
  if (lx.size() >= 2) {
    double sw = 0, swx = 0, swy = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      sw += lw[i];
      swx += lw[i] * lx[i];
      swy += lw[i] * ly[i];
    }
    const double mx = swx / sw, my = swy / sw;
    double num = 0, den = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      num += lw[i] * (lx[i] - mx) * (ly[i] - my);
      den += lw[i] * (lx[i] - mx) * (lx[i] - mx);
    }
    if (den > 0.0) est.fitted_slope = num / den;
  }
  return est;
}

inline TailEstimate tail_probability(const engine::FieldSystem& sys,
                                     std::span<const double> x0,
                                     const engine::SimConfig& cfg,
                                     std::span<const double> eps_grid,
                                     std::size_t n_paths,
                                     std::span<const double> u = {},
                                     int n_threads = 0) {
  return tail_probability(engine::CompiledSystem::compile(sys), x0, cfg,
                          eps_grid, n_paths, u, n_threads);
}

// Floor-truncated inverse moment E[max(Λ, floor)^{-p}]. The floor keeps the
// estimator's variance finite even when the underlying moment diverges;
// probing with a shrinking floor is the intended protocol.
inline engine::McEstimate inverse_moment(const engine::CompiledSystem& cs,
                                         std::span<const double> x0,
                                         const engine::SimConfig& cfg, double p,
                                         std::size_t n_paths, double floor,
                                         int n_threads = 0) {
  if (!(p >= 2.0)) throw std::invalid_argument("inverse_moment: need p >= 2");
  if (!(floor > 0.0))
    throw std::invalid_argument("inverse_moment: need floor > 0");
  const auto lambdas =
      detail::covariance_samples(cs, x0, cfg, n_paths, {}, n_threads);
  std::vector<double> vals(lambdas.size());
  for (std::size_t i = 0; i < lambdas.size(); ++i)
    vals[i] = std::pow(std::max(lambdas[i], floor), -p);
  const double nn = static_cast<double>(n_paths);
  const double mean = linalg::pairwise_sum(vals) / nn;
  std::vector<double> dev2(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i)
    dev2[i] = (vals[i] - mean) * (vals[i] - mean);
  engine::McEstimate est;
  est.value = mean;
  est.se = n_paths > 1
               ? std::sqrt(linalg::pairwise_sum(dev2) / (nn * (nn - 1.0)))
               : 0.0;
  est.n = n_paths;
  est.seed = cfg.seed;
  return est;
}

inline engine::McEstimate inverse_moment(const engine::FieldSystem& sys,
                                         std::span<const double> x0,
                                         const engine::SimConfig& cfg, double p,
                                         std::size_t n_paths, double floor,
                                         int n_threads = 0) {
  return inverse_moment(engine::CompiledSystem::compile(sys), x0, cfg, p,
                        n_paths, floor, n_threads);
}

}  // namespace jumpflow::malliavin
