#pragma once

// Kernel density estimation of simulated endpoints, an L1 comparison against
// the closed-form Gaussian law of the scalar linear-additive model, and a
// finite-difference smoothness proxy. The proxy is qualitative: smoothness of
// a law cannot be certified from finitely many samples, so the number is a
// surrogate for side-by-side comparison between models, nothing more.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <mutex>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "jumpflow/engine.hpp"
#include "jumpflow/expr.hpp"
#include "jumpflow/levy.hpp"

namespace jumpflow::density {

inline constexpr int kMaxKdeDims = 3;  // beyond this, estimate 1-d marginals

struct GridSpec {
  std::vector<double> lo, hi;
  std::vector<int> points;  // per dimension, >= 2

  int dims() const { return static_cast<int>(points.size()); }

  void validate() const {
    const auto n = points.size();
    if (n == 0 || lo.size() != n || hi.size() != n)
      throw std::invalid_argument("grid: lo/hi/points size mismatch");
    if (static_cast<int>(n) > kMaxKdeDims)
      throw std::invalid_argument("grid: at most 3 dimensions");
    for (std::size_t d = 0; d < n; ++d) {
      if (points[d] < 2) throw std::invalid_argument("grid: need >= 2 points");
      if (!(hi[d] > lo[d])) throw std::invalid_argument("grid: need hi > lo");
    }
  }

  double step(int d) const {
    return (hi[static_cast<std::size_t>(d)] - lo[static_cast<std::size_t>(d)]) /
           (points[static_cast<std::size_t>(d)] - 1);
  }
  double coord(int d, int idx) const {
    return lo[static_cast<std::size_t>(d)] + step(d) * idx;
  }
  std::size_t total() const {
    std::size_t t = 1;
    for (const int p : points) t *= static_cast<std::size_t>(p);
    return t;
  }
};

// values is a row-major tensor over the grid, last dimension fastest.
struct DensityEstimate {
  GridSpec grid;
  std::vector<double> values;
  std::vector<double> bandwidth;
  std::size_t n_samples = 0;

  // full trapezoid rule: product weights, h/2 at the per-dimension edges
  double integral() const {
    const int e = grid.dims();
    double sum = 0.0;
    std::vector<int> idx(static_cast<std::size_t>(e), 0);
    for (std::size_t flat = 0; flat < values.size(); ++flat) {
      double w = 1.0;
      for (int d = 0; d < e; ++d) {
        const int i = idx[static_cast<std::size_t>(d)];
        const int last = grid.points[static_cast<std::size_t>(d)] - 1;
        w *= (i == 0 || i == last) ? grid.step(d) * 0.5 : grid.step(d);
      }
      sum += w * values[flat];
      for (int d = e - 1; d >= 0; --d) {
        auto& i = idx[static_cast<std::size_t>(d)];
        if (++i < grid.points[static_cast<std::size_t>(d)]) break;
        i = 0;
      }
    }
    return sum;
  }
};

namespace detail {

inline void parallel_for(std::size_t n, int n_threads,
                         const std::function<void(std::size_t)>& body) {
  unsigned hw = n_threads > 0 ? static_cast<unsigned>(n_threads)
                              : std::max(1u, std::thread::hardware_concurrency());
  hw = static_cast<unsigned>(std::min<std::size_t>(hw, n));
  if (hw <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  pool.reserve(hw);
  for (unsigned t = 0; t < hw; ++t)
    pool.emplace_back([&] {
      try {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1))
          body(i);
      } catch (...) {
        std::scoped_lock lk(err_mu);
        if (!err) err = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

inline double std_normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

struct Moments {
  std::vector<double> mean, sd;
};

inline Moments sample_moments(std::span<const double> samples, int e) {
  const std::size_t n = samples.size() / static_cast<std::size_t>(e);
  Moments m;
  m.mean.assign(static_cast<std::size_t>(e), 0.0);
  m.sd.assign(static_cast<std::size_t>(e), 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (int d = 0; d < e; ++d)
      m.mean[static_cast<std::size_t>(d)] +=
          samples[i * static_cast<std::size_t>(e) + static_cast<std::size_t>(d)];
  for (auto& v : m.mean) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (int d = 0; d < e; ++d) {
      const double c =
          samples[i * static_cast<std::size_t>(e) + static_cast<std::size_t>(d)] -
          m.mean[static_cast<std::size_t>(d)];
      m.sd[static_cast<std::size_t>(d)] += c * c;
    }
  for (auto& v : m.sd) v = std::sqrt(v / static_cast<double>(n - 1));
  return m;
}

}  // namespace detail

// Per-dimension uniform grid covering mean +/- 6 sample standard deviations.
inline GridSpec default_grid(std::span<const double> samples, int e,
                             int points_per_dim = 401) {
  if (e < 1 || e > kMaxKdeDims)
    throw std::invalid_argument("default_grid: need 1 <= e <= 3");
  if (samples.empty() || samples.size() % static_cast<std::size_t>(e) != 0)
    throw std::invalid_argument("default_grid: sample size not multiple of e");
  const auto m = detail::sample_moments(samples, e);
  GridSpec g;
  for (int d = 0; d < e; ++d) {
    const double sd = m.sd[static_cast<std::size_t>(d)];
    if (!(sd > 0.0))
      throw std::invalid_argument("default_grid: zero sample variance");
    g.lo.push_back(m.mean[static_cast<std::size_t>(d)] - 6.0 * sd);
    g.hi.push_back(m.mean[static_cast<std::size_t>(d)] + 6.0 * sd);
    g.points.push_back(points_per_dim);
  }
  return g;
}

// Gaussian product-kernel estimate on the grid. Default bandwidth is the
// Silverman rule 1.06·sd·n^{-1/5} per dimension. Evaluation parallelizes
// over grid points; the samples are read-only.
inline DensityEstimate kde(std::span<const double> samples, int e,
                           const GridSpec& grid,
                           std::span<const double> bandwidth = {},
                           int n_threads = 0) {
  if (e < 1 || e > kMaxKdeDims)
    throw std::invalid_argument("kde: need 1 <= e <= 3");
  if (samples.size() % static_cast<std::size_t>(e) != 0)
    throw std::invalid_argument("kde: sample size not multiple of e");
  const std::size_t n = samples.size() / static_cast<std::size_t>(e);
  if (n < 100) throw std::invalid_argument("kde: need >= 100 samples");
  grid.validate();
  if (grid.dims() != e)
    throw std::invalid_argument("kde: grid dimension mismatch");

  DensityEstimate est;
  est.grid = grid;
  est.n_samples = n;
  if (!bandwidth.empty()) {
    if (static_cast<int>(bandwidth.size()) != e)
      throw std::invalid_argument("kde: bandwidth dimension mismatch");
    for (const double b : bandwidth)
      if (!(b > 0.0)) throw std::invalid_argument("kde: bandwidth must be > 0");
    est.bandwidth.assign(bandwidth.begin(), bandwidth.end());
  } else {
    const auto m = detail::sample_moments(samples, e);
    for (int d = 0; d < e; ++d) {
      const double sd = m.sd[static_cast<std::size_t>(d)];
      if (!(sd > 0.0))
        throw std::invalid_argument("kde: zero sample variance in dimension " +
                                    std::to_string(d + 1));
      est.bandwidth.push_back(1.06 * sd *
                              std::pow(static_cast<double>(n), -0.2));
    }
  }

  est.values.assign(grid.total(), 0.0);
  detail::parallel_for(est.values.size(), n_threads, [&](std::size_t flat) {
    // decode the row-major flat index, last dimension fastest
    double pt[kMaxKdeDims];
    std::size_t rem = flat;
    for (int d = e - 1; d >= 0; --d) {
      const auto np = static_cast<std::size_t>(grid.points[static_cast<std::size_t>(d)]);
      pt[d] = grid.coord(d, static_cast<int>(rem % np));
      rem /= np;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double k = 1.0;
      for (int d = 0; d < e; ++d) {
        const double bw = est.bandwidth[static_cast<std::size_t>(d)];
        const double z =
            (pt[d] - samples[i * static_cast<std::size_t>(e) +
                             static_cast<std::size_t>(d)]) /
            bw;
        k *= detail::std_normal_pdf(z) / bw;
      }
      acc += k;
    }
    est.values[flat] = acc / static_cast<double>(n);
  });
  return est;
}

struct BaselineComparison {
  DensityEstimate estimate;
  double mean = 0.0;  // of the exact endpoint law
  double sd = 0.0;
  double l1_error = 0.0;
};

// KDE of simulated endpoints of dx = a·x dt + σ dW against the exact
// endpoint law Normal(x0·e^{aT}, σ²(e^{2aT}-1)/(2a)), with the a=0 limit
// σ²T. L1 distance by trapezoid rule on the KDE grid.
inline BaselineComparison gaussian_baseline_report(
    double a, double sigma, double x0, const engine::SimConfig& cfg,
    std::size_t n_paths, int n_threads = 0, int points_per_dim = 401) {
  if (!(sigma > 0.0))
    throw std::invalid_argument("baseline: sigma must be > 0");
  cfg.validate();

  engine::FieldSystem sys;
  sys.e = 1;
  sys.d = 1;
  sys.Z = {dsl::Expr::mul(dsl::Expr::constant(a),
                          dsl::Expr::state_var(1, 1, 0))};
  sys.V = {{dsl::Expr::constant(sigma)}};
  sys.G = levy::LevyMeasure::finite_activity_uniform(1.0, 1.0);  // unused: Y=0
  const auto cs = engine::CompiledSystem::compile(sys);

  engine::SimConfig run = cfg;
  run.record_jacobians = false;
  std::vector<double> endpoints(n_paths);
  const double x0v[1] = {x0};
  engine::run_paths(run.seed, n_paths, n_threads,
                    [&](std::size_t i, rng::Stream& rs) {
                      const auto p = engine::simulate_path(
                          cs, std::span<const double>(x0v, 1), run, rs);
                      endpoints[i] = p.x.back();
                    });

  BaselineComparison rep;
  const auto grid = default_grid(endpoints, 1, points_per_dim);
  rep.estimate = kde(endpoints, 1, grid, {}, n_threads);

  rep.mean = x0 * std::exp(a * run.T);
  const double var = a == 0.0
                         ? sigma * sigma * run.T
                         : sigma * sigma * (std::exp(2.0 * a * run.T) - 1.0) /
                               (2.0 * a);
  rep.sd = std::sqrt(var);

  const double h = grid.step(0);
  for (int i = 0; i < grid.points[0]; ++i) {
    const double x = grid.coord(0, i);
    const double ref = detail::std_normal_pdf((x - rep.mean) / rep.sd) / rep.sd;
    const double diff =
        std::fabs(rep.estimate.values[static_cast<std::size_t>(i)] - ref);
    rep.l1_error += (i == 0 || i == grid.points[0] - 1) ? 0.5 * h * diff
                                                        : h * diff;
  }
  return rep;
}

inline double gaussian_baseline_compare(double a, double sigma, double x0,
                                        const engine::SimConfig& cfg,
                                        std::size_t n_paths,
                                        int n_threads = 0) {
  return gaussian_baseline_report(a, sigma, x0, cfg, n_paths, n_threads)
      .l1_error;
}

// Max-abs central finite difference of the stated order along each grid
// dimension, normalized by the max density value. Qualitative only.
inline double smoothness_proxy(const DensityEstimate& est, int order) {
  if (order != 1 && order != 2)
    throw std::invalid_argument("smoothness_proxy: order must be 1 or 2");
  est.grid.validate();
  const int e = est.grid.dims();
  for (int d = 0; d < e; ++d)
    if (est.grid.points[static_cast<std::size_t>(d)] < 5)
      throw std::invalid_argument("smoothness_proxy: need >= 5 grid points");
  if (est.values.size() != est.grid.total())
    throw std::invalid_argument("smoothness_proxy: tensor size mismatch");

  const double vmax =
      *std::max_element(est.values.begin(), est.values.end());
  if (!(vmax > 0.0)) return 0.0;

  // strides of the row-major tensor (last dimension fastest)
  std::vector<std::size_t> stride(static_cast<std::size_t>(e), 1);
  for (int d = e - 2; d >= 0; --d)
    stride[static_cast<std::size_t>(d)] =
        stride[static_cast<std::size_t>(d) + 1] *
        static_cast<std::size_t>(est.grid.points[static_cast<std::size_t>(d) + 1]);

  double worst = 0.0;
  std::vector<int> idx(static_cast<std::size_t>(e), 0);
  for (std::size_t flat = 0; flat < est.values.size(); ++flat) {
    for (int d = 0; d < e; ++d) {
      const int i = idx[static_cast<std::size_t>(d)];
      if (i == 0 || i == est.grid.points[static_cast<std::size_t>(d)] - 1)
        continue;
      const std::size_t s = stride[static_cast<std::size_t>(d)];
      const double h = est.grid.step(d);
      const double fm = est.values[flat - s], f0 = est.values[flat],
                   fp = est.values[flat + s];
      const double fd = order == 1 ? std::fabs(fp - fm) / (2.0 * h)
                                   : std::fabs(fp - 2.0 * f0 + fm) / (h * h);
      worst = std::max(worst, fd);
    }
    for (int d = e - 1; d >= 0; --d) {
      auto& i = idx[static_cast<std::size_t>(d)];
      if (++i < est.grid.points[static_cast<std::size_t>(d)]) break;
      i = 0;
    }
  }
  return worst / vmax;
}

}  // namespace jumpflow::density
