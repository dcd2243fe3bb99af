#pragma once

// Adaptive Gauss-Kronrod (G7,K15) quadrature, scalar and vector-valued, plus
// a geometric-subdivision scheme for integrals over (0,c] whose integrand may
// blow up at 0 like a power. The latter reports divergence instead of looping
// forever, which is what the measure-condition checks rely on.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace jumpflow::quad {

struct QuadratureError : std::runtime_error {
  double achieved_error;
  QuadratureError(const std::string& msg, double err)
      : std::runtime_error(msg), achieved_error(err) {}
};

struct DivergentIntegralError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
// K15 abscissae (positive half) and weights; G7 weights sit on the odd nodes.
inline constexpr double kXgk[8] = {
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000};
inline constexpr double kWk[8] = {
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714};
inline constexpr double kWg[4] = {
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327};
}  // namespace detail

struct Interval {
  double a, b;
  double value;  // K15 estimate
  double error;  // |K15 - G7|
};

// One (G7,K15) evaluation of a scalar integrand over [a,b].
template <class F>
Interval gk15(F&& f, double a, double b) {
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  double k = 0.0, g = 0.0;
  for (int i = 0; i < 8; ++i) {
    const double dx = h * detail::kXgk[i];
    const double f1 = f(c - dx);
    const double f2 = (i == 7) ? f1 : f(c + dx);
    const double s = (i == 7) ? f1 : f1 + f2;
    k += detail::kWk[i] * s;
    if (i % 2 == 1) g += detail::kWg[i / 2] * s;
  }
  return {a, b, k * h, std::fabs((k - g) * h)};
}

// Adaptive bisection. Accepts an interval when its error passes either the
// local relative test or its share of the absolute budget.
template <class F>
double integrate(F&& f, double a, double b, double rel_tol = 1e-10,
                 double abs_floor = 1e-14, int max_depth = 40) {
  if (a == b) return 0.0;
  double total = 0.0, total_err = 0.0;
  struct Item { double a, b; int depth; };
  std::vector<Item> stack{{a, b, 0}};
  while (!stack.empty()) {
    const Item it = stack.back();
    stack.pop_back();
    const Interval r = gk15(f, it.a, it.b);
    const bool ok = r.error <= rel_tol * std::fabs(r.value) ||
                    r.error <= abs_floor * (it.b - it.a) / (b - a);
    if (ok || it.depth >= max_depth) {
      total += r.value;
      total_err += r.error;
      continue;
    }
    const double m = 0.5 * (it.a + it.b);
    stack.push_back({it.a, m, it.depth + 1});
    stack.push_back({m, it.b, it.depth + 1});
  }
  if (total_err > std::max(std::fabs(total) * rel_tol * 10.0, abs_floor * 10.0))
    throw QuadratureError("quadrature failed to reach tolerance", total_err);
  return total;
}

// Vector-valued variant: f(y, out) fills `dim` components. All components are
// integrated on a shared adaptive grid; the split criterion is the worst
// component. Writes into `out`, which must have size dim.
template <class F>
void integrate_vec(F&& f, int dim, double a, double b, std::span<double> out,
                   double rel_tol = 1e-9, double abs_floor = 1e-13,
                   int max_depth = 34) {
  for (int i = 0; i < dim; ++i) out[i] = 0.0;
  if (a == b) return;
  std::vector<double> buf(static_cast<std::size_t>(dim) * 2);
  std::vector<double> k(dim), g(dim), tmp(dim);
  struct Item { double a, b; int depth; };
  std::vector<Item> stack{{a, b, 0}};
  std::vector<double> total_err(dim, 0.0);
  while (!stack.empty()) {
    const Item it = stack.back();
    stack.pop_back();
    const double c = 0.5 * (it.a + it.b);
    const double h = 0.5 * (it.b - it.a);
    for (int i = 0; i < dim; ++i) { k[i] = 0.0; g[i] = 0.0; }
    for (int i = 0; i < 8; ++i) {
      const double dx = h * detail::kXgk[i];
      f(c - dx, std::span<double>(buf.data(), dim));
      if (i != 7) {
        f(c + dx, std::span<double>(buf.data() + dim, dim));
        for (int j = 0; j < dim; ++j) buf[j] += buf[dim + j];
      }
      for (int j = 0; j < dim; ++j) {
        k[j] += detail::kWk[i] * buf[j];
        if (i % 2 == 1) g[j] += detail::kWg[i / 2] * buf[j];
      }
    }
    bool ok = true;
    for (int j = 0; j < dim; ++j) {
      const double err = std::fabs((k[j] - g[j]) * h);
      const double val = std::fabs(k[j] * h);
      if (err > rel_tol * val && err > abs_floor * (it.b - it.a) / (b - a)) {
        ok = false;
        break;
      }
    }
    if (ok || it.depth >= max_depth) {
      for (int j = 0; j < dim; ++j) {
        out[j] += k[j] * h;
        total_err[j] += std::fabs((k[j] - g[j]) * h);
      }
      continue;
    }
    stack.push_back({it.a, c, it.depth + 1});
    stack.push_back({c, it.b, it.depth + 1});
  }
  for (int j = 0; j < dim; ++j)
    if (total_err[j] >
        std::max(std::fabs(out[j]) * rel_tol * 10.0, abs_floor * 10.0))
      throw QuadratureError("vector quadrature failed to reach tolerance",
                            total_err[j]);
}

// Integral over (0, c] where f may behave like y^{-p} near 0. Geometric
// shells [c*2^{-k-1}, c*2^{-k}] are summed until they stop mattering. For
// p >= 1 the shell values do not decay, which is reported as divergence.
// Exponents within ~0.01 of the critical p = 1 can be misclassified; the
// measure checks keep their exponents well away from 1.
template <class F>
double integrate_to_zero(F&& f, double c, double rel_tol = 1e-10,
                         int max_shells = 220) {
  if (c <= 0.0) return 0.0;
  double acc = 0.0;
  double prev_shell = -1.0;
  int flat_run = 0, small_run = 0;
  double first_shell = 0.0;
  for (int k = 0; k < max_shells; ++k) {
    const double hi = c * std::pow(0.5, k);
    const double lo = 0.5 * hi;
    const double shell = integrate(f, lo, hi, rel_tol, 1e-300, 36);
    acc += shell;
    const double mag = std::fabs(shell);
    if (k == 0) first_shell = std::max(mag, 1e-300);
    if (mag > 1e8 * first_shell)
      throw DivergentIntegralError(
          "integral diverges toward 0 (shell blow-up)");
    if (prev_shell >= 0.0) {
      flat_run = (mag >= 0.98 * prev_shell && mag > 0.0) ? flat_run + 1 : 0;
      if (flat_run >= 12 && mag > rel_tol * std::fabs(acc))
        throw DivergentIntegralError(
            "integral diverges toward 0 (non-decaying shells)");
    }
    small_run = (mag <= 0.5 * rel_tol * std::fabs(acc) || mag == 0.0)
                    ? small_run + 1 : 0;
    if (small_run >= 2) return acc;
    prev_shell = mag;
  }
  throw QuadratureError("shell sum did not converge toward 0", prev_shell);
}

}  // namespace jumpflow::quad
