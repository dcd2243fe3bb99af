#pragma once

// Dense helpers for small square matrices (state dimension stays <= ~10).
// Row-major storage in flat std::vector<double>; no blocking, no BLAS.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace jumpflow::linalg {

struct SingularMatrixError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Vec = std::vector<double>;

inline Vec identity(int n) {
  Vec m(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) m[i * n + i] = 1.0;
  return m;
}

inline void matmul(std::span<const double> a, std::span<const double> b,
                   std::span<double> c, int n) {
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += a[i * n + k] * b[k * n + j];
      c[i * n + j] = s;
    }
}

inline void matvec(std::span<const double> a, std::span<const double> x,
                   std::span<double> out, int n) {
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += a[i * n + j] * x[j];
    out[i] = s;
  }
}

inline double max_abs(std::span<const double> m) {
  double v = 0.0;
  for (double x : m) v = std::max(v, std::fabs(x));
  return v;
}

inline double identity_residual(std::span<const double> m, int n) {
  double r = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      r = std::max(r, std::fabs(m[i * n + j] - (i == j ? 1.0 : 0.0)));
  return r;
}

// Solves A X = B in place (B holds X on return, n x m, row-major) by LU with
// partial pivoting. Throws when the pivot falls under rel_tol * max|A|.
inline void solve_inplace(Vec a, std::span<double> b, int n, int m,
                          double rel_tol = 1e-12) {
  const double scale = max_abs(a);
  if (scale == 0.0) throw SingularMatrixError("singular matrix: zero matrix");
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::fabs(a[r * n + col]) > std::fabs(a[piv * n + col])) piv = r;
    if (std::fabs(a[piv * n + col]) < rel_tol * scale)
      throw SingularMatrixError(
          "singular matrix: pivot below conditioning threshold");
    if (piv != col) {
      for (int j = 0; j < n; ++j) std::swap(a[col * n + j], a[piv * n + j]);
      for (int j = 0; j < m; ++j) std::swap(b[col * m + j], b[piv * m + j]);
    }
    const double d = a[col * n + col];
    for (int r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / d;
      if (f == 0.0) continue;
      for (int j = col; j < n; ++j) a[r * n + j] -= f * a[col * n + j];
      for (int j = 0; j < m; ++j) b[r * m + j] -= f * b[col * m + j];
    }
  }
  for (int col = n - 1; col >= 0; --col) {
    const double d = a[col * n + col];
    for (int j = 0; j < m; ++j) {
      double s = b[col * m + j];
      for (int k = col + 1; k < n; ++k) s -= a[col * n + k] * b[k * m + j];
      b[col * m + j] = s / d;
    }
  }
}

inline Vec solve(const Vec& a, const Vec& b, int n, int m,
                 double rel_tol = 1e-12) {
  Vec x = b;
  solve_inplace(a, x, n, m, rel_tol);
  return x;
}

inline Vec inverse(const Vec& a, int n, double rel_tol = 1e-12) {
  return solve(a, identity(n), n, n, rel_tol);
}

// X = B * A^{-1}, via A^T X^T = B^T.
inline Vec solve_right(const Vec& b, const Vec& a, int n,
                       double rel_tol = 1e-12) {
  Vec at(static_cast<std::size_t>(n) * n), bt(at.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      at[j * n + i] = a[i * n + j];
      bt[j * n + i] = b[i * n + j];
    }
  solve_inplace(std::move(at), bt, n, n, rel_tol);
  Vec x(bt.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) x[i * n + j] = bt[j * n + i];
  return x;
}

struct EigenResult {
  Vec values;   // ascending
  Vec vectors;  // row-major; column k is the eigenvector of values[k]
};

// Cyclic Jacobi for symmetric matrices; adequate and exact-enough (off-
// diagonal mass below 1e-14 * scale) at these sizes.
inline EigenResult sym_eigen(Vec a, int n) {
  Vec v = identity(n);
  const double scale = std::max(max_abs(a), 1.0);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off = std::max(off, std::fabs(a[i * n + j]));
    if (off <= 1e-14 * scale) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::fabs(apq) <= 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
  }
  EigenResult r;
  r.values.resize(n);
  for (int i = 0; i < n; ++i) r.values[i] = a[i * n + i];
  // Sort ascending, permuting columns of v alongside.
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](int i, int j) { return r.values[i] < r.values[j]; });
  Vec sv(n), svec(v.size());
  for (int k = 0; k < n; ++k) {
    sv[k] = r.values[order[k]];
    for (int row = 0; row < n; ++row) svec[row * n + k] = v[row * n + order[k]];
  }
  r.values = std::move(sv);
  r.vectors = std::move(svec);
  return r;
}

inline double min_eigenvalue(const Vec& a, int n) {
  return sym_eigen(a, n).values.front();
}

// Order-independent pairwise sum; used by the deterministic aggregators.
inline double pairwise_sum(std::span<const double> xs) {
  const std::size_t n = xs.size();
  if (n == 0) return 0.0;
  if (n <= 8) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(xs.subspan(0, half)) + pairwise_sum(xs.subspan(half));
}

}  // namespace jumpflow::linalg
