#pragma once

// Lie-bracket hierarchy for the hypoellipticity ("uniform span") diagnostic.
//
// Hierarchy members are not plain vector fields: the drift bracket of a jump
// system subtracts a measure integral of a bracket with the jump field, so a
// member is   K(x) = pure(x) + Σ_kernels ∫…∫ kernel(x, y_1..y_m) G(dy_1)…G(dy_m),
// and repeated drift brackets deepen the mark count m. All algebra stays
// symbolic (the integrals are evaluated only when a field value is needed);
// duplicate members are pruned by canonicalized-AST equality, which is
// conservative — a missed semantic duplicate only repeats a term in the
// spanning sum and can never fake spanning.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "jumpflow/engine.hpp"
#include "jumpflow/expr.hpp"
#include "jumpflow/levy.hpp"
#include "jumpflow/linalg.hpp"
#include "jumpflow/rng.hpp"

namespace jumpflow::fields {

using dsl::Expr;

// [A,B]_i = Σ_j A_j ∂_j B_i − B_j ∂_j A_i  (components over x; any shared
// mark variables ride along as parameters).
inline std::vector<Expr> lie_bracket(std::span<const Expr> A,
                                     std::span<const Expr> B) {
  if (A.size() != B.size())
    throw std::invalid_argument("lie_bracket: component counts differ");
  const int e = static_cast<int>(A.size());
  std::vector<Expr> out;
  out.reserve(A.size());
  for (int i = 0; i < e; ++i) {
    Expr acc = Expr::constant(0.0);
    for (int j = 0; j < e; ++j) {
      acc = Expr::add(acc, Expr::mul(A[static_cast<std::size_t>(j)],
                                     B[static_cast<std::size_t>(i)].diff_state(j)));
      acc = Expr::sub(acc, Expr::mul(B[static_cast<std::size_t>(j)],
                                     A[static_cast<std::size_t>(i)].diff_state(j)));
    }
    out.push_back(acc.canonical());
  }
  return out;
}

// V0 = Z − ½ Σ_i (DV_i)V_i, the drift with the Stratonovich correction
// removed.
inline std::vector<Expr> compute_v0(std::span<const Expr> Z,
                                    std::span<const std::vector<Expr>> V) {
  const int e = static_cast<int>(Z.size());
  std::vector<Expr> out;
  out.reserve(Z.size());
  for (int i = 0; i < e; ++i) {
    Expr acc = Z[static_cast<std::size_t>(i)];
    for (const auto& Vi : V) {
      if (static_cast<int>(Vi.size()) != e)
        throw std::invalid_argument("compute_v0: field dimension mismatch");
      for (int j = 0; j < e; ++j)
        acc = Expr::sub(
            acc, Expr::mul(Expr::constant(0.5),
                           Expr::mul(Vi[static_cast<std::size_t>(j)],
                                     Vi[static_cast<std::size_t>(i)].diff_state(j))));
    }
    out.push_back(acc.canonical());
  }
  return out;
}

struct HierarchyField {
  struct Kernel {
    int marks = 0;  // number of mark slots (1..), each integrated against G
    std::vector<Expr> comps;
  };
  std::vector<Expr> pure;
  std::vector<Kernel> kernels;

  bool is_zero() const {
    for (const auto& c : pure)
      if (!c.is_zero()) return false;
    for (const auto& k : kernels)
      for (const auto& c : k.comps)
        if (!c.is_zero()) return false;
    return true;
  }

  std::string canonical_key() const {
    std::string s = "P";
    for (const auto& c : pure) {
      s += '|';
      s += c.str();
    }
    std::multiset<std::string> ks;
    for (const auto& k : kernels) {
      if (std::all_of(k.comps.begin(), k.comps.end(),
                      [](const Expr& c) { return c.is_zero(); }))
        continue;
      std::string t = "K" + std::to_string(k.marks);
      for (const auto& c : k.comps) {
        t += '|';
        t += c.str();
      }
      ks.insert(t);
    }
    for (const auto& t : ks) {
      s += ';';
      s += t;
    }
    return s;
  }

  static HierarchyField from_pure(std::vector<Expr> comps) {
    HierarchyField f;
    f.pure = std::move(comps);
    for (auto& c : f.pure) c = c.canonical();
    return f;
  }
};

namespace detail {
inline std::vector<Expr> lift_marks(std::span<const Expr> f, int mark_dim) {
  std::vector<Expr> out;
  out.reserve(f.size());
  for (const auto& c : f) out.push_back(c.shift_marks(0, mark_dim));
  return out;
}

inline void drop_zero_kernels(HierarchyField& f) {
  std::erase_if(f.kernels, [](const HierarchyField::Kernel& k) {
    return std::all_of(k.comps.begin(), k.comps.end(),
                       [](const Expr& c) { return c.is_zero(); });
  });
}
}  // namespace detail

// [P, K] for a plain field P (no marks): brackets distribute through the
// kernel integrals because the x-derivatives pass under ∫ G(dy).
inline HierarchyField bracket_pure(std::span<const Expr> P,
                                   const HierarchyField& K) {
  HierarchyField out;
  out.pure = lie_bracket(P, K.pure);
  for (const auto& k : K.kernels) {
    HierarchyField::Kernel nk;
    nk.marks = k.marks;
    const auto lifted = detail::lift_marks(P, k.marks);
    nk.comps = lie_bracket(lifted, k.comps);
    out.kernels.push_back(std::move(nk));
  }
  detail::drop_zero_kernels(out);
  return out;
}

// [V0, K] − ∫ [Y(·,y), K] G(dy): the second term brackets in x with the mark
// held as a parameter, so every kernel of K gains one mark slot (slot 1 is
// the fresh one; K's marks shift up).
inline HierarchyField drift_bracket(std::span<const Expr> V0,
                                    std::span<const Expr> Y,
                                    const HierarchyField& K) {
  HierarchyField out = bracket_pure(V0, K);
  const bool have_y = !Y.empty() &&
                      std::any_of(Y.begin(), Y.end(),
                                  [](const Expr& c) { return !c.is_zero(); });
  if (!have_y) return out;

  {  // − ∫ [Y(·,y), K.pure](x) G(dy)
    HierarchyField::Kernel nk;
    nk.marks = 1;
    const auto lifted_pure = detail::lift_marks(K.pure, 1);
    nk.comps = lie_bracket(Y, lifted_pure);
    for (auto& c : nk.comps) c = Expr::neg(c).canonical();
    out.kernels.push_back(std::move(nk));
  }
  for (const auto& k : K.kernels) {  // − ∫ [Y(·,y1), kernel(·, y2..)] ΠG
    HierarchyField::Kernel nk;
    nk.marks = k.marks + 1;
    std::vector<Expr> shifted;
    shifted.reserve(k.comps.size());
    for (const auto& c : k.comps) shifted.push_back(c.shift_marks(1, nk.marks));
    const auto ylift = detail::lift_marks(Y, nk.marks);
    nk.comps = lie_bracket(ylift, shifted);
    for (auto& c : nk.comps) c = Expr::neg(c).canonical();
    out.kernels.push_back(std::move(nk));
  }
  detail::drop_zero_kernels(out);
  return out;
}

// Value of a hierarchy field at x. Kernel terms integrate each mark slot over
// G by nested adaptive quadrature (cost grows fast with mark depth; hierarchy
// members needing depth > 2 only arise past the levels the span check
// typically resolves at).
inline std::vector<double> eval_field(const HierarchyField& K,
                                      std::span<const double> x,
                                      const levy::LevyMeasure* g,
                                      double rel_tol = 1e-6) {
  const std::size_t e = K.pure.size();
  std::vector<double> out(e, 0.0);
  for (std::size_t i = 0; i < e; ++i)
    out[i] = K.pure[i].eval(x, {}, 0.0);
  if (K.kernels.empty()) return out;
  if (g == nullptr)
    throw std::invalid_argument(
        "eval_field: field has kernel terms but no measure was supplied");
  std::vector<double> marks;
  for (const auto& k : K.kernels) {
    marks.assign(static_cast<std::size_t>(k.marks), 0.0);
    for (std::size_t i = 0; i < e; ++i) {
      // Recursive integration, innermost slot last.
      auto nested = [&](auto&& self, int slot) -> double {
        if (slot == k.marks) return k.comps[i].eval(x, marks, 0.0);
        auto h = [&](double y) {
          marks[static_cast<std::size_t>(slot)] = y;
          return self(self, slot + 1);
        };
        return levy::inner_integral(*g, h, g->hi, rel_tol);
      };
      out[i] += nested(nested, 0);
    }
  }
  return out;
}

// Spec'd evaluator form of the corrected drift bracket: fixes the measure and
// returns a callable x ↦ [V0,K](x) − ∫[Y,K](x,y)G(dy).
inline auto jump_corrected_drift_bracket(std::vector<Expr> V0,
                                         std::vector<Expr> Y,
                                         HierarchyField K,
                                         levy::LevyMeasure g,
                                         double rel_tol = 1e-8) {
  HierarchyField f = drift_bracket(V0, Y, K);
  return [f = std::move(f), g = std::move(g),
          rel_tol](std::span<const double> x) {
    return eval_field(f, x, &g, rel_tol);
  };
}

struct BracketHierarchy {
  std::vector<HierarchyField> members;  // discovery order, duplicates pruned
  std::vector<int> first_level;         // level at which each member appeared
  int jmax = 0;
  std::optional<int> j0;  // filled by uh_check
  double c_est = 0.0;

  // L_j is cumulative: every member with first_level <= j.
  std::vector<std::size_t> level(int j) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < members.size(); ++i)
      if (first_level[i] <= j) idx.push_back(i);
    return idx;
  }
};

inline constexpr int kMaxHierarchyDepth = 6;

inline BracketHierarchy bracket_hierarchy(const engine::FieldSystem& sys,
                                          int jmax = 4) {
  sys.validate();
  if (jmax < 0) throw std::invalid_argument("bracket_hierarchy: jmax < 0");
  jmax = std::min(jmax, kMaxHierarchyDepth);

  BracketHierarchy h;
  h.jmax = jmax;
  std::set<std::string> seen;
  auto add = [&](HierarchyField f, int lvl) -> bool {
    if (f.is_zero()) return false;
    auto key = f.canonical_key();
    if (!seen.insert(std::move(key)).second) return false;
    h.members.push_back(std::move(f));
    h.first_level.push_back(lvl);
    return true;
  };

  for (const auto& vi : sys.V)
    add(HierarchyField::from_pure(vi), 0);

  const auto V0 = compute_v0(sys.Z, sys.V);
  std::vector<std::size_t> frontier(h.members.size());
  for (std::size_t i = 0; i < frontier.size(); ++i) frontier[i] = i;

  for (int lvl = 1; lvl <= jmax && !frontier.empty(); ++lvl) {
    std::vector<std::size_t> next;
    for (const std::size_t ki : frontier) {
      const HierarchyField K = h.members[ki];  // copy: members may reallocate
      for (const auto& vi : sys.V)
        if (add(bracket_pure(vi, K), lvl)) next.push_back(h.members.size() - 1);
      if (add(drift_bracket(V0, sys.Y, K), lvl))
        next.push_back(h.members.size() - 1);
    }
    frontier = std::move(next);
  }
  return h;
}

struct UhOptions {
  double c_min = 1e-8;  // relative to the largest sampled Gram eigenvalue
  double kernel_rel_tol = 1e-6;
  int n_dirs = 16;  // extra random unit directions probed per sample point
  std::uint64_t seed = 0x5EEDD1A5ull;
};

struct UhReport {
  std::optional<int> j0;
  double c_est = 0.0;  // min over x of the smallest Gram eigenvalue at j0
  std::vector<double> level_min;  // per level j: min over x of λ_min
  double threshold = 0.0;         // absolute spanning threshold applied
};

// Spanning check over a compact box: sample states (corner/center grid plus
// uniform random), accumulate the Gram matrix Σ_{j'<=j} Σ_{K∈L_j'} K(x)K(x)ᵀ
// per level, and return the smallest level whose worst-point smallest
// eigenvalue clears the relative threshold. The eigen-solve gives the exact
// min over unit directions; random directions and sign flips cannot go below
// it, so they are not sampled separately.
inline UhReport uh_check_hierarchy(BracketHierarchy& h,
                                   const levy::LevyMeasure* g,
                                   std::span<const double> box_lo,
                                   std::span<const double> box_hi,
                                   int n_points, const UhOptions& opt = {}) {
  if (h.members.empty()) {
    UhReport rep;
    rep.level_min.assign(static_cast<std::size_t>(h.jmax) + 1, 0.0);
    return rep;
  }
  const int e = static_cast<int>(h.members.front().pure.size());
  if (n_points < 1) throw std::invalid_argument("uh_check: n_points < 1");

  // Sample points: the fixed corner/center lattice plus seeded uniforms.
  std::vector<std::vector<double>> pts;
  if (e <= 5) {
    std::vector<int> idx(static_cast<std::size_t>(e), 0);
    for (;;) {
      std::vector<double> p(static_cast<std::size_t>(e));
      for (int i = 0; i < e; ++i)
        p[static_cast<std::size_t>(i)] =
            box_lo[static_cast<std::size_t>(i)] +
            (box_hi[static_cast<std::size_t>(i)] - box_lo[static_cast<std::size_t>(i)]) *
                idx[static_cast<std::size_t>(i)] / 2.0;
      pts.push_back(std::move(p));
      int carry = 0;
      while (carry < e && ++idx[static_cast<std::size_t>(carry)] == 3)
        idx[static_cast<std::size_t>(carry++)] = 0;
      if (carry == e) break;
    }
  }
  rng::Stream rs(opt.seed, 0);
  while (static_cast<int>(pts.size()) < n_points) {
    std::vector<double> p(static_cast<std::size_t>(e));
    for (int i = 0; i < e; ++i)
      p[static_cast<std::size_t>(i)] = rs.uniform(box_lo[static_cast<std::size_t>(i)],
                                                  box_hi[static_cast<std::size_t>(i)]);
    pts.push_back(std::move(p));
  }

  // Evaluate members lazily level by level; stop once a level spans.
  UhReport rep;
  const std::size_t mm = static_cast<std::size_t>(e) * e;
  std::vector<std::vector<double>> gram(pts.size(), std::vector<double>(mm, 0.0));
  std::vector<bool> used(h.members.size(), false);
  double lambda_max_seen = 0.0;

  for (int j = 0; j <= h.jmax; ++j) {
    for (std::size_t mi = 0; mi < h.members.size(); ++mi) {
      if (used[mi] || h.first_level[mi] > j) continue;
      used[mi] = true;
      for (std::size_t pi = 0; pi < pts.size(); ++pi) {
        const auto v = eval_field(h.members[mi], pts[pi], g, opt.kernel_rel_tol);
        for (int r = 0; r < e; ++r)
          for (int c = 0; c < e; ++c)
            gram[pi][static_cast<std::size_t>(r) * e + c] +=
                v[static_cast<std::size_t>(r)] * v[static_cast<std::size_t>(c)];
      }
    }
    // Each distinct member enters the Gram once. A sum taken over cumulative
    // levels with repetition would sit between 1x and (j+1)x of this, so the
    // spanning verdict and j0 are identical either way.
    double lmin = std::numeric_limits<double>::infinity();
    double lmax = 0.0;
    rng::Stream dir_rs(opt.seed, 1);
    for (const auto& gm : gram) {
      const auto eig = linalg::sym_eigen(gm, e);
      lmin = std::min(lmin, eig.values.front());
      lmax = std::max(lmax, eig.values.back());
      // Random unit directions can only sit at or above the eigen-minimum;
      // they are probed as an independent floor on the quadratic form.
      std::vector<double> u(static_cast<std::size_t>(e)), gu(u.size());
      for (int dir = 0; dir < opt.n_dirs; ++dir) {
        double norm2 = 0.0;
        for (auto& ui : u) {
          ui = dir_rs.gaussian();
          norm2 += ui * ui;
        }
        if (norm2 == 0.0) continue;
        linalg::matvec(gm, u, gu, e);
        double q = 0.0;
        for (int i = 0; i < e; ++i)
          q += u[static_cast<std::size_t>(i)] * gu[static_cast<std::size_t>(i)];
        lmin = std::min(lmin, q / norm2);
      }
    }
    lambda_max_seen = std::max(lambda_max_seen, lmax);
    rep.level_min.push_back(std::max(lmin, 0.0));
    if (!rep.j0) {
      const double thresh = opt.c_min * lambda_max_seen;
      if (lmin > 0.0 && lmin >= thresh) {
        rep.j0 = j;
        rep.c_est = lmin;
        rep.threshold = thresh;
      }
    }
  }
  if (!rep.j0) rep.threshold = opt.c_min * lambda_max_seen;
  h.j0 = rep.j0;
  h.c_est = rep.c_est;
  return rep;
}

inline UhReport uh_check(const engine::FieldSystem& sys, int jmax,
                         std::span<const double> box_lo,
                         std::span<const double> box_hi, int n_points,
                         const UhOptions& opt = {}) {
  BracketHierarchy h = bracket_hierarchy(sys, jmax);
  const levy::LevyMeasure* g = sys.has_jumps() ? &sys.G : nullptr;
  return uh_check_hierarchy(h, g, box_lo, box_hi, n_points, opt);
}

struct BracketConditionResult {
  bool holds = false;
  double lhs = 0.0;
  double rhs = 0.0;
};

// Quantitative comparison 16·m(j0) > 3(κ−n)·max((8−r+v/2)/(κ−n+α), 1/(4α))
// with m(j) = 2^{−4j}; the j0=0 (elliptic) case gives lhs = 16.
inline BracketConditionResult bracket_condition_check(int j0, double kappa,
                                                      int n, double alpha,
                                                      double r, double v) {
  if (j0 < 0) throw std::invalid_argument("bracket_condition_check: j0 < 0");
  if (kappa < n)
    throw std::invalid_argument("bracket_condition_check: kappa < n");
  if (!(alpha > 0.0))
    throw std::invalid_argument("bracket_condition_check: alpha <= 0");
  if (!(r > 0.0) || !(v > 0.0) || !(18.0 * r + 9.0 * v < 8.0))
    throw std::invalid_argument(
        "bracket_condition_check: need r,v > 0 with 18r+9v < 8");
  BracketConditionResult res;
  res.lhs = 16.0 * std::pow(2.0, -4.0 * j0);
  const double excess = kappa - n;
  res.rhs = 3.0 * excess *
            std::max((8.0 - r + v / 2.0) / (excess + alpha), 1.0 / (4.0 * alpha));
  res.holds = res.lhs > res.rhs;
  return res;
}

}  // namespace jumpflow::fields
