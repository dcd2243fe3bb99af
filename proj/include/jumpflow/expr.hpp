#pragma once

// Coefficient expression language.
//
// Grammar (precedence low to high): + -  |  * /  |  unary -  |  ^ (right
// assoc)  |  atoms. Variables are x1..xe (state), y1..yn (jump marks) and t.
// Functions: sin cos exp log tanh abs sqrt sign. `sign` exists so the set is
// closed under differentiation (abs' = sign, with sign(0) = 0 by convention).
//
// An Expr is an immutable node arena; evaluation walks it without allocating,
// so the simulation engine can call eval in its inner loop.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace jumpflow::dsl {

struct ParseError : std::runtime_error {
  std::size_t offset;
  ParseError(const std::string& msg, std::size_t off)
      : std::runtime_error(msg + " (at offset " + std::to_string(off) + ")"),
        offset(off) {}
};

struct EvalError : std::runtime_error {
  // Byte offset of the offending node in its source text; npos for nodes
  // produced by symbolic manipulation.
  std::size_t offset;
  EvalError(const std::string& msg, std::size_t off)
      : std::runtime_error(msg), offset(off) {}
};

// Forward-mode scalar carrying a value and one directional derivative.
struct Dual {
  double v = 0.0;
  double d = 0.0;
};

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator-(Dual a) { return {-a.v, -a.d}; }
inline Dual operator*(Dual a, Dual b) {
  return {a.v * b.v, a.d * b.v + a.v * b.d};
}
inline Dual operator/(Dual a, Dual b) {
  const double q = a.v / b.v;
  return {q, (a.d - q * b.d) / b.v};
}
inline Dual sin(Dual a) { return {std::sin(a.v), std::cos(a.v) * a.d}; }
inline Dual cos(Dual a) { return {std::cos(a.v), -std::sin(a.v) * a.d}; }
inline Dual exp(Dual a) {
  const double e = std::exp(a.v);
  return {e, e * a.d};
}
inline Dual log(Dual a) { return {std::log(a.v), a.d / a.v}; }
inline Dual tanh(Dual a) {
  const double th = std::tanh(a.v);
  return {th, (1.0 - th * th) * a.d};
}
inline Dual abs(Dual a) {
  return {std::fabs(a.v), a.v > 0 ? a.d : (a.v < 0 ? -a.d : 0.0)};
}
inline Dual sqrt(Dual a) {
  const double s = std::sqrt(a.v);
  return {s, a.d / (2.0 * s)};
}
inline Dual sign(Dual a) {
  return {a.v > 0 ? 1.0 : (a.v < 0 ? -1.0 : 0.0), 0.0};
}
inline Dual pow(Dual a, Dual b) {
  // General a^b; the integer-exponent case keeps negative bases legal.
  if (b.d == 0.0 && b.v == std::floor(b.v)) {
    const double p = std::pow(a.v, b.v);
    const double dp = (a.v == 0.0 && b.v <= 1.0)
                          ? (b.v == 1.0 ? a.d : 0.0)
                          : b.v * std::pow(a.v, b.v - 1.0) * a.d;
    return {p, dp};
  }
  const double p = std::pow(a.v, b.v);
  return {p, p * (b.d * std::log(a.v) + b.v * a.d / a.v)};
}

enum class Op : std::uint8_t {
  Const, StateVar, MarkVar, Time, Add, Sub, Mul, Div, Pow, Neg, Fun
};

enum class Fun : std::uint8_t { Sin, Cos, Exp, Log, Tanh, Abs, Sqrt, Sign };

namespace detail {
inline const char* fun_name(Fun f) {
  switch (f) {
    case Fun::Sin: return "sin";
    case Fun::Cos: return "cos";
    case Fun::Exp: return "exp";
    case Fun::Log: return "log";
    case Fun::Tanh: return "tanh";
    case Fun::Abs: return "abs";
    case Fun::Sqrt: return "sqrt";
    case Fun::Sign: return "sign";
  }
  return "?";
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace detail

class Expr {
 public:
  struct Node {
    Op op = Op::Const;
    Fun fn = Fun::Sin;
    std::int32_t a = -1;   // left child / function argument
    std::int32_t b = -1;   // right child
    std::int32_t index = 0;  // 0-based variable index
    double value = 0.0;
    std::int64_t src = -1;  // source byte offset, -1 if synthesised
  };

  Expr() = default;

  static Expr parse(std::string_view text, int state_dim, int mark_dim);

  static Expr constant(double v) {
    Expr e;
    e.root_ = e.push({Op::Const, Fun::Sin, -1, -1, 0, v, -1});
    return e;
  }
  static Expr state_var(int index1, int state_dim, int mark_dim) {
    if (index1 < 1 || index1 > state_dim)
      throw std::invalid_argument("state variable index out of range");
    Expr e;
    e.state_dim_ = state_dim;
    e.mark_dim_ = mark_dim;
    e.root_ = e.push({Op::StateVar, Fun::Sin, -1, -1, index1 - 1, 0, -1});
    return e;
  }
  static Expr mark_var(int index1, int state_dim, int mark_dim) {
    if (index1 < 1 || index1 > mark_dim)
      throw std::invalid_argument("mark variable index out of range");
    Expr e;
    e.state_dim_ = state_dim;
    e.mark_dim_ = mark_dim;
    e.root_ = e.push({Op::MarkVar, Fun::Sin, -1, -1, index1 - 1, 0, -1});
    return e;
  }

  // Structural combinators with light simplification (identities and constant
  // folding). These keep symbolic derivatives from ballooning.
  static Expr add(const Expr& a, const Expr& b);
  static Expr sub(const Expr& a, const Expr& b);
  static Expr mul(const Expr& a, const Expr& b);
  static Expr div(const Expr& a, const Expr& b);
  static Expr pow(const Expr& a, const Expr& b);
  static Expr neg(const Expr& a);
  static Expr apply(Fun f, const Expr& a);

  bool empty() const { return root_ < 0; }
  int state_dim() const { return state_dim_; }
  int mark_dim() const { return mark_dim_; }

  double eval(std::span<const double> x, std::span<const double> y,
              double t) const {
    check_args(x, y);
    return eval_node<double>(root_, x, y, t, {});
  }

  // Value and derivative along direction `dir` in state space. Like the
  // state vector itself, the direction may be wider than state_dim.
  Dual eval_dual(std::span<const double> x, std::span<const double> y,
                 double t, std::span<const double> dir) const {
    check_args(x, y);
    if (static_cast<int>(dir.size()) < state_dim_)
      throw std::invalid_argument("direction vector too short for expression");
    return eval_node<Dual>(root_, x, y, t, dir);
  }

  // Symbolic partial derivatives. 0-based index.
  Expr diff_state(int index) const { return diff(Op::StateVar, index); }
  Expr diff_mark(int index) const { return diff(Op::MarkVar, index); }

  // Remap every mark variable y_k to y_{k+offset} and widen the mark
  // dimension; used when splicing kernels with disjoint mark slots.
  Expr shift_marks(int offset, int new_mark_dim) const;

  Expr canonical() const;

  bool is_constant() const {
    return root_ >= 0 && nodes_[root_].op == Op::Const;
  }
  double constant_value() const { return nodes_[root_].value; }
  bool is_zero() const {
    Expr c = canonical();
    return c.is_constant() && c.constant_value() == 0.0;
  }

  std::string str() const {
    if (root_ < 0) return {};
    std::string out;
    print(root_, 0, out);
    return out;
  }

  // Key for structural comparison and commutative ordering.
  std::string structure_key() const { return str(); }

  // Which inputs the expression actually reads (bit i = variable i+1); only
  // nodes reachable from the root count — simplification can leave orphans.
  bool uses_time() const {
    bool found = false;
    walk([&](const Node& n) { found = found || n.op == Op::Time; });
    return found;
  }
  std::uint64_t state_mask() const { return var_mask(Op::StateVar); }
  std::uint64_t mark_mask() const { return var_mask(Op::MarkVar); }

 private:
  std::vector<Node> nodes_;
  std::int32_t root_ = -1;
  int state_dim_ = 0;
  int mark_dim_ = 0;

  std::int32_t push(Node n) {
    nodes_.push_back(n);
    return static_cast<std::int32_t>(nodes_.size() - 1);
  }

  template <class Fn>
  void walk(Fn&& fn) const {
    if (root_ < 0) return;
    std::vector<std::int32_t> stack{root_};
    while (!stack.empty()) {
      const Node& n = nodes_[static_cast<std::size_t>(stack.back())];
      stack.pop_back();
      fn(n);
      if (n.a >= 0) stack.push_back(n.a);
      if (n.b >= 0) stack.push_back(n.b);
    }
  }

  std::uint64_t var_mask(Op which) const {
    std::uint64_t mask = 0;
    walk([&](const Node& n) {
      if (n.op == which && n.index >= 0 && n.index < 64)
        mask |= 1ull << n.index;
    });
    return mask;
  }

  void check_args(std::span<const double> x, std::span<const double> y) const {
    if (root_ < 0) throw std::invalid_argument("empty expression");
    if (static_cast<int>(x.size()) < state_dim_)
      throw std::invalid_argument("state vector too short for expression");
    if (static_cast<int>(y.size()) < mark_dim_)
      throw std::invalid_argument("mark vector too short for expression");
  }

  [[noreturn]] void fail_eval(const char* msg, std::int32_t node) const {
    const auto s = nodes_[node].src;
    throw EvalError(msg, s < 0 ? std::string::npos
                               : static_cast<std::size_t>(s));
  }

  template <class T>
  T make_leaf(double v) const;

  template <class T>
  T eval_node(std::int32_t i, std::span<const double> x,
              std::span<const double> y, double t,
              std::span<const double> dir) const;

  void print(std::int32_t i, int parent_prec, std::string& out) const;
  int prec(std::int32_t i) const;

  Expr diff(Op var_kind, int index) const;
  Expr diff_node(std::int32_t i, Op var_kind, int index) const;
  Expr subexpr(std::int32_t i) const;
  Expr canon_node(std::int32_t i) const;

  // Appends src's nodes into dst, returning the new root index of the copy.
  static std::int32_t splice(std::vector<Node>& dst, const Expr& src);

  static Expr binary(Op op, const Expr& a, const Expr& b);

  friend struct ExprParser;
};

template <>
inline double Expr::make_leaf<double>(double v) const { return v; }
template <>
inline Dual Expr::make_leaf<Dual>(double v) const { return {v, 0.0}; }

template <class T>
T Expr::eval_node(std::int32_t i, std::span<const double> x,
                  std::span<const double> y, double t,
                  std::span<const double> dir) const {
  const Node& n = nodes_[i];
  switch (n.op) {
    case Op::Const: return make_leaf<T>(n.value);
    case Op::StateVar:
      if constexpr (std::is_same_v<T, Dual>)
        return {x[n.index], dir[n.index]};
      else
        return x[n.index];
    case Op::MarkVar: return make_leaf<T>(y[n.index]);
    case Op::Time: return make_leaf<T>(t);
    case Op::Add:
      return eval_node<T>(n.a, x, y, t, dir) + eval_node<T>(n.b, x, y, t, dir);
    case Op::Sub:
      return eval_node<T>(n.a, x, y, t, dir) - eval_node<T>(n.b, x, y, t, dir);
    case Op::Mul:
      return eval_node<T>(n.a, x, y, t, dir) * eval_node<T>(n.b, x, y, t, dir);
    case Op::Div: {
      T num = eval_node<T>(n.a, x, y, t, dir);
      T den = eval_node<T>(n.b, x, y, t, dir);
      double dv;
      if constexpr (std::is_same_v<T, Dual>) dv = den.v; else dv = den;
      if (dv == 0.0) fail_eval("division by zero", i);
      return num / den;
    }
    case Op::Pow: {
      T base = eval_node<T>(n.a, x, y, t, dir);
      T ex = eval_node<T>(n.b, x, y, t, dir);
      double bv, ev;
      if constexpr (std::is_same_v<T, Dual>) { bv = base.v; ev = ex.v; }
      else { bv = base; ev = ex; }
      if (bv < 0.0 && ev != std::floor(ev))
        fail_eval("negative base with non-integer exponent", i);
      if (bv == 0.0 && ev < 0.0) fail_eval("zero base with negative exponent", i);
      if constexpr (std::is_same_v<T, Dual>) return dsl::pow(base, ex);
      else return std::pow(base, ex);
    }
    case Op::Neg: return -eval_node<T>(n.a, x, y, t, dir);
    case Op::Fun: {
      T a = eval_node<T>(n.a, x, y, t, dir);
      double av;
      if constexpr (std::is_same_v<T, Dual>) av = a.v; else av = a;
      switch (n.fn) {
        case Fun::Sin: using std::sin; return sin(a);
        case Fun::Cos: using std::cos; return cos(a);
        case Fun::Exp: using std::exp; return exp(a);
        case Fun::Log:
          if (av <= 0.0) fail_eval("log of non-positive value", i);
          { using std::log; return log(a); }
        case Fun::Tanh: using std::tanh; return tanh(a);
        case Fun::Abs: using std::abs; using std::fabs;
          if constexpr (std::is_same_v<T, Dual>) return abs(a);
          else return fabs(a);
        case Fun::Sqrt:
          if (av < 0.0) fail_eval("sqrt of negative value", i);
          { using std::sqrt; return sqrt(a); }
        case Fun::Sign:
          if constexpr (std::is_same_v<T, Dual>) return sign(a);
          else return av > 0 ? 1.0 : (av < 0 ? -1.0 : 0.0);
      }
      fail_eval("bad function tag", i);
    }
  }
  fail_eval("bad node tag", i);
}

inline std::int32_t Expr::splice(std::vector<Node>& dst, const Expr& src) {
  const auto off = static_cast<std::int32_t>(dst.size());
  for (Node n : src.nodes_) {
    if (n.a >= 0) n.a += off;
    if (n.b >= 0) n.b += off;
    dst.push_back(n);
  }
  return src.root_ + off;
}

inline Expr Expr::binary(Op op, const Expr& a, const Expr& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("empty expression");
  Expr e;
  e.state_dim_ = std::max(a.state_dim_, b.state_dim_);
  e.mark_dim_ = std::max(a.mark_dim_, b.mark_dim_);
  auto ia = splice(e.nodes_, a);
  auto ib = splice(e.nodes_, b);
  e.root_ = e.push({op, Fun::Sin, ia, ib, 0, 0, -1});
  return e;
}

inline Expr Expr::add(const Expr& a, const Expr& b) {
  if (a.is_constant() && a.constant_value() == 0.0) return b;
  if (b.is_constant() && b.constant_value() == 0.0) return a;
  if (a.is_constant() && b.is_constant())
    return constant(a.constant_value() + b.constant_value());
  if (a.structure_key() > b.structure_key()) return binary(Op::Add, b, a);
  return binary(Op::Add, a, b);
}

inline Expr Expr::sub(const Expr& a, const Expr& b) {
  if (b.is_constant() && b.constant_value() == 0.0) return a;
  if (a.is_constant() && b.is_constant())
    return constant(a.constant_value() - b.constant_value());
  if (a.is_constant() && a.constant_value() == 0.0) return neg(b);
  if (a.structure_key() == b.structure_key()) {
    Expr z = constant(0.0);
    z.state_dim_ = std::max(a.state_dim_, b.state_dim_);
    z.mark_dim_ = std::max(a.mark_dim_, b.mark_dim_);
    return z;
  }
  return binary(Op::Sub, a, b);
}

inline Expr Expr::mul(const Expr& a, const Expr& b) {
  if (a.is_constant()) {
    if (a.constant_value() == 0.0) return a;
    if (a.constant_value() == 1.0) return b;
  }
  if (b.is_constant()) {
    if (b.constant_value() == 0.0) return b;
    if (b.constant_value() == 1.0) return a;
  }
  if (a.is_constant() && b.is_constant())
    return constant(a.constant_value() * b.constant_value());
  if (a.structure_key() > b.structure_key()) return binary(Op::Mul, b, a);
  return binary(Op::Mul, a, b);
}

inline Expr Expr::div(const Expr& a, const Expr& b) {
  if (a.is_constant() && a.constant_value() == 0.0) return a;
  if (b.is_constant() && b.constant_value() == 1.0) return a;
  if (a.is_constant() && b.is_constant() && b.constant_value() != 0.0)
    return constant(a.constant_value() / b.constant_value());
  return binary(Op::Div, a, b);
}

inline Expr Expr::pow(const Expr& a, const Expr& b) {
  if (b.is_constant()) {
    if (b.constant_value() == 1.0) return a;
    if (b.constant_value() == 0.0) return constant(1.0);
  }
  if (a.is_constant() && b.is_constant()) {
    const double bv = a.constant_value(), ev = b.constant_value();
    if (bv > 0.0 || ev == std::floor(ev))
      return constant(std::pow(bv, ev));
  }
  return binary(Op::Pow, a, b);
}

inline Expr Expr::neg(const Expr& a) {
  if (a.is_constant()) return constant(-a.constant_value());
  if (a.nodes_[a.root_].op == Op::Neg) return a.subexpr(a.nodes_[a.root_].a);
  Expr e;
  e.state_dim_ = a.state_dim_;
  e.mark_dim_ = a.mark_dim_;
  auto ia = splice(e.nodes_, a);
  e.root_ = e.push({Op::Neg, Fun::Sin, ia, -1, 0, 0, -1});
  return e;
}

inline Expr Expr::apply(Fun f, const Expr& a) {
  if (a.is_constant()) {
    const double v = a.constant_value();
    switch (f) {
      case Fun::Sin: return constant(std::sin(v));
      case Fun::Cos: return constant(std::cos(v));
      case Fun::Exp: return constant(std::exp(v));
      case Fun::Log: if (v > 0) return constant(std::log(v)); break;
      case Fun::Tanh: return constant(std::tanh(v));
      case Fun::Abs: return constant(std::fabs(v));
      case Fun::Sqrt: if (v >= 0) return constant(std::sqrt(v)); break;
      case Fun::Sign: return constant(v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0));
    }
  }
  Expr e;
  e.state_dim_ = a.state_dim_;
  e.mark_dim_ = a.mark_dim_;
  auto ia = splice(e.nodes_, a);
  e.root_ = e.push({Op::Fun, f, ia, -1, 0, 0, -1});
  return e;
}

inline Expr Expr::subexpr(std::int32_t i) const {
  Expr e;
  e.state_dim_ = state_dim_;
  e.mark_dim_ = mark_dim_;
  // Copy the subtree rooted at i.
  std::vector<std::int32_t> stack{i};
  // Simple recursive copy keeps node order topological.
  struct Copier {
    const std::vector<Node>& src;
    std::vector<Node>& dst;
    std::int32_t run(std::int32_t k) {
      Node n = src[k];
      if (n.a >= 0) n.a = run(n.a);
      if (n.b >= 0) n.b = run(n.b);
      dst.push_back(n);
      return static_cast<std::int32_t>(dst.size() - 1);
    }
  } c{nodes_, e.nodes_};
  e.root_ = c.run(i);
  return e;
}

inline Expr Expr::shift_marks(int offset, int new_mark_dim) const {
  Expr e = *this;
  for (Node& n : e.nodes_)
    if (n.op == Op::MarkVar) n.index += offset;
  e.mark_dim_ = new_mark_dim;
  for (const Node& n : e.nodes_)
    if (n.op == Op::MarkVar && (n.index < 0 || n.index >= new_mark_dim))
      throw std::invalid_argument("mark shift out of range");
  return e;
}

inline Expr Expr::diff(Op var_kind, int index) const {
  if (root_ < 0) throw std::invalid_argument("empty expression");
  Expr d = diff_node(root_, var_kind, index);
  d.state_dim_ = std::max(d.state_dim_, state_dim_);
  d.mark_dim_ = std::max(d.mark_dim_, mark_dim_);
  return d;
}

inline Expr Expr::diff_node(std::int32_t i, Op var_kind, int index) const {
  const Node& n = nodes_[i];
  auto zero = [&] {
    Expr z = constant(0.0);
    z.state_dim_ = state_dim_;
    z.mark_dim_ = mark_dim_;
    return z;
  };
  switch (n.op) {
    case Op::Const: case Op::Time: return zero();
    case Op::StateVar:
      return (var_kind == Op::StateVar && n.index == index)
                 ? constant(1.0) : zero();
    case Op::MarkVar:
      return (var_kind == Op::MarkVar && n.index == index)
                 ? constant(1.0) : zero();
    case Op::Add:
      return add(diff_node(n.a, var_kind, index), diff_node(n.b, var_kind, index));
    case Op::Sub:
      return sub(diff_node(n.a, var_kind, index), diff_node(n.b, var_kind, index));
    case Op::Mul: {
      Expr u = subexpr(n.a), v = subexpr(n.b);
      return add(mul(diff_node(n.a, var_kind, index), v),
                 mul(u, diff_node(n.b, var_kind, index)));
    }
    case Op::Div: {
      Expr u = subexpr(n.a), v = subexpr(n.b);
      Expr du = diff_node(n.a, var_kind, index);
      Expr dv = diff_node(n.b, var_kind, index);
      // (du*v - u*dv) / v^2
      return div(sub(mul(du, v), mul(u, dv)), mul(v, v));
    }
    case Op::Pow: {
      Expr u = subexpr(n.a), v = subexpr(n.b);
      Expr du = diff_node(n.a, var_kind, index);
      if (v.is_constant()) {
        const double c = v.constant_value();
        if (c == 0.0) return zero();
        return mul(constant(c), mul(pow(u, constant(c - 1.0)), du));
      }
      Expr dv = diff_node(n.b, var_kind, index);
      // u^v * (dv*log u + v*du/u)
      return mul(pow(u, v),
                 add(mul(dv, apply(Fun::Log, u)), div(mul(v, du), u)));
    }
    case Op::Neg: return neg(diff_node(n.a, var_kind, index));
    case Op::Fun: {
      Expr u = subexpr(n.a);
      Expr du = diff_node(n.a, var_kind, index);
      switch (n.fn) {
        case Fun::Sin: return mul(apply(Fun::Cos, u), du);
        case Fun::Cos: return neg(mul(apply(Fun::Sin, u), du));
        case Fun::Exp: return mul(apply(Fun::Exp, u), du);
        case Fun::Log: return div(du, u);
        case Fun::Tanh: {
          Expr th = apply(Fun::Tanh, u);
          return mul(sub(constant(1.0), mul(th, th)), du);
        }
        case Fun::Abs: return mul(apply(Fun::Sign, u), du);
        case Fun::Sqrt:
          return div(du, mul(constant(2.0), apply(Fun::Sqrt, u)));
        case Fun::Sign: return zero();
      }
      return zero();
    }
  }
  return zero();
}

inline Expr Expr::canon_node(std::int32_t i) const {
  const Node& n = nodes_[i];
  switch (n.op) {
    case Op::Const: case Op::StateVar: case Op::MarkVar: case Op::Time:
      return subexpr(i);
    case Op::Add: return add(canon_node(n.a), canon_node(n.b));
    case Op::Sub: return sub(canon_node(n.a), canon_node(n.b));
    case Op::Mul: return mul(canon_node(n.a), canon_node(n.b));
    case Op::Div: return div(canon_node(n.a), canon_node(n.b));
    case Op::Pow: return pow(canon_node(n.a), canon_node(n.b));
    case Op::Neg: return neg(canon_node(n.a));
    case Op::Fun: return apply(n.fn, canon_node(n.a));
  }
  return subexpr(i);
}

inline Expr Expr::canonical() const {
  if (root_ < 0) throw std::invalid_argument("empty expression");
  Expr c = canon_node(root_);
  c.state_dim_ = state_dim_;
  c.mark_dim_ = mark_dim_;
  return c;
}

inline int Expr::prec(std::int32_t i) const {
  switch (nodes_[i].op) {
    case Op::Add: case Op::Sub: return 1;
    case Op::Mul: case Op::Div: return 2;
    case Op::Neg: return 3;
    case Op::Pow: return 4;
    case Op::Const:
      return nodes_[i].value < 0 ? 3 : 5;  // negative literals print a sign
    default: return 5;
  }
}

inline void Expr::print(std::int32_t i, int parent_prec,
                        std::string& out) const {
  const Node& n = nodes_[i];
  const int p = prec(i);
  const bool wrap = p < parent_prec;
  if (wrap) out += '(';
  switch (n.op) {
    case Op::Const: out += detail::format_double(n.value); break;
    case Op::StateVar: out += 'x'; out += std::to_string(n.index + 1); break;
    case Op::MarkVar: out += 'y'; out += std::to_string(n.index + 1); break;
    case Op::Time: out += 't'; break;
    case Op::Add: print(n.a, 1, out); out += '+'; print(n.b, 1, out); break;
    case Op::Sub: print(n.a, 1, out); out += '-'; print(n.b, 2, out); break;
    case Op::Mul: print(n.a, 2, out); out += '*'; print(n.b, 2, out); break;
    case Op::Div: print(n.a, 2, out); out += '/'; print(n.b, 3, out); break;
    case Op::Pow: print(n.a, 5, out); out += '^'; print(n.b, 4, out); break;
    case Op::Neg: out += '-'; print(n.a, 3, out); break;
    case Op::Fun:
      out += detail::fun_name(n.fn); out += '(';
      print(n.a, 0, out); out += ')';
      break;
  }
  if (wrap) out += ')';
}

struct ExprParser {
  std::string_view text;
  std::size_t pos = 0;
  int state_dim, mark_dim;
  Expr out;

  void skip_ws() {
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t' ||
                                 text[pos] == '\n' || text[pos] == '\r'))
      ++pos;
  }

  bool peek(char c) {
    skip_ws();
    return pos < text.size() && text[pos] == c;
  }

  bool consume(char c) {
    if (peek(c)) { ++pos; return true; }
    return false;
  }

  std::int32_t parse_expr() {
    auto lhs = parse_term();
    for (;;) {
      skip_ws();
      if (consume('+')) {
        auto rhs = parse_term();
        lhs = out.push({Op::Add, Fun::Sin, lhs, rhs, 0, 0,
                        static_cast<std::int64_t>(pos)});
      } else if (consume('-')) {
        auto rhs = parse_term();
        lhs = out.push({Op::Sub, Fun::Sin, lhs, rhs, 0, 0,
                        static_cast<std::int64_t>(pos)});
      } else {
        return lhs;
      }
    }
  }

  std::int32_t parse_term() {
    auto lhs = parse_factor();
    for (;;) {
      skip_ws();
      if (consume('*')) {
        auto rhs = parse_factor();
        lhs = out.push({Op::Mul, Fun::Sin, lhs, rhs, 0, 0,
                        static_cast<std::int64_t>(pos)});
      } else if (consume('/')) {
        auto rhs = parse_factor();
        lhs = out.push({Op::Div, Fun::Sin, lhs, rhs, 0, 0,
                        static_cast<std::int64_t>(pos)});
      } else {
        return lhs;
      }
    }
  }

  std::int32_t parse_factor() {
    skip_ws();
    if (consume('-')) {
      const auto at = static_cast<std::int64_t>(pos - 1);
      auto a = parse_factor();
      return out.push({Op::Neg, Fun::Sin, a, -1, 0, 0, at});
    }
    return parse_power();
  }

  std::int32_t parse_power() {
    auto base = parse_atom();
    skip_ws();
    if (consume('^')) {
      const auto at = static_cast<std::int64_t>(pos - 1);
      auto ex = parse_factor();  // right associative; exponent may be signed
      return out.push({Op::Pow, Fun::Sin, base, ex, 0, 0, at});
    }
    return base;
  }

  std::int32_t parse_atom() {
    skip_ws();
    if (pos >= text.size())
      throw ParseError("unexpected end of expression", pos);
    const char c = text[pos];
    if (c == '(') {
      ++pos;
      auto inner = parse_expr();
      skip_ws();
      if (!consume(')')) throw ParseError("expected ')'", pos);
      return inner;
    }
    if ((c >= '0' && c <= '9') || c == '.') return parse_number();
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_')
      return parse_identifier();
    throw ParseError(std::string("unexpected character '") + c + "'", pos);
  }

  std::int32_t parse_number() {
    const auto at = static_cast<std::int64_t>(pos);
    double v = 0;
    const char* first = text.data() + pos;
    const char* last = text.data() + text.size();
    auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc{})
      throw ParseError("malformed number", pos);
    pos += static_cast<std::size_t>(res.ptr - first);
    return out.push({Op::Const, Fun::Sin, -1, -1, 0, v, at});
  }

  std::int32_t parse_identifier() {
    const std::size_t start = pos;
    while (pos < text.size() &&
           ((text[pos] >= 'a' && text[pos] <= 'z') ||
            (text[pos] >= 'A' && text[pos] <= 'Z') ||
            (text[pos] >= '0' && text[pos] <= '9') || text[pos] == '_'))
      ++pos;
    const std::string_view name = text.substr(start, pos - start);
    const auto at = static_cast<std::int64_t>(start);

    if (name == "t")
      return out.push({Op::Time, Fun::Sin, -1, -1, 0, 0, at});

    if ((name[0] == 'x' || name[0] == 'y') && name.size() > 1 &&
        name.find_first_not_of("0123456789", 1) == std::string_view::npos) {
      int idx = 0;
      std::from_chars(name.data() + 1, name.data() + name.size(), idx);
      const bool is_state = name[0] == 'x';
      const int dim = is_state ? state_dim : mark_dim;
      if (idx < 1 || idx > dim)
        throw ParseError(std::string(is_state ? "state" : "mark") +
                             " variable " + std::string(name) +
                             " out of range [1," + std::to_string(dim) + "]",
                         start);
      return out.push({is_state ? Op::StateVar : Op::MarkVar, Fun::Sin, -1, -1,
                       idx - 1, 0, at});
    }

    static constexpr std::pair<std::string_view, Fun> kFuns[] = {
        {"sin", Fun::Sin},   {"cos", Fun::Cos},   {"exp", Fun::Exp},
        {"log", Fun::Log},   {"tanh", Fun::Tanh}, {"abs", Fun::Abs},
        {"sqrt", Fun::Sqrt}, {"sign", Fun::Sign}};
    for (auto [fname, tag] : kFuns) {
      if (name == fname) {
        skip_ws();
        if (!consume('('))
          throw ParseError("expected '(' after function name", pos);
        auto arg = parse_expr();
        skip_ws();
        if (!consume(')')) throw ParseError("expected ')'", pos);
        return out.push({Op::Fun, tag, arg, -1, 0, 0, at});
      }
    }
    throw ParseError("unknown identifier '" + std::string(name) + "'", start);
  }
};

inline Expr Expr::parse(std::string_view text, int state_dim, int mark_dim) {
  if (state_dim < 0 || mark_dim < 0)
    throw std::invalid_argument("negative dimension");
  ExprParser p{text, 0, state_dim, mark_dim, {}};
  p.out.state_dim_ = state_dim;
  p.out.mark_dim_ = mark_dim;
  auto root = p.parse_expr();
  p.skip_ws();
  if (p.pos != text.size())
    throw ParseError("trailing input", p.pos);
  p.out.root_ = root;
  return p.out;
}

// Row-major Jacobian (d comps / d x_j) of a vector-valued expression list,
// computed by forward-mode sweeps along the state basis directions.
inline std::vector<double> jacobian(std::span<const Expr> field,
                                    std::span<const double> x,
                                    std::span<const double> y, double t) {
  const auto e = field.size();
  const auto dim = x.size();
  std::vector<double> J(e * dim, 0.0);
  std::vector<double> dir(dim, 0.0);
  for (std::size_t j = 0; j < dim; ++j) {
    dir[j] = 1.0;
    for (std::size_t i = 0; i < e; ++i)
      J[i * dim + j] = field[i].eval_dual(x, y, t, dir).d;
    dir[j] = 0.0;
  }
  return J;
}

}  // namespace jumpflow::dsl
