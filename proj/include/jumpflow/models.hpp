#pragma once

// The four built-in systems addressable by name. Each bundles the field
// system with a sensible initial condition; callers may override either.
//
//  * linear_additive       dx = a·x dt + σ dW            (closed-form law)
//  * linear_multiplicative dx = a·x dt + σ·x dW          (closed-form path)
//  * heisenberg            one noise direction feeding a second coordinate
//                          through the drift; spans only via the bracket
//  * tanh_jump         2-d state, identity diffusion, one jump component
//                          Y₁ = ½·tanh(x1)·y with a power-law mark density

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "jumpflow/engine.hpp"
#include "jumpflow/expr.hpp"
#include "jumpflow/levy.hpp"

namespace jumpflow::models {

struct Model {
  std::string name;
  engine::FieldSystem sys;
  std::vector<double> x0;
};

inline Model linear_additive(double a = 1.0, double sigma = 1.0) {
  Model m;
  m.name = "linear_additive";
  m.sys.e = 1;
  m.sys.d = 1;
  m.sys.Z = {dsl::Expr::mul(dsl::Expr::constant(a),
                            dsl::Expr::state_var(1, 1, 0))};
  m.sys.V = {{dsl::Expr::constant(sigma)}};
  m.sys.G = levy::LevyMeasure::finite_activity_uniform(1.0, 1.0);  // Y = 0
  m.x0 = {0.0};
  m.sys.validate();
  return m;
}

inline Model linear_multiplicative(double a = 1.0, double sigma = 0.5) {
  Model m;
  m.name = "linear_multiplicative";
  m.sys.e = 1;
  m.sys.d = 1;
  m.sys.Z = {dsl::Expr::mul(dsl::Expr::constant(a),
                            dsl::Expr::state_var(1, 1, 0))};
  m.sys.V = {{dsl::Expr::mul(dsl::Expr::constant(sigma),
                             dsl::Expr::state_var(1, 1, 0))}};
  m.sys.G = levy::LevyMeasure::finite_activity_uniform(1.0, 1.0);  // Y = 0
  m.x0 = {1.0};
  m.sys.validate();
  return m;
}

// Hypoelliptic fixture: noise enters x1 only (with a state-proportional
// coefficient, so the covariance is genuinely random), and x1 drives x2
// through the drift. Away from x1=0 the first bracket level spans the plane.
inline Model heisenberg() {
  Model m;
  m.name = "heisenberg";
  m.sys.e = 2;
  m.sys.d = 1;
  m.sys.Z = {dsl::Expr::constant(0.0), dsl::Expr::state_var(1, 2, 0)};
  m.sys.V = {{dsl::Expr::state_var(1, 2, 0), dsl::Expr::constant(0.0)}};
  m.sys.G = levy::LevyMeasure::finite_activity_uniform(1.0, 1.0);  // Y = 0
  m.x0 = {1.0, 0.0};
  m.sys.validate();
  return m;
}

// 2-d state with identity diffusion and a single jump component
// Y(x,y) = (½·tanh(x1)·y, 0); marks follow the |y|^{-kappa} density on
// 0 < |y| <= 1. The jump linearization I + D₁Y is triangular with unit
// diagonal, hence invertible for every (x, y).
inline Model tanh_jump(double kappa = 1.5) {
  Model m;
  m.name = "tanh_jump";
  m.sys.e = 2;
  m.sys.d = 2;
  m.sys.Z = {dsl::Expr::constant(0.0), dsl::Expr::constant(0.0)};
  m.sys.V = {{dsl::Expr::constant(1.0), dsl::Expr::constant(0.0)},
             {dsl::Expr::constant(0.0), dsl::Expr::constant(1.0)}};
  m.sys.Y = {dsl::Expr::parse("0.5*tanh(x1)*y1", 2, 1),
             dsl::Expr::parse("0", 2, 1)};
  m.sys.G = levy::LevyMeasure::power_law(kappa, 1.0);
  m.x0 = {0.5, 0.5};
  m.sys.validate();
  return m;
}

// Name lookup used by the config loader. kappa only affects tanh_jump.
inline Model by_name(std::string_view name, double kappa = 1.5) {
  if (name == "linear_additive") return linear_additive();
  if (name == "linear_multiplicative") return linear_multiplicative();
  if (name == "heisenberg") return heisenberg();
  if (name == "tanh_jump") return tanh_jump(kappa);
  throw std::invalid_argument("unknown built-in model: " + std::string(name));
}

}  // namespace jumpflow::models
