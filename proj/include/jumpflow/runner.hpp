#pragma once

// JSON experiment configs: parse and validate (errors carry JSON-pointer
// style paths), serialize the resolved form back out, dispatch to the
// library, and persist results. Every run writes manifest.json (resolved
// config, seed, version, wall time) and summary.json next to any CSV tables.
//
// Needs nlohmann/json on the include path (vendored as json.hpp).

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "jumpflow/density.hpp"
#include "jumpflow/engine.hpp"
#include "jumpflow/expr.hpp"
#include "jumpflow/fields.hpp"
#include "jumpflow/inequalities.hpp"
#include "jumpflow/io.hpp"
#include "jumpflow/levy.hpp"
#include "jumpflow/malliavin.hpp"
#include "jumpflow/models.hpp"

namespace jumpflow::runner {

inline constexpr const char* kVersion = "jumpflow-0.1.0";

// Config-validation failure: the message starts with the JSON-pointer path
// of the offending field. Maps to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

using nlohmann::json;

[[noreturn]] inline void fail(const std::string& ptr, const std::string& msg) {
  throw ConfigError(ptr + ": " + msg);
}

inline const json& need(const json& j, const char* key,
                        const std::string& ptr) {
  if (!j.is_object()) fail(ptr, "expected an object");
  const auto it = j.find(key);
  if (it == j.end()) fail(ptr + "/" + key, "missing");
  return *it;
}

inline double num_at(const json& j, const std::string& ptr) {
  if (!j.is_number()) fail(ptr, "expected a number");
  return j.get<double>();
}

inline double num_field(const json& j, const char* key, const std::string& ptr,
                        std::optional<double> def = std::nullopt) {
  if (!j.is_object()) fail(ptr, "expected an object");
  const auto it = j.find(key);
  if (it == j.end()) {
    if (def) return *def;
    fail(ptr + "/" + key, "missing");
  }
  return num_at(*it, ptr + "/" + key);
}

inline std::int64_t int_field(const json& j, const char* key,
                              const std::string& ptr,
                              std::optional<std::int64_t> def = std::nullopt) {
  if (!j.is_object()) fail(ptr, "expected an object");
  const auto it = j.find(key);
  if (it == j.end()) {
    if (def) return *def;
    fail(ptr + "/" + key, "missing");
  }
  if (!it->is_number_integer()) fail(ptr + "/" + key, "expected an integer");
  return it->get<std::int64_t>();
}

inline bool bool_field(const json& j, const char* key, const std::string& ptr,
                       bool def) {
  const auto it = j.find(key);
  if (it == j.end()) return def;
  if (!it->is_boolean()) fail(ptr + "/" + key, "expected a boolean");
  return it->get<bool>();
}

inline std::string str_field(const json& j, const char* key,
                             const std::string& ptr,
                             std::optional<std::string> def = std::nullopt) {
  if (!j.is_object()) fail(ptr, "expected an object");
  const auto it = j.find(key);
  if (it == j.end()) {
    if (def) return *def;
    fail(ptr + "/" + key, "missing");
  }
  if (!it->is_string()) fail(ptr + "/" + key, "expected a string");
  return it->get<std::string>();
}

inline std::vector<double> num_array(const json& j, const std::string& ptr) {
  if (!j.is_array()) fail(ptr, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i)
    out.push_back(num_at(j[i], ptr + "/" + std::to_string(i)));
  return out;
}

inline dsl::Expr parse_expr(const std::string& text, int state_dim,
                            int mark_dim, const std::string& ptr) {
  try {
    return dsl::Expr::parse(text, state_dim, mark_dim);
  } catch (const std::exception& ex) {
    fail(ptr, std::string("bad expression: ") + ex.what());
  }
}

}  // namespace detail

struct SimulateParams {
  std::size_t n_paths = 1;
  bool truncated = false;
};
struct UhCheckParams {
  int jmax = 4;
  std::vector<double> box_lo, box_hi;
  int n_points = 64;
  fields::UhOptions opt;
};
struct CovTailParams {
  std::vector<double> eps_grid;
  std::size_t n_paths = 1000;
  std::vector<double> u;  // optional direction; empty = smallest eigenvalue
};
struct InverseMomentParams {
  double p = 2.0;
  std::size_t n_paths = 1000;
  double floor = 1e-12;
};
struct EmiParams {
  std::string f = "0.05*y1";
  double A = 0.1, delta = 0.5, rho = 0.02;
  std::size_t n_paths = 100000;
};
struct NorrisParams {
  std::string instance = "pure_diffusion";
  std::vector<double> eps_grid{0.5, 0.3, 0.2, 0.1};
  std::size_t n_paths = 10000;
};
struct DensityParams {
  double a = -1.0, sigma = 1.0, x0 = 0.0;  // linear-additive endpoint law
  std::size_t n_paths = 100000;
  int points = 401;
};
struct VerifyMeasureParams {
  double alpha = 0.5, beta = 1.0;
  std::vector<double> box_lo, box_hi;
};
struct IntervalCdfParams {
  int m = 5;
  double t0 = 1.0;
  std::vector<double> x_grid;  // empty = 20 uniform points in (0, t0]
};

using ExperimentParams =
    std::variant<SimulateParams, UhCheckParams, CovTailParams,
                 InverseMomentParams, EmiParams, NorrisParams, DensityParams,
                 VerifyMeasureParams, IntervalCdfParams>;

struct ExperimentConfig {
  models::Model model;
  engine::SimConfig sim;  // sim.seed mirrors the top-level seed
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  std::string kind;
  ExperimentParams params;
};

// ---------------------------------------------------------------------------
// parsing

namespace detail {

inline models::Model parse_model(const json& j) {
  const std::string ptr = "/model";
  if (!j.is_object()) fail(ptr, "expected an object");
  models::Model m;
  if (j.contains("builtin")) {
    const auto name = str_field(j, "builtin", ptr);
    const double kappa = num_field(j, "kappa", ptr, 1.5);
    try {
      m = models::by_name(name, kappa);
    } catch (const std::exception& ex) {
      fail(ptr + "/builtin", ex.what());
    }
  } else {
    const int e = static_cast<int>(int_field(j, "e", ptr));
    const int d = static_cast<int>(int_field(j, "d", ptr));
    if (e <= 0) fail(ptr + "/e", "must be positive");
    if (d < 0) fail(ptr + "/d", "must be non-negative");
    m.name = "custom";
    m.sys.e = e;
    m.sys.d = d;
    const auto& Z = need(j, "Z", ptr);
    if (!Z.is_array() || static_cast<int>(Z.size()) != e)
      fail(ptr + "/Z", "expected an array of e expression strings");
    for (std::size_t i = 0; i < Z.size(); ++i) {
      if (!Z[i].is_string())
        fail(ptr + "/Z/" + std::to_string(i), "expected a string");
      m.sys.Z.push_back(parse_expr(Z[i].get<std::string>(), e, 0,
                                   ptr + "/Z/" + std::to_string(i)));
    }
    const auto& V = need(j, "V", ptr);
    if (!V.is_array() || static_cast<int>(V.size()) != d)
      fail(ptr + "/V", "expected an array of d field rows");
    for (std::size_t i = 0; i < V.size(); ++i) {
      const auto rp = ptr + "/V/" + std::to_string(i);
      if (!V[i].is_array() || static_cast<int>(V[i].size()) != e)
        fail(rp, "expected an array of e expression strings");
      std::vector<dsl::Expr> row;
      for (std::size_t c = 0; c < V[i].size(); ++c) {
        if (!V[i][c].is_string())
          fail(rp + "/" + std::to_string(c), "expected a string");
        row.push_back(parse_expr(V[i][c].get<std::string>(), e, 0,
                                 rp + "/" + std::to_string(c)));
      }
      m.sys.V.push_back(std::move(row));
    }
    if (j.contains("Y")) {
      const auto& Y = j.at("Y");
      if (!Y.is_array() || static_cast<int>(Y.size()) != e)
        fail(ptr + "/Y", "expected an array of e expression strings");
      for (std::size_t i = 0; i < Y.size(); ++i) {
        if (!Y[i].is_string())
          fail(ptr + "/Y/" + std::to_string(i), "expected a string");
        m.sys.Y.push_back(parse_expr(Y[i].get<std::string>(), e, 1,
                                     ptr + "/Y/" + std::to_string(i)));
      }
    }
    m.x0 = num_array(need(j, "x0", ptr), ptr + "/x0");
  }
  if (j.contains("x0")) {
    m.x0 = num_array(j.at("x0"), ptr + "/x0");
  }
  if (static_cast<int>(m.x0.size()) != m.sys.e)
    fail(ptr + "/x0", "expected e entries");
  try {
    m.sys.validate();
  } catch (const std::exception& ex) {
    fail(ptr, ex.what());
  }
  return m;
}

inline levy::LevyMeasure parse_measure(const json& j) {
  const std::string ptr = "/measure";
  const auto name = str_field(j, "name", ptr);
  try {
    if (name == "power_law")
      return levy::LevyMeasure::power_law(num_field(j, "kappa", ptr),
                                          num_field(j, "hi", ptr, 1.0));
    if (name == "finite_activity_uniform")
      return levy::LevyMeasure::finite_activity_uniform(
          num_field(j, "rate", ptr), num_field(j, "hi", ptr, 1.0));
    if (name == "custom")
      return levy::LevyMeasure::custom(
          str_field(j, "density", ptr), num_field(j, "kappa", ptr),
          num_field(j, "lo", ptr, 0.0), num_field(j, "hi", ptr, 1.0),
          bool_field(j, "symmetric", ptr, true));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& ex) {
    fail(ptr, ex.what());
  }
  fail(ptr + "/name", "unknown measure '" + name + "'");
}

inline engine::SimConfig parse_sim(const json& j) {
  const std::string ptr = "/sim";
  engine::SimConfig cfg;
  if (j.is_null()) return cfg;
  if (!j.is_object()) fail(ptr, "expected an object");
  cfg.T = num_field(j, "T", ptr, cfg.T);
  cfg.dt = num_field(j, "dt", ptr, cfg.dt);
  cfg.cut = num_field(j, "cut", ptr, cfg.cut);
  cfg.gaussian_smalljump_correction =
      bool_field(j, "gaussian_smalljump_correction", ptr,
                 cfg.gaussian_smalljump_correction);
  cfg.record_jacobians =
      bool_field(j, "record_jacobians", ptr, cfg.record_jacobians);
  cfg.max_events = static_cast<std::uint64_t>(int_field(
      j, "max_events", ptr, static_cast<std::int64_t>(cfg.max_events)));
  try {
    cfg.validate();
  } catch (const std::exception& ex) {
    fail(ptr, ex.what());
  }
  return cfg;
}

inline std::size_t paths_field(const json& j, const std::string& ptr,
                               std::size_t def) {
  const auto v = int_field(j, "n_paths", ptr,
                           static_cast<std::int64_t>(def));
  if (v < 1) fail(ptr + "/n_paths", "must be >= 1");
  return static_cast<std::size_t>(v);
}

inline ExperimentParams parse_params(const std::string& kind, const json& j,
                                     const models::Model& model) {
  const std::string ptr = "/experiment";
  if (kind == "simulate") {
    SimulateParams p;
    p.n_paths = paths_field(j, ptr, p.n_paths);
    p.truncated = bool_field(j, "truncated", ptr, false);
    return p;
  }
  if (kind == "uh-check") {
    UhCheckParams p;
    p.jmax = static_cast<int>(int_field(j, "jmax", ptr, p.jmax));
    p.box_lo = num_array(need(j, "box_lo", ptr), ptr + "/box_lo");
    p.box_hi = num_array(need(j, "box_hi", ptr), ptr + "/box_hi");
    if (static_cast<int>(p.box_lo.size()) != model.sys.e ||
        static_cast<int>(p.box_hi.size()) != model.sys.e)
      fail(ptr + "/box_lo", "box must have e entries per side");
    p.n_points = static_cast<int>(int_field(j, "n_points", ptr, p.n_points));
    p.opt.c_min = num_field(j, "c_min", ptr, p.opt.c_min);
    p.opt.n_dirs = static_cast<int>(int_field(j, "n_dirs", ptr, p.opt.n_dirs));
    return p;
  }
  if (kind == "cov-tail") {
    CovTailParams p;
    p.eps_grid = num_array(need(j, "eps_grid", ptr), ptr + "/eps_grid");
    for (std::size_t i = 0; i < p.eps_grid.size(); ++i) {
      if (!(p.eps_grid[i] > 0.0))
        fail(ptr + "/eps_grid/" + std::to_string(i), "must be positive");
      if (i && !(p.eps_grid[i] < p.eps_grid[i - 1]))
        fail(ptr + "/eps_grid/" + std::to_string(i),
             "grid must be strictly decreasing");
    }
    if (p.eps_grid.empty()) fail(ptr + "/eps_grid", "must be non-empty");
    p.n_paths = paths_field(j, ptr, p.n_paths);
    if (j.contains("u")) {
      p.u = num_array(j.at("u"), ptr + "/u");
      if (static_cast<int>(p.u.size()) != model.sys.e)
        fail(ptr + "/u", "direction must have e entries");
    }
    return p;
  }
  if (kind == "inverse-moment") {
    InverseMomentParams p;
    p.p = num_field(j, "p", ptr, p.p);
    if (!(p.p >= 2.0)) fail(ptr + "/p", "must be >= 2");
    p.n_paths = paths_field(j, ptr, p.n_paths);
    p.floor = num_field(j, "floor", ptr, p.floor);
    if (!(p.floor > 0.0)) fail(ptr + "/floor", "must be positive");
    return p;
  }
  if (kind == "emi") {
    EmiParams p;
    p.f = str_field(j, "f", ptr, p.f);
    parse_expr(p.f, 0, 1, ptr + "/f");  // validate early
    p.A = num_field(j, "A", ptr, p.A);
    p.delta = num_field(j, "delta", ptr, p.delta);
    p.rho = num_field(j, "rho", ptr, p.rho);
    if (!(p.A > 0.0)) fail(ptr + "/A", "must be positive");
    if (!(p.delta > 0.0)) fail(ptr + "/delta", "must be positive");
    if (!(p.rho > 0.0)) fail(ptr + "/rho", "must be positive");
    p.n_paths = paths_field(j, ptr, p.n_paths);
    return p;
  }
  if (kind == "norris") {
    NorrisParams p;
    p.instance = str_field(j, "instance", ptr, p.instance);
    try {
      inequalities::norris_instance_by_name(p.instance);
    } catch (const std::exception& ex) {
      fail(ptr + "/instance", ex.what());
    }
    if (j.contains("eps_grid"))
      p.eps_grid = num_array(j.at("eps_grid"), ptr + "/eps_grid");
    for (std::size_t i = 0; i < p.eps_grid.size(); ++i)
      if (!(p.eps_grid[i] > 0.0 && p.eps_grid[i] < 1.0))
        fail(ptr + "/eps_grid/" + std::to_string(i), "must lie in (0,1)");
    if (p.eps_grid.empty()) fail(ptr + "/eps_grid", "must be non-empty");
    p.n_paths = paths_field(j, ptr, p.n_paths);
    return p;
  }
  if (kind == "density") {
    DensityParams p;
    p.a = num_field(j, "a", ptr, p.a);
    p.sigma = num_field(j, "sigma", ptr, p.sigma);
    if (!(p.sigma > 0.0)) fail(ptr + "/sigma", "must be positive");
    p.x0 = num_field(j, "x0", ptr, p.x0);
    p.n_paths = paths_field(j, ptr, p.n_paths);
    if (p.n_paths < 100) fail(ptr + "/n_paths", "need >= 100 for a KDE");
    p.points = static_cast<int>(int_field(j, "points", ptr, p.points));
    if (p.points < 5) fail(ptr + "/points", "need >= 5 grid points");
    if (model.name != "linear_additive")
      fail("/model/builtin", "density experiment requires linear_additive");
    return p;
  }
  if (kind == "verify-measure") {
    VerifyMeasureParams p;
    p.alpha = num_field(j, "alpha", ptr, p.alpha);
    if (!(p.alpha > 0.0)) fail(ptr + "/alpha", "must be positive");
    p.beta = num_field(j, "beta", ptr, p.beta);
    if (!(p.beta > 0.0)) fail(ptr + "/beta", "must be positive");
    p.box_lo = num_array(need(j, "box_lo", ptr), ptr + "/box_lo");
    p.box_hi = num_array(need(j, "box_hi", ptr), ptr + "/box_hi");
    if (static_cast<int>(p.box_lo.size()) != model.sys.e ||
        static_cast<int>(p.box_hi.size()) != model.sys.e)
      fail(ptr + "/box_lo", "box must have e entries per side");
    if (!model.sys.has_jumps())
      fail("/model", "verify-measure requires a model with a jump field");
    return p;
  }
  if (kind == "interval-cdf") {
    IntervalCdfParams p;
    p.m = static_cast<int>(int_field(j, "m", ptr, p.m));
    if (p.m < 1) fail(ptr + "/m", "must be >= 1");
    p.t0 = num_field(j, "t0", ptr, p.t0);
    if (!(p.t0 > 0.0)) fail(ptr + "/t0", "must be positive");
    if (j.contains("x_grid")) {
      p.x_grid = num_array(j.at("x_grid"), ptr + "/x_grid");
      for (std::size_t i = 0; i < p.x_grid.size(); ++i)
        if (p.x_grid[i] < 0.0 || p.x_grid[i] > p.t0)
          fail(ptr + "/x_grid/" + std::to_string(i), "must lie in [0, t0]");
    } else {
      for (int k = 1; k <= 20; ++k) p.x_grid.push_back(p.t0 * k / 20.0);
    }
    return p;
  }
  fail(ptr + "/type", "unknown experiment tag '" + kind + "'");
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using namespace detail;
  if (!j.is_object()) fail("", "top level must be an object");
  ExperimentConfig cfg;
  cfg.model = parse_model(need(j, "model", ""));
  if (j.contains("measure")) cfg.model.sys.G = parse_measure(j.at("measure"));
  if (cfg.model.name == "custom" && cfg.model.sys.has_jumps() &&
      !j.contains("measure"))
    fail("/measure", "missing (custom model has a jump field)");
  cfg.sim = parse_sim(j.contains("sim") ? j.at("sim") : nlohmann::json());
  const auto seed = int_field(j, "seed", "", 1);
  if (seed < 0) fail("/seed", "must be non-negative");
  cfg.seed = static_cast<std::uint64_t>(seed);
  cfg.sim.seed = cfg.seed;
  cfg.output_dir = str_field(j, "output_dir", "", std::string("out"));
  const auto& ex = need(j, "experiment", "");
  cfg.kind = str_field(ex, "type", "/experiment");
  cfg.params = parse_params(cfg.kind, ex, cfg.model);
  return cfg;
}

// ---------------------------------------------------------------------------
// serialization of the resolved config (round-trips through config_from_json)

namespace detail {

inline json measure_to_json(const levy::LevyMeasure& g) {
  json j;
  j["name"] = g.name;
  if (g.name == "power_law") {
    j["kappa"] = g.kappa;
    j["hi"] = g.hi;
  } else if (g.name == "finite_activity_uniform") {
    j["rate"] = g.density_at(0.5 * (g.lo + g.hi)) * 2.0 * (g.hi - g.lo);
    j["hi"] = g.hi;
  } else {
    j["density"] = g.density.str();
    j["kappa"] = g.kappa;
    j["lo"] = g.lo;
    j["hi"] = g.hi;
    j["symmetric"] = g.symmetric;
  }
  return j;
}

inline json model_to_json(const models::Model& m) {
  json j;
  if (m.name != "custom") {
    j["builtin"] = m.name;
  } else {
    j["e"] = m.sys.e;
    j["d"] = m.sys.d;
    json Z = json::array();
    for (const auto& z : m.sys.Z) Z.push_back(z.str());
    j["Z"] = Z;
    json V = json::array();
    for (const auto& row : m.sys.V) {
      json r = json::array();
      for (const auto& c : row) r.push_back(c.str());
      V.push_back(r);
    }
    j["V"] = V;
    if (!m.sys.Y.empty()) {
      json Y = json::array();
      for (const auto& y : m.sys.Y) Y.push_back(y.str());
      j["Y"] = Y;
    }
  }
  j["x0"] = m.x0;
  return j;
}

inline json params_to_json(const std::string& kind,
                           const ExperimentParams& params) {
  json j;
  j["type"] = kind;
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, SimulateParams>) {
          j["n_paths"] = p.n_paths;
          j["truncated"] = p.truncated;
        } else if constexpr (std::is_same_v<P, UhCheckParams>) {
          j["jmax"] = p.jmax;
          j["box_lo"] = p.box_lo;
          j["box_hi"] = p.box_hi;
          j["n_points"] = p.n_points;
          j["c_min"] = p.opt.c_min;
          j["n_dirs"] = p.opt.n_dirs;
        } else if constexpr (std::is_same_v<P, CovTailParams>) {
          j["eps_grid"] = p.eps_grid;
          j["n_paths"] = p.n_paths;
          if (!p.u.empty()) j["u"] = p.u;
        } else if constexpr (std::is_same_v<P, InverseMomentParams>) {
          j["p"] = p.p;
          j["n_paths"] = p.n_paths;
          j["floor"] = p.floor;
        } else if constexpr (std::is_same_v<P, EmiParams>) {
          j["f"] = p.f;
          j["A"] = p.A;
          j["delta"] = p.delta;
          j["rho"] = p.rho;
          j["n_paths"] = p.n_paths;
        } else if constexpr (std::is_same_v<P, NorrisParams>) {
          j["instance"] = p.instance;
          j["eps_grid"] = p.eps_grid;
          j["n_paths"] = p.n_paths;
        } else if constexpr (std::is_same_v<P, DensityParams>) {
          j["a"] = p.a;
          j["sigma"] = p.sigma;
          j["x0"] = p.x0;
          j["n_paths"] = p.n_paths;
          j["points"] = p.points;
        } else if constexpr (std::is_same_v<P, VerifyMeasureParams>) {
          j["alpha"] = p.alpha;
          j["beta"] = p.beta;
          j["box_lo"] = p.box_lo;
          j["box_hi"] = p.box_hi;
        } else if constexpr (std::is_same_v<P, IntervalCdfParams>) {
          j["m"] = p.m;
          j["t0"] = p.t0;
          j["x_grid"] = p.x_grid;
        }
      },
      params);
  return j;
}

}  // namespace detail

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["model"] = detail::model_to_json(cfg.model);
  // a jump-free model carries no measure; don't serialize the placeholder
  if (cfg.model.sys.has_jumps())
    j["measure"] = detail::measure_to_json(cfg.model.sys.G);
  j["sim"] = {{"T", cfg.sim.T},
              {"dt", cfg.sim.dt},
              {"cut", cfg.sim.cut},
              {"gaussian_smalljump_correction",
               cfg.sim.gaussian_smalljump_correction},
              {"record_jacobians", cfg.sim.record_jacobians},
              {"max_events", cfg.sim.max_events}};
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["experiment"] = detail::params_to_json(cfg.kind, cfg.params);
  return j;
}

// ---------------------------------------------------------------------------
// experiment dispatch

struct RunResult {
  nlohmann::json summary;
  std::vector<std::string> outputs;  // file names local to output_dir
};

namespace detail {

inline void write_json(const std::filesystem::path& p, const json& j) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + p.string());
  out << j.dump(2) << '\n';
}

inline json estimate_to_json(const engine::McEstimate& e) {
  return {{"value", e.value}, {"se", e.se}, {"n", e.n}, {"seed", e.seed}};
}

inline RunResult run_simulate(const ExperimentConfig& cfg,
                              const SimulateParams& p,
                              const std::filesystem::path& dir) {
  const auto cs = engine::CompiledSystem::compile(cfg.model.sys);
  std::vector<engine::Path> paths;
  std::size_t events = 0;
  for (std::size_t i = 0; i < p.n_paths; ++i) {
    rng::Stream rs(cfg.seed, i);
    auto path = p.truncated
                    ? engine::simulate_truncated_path(cs, cfg.model.x0,
                                                      cfg.sim, rs)
                    : engine::simulate_path(cs, cfg.model.x0, cfg.sim, rs);
    events += path.jumps.size();
    paths.push_back(std::move(path));
  }
  io::write_paths_csv((dir / "paths.csv").string(), paths);
  RunResult rr;
  rr.outputs = {"paths.csv"};
  rr.summary = {{"n_paths", p.n_paths},
                {"truncated", p.truncated},
                {"grid_points", paths.front().points()},
                {"jump_events", events}};
  return rr;
}

inline RunResult run_uh_check(const ExperimentConfig& cfg,
                              const UhCheckParams& p,
                              const std::filesystem::path& dir) {
  auto h = fields::bracket_hierarchy(cfg.model.sys, p.jmax);
  const levy::LevyMeasure* g =
      cfg.model.sys.has_jumps() ? &cfg.model.sys.G : nullptr;
  const auto rep =
      fields::uh_check_hierarchy(h, g, p.box_lo, p.box_hi, p.n_points, p.opt);
  std::vector<std::vector<double>> rows;
  for (std::size_t j = 0; j < rep.level_min.size(); ++j)
    rows.push_back({static_cast<double>(j), rep.level_min[j]});
  const std::vector<std::string> header{"level", "lambda_min"};
  io::write_csv((dir / "levels.csv").string(), header, rows);
  RunResult rr;
  rr.outputs = {"levels.csv"};
  rr.summary = {{"jmax", p.jmax},
                {"members", h.members.size()},
                {"c_est", rep.c_est},
                {"threshold", rep.threshold}};
  rr.summary["j0"] = rep.j0 ? json(*rep.j0) : json(nullptr);
  return rr;
}

inline RunResult run_cov_tail(const ExperimentConfig& cfg,
                              const CovTailParams& p,
                              const std::filesystem::path& dir,
                              int n_threads) {
  const auto est = malliavin::tail_probability(
      engine::CompiledSystem::compile(cfg.model.sys), cfg.model.x0, cfg.sim,
      p.eps_grid, p.n_paths, p.u, n_threads);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < est.eps_grid.size(); ++i)
    rows.push_back(
        {est.eps_grid[i], est.probs[i].value, est.probs[i].se});
  const std::vector<std::string> header{"eps", "prob", "se"};
  io::write_csv((dir / "tail.csv").string(), header, rows);
  RunResult rr;
  rr.outputs = {"tail.csv"};
  rr.summary = {{"n_paths", p.n_paths}};
  rr.summary["slope"] =
      est.fitted_slope ? json(*est.fitted_slope) : json(nullptr);
  return rr;
}

inline RunResult run_inverse_moment(const ExperimentConfig& cfg,
                                    const InverseMomentParams& p,
                                    int n_threads) {
  const auto est = malliavin::inverse_moment(
      engine::CompiledSystem::compile(cfg.model.sys), cfg.model.x0, cfg.sim,
      p.p, p.n_paths, p.floor, n_threads);
  RunResult rr;
  rr.summary = {{"p", p.p},
                {"floor", p.floor},
                {"estimate", estimate_to_json(est)}};
  return rr;
}

inline RunResult run_emi(const ExperimentConfig& cfg, const EmiParams& p,
                         const std::filesystem::path& dir, int n_threads) {
  inequalities::EmiInstance inst;
  inst.f = dsl::Expr::parse(p.f, 0, 1);
  inst.G = cfg.model.sys.G;
  inst.A = p.A;
  inst.delta = p.delta;
  inst.rho = p.rho;
  inst.T = cfg.sim.T;
  inst.cut = cfg.sim.cut;
  inst.dt = cfg.sim.dt;
  const auto res = inequalities::emi_experiment(inst, p.n_paths, cfg.seed,
                                                n_threads);
  const std::vector<std::string> header{"A",  "delta",     "rho",
                                        "empirical", "se", "bound",
                                        "bracket"};
  io::write_csv((dir / "emi.csv").string(), header,
                {{p.A, p.delta, p.rho, res.empirical.value, res.empirical.se,
                  res.bound, res.bracket}});
  RunResult rr;
  rr.outputs = {"emi.csv"};
  rr.summary = {{"empirical", estimate_to_json(res.empirical)},
                {"bound", res.bound},
                {"bracket", res.bracket}};
  return rr;
}

inline RunResult run_norris(const ExperimentConfig& cfg, const NorrisParams& p,
                            const std::filesystem::path& dir, int n_threads) {
  auto inst = inequalities::norris_instance_by_name(p.instance);
  const auto pts = inequalities::norris_experiment(inst, p.eps_grid, p.n_paths,
                                                   cfg.seed, n_threads);
  std::vector<std::vector<double>> rows;
  for (const auto& pt : pts)
    rows.push_back({pt.eps, pt.lhs_prob.value, pt.lhs_prob.se});
  const std::vector<std::string> header{"eps", "prob", "se"};
  io::write_csv((dir / "norris.csv").string(), header, rows);
  RunResult rr;
  rr.outputs = {"norris.csv"};
  rr.summary = {{"instance", p.instance}, {"z", inst.z()},
                {"n_paths", p.n_paths}};
  return rr;
}

inline RunResult run_density(const ExperimentConfig& cfg,
                             const DensityParams& p,
                             const std::filesystem::path& dir, int n_threads) {
  const auto rep = density::gaussian_baseline_report(
      p.a, p.sigma, p.x0, cfg.sim, p.n_paths, n_threads, p.points);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < rep.estimate.grid.points[0]; ++i) {
    const double x = rep.estimate.grid.coord(0, i);
    const double ref =
        density::detail::std_normal_pdf((x - rep.mean) / rep.sd) / rep.sd;
    rows.push_back(
        {x, rep.estimate.values[static_cast<std::size_t>(i)], ref});
  }
  const std::vector<std::string> header{"x", "kde", "baseline"};
  io::write_csv((dir / "density.csv").string(), header, rows);
  RunResult rr;
  rr.outputs = {"density.csv"};
  rr.summary = {{"l1_error", rep.l1_error},
                {"bandwidth", rep.estimate.bandwidth[0]},
                {"mean", rep.mean},
                {"sd", rep.sd},
                {"n_samples", rep.estimate.n_samples}};
  return rr;
}

inline RunResult run_verify_measure(const ExperimentConfig& cfg,
                                    const VerifyMeasureParams& p) {
  const auto rep =
      levy::check_conditions(cfg.model.sys.G, cfg.model.sys.Y, p.alpha,
                             p.box_lo, p.box_hi, p.beta);
  RunResult rr;
  rr.summary = {{"alpha", rep.alpha_used},
                {"beta", rep.beta_used},
                {"cond1_ok", rep.cond1_ok},
                {"cond1_sup_integral", rep.cond1_sup_integral},
                {"cond2_ok", rep.cond2_ok},
                {"cond2_limsup_ratio", rep.cond2_limsup_ratio},
                {"cond2_moment", rep.cond2_moment},
                {"cond3_ok", rep.cond3_ok},
                {"cond3_kphi", rep.cond3_kphi},
                {"cond3_deriv_ratio", rep.cond3_deriv_ratio},
                {"all_ok", rep.all_ok()}};
  return rr;
}

inline RunResult run_interval_cdf(const IntervalCdfParams& p,
                                  const std::filesystem::path& dir) {
  std::vector<std::vector<double>> rows;
  for (const double x : p.x_grid) {
    const auto c = inequalities::longest_interval_cdf(p.m, p.t0, x);
    rows.push_back({x, c.alternate_series, c.standard_formula});
  }
  const std::vector<std::string> header{"x", "alternate_series",
                                        "standard_formula"};
  io::write_csv((dir / "intervalcdf.csv").string(), header, rows);
  RunResult rr;
  rr.outputs = {"intervalcdf.csv"};
  rr.summary = {{"m", p.m}, {"t0", p.t0}};
  return rr;
}

}  // namespace detail

inline RunResult run_experiment(const ExperimentConfig& cfg, int n_threads,
                                const std::filesystem::path& dir) {
  using namespace detail;
  return std::visit(
      [&](const auto& p) -> RunResult {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, SimulateParams>)
          return run_simulate(cfg, p, dir);
        else if constexpr (std::is_same_v<P, UhCheckParams>)
          return run_uh_check(cfg, p, dir);
        else if constexpr (std::is_same_v<P, CovTailParams>)
          return run_cov_tail(cfg, p, dir, n_threads);
        else if constexpr (std::is_same_v<P, InverseMomentParams>)
          return run_inverse_moment(cfg, p, n_threads);
        else if constexpr (std::is_same_v<P, EmiParams>)
          return run_emi(cfg, p, dir, n_threads);
        else if constexpr (std::is_same_v<P, NorrisParams>)
          return run_norris(cfg, p, dir, n_threads);
        else if constexpr (std::is_same_v<P, DensityParams>)
          return run_density(cfg, p, dir, n_threads);
        else if constexpr (std::is_same_v<P, VerifyMeasureParams>)
          return run_verify_measure(cfg, p);
        else
          return run_interval_cdf(p, dir);
      },
      cfg.params);
}

// ---------------------------------------------------------------------------
// top-level entry point

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> paths;
  std::optional<std::string> out;
  int threads = 0;  // 0 = available parallelism
};

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config file not found: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(path + ": invalid JSON: " + ex.what());
  }
  return config_from_json(j);
}

inline void apply_overrides(ExperimentConfig& cfg, const Overrides& ov) {
  if (ov.seed) {
    cfg.seed = *ov.seed;
    cfg.sim.seed = *ov.seed;
  }
  if (ov.out) cfg.output_dir = *ov.out;
  if (ov.paths) {
    std::visit(
        [&](auto& p) {
          if constexpr (requires { p.n_paths; }) p.n_paths = *ov.paths;
        },
        cfg.params);
  }
}

// Exit codes: 0 success, 2 config/validation error, 3 runtime error.
inline int run(const std::string& config_path, const Overrides& ov,
               std::ostream& out, std::ostream& err) {
  try {
    auto cfg = load_config_file(config_path);
    apply_overrides(cfg, ov);

    const auto start = std::chrono::steady_clock::now();
    const std::filesystem::path dir(cfg.output_dir);
    std::filesystem::create_directories(dir);
    auto rr = run_experiment(cfg, ov.threads, dir);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();

    detail::write_json(dir / "summary.json", rr.summary);
    nlohmann::json manifest = {{"version", kVersion},
                               {"seed", cfg.seed},
                               {"experiment", cfg.kind},
                               {"config", config_to_json(cfg)},
                               {"wall_time_s", wall}};
    auto outputs = rr.outputs;
    outputs.push_back("summary.json");
    outputs.push_back("manifest.json");
    manifest["outputs"] = outputs;
    detail::write_json(dir / "manifest.json", manifest);

    out << cfg.kind << ": ok, outputs in " << dir.string() << "\n"
        << rr.summary.dump(2) << "\n";
    return 0;
  } catch (const ConfigError& ex) {
    err << "config error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    err << "runtime error: " << ex.what() << "\n";
    return 3;
  }
}

}  // namespace jumpflow::runner
