#include "emla/config.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <numbers>
#include <sstream>

#include "emla/csv.hpp"
#include "emla/error.hpp"
#include "emla/stability.hpp"
#include "json.hpp"

namespace emla {

using nlohmann::json;

namespace {

enum class Dim {
  none,
  length,
  time,
  force,
  inductance,
  resistance,
  flux,
  inertia,
  mass,
  rot_damping,
  lin_damping,
  rot_stiffness,
  lin_stiffness,
  current,
  voltage,
  velocity,
  acceleration,
  frequency,
  angle,
  torque,
};

struct UnitInfo {
  const char* name;
  double factor;
  Dim dim;
};

constexpr UnitInfo kUnits[] = {
    {"m", 1.0, Dim::length},
    {"cm", 1e-2, Dim::length},
    {"mm", 1e-3, Dim::length},
    {"um", 1e-6, Dim::length},
    {"s", 1.0, Dim::time},
    {"ms", 1e-3, Dim::time},
    {"N", 1.0, Dim::force},
    {"kN", 1e3, Dim::force},
    {"H", 1.0, Dim::inductance},
    {"mH", 1e-3, Dim::inductance},
    {"uH", 1e-6, Dim::inductance},
    {"Ohm", 1.0, Dim::resistance},
    {"mOhm", 1e-3, Dim::resistance},
    {"Wb", 1.0, Dim::flux},
    {"mWb", 1e-3, Dim::flux},
    {"kg*m^2", 1.0, Dim::inertia},
    {"kg*cm^2", 1e-4, Dim::inertia},
    {"kg", 1.0, Dim::mass},
    {"t", 1e3, Dim::mass},
    {"N*m*s/rad", 1.0, Dim::rot_damping},
    {"N*s/m", 1.0, Dim::lin_damping},
    {"N*m/rad", 1.0, Dim::rot_stiffness},
    {"kN*m/rad", 1e3, Dim::rot_stiffness},
    {"N/m", 1.0, Dim::lin_stiffness},
    {"N/mm", 1e3, Dim::lin_stiffness},
    {"N/um", 1e6, Dim::lin_stiffness},
    {"kN/mm", 1e6, Dim::lin_stiffness},
    {"A", 1.0, Dim::current},
    {"V", 1.0, Dim::voltage},
    {"m/s", 1.0, Dim::velocity},
    {"mm/s", 1e-3, Dim::velocity},
    {"m/s^2", 1.0, Dim::acceleration},
    {"rad/s", 1.0, Dim::frequency},
    {"Hz", 2.0 * std::numbers::pi, Dim::frequency},
    {"rad", 1.0, Dim::angle},
    {"deg", std::numbers::pi / 180.0, Dim::angle},
    {"N*m", 1.0, Dim::torque},
};

const UnitInfo* find_unit(const std::string& unit) {
  for (const auto& u : kUnits) {
    if (unit == u.name) return &u;
  }
  return nullptr;
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }
std::string index(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

void check_keys(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ValidationError(path.empty() ? "<root>" : path, "expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ValidationError(join(path, it.key()), "unknown key");
  }
}

const json& req(const json& obj, const std::string& path, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw ValidationError(join(path, key), "required field missing");
  return *it;
}

// Message of a nested error without its own field prefix.
std::string detail(const ValidationError& e) {
  const std::string w = e.what();
  const std::string prefix = e.field() + ": ";
  return w.rfind(prefix, 0) == 0 ? w.substr(prefix.size()) : w;
}

bool has(const json& obj, const char* key) { return obj.is_object() && obj.contains(key); }

double unit_factor(const json& unit_node, const std::string& path, Dim dim) {
  if (!unit_node.is_string()) throw ValidationError(path + ".unit", "expected a string");
  const auto unit = unit_node.get<std::string>();
  const UnitInfo* u = find_unit(unit);
  if (!u) throw ValidationError(path + ".unit", "unknown unit '" + unit + "'");
  if (dim != Dim::none && u->dim != dim) throw ValidationError(path + ".unit", "unit '" + unit + "' has the wrong dimension");
  return u->factor;
}

double plain_number(const json& v, const std::string& path) {
  if (!v.is_number()) throw ValidationError(path, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ValidationError(path, "must be finite");
  return d;
}

double number(const json& v, const std::string& path, Dim dim = Dim::none) {
  if (v.is_object()) {
    check_keys(v, path, {"value", "unit"});
    return plain_number(req(v, path, "value"), path + ".value") * unit_factor(req(v, path, "unit"), path, dim);
  }
  return plain_number(v, path);
}

double number_or(const json& obj, const std::string& path, const char* key, double fallback, Dim dim = Dim::none) {
  return has(obj, key) ? number(obj.at(key), join(path, key), dim) : fallback;
}

std::vector<double> numbers(const json& v, const std::string& path, Dim dim = Dim::none, std::size_t expected = 0) {
  const json* arr = &v;
  double factor = 1.0;
  std::string arr_path = path;
  if (v.is_object()) {
    check_keys(v, path, {"value", "unit"});
    arr = &req(v, path, "value");
    factor = unit_factor(req(v, path, "unit"), path, dim);
    arr_path = path + ".value";
  }
  if (!arr->is_array()) throw ValidationError(arr_path, "expected an array");
  if (expected && arr->size() != expected) {
    throw ValidationError(arr_path, "expected " + std::to_string(expected) + " entries, got " + std::to_string(arr->size()));
  }
  std::vector<double> out;
  for (std::size_t i = 0; i < arr->size(); ++i) {
    const auto& e = (*arr)[i];
    out.push_back(factor == 1.0 && e.is_object() ? number(e, index(arr_path, i), dim)
                                                 : plain_number(e, index(arr_path, i)) * factor);
  }
  return out;
}

Eigen::VectorXd vec(const json& v, const std::string& path, Dim dim, std::size_t expected) {
  const auto values = numbers(v, path, dim, expected);
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

Vec4 vec4(const json& v, const std::string& path) {
  const auto values = numbers(v, path, Dim::none, 4);
  return {values[0], values[1], values[2], values[3]};
}

std::string string_field(const json& obj, const std::string& path, const char* key) {
  const json& v = req(obj, path, key);
  if (!v.is_string()) throw ValidationError(join(path, key), "expected a string");
  return v.get<std::string>();
}

bool bool_or(const json& obj, const std::string& path, const char* key, bool fallback) {
  if (!has(obj, key)) return fallback;
  if (!obj.at(key).is_boolean()) throw ValidationError(join(path, key), "expected true or false");
  return obj.at(key).get<bool>();
}

int int_or(const json& obj, const std::string& path, const char* key, int fallback) {
  if (!has(obj, key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_integer()) throw ValidationError(join(path, key), "expected an integer");
  return v.get<int>();
}

std::uint64_t seed_or(const json& obj, const std::string& path, const char* key, std::uint64_t fallback) {
  if (!has(obj, key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    throw ValidationError(join(path, key), "expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

json parse_json(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(source, std::string("malformed JSON: ") + e.what());
  }
}

void check_schema(const json& root, const std::string& source) {
  if (!root.is_object()) throw ValidationError(source, "top level must be an object");
  const json& v = req(root, "", "schema_version");
  if (!v.is_number_integer() || v.get<int>() != kSchemaVersion) {
    throw ValidationError("schema_version", "unsupported value (expected " + std::to_string(kSchemaVersion) + ")");
  }
}

std::string resolve(const std::string& base_dir, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? p : (std::filesystem::path(base_dir) / path).string();
}

CsvTable csv_reference(const json& obj, const std::string& path, const std::string& base_dir) {
  const std::string file = resolve(base_dir, string_field(obj, path, "path"));
  try {
    return read_csv_file(file);
  } catch (const ValidationError& e) {
    throw ValidationError(join(path, "path"), detail(e));
  }
}

// ---------------------------------------------------------------------------
// Trajectory problems

TrajectoryProblem problem_from_json(const json& j, const std::string& path, const std::string& base_dir) {
  check_keys(j, path, {"schema_version", "kind", "name", "notes", "constraints", "oracle", "optimizer", "output"});
  TrajectoryProblem prob;
  if (has(j, "name")) prob.name = string_field(j, path, "name");

  const std::string cp = join(path, "constraints");
  const json& c = req(j, path, "constraints");
  check_keys(c, cp, {"q_start", "q_end", "v_start", "v_end", "q_lb", "q_ub", "v_lb", "v_ub", "f_lb", "f_ub", "t_max",
                     "num_collocation"});
  auto& tc = prob.constraints;
  tc.q_start = vec(req(c, cp, "q_start"), join(cp, "q_start"), Dim::length, 0);
  const auto n = static_cast<std::size_t>(tc.q_start.size());
  if (n == 0) throw ValidationError(join(cp, "q_start"), "must have at least one joint");
  tc.q_end = vec(req(c, cp, "q_end"), join(cp, "q_end"), Dim::length, n);
  tc.v_start = vec(req(c, cp, "v_start"), join(cp, "v_start"), Dim::velocity, n);
  tc.v_end = vec(req(c, cp, "v_end"), join(cp, "v_end"), Dim::velocity, n);
  tc.q_lb = vec(req(c, cp, "q_lb"), join(cp, "q_lb"), Dim::length, n);
  tc.q_ub = vec(req(c, cp, "q_ub"), join(cp, "q_ub"), Dim::length, n);
  tc.v_lb = vec(req(c, cp, "v_lb"), join(cp, "v_lb"), Dim::velocity, n);
  tc.v_ub = vec(req(c, cp, "v_ub"), join(cp, "v_ub"), Dim::velocity, n);
  tc.f_lb = vec(req(c, cp, "f_lb"), join(cp, "f_lb"), Dim::force, n);
  tc.f_ub = vec(req(c, cp, "f_ub"), join(cp, "f_ub"), Dim::force, n);
  tc.t_max = number(req(c, cp, "t_max"), join(cp, "t_max"), Dim::time);
  tc.num_collocation = int_or(c, cp, "num_collocation", 101);

  const std::string op = join(path, "oracle");
  const json& o = req(j, path, "oracle");
  const std::string type = string_field(o, op, "type");
  if (type == "affine") {
    check_keys(o, op, {"type", "m_eff", "b_eff", "g_eff"});
    prob.m_eff = vec(req(o, op, "m_eff"), join(op, "m_eff"), Dim::mass, n);
    prob.b_eff = vec(req(o, op, "b_eff"), join(op, "b_eff"), Dim::lin_damping, n);
    prob.g_eff = vec(req(o, op, "g_eff"), join(op, "g_eff"), Dim::force, n);
    prob.oracle = std::make_shared<AffineInertialOracle>(*prob.m_eff, *prob.b_eff, *prob.g_eff);
  } else if (type == "table") {
    check_keys(o, op, {"type", "path"});
    const CsvTable table = csv_reference(o, op, base_dir);
    if (!table.column("t")) throw ValidationError(join(op, "path"), "missing column 't'");
    std::vector<std::vector<double>> forces;
    for (std::size_t jn = 1; jn <= n; ++jn) {
      const std::string name = n == 1 && table.column("f_l") ? "f_l" : "f_" + std::to_string(jn);
      if (!table.column(name)) throw ValidationError(join(op, "path"), "missing column '" + name + "'");
      forces.push_back(table.column_values(name));
    }
    try {
      prob.oracle = std::make_shared<TableLoadOracle>(table.column_values("t"), std::move(forces));
    } catch (const ValidationError& e) {
      throw ValidationError(join(op, "path"), detail(e));
    }
  } else {
    throw ValidationError(join(op, "type"), "unknown oracle type '" + type + "'");
  }

  if (has(j, "optimizer")) {
    const std::string pp = join(path, "optimizer");
    const json& oo = j.at("optimizer");
    check_keys(oo, pp, {"degree", "num_ctrl", "optimize_duration", "min_duration_fraction", "duration_iterations",
                        "tolerance", "max_penalty_rounds", "max_inner_iterations", "cost_mode"});
    auto& opt = prob.options;
    opt.degree = int_or(oo, pp, "degree", opt.degree);
    opt.num_ctrl = int_or(oo, pp, "num_ctrl", opt.num_ctrl);
    opt.optimize_duration = bool_or(oo, pp, "optimize_duration", opt.optimize_duration);
    opt.min_duration_fraction = number_or(oo, pp, "min_duration_fraction", opt.min_duration_fraction);
    opt.duration_iterations = int_or(oo, pp, "duration_iterations", opt.duration_iterations);
    opt.tolerance = number_or(oo, pp, "tolerance", opt.tolerance);
    opt.max_penalty_rounds = int_or(oo, pp, "max_penalty_rounds", opt.max_penalty_rounds);
    opt.max_inner_iterations = int_or(oo, pp, "max_inner_iterations", opt.max_inner_iterations);
    if (has(oo, "cost_mode")) {
      const auto mode = string_field(oo, pp, "cost_mode");
      if (mode == "summed") {
        opt.cost_mode = PowerCostMode::summed;
      } else if (mode == "per_joint") {
        opt.cost_mode = PowerCostMode::per_joint;
      } else {
        throw ValidationError(join(pp, "cost_mode"), "expected 'summed' or 'per_joint'");
      }
    }
    if (opt.degree < 3) throw ValidationError(join(pp, "degree"), "must be >= 3");
    if (opt.num_ctrl < opt.degree + 1) throw ValidationError(join(pp, "num_ctrl"), "must be >= degree + 1");
    if (!(opt.tolerance > 0.0)) throw ValidationError(join(pp, "tolerance"), "must be > 0");
  }
  if (has(j, "output")) {
    const std::string outp = join(path, "output");
    check_keys(j.at("output"), outp, {"samples"});
    prob.samples = int_or(j.at("output"), outp, "samples", prob.samples);
    if (prob.samples < 2) throw ValidationError(join(outp, "samples"), "must be >= 2");
  }

  try {
    validate(tc);
  } catch (const ValidationError& e) {
    throw ValidationError(join(cp, e.field()), detail(e));
  }
  return prob;
}

// ---------------------------------------------------------------------------
// Scenario pieces

EmlaParams plant_from_json(const json& j, const std::string& path, ModelOptions& model) {
  check_keys(j, path, {"phi_pm", "r_s", "l_d", "l_q", "n_p", "j_m", "j_c", "j_gb", "m_bs", "b_m", "b_bs", "rho",
                       "gear_ratio", "lead", "eta_gb", "k_tau1", "k_tau2", "k_tau3", "k_bearing", "k_screw", "k_nut",
                       "k_tube", "flux_current"});
  EmlaParams p;
  p.phi_pm = number(req(j, path, "phi_pm"), join(path, "phi_pm"), Dim::flux);
  p.r_s = number(req(j, path, "r_s"), join(path, "r_s"), Dim::resistance);
  p.l_d = number(req(j, path, "l_d"), join(path, "l_d"), Dim::inductance);
  p.l_q = number(req(j, path, "l_q"), join(path, "l_q"), Dim::inductance);
  const json& np = req(j, path, "n_p");
  if (!np.is_number_integer()) throw ValidationError(join(path, "n_p"), "expected an integer");
  p.n_p = np.get<int>();
  p.j_m = number(req(j, path, "j_m"), join(path, "j_m"), Dim::inertia);
  p.j_c = number(req(j, path, "j_c"), join(path, "j_c"), Dim::inertia);
  p.j_gb = number(req(j, path, "j_gb"), join(path, "j_gb"), Dim::inertia);
  p.m_bs = number(req(j, path, "m_bs"), join(path, "m_bs"), Dim::mass);
  p.b_m = number(req(j, path, "b_m"), join(path, "b_m"), Dim::rot_damping);
  p.b_bs = number(req(j, path, "b_bs"), join(path, "b_bs"), Dim::lin_damping);
  if (has(j, "rho") == has(j, "gear_ratio")) {
    throw ValidationError(join(path, "rho"), "give exactly one of 'rho' and 'gear_ratio'");
  }
  if (has(j, "rho")) {
    p.rho = number(j.at("rho"), join(path, "rho"));
  } else {
    const double ratio = number(j.at("gear_ratio"), join(path, "gear_ratio"));
    if (!(ratio >= 1.0)) throw ValidationError(join(path, "gear_ratio"), "must be >= 1");
    p.rho = 1.0 / ratio;
  }
  p.lead = number(req(j, path, "lead"), join(path, "lead"), Dim::length);
  p.eta_gb = number(req(j, path, "eta_gb"), join(path, "eta_gb"));
  p.k_tau1 = number(req(j, path, "k_tau1"), join(path, "k_tau1"), Dim::rot_stiffness);
  p.k_tau2 = number(req(j, path, "k_tau2"), join(path, "k_tau2"), Dim::rot_stiffness);
  p.k_tau3 = number(req(j, path, "k_tau3"), join(path, "k_tau3"), Dim::rot_stiffness);
  p.k_bearing = number(req(j, path, "k_bearing"), join(path, "k_bearing"), Dim::lin_stiffness);
  p.k_screw = number(req(j, path, "k_screw"), join(path, "k_screw"), Dim::lin_stiffness);
  p.k_nut = number(req(j, path, "k_nut"), join(path, "k_nut"), Dim::lin_stiffness);
  p.k_tube = number(req(j, path, "k_tube"), join(path, "k_tube"), Dim::lin_stiffness);
  if (has(j, "flux_current")) {
    const auto fc = string_field(j, path, "flux_current");
    if (fc == "command") {
      model.flux_current = FluxCurrent::command;
    } else if (fc == "state") {
      model.flux_current = FluxCurrent::state;
    } else {
      throw ValidationError(join(path, "flux_current"), "expected 'command' or 'state'");
    }
  }
  try {
    validate(p);
  } catch (const ValidationError& e) {
    throw ValidationError(join(path, e.field()), detail(e));
  }
  return p;
}

RsbaGains gains_from_json(const json& j, const std::string& path) {
  check_keys(j, path, {"beta", "zeta", "delta", "sigma"});
  RsbaGains g;
  g.beta = vec4(req(j, path, "beta"), join(path, "beta"));
  g.zeta = vec4(req(j, path, "zeta"), join(path, "zeta"));
  g.delta = vec4(req(j, path, "delta"), join(path, "delta"));
  g.sigma = vec4(req(j, path, "sigma"), join(path, "sigma"));
  const std::pair<const Vec4*, const char*> sets[] = {
      {&g.beta, "beta"}, {&g.zeta, "zeta"}, {&g.delta, "delta"}, {&g.sigma, "sigma"}};
  for (const auto& [v, name] : sets) {
    for (std::size_t i = 0; i < 4; ++i) {
      if (!((*v)[i] > 0.0)) throw ValidationError(index(join(path, name), i), "must be > 0");
    }
  }
  return g;
}

Eigen::Matrix2d mat2(const json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 2) throw ValidationError(path, "expected a 2x2 array");
  Eigen::Matrix2d m;
  for (std::size_t r = 0; r < 2; ++r) {
    const auto row = numbers(v[r], index(path, r), Dim::none, 2);
    m(static_cast<Eigen::Index>(r), 0) = row[0];
    m(static_cast<Eigen::Index>(r), 1) = row[1];
  }
  return m;
}

ObserverSetup observer_from_json(const json& j, const std::string& path) {
  check_keys(j, path, {"gain", "q", "ell", "m", "h", "use_model_terms", "model_input", "load_feedforward"});
  ObserverSetup setup;
  auto& cfg = setup.config;

  const std::string gp = join(path, "gain");
  const json& g = req(j, path, "gain");
  const std::string method = string_field(g, gp, "method");
  bool q_from_search = false;
  if (method == "explicit") {
    check_keys(g, gp, {"method", "alpha"});
    const auto a = numbers(req(g, gp, "alpha"), join(gp, "alpha"), Dim::none, 2);
    cfg.alpha = Eigen::Vector2d(a[0], a[1]);
  } else if (method == "pole_placement") {
    check_keys(g, gp, {"method", "poles"});
    const json& poles = req(g, gp, "poles");
    if (!poles.is_array() || poles.size() != 2) throw ValidationError(join(gp, "poles"), "expected two poles");
    std::array<std::complex<double>, 2> targets;
    for (std::size_t i = 0; i < 2; ++i) {
      const std::string pp = index(join(gp, "poles"), i);
      if (poles[i].is_array()) {
        const auto re_im = numbers(poles[i], pp, Dim::none, 2);
        targets[i] = {re_im[0], re_im[1]};
      } else {
        targets[i] = {number(poles[i], pp), 0.0};
      }
    }
    try {
      cfg.alpha = synthesize_gain(cfg.a_mat, cfg.c_vec, targets).alpha;
    } catch (const ValidationError& e) {
      throw ValidationError(join(gp, "poles"), e.what());
    }
  } else if (method == "random") {
    check_keys(g, gp, {"method", "seed", "alpha_max"});
    const auto rs = random_synthesis(cfg.a_mat, cfg.c_vec, seed_or(g, gp, "seed", 0),
                                     number_or(g, gp, "alpha_max", 1.0));
    cfg.alpha = rs.alpha;
    cfg.q_mat = rs.q_mat;
    q_from_search = true;
  } else {
    throw ValidationError(join(gp, "method"), "expected 'explicit', 'pole_placement' or 'random'");
  }

  if (!q_from_search) cfg.q_mat = mat2(req(j, path, "q"), join(path, "q"));
  if (!is_hurwitz(cfg.a_bar())) throw ValidationError(gp, "A - alpha C is not Hurwitz");
  if (!(cfg.q_mat(0, 0) > 0.0 && cfg.q_mat.determinant() > 0.0) || cfg.q_mat(0, 1) != cfg.q_mat(1, 0)) {
    throw ValidationError(join(path, "q"), "must be symmetric positive definite");
  }
  cfg.p_mat = solve_lyapunov_2x2(cfg.a_bar(), cfg.q_mat);

  cfg.ell = number_or(j, path, "ell", cfg.ell);
  if (has(j, "m")) {
    const std::string mp = join(path, "m");
    check_keys(j.at("m"), mp, {"m0", "lambda"});
    cfg.m.m0 = number(req(j.at("m"), mp, "m0"), join(mp, "m0"));
    cfg.m.lambda = number(req(j.at("m"), mp, "lambda"), join(mp, "lambda"));
  }
  if (has(j, "h")) {
    const std::string hp = join(path, "h");
    const json& h = j.at("h");
    check_keys(h, hp, {"kind", "a", "b"});
    const auto kind = string_field(h, hp, "kind");
    if (kind == "quartic") {
      cfg.h.kind = OutputGain::Kind::quartic;
    } else if (kind == "constant") {
      cfg.h.kind = OutputGain::Kind::constant;
    } else {
      throw ValidationError(join(hp, "kind"), "expected 'quartic' or 'constant'");
    }
    cfg.h.a = number(req(h, hp, "a"), join(hp, "a"));
    cfg.h.b = number_or(h, hp, "b", cfg.h.b);
  }
  cfg.use_model_terms = bool_or(j, path, "use_model_terms", true);
  if (has(j, "model_input")) {
    const auto mi = string_field(j, path, "model_input");
    if (mi == "measured_hybrid") {
      setup.model_input = ObserverModelInput::measured_hybrid;
    } else if (mi == "estimate") {
      setup.model_input = ObserverModelInput::estimate;
    } else if (mi == "truth") {
      setup.model_input = ObserverModelInput::truth;
    } else {
      throw ValidationError(join(path, "model_input"), "expected 'measured_hybrid', 'estimate' or 'truth'");
    }
  }
  setup.load_feedforward = bool_or(j, path, "load_feedforward", true);
  validate(cfg);
  return setup;
}

DisturbanceTerm term_from_json(const json& j, const std::string& path, const std::string& base_dir) {
  const auto type = string_field(j, path, "type");
  if (type == "sine" || type == "cosine") {
    check_keys(j, path, {"type", "amplitude", "frequency", "phase"});
    const double a = number(req(j, path, "amplitude"), join(path, "amplitude"));
    const double w = number(req(j, path, "frequency"), join(path, "frequency"), Dim::frequency);
    const double ph = number_or(j, path, "phase", 0.0, Dim::angle);
    if (type == "sine") return SineTerm{a, w, ph};
    return CosineTerm{a, w, ph};
  }
  if (type == "arctan_decay") {
    check_keys(j, path, {"type", "a", "b"});
    return ArctanDecayTerm{number(req(j, path, "a"), join(path, "a")), number(req(j, path, "b"), join(path, "b"))};
  }
  if (type == "uniform") {
    check_keys(j, path, {"type", "lo", "hi", "seed"});
    UniformTerm u{number(req(j, path, "lo"), join(path, "lo")), number(req(j, path, "hi"), join(path, "hi")),
                  seed_or(j, path, "seed", 0)};
    if (!has(j, "seed")) throw ValidationError(join(path, "seed"), "random terms need an explicit seed");
    if (u.lo > u.hi) throw ValidationError(join(path, "lo"), "exceeds hi");
    return u;
  }
  if (type == "constant") {
    check_keys(j, path, {"type", "value"});
    return ConstantTerm{number(req(j, path, "value"), join(path, "value"))};
  }
  if (type == "csv") {
    check_keys(j, path, {"type", "path", "column"});
    const CsvTable table = csv_reference(j, path, base_dir);
    const std::string column = has(j, "column") ? string_field(j, path, "column") : "value";
    for (const std::string& name : {std::string("t"), column}) {
      if (!table.column(name)) throw ValidationError(join(path, "path"), "missing column '" + name + "'");
    }
    return CsvTerm{table.column_values("t"), table.column_values(column)};
  }
  throw ValidationError(join(path, "type"), "unknown disturbance type '" + type + "'");
}

DisturbanceSpec disturbances_from_json(const json& j, const std::string& path, const std::string& base_dir) {
  check_keys(j, path, {"d1", "d2", "d3", "d4", "units", "uncertainty_scale"});
  DisturbanceSpec spec;
  const char* names[4] = {"d1", "d2", "d3", "d4"};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!has(j, names[i])) continue;
    const std::string cp = join(path, names[i]);
    const json& arr = j.at(names[i]);
    if (!arr.is_array()) throw ValidationError(cp, "expected an array of terms");
    for (std::size_t k = 0; k < arr.size(); ++k) spec.terms[i].push_back(term_from_json(arr[k], index(cp, k), base_dir));
  }
  if (has(j, "units")) {
    const std::string up = join(path, "units");
    check_keys(j.at("units"), up, {"d1", "d2", "d3", "d4"});
    for (std::size_t i = 0; i < 4; ++i) {
      if (!has(j.at("units"), names[i])) continue;
      const auto u = string_field(j.at("units"), up, names[i]);
      if (u == "state_rate") {
        spec.units[i] = DisturbanceUnit::state_rate;
      } else if (u == "N") {
        if (i != 1) throw ValidationError(join(up, names[i]), "force unit only applies to d2");
        spec.units[i] = DisturbanceUnit::force;
      } else if (u == "V") {
        if (i < 2) throw ValidationError(join(up, names[i]), "voltage unit only applies to d3 and d4");
        spec.units[i] = DisturbanceUnit::voltage;
      } else {
        throw ValidationError(join(up, names[i]), "expected 'state_rate', 'N' or 'V'");
      }
    }
  }
  if (has(j, "uncertainty_scale")) spec.uncertainty_scale = vec4(j.at("uncertainty_scale"), join(path, "uncertainty_scale"));
  return spec;
}

}  // namespace

double to_si(double value, const std::string& unit, const std::string& field) {
  const UnitInfo* u = find_unit(unit);
  if (!u) throw ValidationError(field, "unknown unit '" + unit + "'");
  return value * u->factor;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(path, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string config_kind(const std::string& text, const std::string& source) {
  const json root = parse_json(text, source);
  check_schema(root, source);
  if (!has(root, "kind")) return "scenario";
  const json& k = root.at("kind");
  if (!k.is_string() || (k.get<std::string>() != "scenario" && k.get<std::string>() != "trajectory")) {
    throw ValidationError("kind", "expected 'scenario' or 'trajectory'");
  }
  return k.get<std::string>();
}

TrajectoryProblem parse_trajectory_problem(const std::string& text, const std::string& base_dir,
                                           const std::string& source) {
  const json root = parse_json(text, source);
  check_schema(root, source);
  return problem_from_json(root, "", base_dir);
}

TrajectoryProblem load_trajectory_problem(const std::string& path) {
  return parse_trajectory_problem(read_text_file(path), std::filesystem::path(path).parent_path().string(), path);
}

ScenarioConfig parse_scenario(const std::string& text, const std::string& base_dir, const std::string& source,
                              std::optional<std::uint64_t> seed_override) {
  const json root = parse_json(text, source);
  check_schema(root, source);
  check_keys(root, "", {"schema_version", "kind", "name", "notes", "seed", "plant", "limits", "gains", "controller",
                        "observer", "reference", "load", "disturbances", "noise", "initial", "integrator", "metrics",
                        "output"});
  if (has(root, "kind") && root.at("kind") != "scenario") throw ValidationError("kind", "expected 'scenario'");

  ScenarioConfig cfg;
  if (has(root, "name")) cfg.name = string_field(root, "", "name");
  cfg.seed = seed_override ? *seed_override : seed_or(root, "", "seed", 0);
  cfg.params = plant_from_json(req(root, "", "plant"), "plant", cfg.model);
  cfg.gains = gains_from_json(req(root, "", "gains"), "gains");

  if (has(root, "limits")) {
    const json& l = root.at("limits");
    check_keys(l, "limits", {"iq_max", "u_max"});
    cfg.controller.limits.iq_max = number_or(l, "limits", "iq_max", cfg.controller.limits.iq_max, Dim::current);
    cfg.controller.limits.u_max = number_or(l, "limits", "u_max", cfg.controller.limits.u_max, Dim::voltage);
    if (!(cfg.controller.limits.iq_max > 0.0)) throw ValidationError("limits.iq_max", "must be > 0");
    if (!(cfg.controller.limits.u_max > 0.0)) throw ValidationError("limits.u_max", "must be > 0");
  }
  if (has(root, "controller")) {
    const json& c = root.at("controller");
    check_keys(c, "controller", {"a1_ref_sign", "freeze_adaptation_when_saturated", "accel_limit",
                                   "max_step_gain"});
    cfg.controller.a1_ref_sign = number_or(c, "controller", "a1_ref_sign", -1.0);
    if (cfg.controller.a1_ref_sign != 1.0 && cfg.controller.a1_ref_sign != -1.0) {
      throw ValidationError("controller.a1_ref_sign", "must be +1 or -1");
    }
    cfg.controller.freeze_adaptation_when_saturated =
        bool_or(c, "controller", "freeze_adaptation_when_saturated", true);
    cfg.controller.accel_limit = number_or(c, "controller", "accel_limit", 0.0, Dim::acceleration);
    if (!(cfg.controller.accel_limit >= 0.0)) throw ValidationError("controller.accel_limit", "must be >= 0");
    cfg.controller.max_step_gain = number_or(c, "controller", "max_step_gain", 0.0);
    if (!(cfg.controller.max_step_gain >= 0.0)) throw ValidationError("controller.max_step_gain", "must be >= 0");
  }
  cfg.observer = observer_from_json(req(root, "", "observer"), "observer");

  // Reference.
  std::optional<TrajectoryProblem> problem;
  int problem_joint = 0;
  {
    const std::string rp = "reference";
    const json& r = req(root, "", "reference");
    const auto type = string_field(r, rp, "type");
    if (type == "constant") {
      check_keys(r, rp, {"type", "position"});
      cfg.reference = ConstantReference{number(req(r, rp, "position"), join(rp, "position"), Dim::length)};
    } else if (type == "quintic") {
      check_keys(r, rp, {"type", "waypoints", "segment_duration", "segment_durations"});
      QuinticReference q;
      const json& w = req(r, rp, "waypoints");
      if (!w.is_array() || w.empty()) throw ValidationError(join(rp, "waypoints"), "expected a non-empty array");
      for (std::size_t i = 0; i < w.size(); ++i) {
        const std::string wp = index(join(rp, "waypoints"), i);
        check_keys(w[i], wp, {"position", "dwell"});
        q.waypoints.push_back({number(req(w[i], wp, "position"), join(wp, "position"), Dim::length),
                               number_or(w[i], wp, "dwell", 0.0, Dim::time)});
        if (q.waypoints.back().dwell < 0.0) throw ValidationError(join(wp, "dwell"), "must be >= 0");
      }
      if (has(r, "segment_durations")) {
        q.segment_durations = numbers(r.at("segment_durations"), join(rp, "segment_durations"), Dim::time,
                                      q.waypoints.size() - 1);
      } else {
        q.segment_durations.assign(q.waypoints.size() - 1,
                                   number(req(r, rp, "segment_duration"), join(rp, "segment_duration"), Dim::time));
      }
      for (std::size_t i = 0; i < q.segment_durations.size(); ++i) {
        if (!(q.segment_durations[i] > 0.0)) {
          throw ValidationError(index(join(rp, "segment_durations"), i), "must be > 0");
        }
      }
      cfg.reference = q;
    } else if (type == "table") {
      check_keys(r, rp, {"type", "path"});
      const CsvTable table = csv_reference(r, rp, base_dir);
      const auto missing = table.missing_columns({"t", "x1d", "x2d"});
      if (!missing.empty()) throw ValidationError(join(rp, "path"), "missing column '" + missing.front() + "'");
      cfg.reference = TableReference{table.column_values("t"), table.column_values("x1d"), table.column_values("x2d")};
    } else if (type == "trajectory_csv") {
      check_keys(r, rp, {"type", "path", "joint"});
      const CsvTable table = csv_reference(r, rp, base_dir);
      const int jn = int_or(r, rp, "joint", 0);
      const std::string qc = "q_" + std::to_string(jn + 1);
      const std::string vc = "v_" + std::to_string(jn + 1);
      const auto missing = table.missing_columns({"t", qc, vc});
      if (!missing.empty()) throw ValidationError(join(rp, "path"), "missing column '" + missing.front() + "'");
      cfg.reference = TableReference{table.column_values("t"), table.column_values(qc), table.column_values(vc)};
    } else if (type == "optimized") {
      check_keys(r, rp, {"type", "problem", "problem_path", "joint"});
      if (has(r, "problem") == has(r, "problem_path")) {
        throw ValidationError(join(rp, "problem"), "give exactly one of 'problem' and 'problem_path'");
      }
      if (has(r, "problem")) {
        problem = problem_from_json(r.at("problem"), join(rp, "problem"), base_dir);
      } else {
        const std::string file = resolve(base_dir, string_field(r, rp, "problem_path"));
        try {
          problem = load_trajectory_problem(file);
        } catch (const ValidationError& e) {
          throw ValidationError(join(rp, "problem_path"), e.what());
        }
      }
      problem_joint = int_or(r, rp, "joint", 0);
      if (problem_joint < 0 || problem_joint >= problem->constraints.num_joints()) {
        throw ValidationError(join(rp, "joint"), "out of range");
      }
      const OptimizationResult opt = optimize_trajectory(problem->constraints, *problem->oracle, std::nullopt,
                                                         problem->options);
      if (!opt.report.converged) {
        throw ValidationError(join(rp, "problem"), "trajectory optimization did not meet the constraints");
      }
      cfg.reference = SplineReference{opt.curve, problem_joint};
    } else {
      throw ValidationError(join(rp, "type"), "unknown reference type '" + type + "'");
    }
  }

  if (has(root, "load")) {
    const std::string lp = "load";
    const json& l = root.at("load");
    const auto type = string_field(l, lp, "type");
    if (type == "none") {
      check_keys(l, lp, {"type"});
      cfg.load = NoLoad{};
    } else if (type == "constant") {
      check_keys(l, lp, {"type", "force"});
      cfg.load = ConstantLoad{number(req(l, lp, "force"), join(lp, "force"), Dim::force)};
    } else if (type == "staircase") {
      check_keys(l, lp, {"type", "times", "levels", "ripple_amplitude", "ripple_frequency"});
      StaircaseLoad s;
      s.times = numbers(req(l, lp, "times"), join(lp, "times"), Dim::time);
      s.levels = numbers(req(l, lp, "levels"), join(lp, "levels"), Dim::force, s.times.size());
      s.ripple_amplitude = number_or(l, lp, "ripple_amplitude", 0.0, Dim::force);
      s.ripple_frequency = number_or(l, lp, "ripple_frequency", 0.0, Dim::frequency);
      if (s.times.empty() || s.times.front() != 0.0) throw ValidationError(join(lp, "times"), "must start at 0");
      for (std::size_t i = 1; i < s.times.size(); ++i) {
        if (!(s.times[i] > s.times[i - 1])) throw ValidationError(index(join(lp, "times"), i), "must increase");
      }
      cfg.load = s;
    } else if (type == "csv") {
      check_keys(l, lp, {"type", "path"});
      const CsvTable table = csv_reference(l, lp, base_dir);
      const auto missing = table.missing_columns({"t", "f_l"});
      if (!missing.empty()) throw ValidationError(join(lp, "path"), "missing column '" + missing.front() + "'");
      cfg.load = TableLoad{table.column_values("t"), table.column_values("f_l")};
    } else if (type == "reference_oracle") {
      check_keys(l, lp, {"type", "m_eff", "b_eff", "g_eff"});
      cfg.load = ReferenceOracleLoad{number_or(l, lp, "m_eff", 0.0, Dim::mass),
                                     number_or(l, lp, "b_eff", 0.0, Dim::lin_damping),
                                     number_or(l, lp, "g_eff", 0.0, Dim::force)};
    } else if (type == "problem_oracle") {
      check_keys(l, lp, {"type"});
      if (!problem || !problem->m_eff) {
        throw ValidationError(join(lp, "type"), "needs an optimized reference with an affine oracle");
      }
      cfg.load = ReferenceOracleLoad{(*problem->m_eff)[problem_joint], (*problem->b_eff)[problem_joint],
                                     (*problem->g_eff)[problem_joint]};
    } else {
      throw ValidationError(join(lp, "type"), "unknown load type '" + type + "'");
    }
  }

  if (has(root, "disturbances")) cfg.disturbances = disturbances_from_json(root.at("disturbances"), "disturbances", base_dir);

  if (has(root, "noise")) {
    const std::string np = "noise";
    const json& n = root.at("noise");
    check_keys(n, np, {"kind", "amplitude", "seed"});
    const auto kind = string_field(n, np, "kind");
    if (kind == "none") {
      cfg.noise.kind = SensorNoise::Kind::none;
    } else if (kind == "uniform") {
      cfg.noise.kind = SensorNoise::Kind::uniform;
    } else if (kind == "gaussian") {
      cfg.noise.kind = SensorNoise::Kind::gaussian;
    } else {
      throw ValidationError(join(np, "kind"), "expected 'none', 'uniform' or 'gaussian'");
    }
    cfg.noise.amplitude = number_or(n, np, "amplitude", 0.0, Dim::length);
    if (cfg.noise.amplitude < 0.0) throw ValidationError(join(np, "amplitude"), "must be >= 0");
    if (cfg.noise.kind != SensorNoise::Kind::none && !has(n, "seed")) {
      throw ValidationError(join(np, "seed"), "random noise needs an explicit seed");
    }
    cfg.noise.seed = seed_or(n, np, "seed", 0);
  }

  {
    const std::string ip = "initial";
    const json& in = req(root, "", "initial");
    check_keys(in, ip, {"x", "x_hat", "eta_hat", "theta_hat"});
    const auto x = numbers(req(in, ip, "x"), join(ip, "x"), Dim::none, 4);
    cfg.initial.x = {x[0], x[1], x[2], x[3]};
    const auto xh = numbers(req(in, ip, "x_hat"), join(ip, "x_hat"), Dim::none, 2);
    cfg.initial.x_hat = Eigen::Vector2d(xh[0], xh[1]);
    cfg.initial.eta_hat = number_or(in, ip, "eta_hat", 1.0);
    if (!(cfg.initial.eta_hat > 0.0)) throw ValidationError(join(ip, "eta_hat"), "must be > 0");
    if (has(in, "theta_hat")) {
      cfg.initial.theta_hat = vec4(in.at("theta_hat"), join(ip, "theta_hat"));
      for (std::size_t i = 0; i < 4; ++i) {
        if (cfg.initial.theta_hat[i] < 0.0) throw ValidationError(index(join(ip, "theta_hat"), i), "must be >= 0");
      }
    }
  }

  if (has(root, "integrator")) {
    const std::string ip = "integrator";
    const json& in = root.at("integrator");
    check_keys(in, ip, {"dt", "duration"});
    cfg.dt = number_or(in, ip, "dt", cfg.dt, Dim::time);
    if (!(cfg.dt > 0.0)) throw ValidationError(join(ip, "dt"), "must be > 0");
    if (has(in, "duration") && !in.at("duration").is_null()) {
      cfg.duration = number(in.at("duration"), join(ip, "duration"), Dim::time);
      if (!(cfg.duration >= cfg.dt)) throw ValidationError(join(ip, "duration"), "must be >= dt");
    }
  }
  if (has(root, "metrics")) {
    const std::string mp = "metrics";
    const json& m = root.at("metrics");
    check_keys(m, mp, {"conv_fraction", "conv_floor", "guard"});
    cfg.thresholds.conv_fraction = number_or(m, mp, "conv_fraction", cfg.thresholds.conv_fraction);
    cfg.thresholds.conv_floor = number_or(m, mp, "conv_floor", cfg.thresholds.conv_floor, Dim::length);
    cfg.thresholds.guard = number_or(m, mp, "guard", cfg.thresholds.guard);
  }
  if (has(root, "output")) {
    check_keys(root.at("output"), "output", {"trace_every"});
    cfg.trace_every = int_or(root.at("output"), "output", "trace_every", 1);
    if (cfg.trace_every < 1) throw ValidationError("output.trace_every", "must be >= 1");
  }

  validate(cfg);
  return cfg;
}

ScenarioConfig load_scenario(const std::string& path, std::optional<std::uint64_t> seed_override) {
  return parse_scenario(read_text_file(path), std::filesystem::path(path).parent_path().string(), path,
                        seed_override);
}

}  // namespace emla
