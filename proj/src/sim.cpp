#include "emla/sim.hpp"

#include <algorithm>
#include <cmath>
#include "json.hpp"
#include <ostream>

#include "emla/csv.hpp"
#include "emla/error.hpp"

namespace emla {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t term_seed, std::uint64_t run_seed, std::uint64_t stream) {
  return splitmix64(term_seed ^ splitmix64(run_seed ^ splitmix64(stream)));
}

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace

double eval_disturbance(const DisturbanceTerm& term, double t, const JointState& x, double held) {
  return std::visit(
      Overloaded{
          [&](const SineTerm& s) { return s.amplitude * std::sin(s.frequency * t + s.phase); },
          [&](const CosineTerm& c) { return c.amplitude * std::cos(c.frequency * t + c.phase); },
          [&](const ArctanDecayTerm& a) { return a.a * std::atan(x.v_l) * std::exp(-a.b * t); },
          [&](const UniformTerm&) { return held; },
          [&](const ConstantTerm& c) { return c.value; },
          [&](const CsvTerm& c) { return interpolate_linear(c.t, c.value, t); },
      },
      term);
}

DisturbanceSampler::DisturbanceSampler(const DisturbanceSpec& spec, std::uint64_t run_seed) : spec_(&spec) {
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& terms = spec.terms[i];
    rngs_[i].resize(terms.size());
    held_[i].assign(terms.size(), 0.0);
    for (std::size_t j = 0; j < terms.size(); ++j) {
      if (const auto* u = std::get_if<UniformTerm>(&terms[j])) {
        rngs_[i][j].seed(mix_seed(u->seed, run_seed, 16 * i + j));
      }
    }
  }
}

void DisturbanceSampler::advance() {
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& terms = spec_->terms[i];
    for (std::size_t j = 0; j < terms.size(); ++j) {
      if (const auto* u = std::get_if<UniformTerm>(&terms[j])) {
        // Explicit mapping of the raw 64-bit draw keeps the sequence
        // independent of the standard library's distribution code.
        const double unit = static_cast<double>(rngs_[i][j]() >> 11) * 0x1.0p-53;
        held_[i][j] = u->lo + (u->hi - u->lo) * unit;
      }
    }
  }
}

double DisturbanceSampler::channel(int i, double t, const JointState& x) const {
  const auto ci = static_cast<std::size_t>(i);
  double sum = 0.0;
  const auto& terms = spec_->terms[ci];
  for (std::size_t j = 0; j < terms.size(); ++j) sum += eval_disturbance(terms[j], t, x, held_[ci][j]);
  return sum;
}

// ---------------------------------------------------------------------------

Reference::Reference(ReferenceSpec spec) : spec_(std::move(spec)) {
  if (const auto* q = std::get_if<QuinticReference>(&spec_)) {
    schedule_.emplace(q->waypoints, q->segment_durations);
  }
  if (const auto* tr = std::get_if<TableReference>(&spec_)) {
    if (tr->t.empty() || tr->t.size() != tr->x1d.size() || tr->t.size() != tr->x2d.size()) {
      throw ValidationError("reference", "table columns must be non-empty and equally long");
    }
  }
  if (const auto* s = std::get_if<SplineReference>(&spec_)) {
    if (s->joint < 0 || s->joint >= s->curve.num_joints()) throw ValidationError("reference.joint", "out of range");
  }
}

RefSample Reference::sample(double t) const {
  return std::visit(Overloaded{
                        [&](const ConstantReference& c) { return RefSample{c.position, 0.0, 0.0}; },
                        [&](const QuinticReference&) { return schedule_->sample(t); },
                        [&](const TableReference& tr) {
                          return RefSample{interpolate_linear(tr.t, tr.x1d, t), interpolate_linear(tr.t, tr.x2d, t),
                                           0.0};
                        },
                        [&](const SplineReference& s) {
                          const double tf = s.curve.t_final();
                          const auto sample = eval_trajectory(s.curve, std::clamp(t, 0.0, tf));
                          RefSample r{sample.q[s.joint], sample.qd[s.joint], sample.qdd[s.joint]};
                          if (t > tf) r.vel = r.acc = 0.0;
                          return r;
                        },
                    },
                    spec_);
}

double Reference::t_final() const {
  return std::visit(Overloaded{
                        [&](const ConstantReference&) { return 0.0; },
                        [&](const QuinticReference&) { return schedule_->t_final(); },
                        [&](const TableReference& tr) { return tr.t.back(); },
                        [&](const SplineReference& s) { return s.curve.t_final(); },
                    },
                    spec_);
}

double eval_load(const LoadSpec& load, double t, const Reference& ref) {
  return std::visit(Overloaded{
                        [&](const NoLoad&) { return 0.0; },
                        [&](const ConstantLoad& c) { return c.force; },
                        [&](const StaircaseLoad& s) {
                          const auto it = std::upper_bound(s.times.begin(), s.times.end(), t);
                          const std::size_t idx = it == s.times.begin() ? 0 : static_cast<std::size_t>(it - s.times.begin()) - 1;
                          return s.levels[idx] + s.ripple_amplitude * std::sin(s.ripple_frequency * t);
                        },
                        [&](const TableLoad& tl) { return interpolate_linear(tl.t, tl.force, t); },
                        [&](const ReferenceOracleLoad& o) {
                          const RefSample r = ref.sample(t);
                          return o.m_eff * r.acc + o.b_eff * r.vel + o.g_eff;
                        },
                    },
                    load);
}

// ---------------------------------------------------------------------------

void validate(const ScenarioConfig& cfg) {
  validate(cfg.params);
  validate(cfg.gains);
  validate(cfg.observer.config);
  if (!(cfg.dt > 0.0) || !std::isfinite(cfg.dt)) throw ValidationError("integrator.dt", "must be > 0");
  if (cfg.duration < 0.0 || !std::isfinite(cfg.duration)) throw ValidationError("integrator.duration", "must be >= 0");
  if (cfg.duration > 0.0 && cfg.duration < cfg.dt) throw ValidationError("integrator.duration", "must be >= dt");
  if (cfg.trace_every < 1) throw ValidationError("output.trace_every", "must be >= 1");
  if (!(cfg.controller.limits.iq_max > 0.0)) throw ValidationError("limits.iq_max", "must be > 0");
  if (!(cfg.controller.limits.u_max > 0.0)) throw ValidationError("limits.u_max", "must be > 0");
  if (cfg.controller.a1_ref_sign != 1.0 && cfg.controller.a1_ref_sign != -1.0) {
    throw ValidationError("controller.a1_ref_sign", "must be +1 or -1");
  }
  if (!(cfg.initial.eta_hat > 0.0)) throw ValidationError("initial.eta_hat", "must be > 0");
  for (int i = 0; i < 4; ++i) {
    if (cfg.initial.theta_hat[i] < 0.0) throw ValidationError("initial.theta_hat", "must be >= 0");
  }
  if (!(cfg.thresholds.guard > 0.0)) throw ValidationError("metrics.guard", "must be > 0");
  if (!(cfg.thresholds.conv_floor >= 0.0) || !(cfg.thresholds.conv_fraction >= 0.0)) {
    throw ValidationError("metrics", "thresholds must be >= 0");
  }
  if (cfg.noise.kind != SensorNoise::Kind::none && !(cfg.noise.amplitude >= 0.0)) {
    throw ValidationError("noise.amplitude", "must be >= 0");
  }
  for (int i = 0; i < 4; ++i) {
    const auto unit = cfg.disturbances.units[static_cast<std::size_t>(i)];
    if (unit == DisturbanceUnit::force && i != 1) {
      throw ValidationError("disturbances.units.d" + std::to_string(i + 1), "force unit only applies to d2");
    }
    if (unit == DisturbanceUnit::voltage && i < 2) {
      throw ValidationError("disturbances.units.d" + std::to_string(i + 1), "voltage unit only applies to d3, d4");
    }
  }
  if (const auto* s = std::get_if<StaircaseLoad>(&cfg.load)) {
    if (s->times.empty() || s->times.size() != s->levels.size()) {
      throw ValidationError("load.levels", "need one level per switch time");
    }
    if (!std::is_sorted(s->times.begin(), s->times.end())) throw ValidationError("load.times", "must be increasing");
  }
  const Reference ref(cfg.reference);
  if (cfg.duration == 0.0 && !(ref.t_final() > 0.0)) {
    throw ValidationError("integrator.duration", "required when the reference has no natural end");
  }
}

const std::vector<std::string>& trace_columns() {
  static const std::vector<std::string> cols = {
      "t",   "x1",     "x2", "x3", "x4", "x1d", "x2d", "x1hat", "x2hat", "eta_hat", "P1",       "P2",
      "P3",  "P4",     "th1", "th2", "th3", "th4", "a1",  "iq_ref", "uq",   "ud",      "tau_m",    "f_load",
      "d1",  "d2",     "d3", "d4", "sat_flags", "y",   "f_robust", "y_bar"};
  return cols;
}

MetricsReport compute_metrics(const TraceSeries& s, const MetricThresholds& th) {
  MetricsReport m;
  const std::size_t n = s.t.size();
  if (n == 0) throw ValidationError("trace", "empty");
  m.threshold = std::max(th.conv_fraction * std::abs(s.pos_err[0]), th.conv_floor);
  std::optional<std::size_t> last_out;
  for (std::size_t k = n; k-- > 0;) {
    if (std::abs(s.pos_err[k]) > m.threshold) {
      last_out = k;
      break;
    }
  }
  std::size_t start = 0;
  if (!last_out) {
    m.convergence_speed = s.t[0];
  } else if (*last_out + 1 < n) {
    start = *last_out + 1;
    m.convergence_speed = s.t[start];
  } else {
    m.converged = false;
    m.convergence_speed = std::numeric_limits<double>::quiet_NaN();
  }
  double sp = 0.0, sv = 0.0;
  for (std::size_t k = start; k < n; ++k) {
    m.pos_error = std::max(m.pos_error, std::abs(s.pos_err[k]));
    m.vel_error = std::max(m.vel_error, std::abs(s.vel_err[k]));
    sp += s.pos_err[k] * s.pos_err[k];
    sv += s.vel_err[k] * s.vel_err[k];
  }
  const double cnt = static_cast<double>(n - start);
  m.pos_error_rms = std::sqrt(sp / cnt);
  m.vel_error_rms = std::sqrt(sv / cnt);
  for (std::size_t k = 0; k < n; ++k) {
    m.torque_effort = std::max(m.torque_effort, std::abs(s.tau[k]));
    if (k < s.sat.size() && s.sat[k] != 0) ++m.saturation_count;
  }
  return m;
}

namespace {

Eigen::Vector4d to_vec(const JointState& x) { return {x.x_l, x.v_l, x.i_q, x.i_d}; }
JointState to_state(const Eigen::Vector4d& v) { return {v[0], v[1], v[2], v[3]}; }

double unit_scale(DisturbanceUnit u, int channel, const EmlaParams& p, const EquivalentParams& eq) {
  switch (u) {
    case DisturbanceUnit::state_rate:
      return 1.0;
    case DisturbanceUnit::force:
      return -eq.d_eq / eq.a_eq;
    case DisturbanceUnit::voltage:
      return channel == 2 ? 1.0 / p.l_q : 1.0 / p.l_d;
  }
  return 1.0;
}

}  // namespace

SimulationResult run_scenario(const ScenarioConfig& cfg) {
  validate(cfg);
  const EquivalentParams eq = equivalent_params(cfg.params);
  const Reference ref(cfg.reference);
  SimulationResult result;
  result.duration = cfg.duration > 0.0 ? cfg.duration : ref.t_final();
  const auto steps = static_cast<std::size_t>(std::llround(result.duration / cfg.dt));
  const double dt = cfg.dt;

  ObserverConfig ocfg = cfg.observer.config;
  ocfg.b_vec = Eigen::Vector2d(1.0, 1.5 * cfg.params.n_p * cfg.params.phi_pm / eq.a_eq);

  DisturbanceSampler dist(cfg.disturbances, cfg.seed);
  Vec4 scale{};
  for (int i = 0; i < 4; ++i) scale[i] = unit_scale(cfg.disturbances.units[static_cast<std::size_t>(i)], i, cfg.params, eq);

  std::mt19937_64 noise_rng(mix_seed(cfg.noise.seed, cfg.seed, 0xA5A5));
  const auto draw_noise = [&]() {
    switch (cfg.noise.kind) {
      case SensorNoise::Kind::none:
        return 0.0;
      case SensorNoise::Kind::uniform: {
        const double unit = static_cast<double>(noise_rng() >> 11) * 0x1.0p-53;
        return cfg.noise.amplitude * (2.0 * unit - 1.0);
      }
      case SensorNoise::Kind::gaussian: {
        // Box-Muller on explicit draws for a library-independent sequence.
        const double u1 = (static_cast<double>(noise_rng() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(noise_rng() >> 11) * 0x1.0p-53;
        return cfg.noise.amplitude * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
      }
    }
    return 0.0;
  };

  Eigen::Vector4d x = to_vec(cfg.initial.x);
  ObserverState obs{cfg.initial.x_hat, cfg.initial.eta_hat};
  ControllerState ctrl;
  ctrl.theta_hat = cfg.initial.theta_hat;

  TraceSeries series;
  series.t.reserve(steps + 1);
  series.pos_err.reserve(steps + 1);
  series.vel_err.reserve(steps + 1);
  series.tau.reserve(steps + 1);
  series.sat.reserve(steps + 1);

  const auto plant_rhs = [&](double t, const Eigen::Vector4d& xv, const MotorInputs& u, double f_load) {
    const JointState xs = to_state(xv);
    const SubsystemDecomposition truth = decompose(xs, cfg.params, eq);
    std::array<double, 4> extra{};
    for (int i = 0; i < 4; ++i) {
      extra[static_cast<std::size_t>(i)] =
          dist.channel(i, t, xs) * scale[i] + cfg.disturbances.uncertainty_scale[i] * truth.g_vals[i];
    }
    const JointState dx = state_derivative(xs, u, f_load, cfg.params, eq, extra, cfg.model);
    return to_vec(dx);
  };

  result.m_inf = ocfg.m(result.duration);
  result.min_eta_hat = obs.eta_hat;
  std::size_t k = 0;
  try {
    for (k = 0; k <= steps; ++k) {
      const double t = static_cast<double>(k) * dt;
      const RefSample r = ref.sample(t);
      const JointState xs = to_state(x);
      const double y = xs.x_l + draw_noise();
      dist.advance();

      const JointState x_ctrl{obs.x_hat[0], obs.x_hat[1], xs.i_q, xs.i_d};
      const ControllerStep cs =
          controller_step(x_ctrl, {r.pos, r.vel}, ctrl, cfg.params, eq, cfg.gains, cfg.controller, dt);
      const double f_load = eval_load(cfg.load, t, ref);

      JointState x_model = x_ctrl;
      if (cfg.observer.model_input == ObserverModelInput::measured_hybrid) x_model.x_l = y;
      if (cfg.observer.model_input == ObserverModelInput::truth) x_model = xs;
      const SubsystemDecomposition dm = decompose(x_model, cfg.params, eq);
      Eigen::Vector2d g_obs(dm.g_vals[0], dm.g_vals[1]);
      if (cfg.observer.load_feedforward) g_obs[1] -= eq.d_eq * f_load / eq.a_eq;
      const Eigen::Vector2d u_obs(0.0, cs.inputs.i_q_ref);

      ObserverStepInfo info;
      const ObserverState obs_next = observer_step(obs, ocfg, t, y, g_obs, u_obs, dt, &info);

      const double flux_current = cfg.model.flux_current == FluxCurrent::command ? cs.inputs.i_q_ref : xs.i_q;
      const double tau = 1.5 * cfg.params.n_p *
                         (xs.i_q * xs.i_d * cfg.params.l_d + flux_current * cfg.params.phi_pm -
                          xs.i_q * xs.i_d * cfg.params.l_q);
      const int sat = saturation_mask(cs.next.saturated);

      series.t.push_back(t);
      series.pos_err.push_back(xs.x_l - r.pos);
      series.vel_err.push_back(xs.v_l - r.vel);
      series.tau.push_back(tau);
      series.sat.push_back(sat);

      if (k % static_cast<std::size_t>(cfg.trace_every) == 0 || k == steps) {
        const auto& P = cs.next.p_track;
        const auto& th = cs.next.theta_hat;
        std::vector<double> row = {t,
                                   xs.x_l,
                                   xs.v_l,
                                   xs.i_q,
                                   xs.i_d,
                                   r.pos,
                                   r.vel,
                                   obs.x_hat[0],
                                   obs.x_hat[1],
                                   obs.eta_hat,
                                   P[0],
                                   P[1],
                                   P[2],
                                   P[3],
                                   th[0],
                                   th[1],
                                   th[2],
                                   th[3],
                                   cs.next.a1,
                                   cs.inputs.i_q_ref,
                                   cs.inputs.u_q,
                                   cs.inputs.u_d,
                                   tau,
                                   f_load,
                                   dist.channel(0, t, xs),
                                   dist.channel(1, t, xs),
                                   dist.channel(2, t, xs),
                                   dist.channel(3, t, xs),
                                   static_cast<double>(sat),
                                   y,
                                   info.f,
                                   info.y_bar};
        result.trace.push_back(std::move(row));
      }
      if (k == steps) break;

      const MotorInputs u = cs.inputs;
      x = rk4_step(
          [&](double tau_t, const Eigen::Vector4d& xv) {
            return plant_rhs(tau_t, xv, u, eval_load(cfg.load, tau_t, ref));
          },
          t, x, dt);
      obs = obs_next;
      ctrl = cs.next;
      result.min_eta_hat = std::min(result.min_eta_hat, obs.eta_hat);

      for (int i = 0; i < 4; ++i) {
        if (!std::isfinite(x[i]) || std::abs(x[i]) > cfg.thresholds.guard) {
          throw DivergenceError(k + 1, "state x" + std::to_string(i + 1) + " left the guard band");
        }
      }
      if (!obs.x_hat.allFinite() || obs.x_hat.cwiseAbs().maxCoeff() > cfg.thresholds.guard) {
        throw DivergenceError(k + 1, "observer estimate left the guard band");
      }
    }
  } catch (const DivergenceError& e) {
    result.diverged = true;
    result.divergence_message = e.what();
  } catch (const NumericError& e) {
    result.diverged = true;
    result.divergence_message = "step " + std::to_string(k) + ": " + e.what();
  }
  result.steps = k;
  result.metrics = compute_metrics(series, cfg.thresholds);
  if (result.diverged) result.metrics.converged = false;
  return result;
}

void write_trace_csv(std::ostream& out, const std::vector<std::vector<double>>& trace) {
  const auto& cols = trace_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  std::string line;
  for (const auto& row : trace) {
    line.clear();
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) line += ',';
      line += format_number(row[i]);
    }
    line += '\n';
    out << line;
  }
}

std::string metrics_json(const ScenarioConfig& cfg, const SimulationResult& result) {
  const auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  const auto& m = result.metrics;
  nlohmann::ordered_json j;
  j["scenario"] = cfg.name;
  j["seed"] = cfg.seed;
  j["diverged"] = result.diverged;
  if (result.diverged) j["divergence"] = result.divergence_message;
  j["steps"] = result.steps;
  j["duration"] = num(result.duration);
  j["converged"] = m.converged;
  j["convergence_speed"] = num(m.convergence_speed);
  j["threshold"] = num(m.threshold);
  j["pos_error"] = num(m.pos_error);
  j["vel_error"] = num(m.vel_error);
  j["pos_error_rms"] = num(m.pos_error_rms);
  j["vel_error_rms"] = num(m.vel_error_rms);
  j["torque_effort"] = num(m.torque_effort);
  j["saturation_count"] = m.saturation_count;
  j["min_eta_hat"] = num(result.min_eta_hat);
  return j.dump(2);
}

}  // namespace emla
