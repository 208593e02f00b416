#pragma once

// Closed-loop simulation of one actuator: plant, observer and RSBA
// controller stepped at a fixed rate with disturbance, uncertainty, load
// and sensor-noise injection, plus the tracking metrics.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "emla/model.hpp"
#include "emla/observer.hpp"
#include "emla/rsba.hpp"
#include "emla/trajectory.hpp"

namespace emla {

/// Classical fourth-order Runge-Kutta step for x' = f(t, x).
template <class State, class F>
State rk4_step(F&& f, double t, const State& x, double dt) {
  const State k1 = f(t, x);
  const State k2 = f(t + 0.5 * dt, State(x + (0.5 * dt) * k1));
  const State k3 = f(t + 0.5 * dt, State(x + (0.5 * dt) * k2));
  const State k4 = f(t + dt, State(x + dt * k3));
  return State(x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
}

// ---------------------------------------------------------------------------
// Disturbances

struct SineTerm {
  double amplitude = 0.0;
  double frequency = 0.0;  ///< rad/s
  double phase = 0.0;      ///< rad
};
struct CosineTerm {
  double amplitude = 0.0;
  double frequency = 0.0;
  double phase = 0.0;
};
/// a * arctan(x2) * exp(-b t)
struct ArctanDecayTerm {
  double a = 0.0;
  double b = 0.0;
};
/// Uniform on [lo, hi], redrawn once per control step.
struct UniformTerm {
  double lo = 0.0;
  double hi = 1.0;
  std::uint64_t seed = 0;
};
struct ConstantTerm {
  double value = 0.0;
};
struct CsvTerm {
  std::vector<double> t;
  std::vector<double> value;
};

using DisturbanceTerm = std::variant<SineTerm, CosineTerm, ArctanDecayTerm, UniformTerm, ConstantTerm, CsvTerm>;

/// Physical unit of a disturbance channel, which fixes how it enters the
/// state equations.
enum class DisturbanceUnit {
  state_rate,  ///< added to x_i' as is
  force,       ///< N at the load, scaled by -d_eq / a_eq (channel 2 only)
  voltage,     ///< V, scaled by 1/L_q or 1/L_d (channels 3 and 4 only)
};

struct DisturbanceSpec {
  std::array<std::vector<DisturbanceTerm>, 4> terms;
  std::array<DisturbanceUnit, 4> units{DisturbanceUnit::state_rate, DisturbanceUnit::state_rate,
                                       DisturbanceUnit::state_rate, DisturbanceUnit::state_rate};
  Vec4 uncertainty_scale{};  ///< F_i = scale_i * g_i(x)
};

/// Deterministic terms evaluated directly; uniform terms return `held`.
double eval_disturbance(const DisturbanceTerm& term, double t, const JointState& x, double held = 0.0);

/// Holds the per-step random draws for every uniform term.
class DisturbanceSampler {
 public:
  DisturbanceSampler(const DisturbanceSpec& spec, std::uint64_t run_seed);
  void advance();  ///< draw new values for the coming step
  /// Sum of channel `i` in its own unit.
  double channel(int i, double t, const JointState& x) const;

 private:
  const DisturbanceSpec* spec_;
  std::array<std::vector<std::mt19937_64>, 4> rngs_;
  std::array<std::vector<double>, 4> held_;
};

// ---------------------------------------------------------------------------
// References and loads

struct ConstantReference {
  double position = 0.0;
};
struct QuinticReference {
  std::vector<Waypoint> waypoints;
  std::vector<double> segment_durations;
};
/// Tabulated (t, x1d, x2d), linearly interpolated.
struct TableReference {
  std::vector<double> t, x1d, x2d;
};
/// One joint of a B-spline trajectory; held at its end value afterwards.
struct SplineReference {
  BsplineCurve curve;
  int joint = 0;
};

using ReferenceSpec = std::variant<ConstantReference, QuinticReference, TableReference, SplineReference>;

class Reference {
 public:
  explicit Reference(ReferenceSpec spec);
  RefSample sample(double t) const;
  /// Natural end time, 0 for a constant reference.
  double t_final() const;

 private:
  ReferenceSpec spec_;
  std::optional<QuinticSchedule> schedule_;
};

struct NoLoad {};
struct ConstantLoad {
  double force = 0.0;
};
/// Piecewise-constant levels switched at `times`, plus a sinusoidal ripple.
struct StaircaseLoad {
  std::vector<double> times;   ///< switch instants, first must be 0
  std::vector<double> levels;  ///< N
  double ripple_amplitude = 0.0;
  double ripple_frequency = 0.0;  ///< rad/s
};
struct TableLoad {
  std::vector<double> t, force;
};
/// f = m_eff x1d'' + b_eff x1d' + g_eff along the reference.
struct ReferenceOracleLoad {
  double m_eff = 0.0;
  double b_eff = 0.0;
  double g_eff = 0.0;
};

using LoadSpec = std::variant<NoLoad, ConstantLoad, StaircaseLoad, TableLoad, ReferenceOracleLoad>;

double eval_load(const LoadSpec& load, double t, const Reference& ref);

// ---------------------------------------------------------------------------
// Scenario

enum class ObserverModelInput {
  measured_hybrid,  ///< g from (y, x_hat2, measured currents)
  estimate,         ///< g from (x_hat1, x_hat2, measured currents)
  truth,            ///< g from the true state (analysis only)
};

struct ObserverSetup {
  ObserverConfig config;
  ObserverModelInput model_input = ObserverModelInput::measured_hybrid;
  bool load_feedforward = true;  ///< include -d_eq F_L / a_eq in the observer model
};

struct SensorNoise {
  enum class Kind { none, uniform, gaussian };
  Kind kind = Kind::none;
  double amplitude = 0.0;  ///< half-width (uniform) or standard deviation (gaussian)
  std::uint64_t seed = 0;
};

struct InitialConditions {
  JointState x;
  Eigen::Vector2d x_hat = Eigen::Vector2d::Zero();
  double eta_hat = 1.0;
  Vec4 theta_hat{};
};

struct MetricThresholds {
  double conv_fraction = 0.02;  ///< of the initial position error
  double conv_floor = 1e-4;     ///< m
  double guard = 1e6;           ///< divergence bound on every state
};

struct ScenarioConfig {
  std::string name;
  EmlaParams params;
  ModelOptions model;
  RsbaGains gains;
  ControllerOptions controller;
  ObserverSetup observer;
  ReferenceSpec reference = ConstantReference{};
  LoadSpec load = NoLoad{};
  DisturbanceSpec disturbances;
  SensorNoise noise;
  InitialConditions initial;
  double dt = 1e-4;
  double duration = 0.0;  ///< 0 means the reference end time
  MetricThresholds thresholds;
  int trace_every = 1;
  std::uint64_t seed = 0;  ///< mixed into every random stream
};

/// Throws ValidationError with the offending field name.
void validate(const ScenarioConfig& cfg);

struct MetricsReport {
  double pos_error = 0.0;      ///< max |x1 - x1d| after convergence
  double vel_error = 0.0;      ///< max |x2 - x2d| after convergence
  double pos_error_rms = 0.0;
  double vel_error_rms = 0.0;
  double torque_effort = 0.0;  ///< max |tau_m| over the run
  double convergence_speed = 0.0;
  bool converged = true;
  double threshold = 0.0;
  int saturation_count = 0;
};

/// Column order of the trace table.
const std::vector<std::string>& trace_columns();

struct TraceSeries {
  std::vector<double> t, pos_err, vel_err, tau;
  std::vector<int> sat;
};

/// Full-rate inputs to the metrics.
MetricsReport compute_metrics(const TraceSeries& s, const MetricThresholds& th);

struct SimulationResult {
  std::vector<std::vector<double>> trace;  ///< rows in trace_columns() order
  MetricsReport metrics;
  bool diverged = false;
  std::string divergence_message;
  std::size_t steps = 0;
  double duration = 0.0;
  double m_inf = 0.0;  ///< smallest observer m over the horizon
  double min_eta_hat = 0.0;  ///< smallest eta_hat over every step
};

/// Runs the scenario; divergence stops the run and is reported in the
/// result with the partial trace.
SimulationResult run_scenario(const ScenarioConfig& cfg);

/// Byte-stable CSV form of a trace.
void write_trace_csv(std::ostream& out, const std::vector<std::vector<double>>& trace);

/// Metrics as a JSON object string.
std::string metrics_json(const ScenarioConfig& cfg, const SimulationResult& result);

}  // namespace emla
