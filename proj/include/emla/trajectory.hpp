#pragma once

// Joint trajectory generation: clamped B-spline curves, a power-based
// direct-collocation cost, a penalty-method optimizer over control points
// and duration, and quintic rest-to-rest reference schedules.

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace emla {

// ---------------------------------------------------------------------------
// B-spline basis and curves

/// Basis row of a clamped B-spline at one normalized parameter, with its
/// first and second derivatives with respect to that parameter.
struct BasisRows {
  Eigen::VectorXd value;
  Eigen::VectorXd first;
  Eigen::VectorXd second;
  bool clamped = false;  ///< the requested parameter lay outside [0, 1]
};

/// Uniform clamped knot vector on [0, 1] (degree + 1 repeated end knots).
std::vector<double> clamped_uniform_knots(int num_ctrl, int degree);

/// Cox-de Boor evaluation with analytic derivatives. Parameters outside
/// [0, 1] are clamped and flagged.
BasisRows bspline_basis(double t_norm, std::span<const double> knots, int degree);

struct TrajectorySample {
  Eigen::VectorXd q;
  Eigen::VectorXd qd;
  Eigen::VectorXd qdd;
};

/// q(t) = B(t) c with per-joint columns in `control_points`.
class BsplineCurve {
 public:
  BsplineCurve() = default;
  BsplineCurve(int degree, Eigen::MatrixXd control_points, double t_final);
  BsplineCurve(int degree, std::vector<double> knots, Eigen::MatrixXd control_points, double t_final);

  int degree() const { return degree_; }
  const std::vector<double>& knots() const { return knots_; }
  const Eigen::MatrixXd& control_points() const { return control_points_; }
  Eigen::MatrixXd& control_points() { return control_points_; }
  double t_final() const { return t_final_; }
  int num_ctrl() const { return static_cast<int>(control_points_.rows()); }
  int num_joints() const { return static_cast<int>(control_points_.cols()); }

  /// Basis rows mapped to real time (derivatives scaled by 1/T and 1/T^2).
  BasisRows time_basis(double t) const;

 private:
  int degree_ = 5;
  std::vector<double> knots_;
  Eigen::MatrixXd control_points_;
  double t_final_ = 1.0;
};

/// Throws ValidationError if t is outside [0, t_final].
TrajectorySample eval_trajectory(const BsplineCurve& curve, double t);

// ---------------------------------------------------------------------------
// Load oracles

/// Actuator-space velocity and force for every joint.
struct ActuatorLoad {
  Eigen::VectorXd velocity;
  Eigen::VectorXd force;
};

/// Per-joint partial derivatives of an oracle whose joints are decoupled
/// (joint j's outputs depend only on joint j's kinematics).
struct LoadPartials {
  Eigen::VectorXd dv_dq, dv_dqd, dv_dqdd;
  Eigen::VectorXd df_dq, df_dqd, df_dqdd;
};

/// Maps joint kinematics to actuator velocities and forces. Stands in for
/// the manipulator's inverse dynamics.
class LoadOracle {
 public:
  virtual ~LoadOracle() = default;
  virtual ActuatorLoad evaluate(double t, const Eigen::VectorXd& q, const Eigen::VectorXd& qd,
                                const Eigen::VectorXd& qdd) const = 0;
  /// Analytic partials when available; the optimizer differentiates
  /// numerically otherwise.
  virtual std::optional<LoadPartials> partials(double /*t*/, const Eigen::VectorXd& /*q*/,
                                               const Eigen::VectorXd& /*qd*/,
                                               const Eigen::VectorXd& /*qdd*/) const {
    return std::nullopt;
  }
};

/// f = m_eff q'' + b_eff q' + g_eff per joint, v = q'.
class AffineInertialOracle final : public LoadOracle {
 public:
  AffineInertialOracle(Eigen::VectorXd m_eff, Eigen::VectorXd b_eff, Eigen::VectorXd g_eff);

  ActuatorLoad evaluate(double t, const Eigen::VectorXd& q, const Eigen::VectorXd& qd,
                        const Eigen::VectorXd& qdd) const override;
  std::optional<LoadPartials> partials(double t, const Eigen::VectorXd& q, const Eigen::VectorXd& qd,
                                       const Eigen::VectorXd& qdd) const override;

  const Eigen::VectorXd& m_eff() const { return m_eff_; }
  const Eigen::VectorXd& b_eff() const { return b_eff_; }
  const Eigen::VectorXd& g_eff() const { return g_eff_; }

 private:
  Eigen::VectorXd m_eff_, b_eff_, g_eff_;
};

/// Time-tabulated force profile (one column per joint), linear
/// interpolation with flat extrapolation; v = q'.
class TableLoadOracle final : public LoadOracle {
 public:
  TableLoadOracle(std::vector<double> times, std::vector<std::vector<double>> forces_per_joint);

  ActuatorLoad evaluate(double t, const Eigen::VectorXd& q, const Eigen::VectorXd& qd,
                        const Eigen::VectorXd& qdd) const override;
  std::optional<LoadPartials> partials(double t, const Eigen::VectorXd& q, const Eigen::VectorXd& qd,
                                       const Eigen::VectorXd& qdd) const override;

  double force(std::size_t joint, double t) const;

 private:
  std::vector<double> times_;
  std::vector<std::vector<double>> forces_;
};

/// Wraps an arbitrary callable; partials are not available.
class FunctionLoadOracle final : public LoadOracle {
 public:
  using Fn = std::function<ActuatorLoad(double, const Eigen::VectorXd&, const Eigen::VectorXd&,
                                        const Eigen::VectorXd&)>;
  explicit FunctionLoadOracle(Fn fn) : fn_(std::move(fn)) {}
  ActuatorLoad evaluate(double t, const Eigen::VectorXd& q, const Eigen::VectorXd& qd,
                        const Eigen::VectorXd& qdd) const override {
    return fn_(t, q, qd, qdd);
  }

 private:
  Fn fn_;
};

/// Reads a `t, f_l` CSV into a single-joint table oracle.
TableLoadOracle read_load_profile_csv(const std::string& path);
TableLoadOracle read_load_profile_csv(std::istream& in, const std::string& source = "load profile");

// ---------------------------------------------------------------------------
// Collocation cost

/// Collocation times and the interval weights Delta_t attached to each.
struct CollocationGrid {
  std::vector<double> times;
  std::vector<double> weights;
};

/// `count` equally spaced points on [0, t_final]; the first point carries
/// weight 0 and every later point the spacing t_k - t_{k-1}.
CollocationGrid uniform_grid(double t_final, int count);

/// `summed` squares the total power across joints; `per_joint` sums the
/// squares of each joint's power.
enum class PowerCostMode { summed, per_joint };

/// J = 1/2 sum_k Delta_k (v_L^T f_L)^2. Oracle failures are rethrown as
/// NumericError("collocation point <k>").
double collocation_cost(const BsplineCurve& curve, const LoadOracle& oracle, const CollocationGrid& grid,
                        PowerCostMode mode = PowerCostMode::summed);

/// dJ/dc for every control point (same shape as the control-point matrix).
/// Analytic when the oracle provides partials, central differences otherwise.
Eigen::MatrixXd collocation_cost_gradient(const BsplineCurve& curve, const LoadOracle& oracle,
                                          const CollocationGrid& grid,
                                          PowerCostMode mode = PowerCostMode::summed);

// ---------------------------------------------------------------------------
// Optimization

struct TrajectoryConstraints {
  Eigen::VectorXd q_start, q_end;
  Eigen::VectorXd v_start, v_end;
  Eigen::VectorXd q_lb, q_ub;
  Eigen::VectorXd v_lb, v_ub;
  Eigen::VectorXd f_lb, f_ub;
  double t_max = 1.0;
  int num_collocation = 101;

  int num_joints() const { return static_cast<int>(q_start.size()); }
};

/// Throws ValidationError for inconsistent sizes, inverted boxes, or
/// boundary values outside their boxes.
void validate(const TrajectoryConstraints& c);

struct OptimizerOptions {
  int degree = 5;
  int num_ctrl = 10;
  bool optimize_duration = true;
  double min_duration_fraction = 0.05;  ///< lower end of the duration search, relative to t_max
  int duration_iterations = 14;
  double tolerance = 1e-6;  ///< max absolute inequality violation accepted
  int max_penalty_rounds = 12;
  int max_inner_iterations = 300;
  PowerCostMode cost_mode = PowerCostMode::summed;
};

struct OptimizationReport {
  int iterations = 0;             ///< inner quasi-Newton iterations, all rounds
  int cost_evaluations = 0;
  int pattern_search_polls = 0;   ///< derivative-free fallback polls
  double final_cost = 0.0;
  double seed_cost = 0.0;
  double max_violation = 0.0;     ///< absolute, at collocation points
  double t_final = 0.0;
  bool converged = false;
  bool returned_seed = false;
};

struct OptimizationResult {
  BsplineCurve curve;
  OptimizationReport report;
};

/// Largest absolute violation of the box constraints at the grid points.
double max_constraint_violation(const BsplineCurve& curve, const LoadOracle& oracle,
                                const TrajectoryConstraints& c, const CollocationGrid& grid);

/// Largest mismatch of the four boundary equalities.
double boundary_error(const BsplineCurve& curve, const TrajectoryConstraints& c);

/// Straight-line control points from q_start to q_end over t_max, with the
/// second and second-to-last rows set to honour the boundary velocities.
BsplineCurve seed_curve(const TrajectoryConstraints& c, const OptimizerOptions& options);

OptimizationResult optimize_trajectory(const TrajectoryConstraints& constraints, const LoadOracle& oracle,
                                       const std::optional<BsplineCurve>& seed = std::nullopt,
                                       const OptimizerOptions& options = {});

/// Writes `t, q_1..q_n, v_1..v_n, a_1..a_n` sampled at `samples` points.
void write_trajectory_csv(std::ostream& out, const BsplineCurve& curve, int samples);

// ---------------------------------------------------------------------------
// Quintic references

struct RefSample {
  double pos = 0.0;
  double vel = 0.0;
  double acc = 0.0;
};

/// Fifth-order polynomial meeting position, velocity and acceleration at
/// both ends of [t0, t0 + duration].
class QuinticSegment {
 public:
  static QuinticSegment fit(double t0, double duration, const RefSample& start, const RefSample& end);

  RefSample sample(double t) const;
  double t0() const { return t0_; }
  double duration() const { return duration_; }
  double t_end() const { return t0_ + duration_; }
  const std::array<double, 6>& coefficients() const { return coeff_; }

 private:
  double t0_ = 0.0;
  double duration_ = 0.0;
  std::array<double, 6> coeff_{};
};

struct Waypoint {
  double position = 0.0;
  double dwell = 0.0;  ///< hold time at this waypoint [s]
};

/// Dwell at each waypoint, then a rest-to-rest quintic move to the next.
class QuinticSchedule {
 public:
  /// Throws ValidationError for fewer than one waypoint, a non-positive
  /// move duration, or a negative dwell.
  QuinticSchedule(const std::vector<Waypoint>& waypoints, double segment_duration);
  QuinticSchedule(const std::vector<Waypoint>& waypoints, const std::vector<double>& segment_durations);

  RefSample sample(double t) const;
  double t_final() const { return segments_.empty() ? 0.0 : segments_.back().t_end(); }
  const std::vector<QuinticSegment>& segments() const { return segments_; }

 private:
  void build(const std::vector<Waypoint>& waypoints, const std::vector<double>& durations);
  std::vector<QuinticSegment> segments_;
};

struct ReferenceSeries {
  std::vector<double> t;
  std::vector<double> x1d;
  std::vector<double> x2d;
};

/// Samples a quintic schedule at spacing `dt` from 0 to its end.
ReferenceSeries quintic_reference(const std::vector<Waypoint>& waypoints, double segment_duration, double dt);

// ---------------------------------------------------------------------------
// Workspace sampling

using ForwardKinematics = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Grid-samples the joint box and maps every sample through `fk`.
std::vector<Eigen::VectorXd> sample_workspace(const Eigen::VectorXd& q_lb, const Eigen::VectorXd& q_ub,
                                              int points_per_axis, const ForwardKinematics& fk);

}  // namespace emla
