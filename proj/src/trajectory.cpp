#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <string>

#include "emla/csv.hpp"
#include "emla/error.hpp"
#include "emla/trajectory.hpp"

namespace emla {

// ---------------------------------------------------------------------------
// Oracles

AffineInertialOracle::AffineInertialOracle(Eigen::VectorXd m_eff, Eigen::VectorXd b_eff, Eigen::VectorXd g_eff)
    : m_eff_(std::move(m_eff)), b_eff_(std::move(b_eff)), g_eff_(std::move(g_eff)) {
  if (m_eff_.size() != b_eff_.size() || m_eff_.size() != g_eff_.size()) {
    throw ValidationError("oracle", "m_eff, b_eff and g_eff must have equal length");
  }
  if (!m_eff_.allFinite() || !b_eff_.allFinite() || !g_eff_.allFinite()) {
    throw ValidationError("oracle", "coefficients must be finite");
  }
}

ActuatorLoad AffineInertialOracle::evaluate(double, const Eigen::VectorXd&, const Eigen::VectorXd& qd,
                                            const Eigen::VectorXd& qdd) const {
  return {qd, m_eff_.cwiseProduct(qdd) + b_eff_.cwiseProduct(qd) + g_eff_};
}

std::optional<LoadPartials> AffineInertialOracle::partials(double, const Eigen::VectorXd& q,
                                                           const Eigen::VectorXd&, const Eigen::VectorXd&) const {
  const auto n = q.size();
  LoadPartials d;
  d.dv_dq = Eigen::VectorXd::Zero(n);
  d.dv_dqd = Eigen::VectorXd::Ones(n);
  d.dv_dqdd = Eigen::VectorXd::Zero(n);
  d.df_dq = Eigen::VectorXd::Zero(n);
  d.df_dqd = b_eff_;
  d.df_dqdd = m_eff_;
  return d;
}

TableLoadOracle::TableLoadOracle(std::vector<double> times, std::vector<std::vector<double>> forces_per_joint)
    : times_(std::move(times)), forces_(std::move(forces_per_joint)) {
  if (times_.empty()) throw ValidationError("load_profile", "no samples");
  for (std::size_t i = 1; i < times_.size(); ++i) {
    if (!(times_[i] > times_[i - 1])) throw ValidationError("load_profile.t", "must be strictly increasing");
  }
  for (const auto& col : forces_) {
    if (col.size() != times_.size()) throw ValidationError("load_profile", "column length mismatch");
  }
}

double TableLoadOracle::force(std::size_t joint, double t) const {
  return interpolate_linear(times_, forces_.at(joint), t);
}

ActuatorLoad TableLoadOracle::evaluate(double t, const Eigen::VectorXd&, const Eigen::VectorXd& qd,
                                       const Eigen::VectorXd&) const {
  if (static_cast<std::size_t>(qd.size()) != forces_.size()) {
    throw ValidationError("load_profile", "joint count does not match the profile");
  }
  Eigen::VectorXd f(qd.size());
  for (Eigen::Index j = 0; j < qd.size(); ++j) f[j] = force(static_cast<std::size_t>(j), t);
  return {qd, f};
}

std::optional<LoadPartials> TableLoadOracle::partials(double, const Eigen::VectorXd& q, const Eigen::VectorXd&,
                                                      const Eigen::VectorXd&) const {
  const auto n = q.size();
  LoadPartials d;
  d.dv_dq = d.dv_dqdd = d.df_dq = d.df_dqd = d.df_dqdd = Eigen::VectorXd::Zero(n);
  d.dv_dqd = Eigen::VectorXd::Ones(n);
  return d;
}

TableLoadOracle read_load_profile_csv(std::istream& in, const std::string& source) {
  const CsvTable table = read_csv(in, source);
  const auto missing = table.missing_columns({"t", "f_l"});
  if (!missing.empty()) throw ValidationError(source, "missing column '" + missing.front() + "'");
  return TableLoadOracle(table.column_values("t"), {table.column_values("f_l")});
}

TableLoadOracle read_load_profile_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(path, "cannot open file");
  return read_load_profile_csv(in, path);
}

// ---------------------------------------------------------------------------
// Collocation cost

CollocationGrid uniform_grid(double t_final, int count) {
  if (count < 2) throw ValidationError("num_collocation", "must be >= 2");
  if (!(t_final > 0.0)) throw ValidationError("t_final", "must be > 0");
  CollocationGrid g;
  g.times.resize(static_cast<std::size_t>(count));
  g.weights.resize(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    g.times[static_cast<std::size_t>(k)] = t_final * k / (count - 1);
  }
  g.times.back() = t_final;
  g.weights[0] = 0.0;
  for (std::size_t k = 1; k < g.times.size(); ++k) g.weights[k] = g.times[k] - g.times[k - 1];
  return g;
}

namespace {

// Basis rows of a curve at every grid time, stacked as K x num_ctrl.
struct GridBasis {
  Eigen::MatrixXd value, first, second;
};

GridBasis grid_basis(const BsplineCurve& curve, const CollocationGrid& grid) {
  const auto k_count = static_cast<Eigen::Index>(grid.times.size());
  GridBasis gb{Eigen::MatrixXd(k_count, curve.num_ctrl()), Eigen::MatrixXd(k_count, curve.num_ctrl()),
               Eigen::MatrixXd(k_count, curve.num_ctrl())};
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const BasisRows r = curve.time_basis(grid.times[static_cast<std::size_t>(k)]);
    gb.value.row(k) = r.value.transpose();
    gb.first.row(k) = r.first.transpose();
    gb.second.row(k) = r.second.transpose();
  }
  return gb;
}

ActuatorLoad checked_evaluate(const LoadOracle& oracle, std::size_t k, double t, const Eigen::VectorXd& q,
                              const Eigen::VectorXd& qd, const Eigen::VectorXd& qdd) {
  ActuatorLoad load;
  try {
    load = oracle.evaluate(t, q, qd, qdd);
  } catch (const std::exception& e) {
    throw NumericError("collocation point " + std::to_string(k), e.what());
  }
  if (load.velocity.size() != q.size() || load.force.size() != q.size()) {
    throw NumericError("collocation point " + std::to_string(k), "oracle returned wrong dimension");
  }
  if (!load.velocity.allFinite() || !load.force.allFinite()) {
    throw NumericError("collocation point " + std::to_string(k), "oracle returned non-finite values");
  }
  return load;
}

// Augmented-Lagrangian state for the normalized inequality set.
struct Penalty {
  const TrajectoryConstraints* c = nullptr;
  Eigen::VectorXd lambda;  // one per (point, kind, joint)
  double mu = 10.0;
  Eigen::VectorXd w_q, w_v, w_f;  // normalization widths
};

Eigen::VectorXd safe_width(const Eigen::VectorXd& lb, const Eigen::VectorXd& ub) {
  Eigen::VectorXd w = ub - lb;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (!(w[i] > 0.0) || !std::isfinite(w[i])) w[i] = 1.0;
  }
  return w;
}

struct Evaluation {
  double cost = 0.0;
  double merit = 0.0;              // cost / cost_scale + penalty
  double max_violation = 0.0;      // absolute
  Eigen::VectorXd constraints;     // normalized g <= 0
  Eigen::MatrixXd grad;            // d merit / d C (or d cost / d C without a penalty)
  bool have_grad = false;
};

// Evaluates cost, optional penalty, and the analytic gradient when the
// oracle supplies partials and `want_grad` is set.
Evaluation evaluate(const Eigen::MatrixXd& ctrl, const LoadOracle& oracle, const CollocationGrid& grid,
                    const GridBasis& gb, PowerCostMode mode, const Penalty* penalty, double cost_scale,
                    bool want_grad) {
  const auto k_count = static_cast<Eigen::Index>(grid.times.size());
  const auto nj = ctrl.cols();
  const Eigen::MatrixXd q_all = gb.value * ctrl;
  const Eigen::MatrixXd qd_all = gb.first * ctrl;
  const Eigen::MatrixXd qdd_all = gb.second * ctrl;

  Evaluation ev;
  Eigen::MatrixXd cq, cqd, cqdd;  // d merit / d (q, qd, qdd) at each point
  if (want_grad) {
    cq = cqd = cqdd = Eigen::MatrixXd::Zero(k_count, nj);
    ev.have_grad = true;
  }
  if (penalty) ev.constraints.resize(k_count * 6 * nj);

  double cost = 0.0;
  double pen = 0.0;
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    const double t = grid.times[ks];
    const Eigen::VectorXd q = q_all.row(k).transpose();
    const Eigen::VectorXd qd = qd_all.row(k).transpose();
    const Eigen::VectorXd qdd = qdd_all.row(k).transpose();
    const ActuatorLoad load = checked_evaluate(oracle, ks, t, q, qd, qdd);
    std::optional<LoadPartials> dp;
    if (ev.have_grad) {
      dp = oracle.partials(t, q, qd, qdd);
      if (!dp) ev.have_grad = false;
    }
    const double w = grid.weights[ks];
    const Eigen::VectorXd pj = load.velocity.cwiseProduct(load.force);

    // dJ/dP_j for joint j's power.
    Eigen::VectorXd dcost_dp(nj);
    if (mode == PowerCostMode::summed) {
      const double p = pj.sum();
      cost += 0.5 * w * p * p;
      dcost_dp.setConstant(w * p);
    } else {
      cost += 0.5 * w * pj.squaredNorm();
      dcost_dp = w * pj;
    }

    Eigen::VectorXd dm_dv = Eigen::VectorXd::Zero(nj);  // d merit / d v_L, d f_L
    Eigen::VectorXd dm_df = Eigen::VectorXd::Zero(nj);
    Eigen::VectorXd dm_dq = Eigen::VectorXd::Zero(nj);
    Eigen::VectorXd dm_dqd = Eigen::VectorXd::Zero(nj);
    if (ev.have_grad) {
      dm_dv = dcost_dp.cwiseProduct(load.force) / cost_scale;
      dm_df = dcost_dp.cwiseProduct(load.velocity) / cost_scale;
    }

    if (penalty) {
      const auto& c = *penalty->c;
      for (Eigen::Index j = 0; j < nj; ++j) {
        const double gvals[6] = {(q[j] - c.q_ub[j]) / penalty->w_q[j], (c.q_lb[j] - q[j]) / penalty->w_q[j],
                                 (qd[j] - c.v_ub[j]) / penalty->w_v[j], (c.v_lb[j] - qd[j]) / penalty->w_v[j],
                                 (load.force[j] - c.f_ub[j]) / penalty->w_f[j],
                                 (c.f_lb[j] - load.force[j]) / penalty->w_f[j]};
        const double abs_viol[6] = {q[j] - c.q_ub[j],  c.q_lb[j] - q[j],  qd[j] - c.v_ub[j],
                                    c.v_lb[j] - qd[j], load.force[j] - c.f_ub[j], c.f_lb[j] - load.force[j]};
        double coef[6];
        for (int kind = 0; kind < 6; ++kind) {
          const Eigen::Index idx = (k * 6 + kind) * nj + j;
          ev.constraints[idx] = gvals[kind];
          ev.max_violation = std::max(ev.max_violation, abs_viol[kind]);
          const double lam = penalty->lambda[idx];
          const double s = std::max(0.0, lam + penalty->mu * gvals[kind]);
          pen += (s * s - lam * lam) / (2.0 * penalty->mu);
          coef[kind] = s;
        }
        if (ev.have_grad) {
          dm_dq[j] += (coef[0] - coef[1]) / penalty->w_q[j];
          dm_dqd[j] += (coef[2] - coef[3]) / penalty->w_v[j];
          dm_df[j] += (coef[4] - coef[5]) / penalty->w_f[j];
        }
      }
    }

    if (ev.have_grad) {
      for (Eigen::Index j = 0; j < nj; ++j) {
        cq(k, j) = dm_dq[j] + dm_dv[j] * dp->dv_dq[j] + dm_df[j] * dp->df_dq[j];
        cqd(k, j) = dm_dqd[j] + dm_dv[j] * dp->dv_dqd[j] + dm_df[j] * dp->df_dqd[j];
        cqdd(k, j) = dm_dv[j] * dp->dv_dqdd[j] + dm_df[j] * dp->df_dqdd[j];
      }
    }
  }
  ev.cost = cost;
  ev.merit = cost / cost_scale + pen;
  if (ev.have_grad) {
    ev.grad = gb.value.transpose() * cq + gb.first.transpose() * cqd + gb.second.transpose() * cqdd;
  }
  return ev;
}

double step_for(double x) { return 1e-6 * std::max(1.0, std::abs(x)); }

}  // namespace

double collocation_cost(const BsplineCurve& curve, const LoadOracle& oracle, const CollocationGrid& grid,
                        PowerCostMode mode) {
  for (const double t : grid.times) {
    if (t < 0.0 || t > curve.t_final()) throw ValidationError("grid", "collocation time outside [0, t_final]");
  }
  return evaluate(curve.control_points(), oracle, grid, grid_basis(curve, grid), mode, nullptr, 1.0, false).cost;
}

Eigen::MatrixXd collocation_cost_gradient(const BsplineCurve& curve, const LoadOracle& oracle,
                                          const CollocationGrid& grid, PowerCostMode mode) {
  const GridBasis gb = grid_basis(curve, grid);
  Eigen::MatrixXd ctrl = curve.control_points();
  const Evaluation ev = evaluate(ctrl, oracle, grid, gb, mode, nullptr, 1.0, true);
  if (ev.have_grad) return ev.grad;
  Eigen::MatrixXd grad(ctrl.rows(), ctrl.cols());
  for (Eigen::Index i = 0; i < ctrl.rows(); ++i) {
    for (Eigen::Index j = 0; j < ctrl.cols(); ++j) {
      const double orig = ctrl(i, j);
      const double h = step_for(orig);
      ctrl(i, j) = orig + h;
      const double up = evaluate(ctrl, oracle, grid, gb, mode, nullptr, 1.0, false).cost;
      ctrl(i, j) = orig - h;
      const double down = evaluate(ctrl, oracle, grid, gb, mode, nullptr, 1.0, false).cost;
      ctrl(i, j) = orig;
      grad(i, j) = (up - down) / (2.0 * h);
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Constraints and seed

void validate(const TrajectoryConstraints& c) {
  const auto n = c.q_start.size();
  if (n < 1) throw ValidationError("q_start", "must have at least one joint");
  const std::pair<const Eigen::VectorXd*, const char*> vecs[] = {
      {&c.q_end, "q_end"}, {&c.v_start, "v_start"}, {&c.v_end, "v_end"}, {&c.q_lb, "q_lb"},
      {&c.q_ub, "q_ub"},   {&c.v_lb, "v_lb"},       {&c.v_ub, "v_ub"},   {&c.f_lb, "f_lb"},
      {&c.f_ub, "f_ub"}};
  for (const auto& [v, name] : vecs) {
    if (v->size() != n) throw ValidationError(name, "expected " + std::to_string(n) + " entries");
    if (v->hasNaN()) throw ValidationError(name, "contains NaN");
  }
  if (!c.q_start.allFinite()) throw ValidationError("q_start", "must be finite");
  if (!(c.t_max > 0.0) || !std::isfinite(c.t_max)) throw ValidationError("t_max", "must be > 0");
  if (c.num_collocation < 10) throw ValidationError("num_collocation", "must be >= 10");
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto jn = "[" + std::to_string(j) + "]";
    if (c.q_lb[j] > c.q_ub[j]) throw ValidationError("q_lb" + jn, "exceeds q_ub");
    if (c.v_lb[j] > c.v_ub[j]) throw ValidationError("v_lb" + jn, "exceeds v_ub");
    if (c.f_lb[j] > c.f_ub[j]) throw ValidationError("f_lb" + jn, "exceeds f_ub");
    if (c.q_start[j] < c.q_lb[j] || c.q_start[j] > c.q_ub[j]) throw ValidationError("q_start" + jn, "outside box");
    if (c.q_end[j] < c.q_lb[j] || c.q_end[j] > c.q_ub[j]) throw ValidationError("q_end" + jn, "outside box");
    if (c.v_start[j] < c.v_lb[j] || c.v_start[j] > c.v_ub[j]) throw ValidationError("v_start" + jn, "outside box");
    if (c.v_end[j] < c.v_lb[j] || c.v_end[j] > c.v_ub[j]) throw ValidationError("v_end" + jn, "outside box");
  }
}

double max_constraint_violation(const BsplineCurve& curve, const LoadOracle& oracle, const TrajectoryConstraints& c,
                                const CollocationGrid& grid) {
  Penalty pen;
  pen.c = &c;
  const auto n = static_cast<Eigen::Index>(grid.times.size()) * 6 * curve.num_joints();
  pen.lambda = Eigen::VectorXd::Zero(n);
  pen.w_q = safe_width(c.q_lb, c.q_ub);
  pen.w_v = safe_width(c.v_lb, c.v_ub);
  pen.w_f = safe_width(c.f_lb, c.f_ub);
  return evaluate(curve.control_points(), oracle, grid, grid_basis(curve, grid), PowerCostMode::summed, &pen, 1.0,
                  false)
      .max_violation;
}

double boundary_error(const BsplineCurve& curve, const TrajectoryConstraints& c) {
  const TrajectorySample s = eval_trajectory(curve, 0.0);
  const TrajectorySample e = eval_trajectory(curve, curve.t_final());
  return std::max({(s.q - c.q_start).cwiseAbs().maxCoeff(), (e.q - c.q_end).cwiseAbs().maxCoeff(),
                   (s.qd - c.v_start).cwiseAbs().maxCoeff(), (e.qd - c.v_end).cwiseAbs().maxCoeff()});
}

namespace {

// Overwrites the four boundary rows so the curve meets the boundary
// positions and velocities for duration t_final.
void pin_boundary_rows(Eigen::MatrixXd& ctrl, const std::vector<double>& knots, int degree,
                       const TrajectoryConstraints& c, double t_final) {
  const auto n = ctrl.rows();
  const double d_start = bspline_basis(0.0, knots, degree).first[1];
  const double d_end = bspline_basis(1.0, knots, degree).first[n - 1];
  ctrl.row(0) = c.q_start.transpose();
  ctrl.row(n - 1) = c.q_end.transpose();
  ctrl.row(1) = (c.q_start + c.v_start * t_final / d_start).transpose();
  ctrl.row(n - 2) = (c.q_end - c.v_end * t_final / d_end).transpose();
}

Eigen::MatrixXd straight_line(const TrajectoryConstraints& c, int num_ctrl) {
  Eigen::MatrixXd ctrl(num_ctrl, c.num_joints());
  for (int i = 0; i < num_ctrl; ++i) {
    const double s = static_cast<double>(i) / (num_ctrl - 1);
    ctrl.row(i) = ((1.0 - s) * c.q_start + s * c.q_end).transpose();
  }
  return ctrl;
}

struct Candidate {
  BsplineCurve curve;
  double cost = std::numeric_limits<double>::infinity();
  double violation = std::numeric_limits<double>::infinity();
};

bool better(const Candidate& a, const Candidate& b, double tol) {
  const bool fa = a.violation <= tol;
  const bool fb = b.violation <= tol;
  if (fa != fb) return fa;
  if (!fa) return a.violation < b.violation;
  return a.cost < b.cost;
}

// One fixed-duration subproblem over the free (interior) control rows.
class FixedDurationSolver {
 public:
  FixedDurationSolver(const TrajectoryConstraints& c, const LoadOracle& oracle, const OptimizerOptions& opt,
                      double t_final, OptimizationReport& report)
      : c_(c), oracle_(oracle), opt_(opt), report_(report) {
    knots_ = clamped_uniform_knots(opt.num_ctrl, opt.degree);
    base_ = straight_line(c, opt.num_ctrl);
    pin_boundary_rows(base_, knots_, opt.degree, c, t_final);
    grid_ = uniform_grid(t_final, c.num_collocation);
    gb_ = grid_basis(BsplineCurve(opt.degree, knots_, base_, t_final), grid_);
    t_final_ = t_final;
    pen_.c = &c;
    pen_.lambda = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid_.times.size()) * 6 * c.num_joints());
    pen_.w_q = safe_width(c.q_lb, c.q_ub);
    pen_.w_v = safe_width(c.v_lb, c.v_ub);
    pen_.w_f = safe_width(c.f_lb, c.f_ub);
    free_rows_ = std::max(0, opt.num_ctrl - 4);
  }

  Candidate solve(const std::optional<Eigen::MatrixXd>& start) {
    Eigen::MatrixXd ctrl = start ? *start : base_;
    pin_boundary_rows(ctrl, knots_, opt_.degree, c_, t_final_);
    Eigen::VectorXd z = free_of(ctrl);

    const double seed_cost = evaluate(ctrl, oracle_, grid_, gb_, opt_.cost_mode, nullptr, 1.0, false).cost;
    scale_ = seed_cost > 1e-300 ? seed_cost : 1.0;

    if (z.size() > 0) {
      double prev_violation = std::numeric_limits<double>::infinity();
      for (int round = 0; round < opt_.max_penalty_rounds; ++round) {
        if (!quasi_newton(z)) pattern_search(z);
        const Evaluation ev = merit(z, false);
        for (Eigen::Index i = 0; i < pen_.lambda.size(); ++i) {
          pen_.lambda[i] = std::max(0.0, pen_.lambda[i] + pen_.mu * ev.constraints[i]);
        }
        if (ev.max_violation <= 0.5 * opt_.tolerance) break;
        if (ev.max_violation > 0.25 * prev_violation) pen_.mu = std::min(pen_.mu * 10.0, 1e14);
        prev_violation = ev.max_violation;
      }
    }

    Candidate out;
    out.curve = BsplineCurve(opt_.degree, knots_, full(z), t_final_);
    const Evaluation ev = merit(z, false);
    out.cost = ev.cost;
    out.violation = ev.max_violation;
    return out;
  }

 private:
  Eigen::MatrixXd full(const Eigen::VectorXd& z) const {
    Eigen::MatrixXd ctrl = base_;
    const auto nj = ctrl.cols();
    for (int r = 0; r < free_rows_; ++r) {
      for (Eigen::Index j = 0; j < nj; ++j) ctrl(2 + r, j) = z[r * nj + j];
    }
    return ctrl;
  }

  Eigen::VectorXd free_of(const Eigen::MatrixXd& ctrl) const {
    const auto nj = ctrl.cols();
    Eigen::VectorXd z(free_rows_ * nj);
    for (int r = 0; r < free_rows_; ++r) {
      for (Eigen::Index j = 0; j < nj; ++j) z[r * nj + j] = ctrl(2 + r, j);
    }
    return z;
  }

  Evaluation merit(const Eigen::VectorXd& z, bool want_grad) {
    ++report_.cost_evaluations;
    return evaluate(full(z), oracle_, grid_, gb_, opt_.cost_mode, &pen_, scale_, want_grad);
  }

  double merit_value(const Eigen::VectorXd& z) { return merit(z, false).merit; }

  // Merit value and gradient with respect to z.
  double merit_grad(const Eigen::VectorXd& z, Eigen::VectorXd& g) {
    const Evaluation ev = merit(z, true);
    if (ev.have_grad) {
      g = free_of(ev.grad);
      return ev.merit;
    }
    g.resize(z.size());
    Eigen::VectorXd zz = z;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double h = step_for(z[i]);
      zz[i] = z[i] + h;
      const double up = merit_value(zz);
      zz[i] = z[i] - h;
      const double down = merit_value(zz);
      zz[i] = z[i];
      g[i] = (up - down) / (2.0 * h);
    }
    return ev.merit;
  }

  // BFGS with Armijo backtracking; false when the line search stalls away
  // from a stationary point.
  bool quasi_newton(Eigen::VectorXd& z) {
    const auto n = z.size();
    Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd g;
    double f = merit_grad(z, g);
    bool scaled = false;
    for (int it = 0; it < opt_.max_inner_iterations; ++it) {
      ++report_.iterations;
      if (g.lpNorm<Eigen::Infinity>() <= 1e-12 * (1.0 + std::abs(f))) return true;
      Eigen::VectorXd d = -h_inv * g;
      double slope = g.dot(d);
      if (!(slope < 0.0)) {
        h_inv.setIdentity();
        d = -g;
        slope = -g.squaredNorm();
      }
      double step = 1.0;
      Eigen::VectorXd z_new;
      double f_new = 0.0;
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls) {
        z_new = z + step * d;
        f_new = merit_value(z_new);
        if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * slope) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) return g.lpNorm<Eigen::Infinity>() <= 1e-8 * (1.0 + std::abs(f));
      Eigen::VectorXd g_new;
      f_new = merit_grad(z_new, g_new);
      const Eigen::VectorXd s = z_new - z;
      const Eigen::VectorXd y = g_new - g;
      const double sy = s.dot(y);
      if (sy > 1e-16 * s.norm() * y.norm()) {
        if (!scaled) {
          h_inv *= sy / y.squaredNorm();
          scaled = true;
        }
        const double rho = 1.0 / sy;
        const Eigen::MatrixXd i_n = Eigen::MatrixXd::Identity(n, n);
        h_inv = (i_n - rho * s * y.transpose()) * h_inv * (i_n - rho * y * s.transpose()) + rho * s * s.transpose();
      }
      const double df = f - f_new;
      z = z_new;
      g = g_new;
      f = f_new;
      if (df <= 1e-15 * (1.0 + std::abs(f)) && s.lpNorm<Eigen::Infinity>() <= 1e-13) return true;
    }
    return true;
  }

  // Opportunistic compass search on the merit.
  void pattern_search(Eigen::VectorXd& z) {
    double scale = 0.0;
    for (Eigen::Index j = 0; j < pen_.w_q.size(); ++j) scale = std::max(scale, pen_.w_q[j]);
    double step = 0.05 * scale;
    double f = merit_value(z);
    const double floor = 1e-10 * scale;
    int polls = 0;
    while (step > floor && polls < 20000) {
      bool improved = false;
      for (Eigen::Index i = 0; i < z.size() && !improved; ++i) {
        for (const double sign : {1.0, -1.0}) {
          ++polls;
          Eigen::VectorXd trial = z;
          trial[i] += sign * step;
          const double ft = merit_value(trial);
          if (ft < f) {
            z = trial;
            f = ft;
            improved = true;
            break;
          }
        }
      }
      if (!improved) step *= 0.5;
    }
    report_.pattern_search_polls += polls;
  }

  const TrajectoryConstraints& c_;
  const LoadOracle& oracle_;
  const OptimizerOptions& opt_;
  OptimizationReport& report_;
  std::vector<double> knots_;
  Eigen::MatrixXd base_;
  CollocationGrid grid_;
  GridBasis gb_;
  Penalty pen_;
  double t_final_ = 1.0;
  double scale_ = 1.0;
  int free_rows_ = 0;
};

}  // namespace

BsplineCurve seed_curve(const TrajectoryConstraints& c, const OptimizerOptions& options) {
  validate(c);
  const auto knots = clamped_uniform_knots(options.num_ctrl, options.degree);
  Eigen::MatrixXd ctrl = straight_line(c, options.num_ctrl);
  pin_boundary_rows(ctrl, knots, options.degree, c, c.t_max);
  return BsplineCurve(options.degree, knots, ctrl, c.t_max);
}

OptimizationResult optimize_trajectory(const TrajectoryConstraints& constraints, const LoadOracle& oracle,
                                       const std::optional<BsplineCurve>& seed, const OptimizerOptions& options) {
  validate(constraints);
  if (options.degree < 3) throw ValidationError("degree", "must be >= 3");
  if (options.num_ctrl < options.degree + 1) throw ValidationError("num_ctrl", "must be >= degree + 1");
  if (!(options.min_duration_fraction > 0.0 && options.min_duration_fraction <= 1.0)) {
    throw ValidationError("min_duration_fraction", "must be in (0, 1]");
  }

  OptimizationResult result;
  auto& report = result.report;
  const double tol = options.tolerance;

  const BsplineCurve seed_c = seed ? *seed : seed_curve(constraints, options);
  if (seed_c.num_joints() != constraints.num_joints()) throw ValidationError("seed", "joint count mismatch");
  Candidate seed_cand;
  seed_cand.curve = seed_c;
  {
    const CollocationGrid g = uniform_grid(seed_c.t_final(), constraints.num_collocation);
    seed_cand.cost = collocation_cost(seed_c, oracle, g, options.cost_mode);
    seed_cand.violation = std::max(max_constraint_violation(seed_c, oracle, constraints, g),
                                   boundary_error(seed_c, constraints) > 1e-9 ? 1e300 : 0.0);
  }
  report.seed_cost = seed_cand.cost;

  const bool seed_matches = seed_c.degree() == options.degree && seed_c.num_ctrl() == options.num_ctrl &&
                            seed_c.knots() == clamped_uniform_knots(options.num_ctrl, options.degree);

  auto solve_at = [&](double t_final) {
    FixedDurationSolver solver(constraints, oracle, options, t_final, report);
    std::optional<Eigen::MatrixXd> start;
    if (seed_matches && t_final == seed_c.t_final()) start = seed_c.control_points();
    return solver.solve(start);
  };

  Candidate best = solve_at(constraints.t_max);
  if (options.optimize_duration) {
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = options.min_duration_fraction * constraints.t_max;
    double hi = constraints.t_max;
    double x1 = hi - inv_phi * (hi - lo);
    double x2 = lo + inv_phi * (hi - lo);
    Candidate c1 = solve_at(x1);
    Candidate c2 = solve_at(x2);
    for (int it = 0; it < options.duration_iterations; ++it) {
      if (better(c1, c2, tol)) {
        if (better(c2, best, tol)) best = c2;
        hi = x2;
        x2 = x1;
        c2 = c1;
        x1 = hi - inv_phi * (hi - lo);
        c1 = solve_at(x1);
      } else {
        if (better(c1, best, tol)) best = c1;
        lo = x1;
        x1 = x2;
        c1 = c2;
        x2 = lo + inv_phi * (hi - lo);
        c2 = solve_at(x2);
      }
    }
    if (better(c1, best, tol)) best = c1;
    if (better(c2, best, tol)) best = c2;
  }

  const bool seed_feasible = seed_cand.violation <= tol;
  if (seed_feasible && !(best.violation <= tol && best.cost <= seed_cand.cost)) {
    best = seed_cand;
    report.returned_seed = true;
  }

  result.curve = best.curve;
  report.final_cost = best.cost;
  report.t_final = best.curve.t_final();
  report.max_violation = best.violation;
  report.converged = best.violation <= tol && boundary_error(best.curve, constraints) <= 1e-9;
  return result;
}

void write_trajectory_csv(std::ostream& out, const BsplineCurve& curve, int samples) {
  if (samples < 2) throw ValidationError("samples", "must be >= 2");
  const int n = curve.num_joints();
  out << "t";
  for (const char* prefix : {"q_", "v_", "a_"}) {
    for (int j = 1; j <= n; ++j) out << ',' << prefix << j;
  }
  out << '\n';
  for (int k = 0; k < samples; ++k) {
    const double t = k == samples - 1 ? curve.t_final() : curve.t_final() * k / (samples - 1);
    const TrajectorySample s = eval_trajectory(curve, t);
    out << format_number(t);
    for (const Eigen::VectorXd* v : {&s.q, &s.qd, &s.qdd}) {
      for (int j = 0; j < n; ++j) out << ',' << format_number((*v)[j]);
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Quintic references

QuinticSegment QuinticSegment::fit(double t0, double duration, const RefSample& start, const RefSample& end) {
  if (!(duration > 0.0) || !std::isfinite(duration)) throw ValidationError("segment_duration", "must be > 0");
  QuinticSegment s;
  s.t0_ = t0;
  s.duration_ = duration;
  const double T = duration;
  const double h = end.pos - start.pos;
  auto& a = s.coeff_;
  a[0] = start.pos;
  a[1] = start.vel;
  a[2] = 0.5 * start.acc;
  a[3] = (20.0 * h - (8.0 * end.vel + 12.0 * start.vel) * T - (3.0 * start.acc - end.acc) * T * T) /
         (2.0 * T * T * T);
  a[4] = (-30.0 * h + (14.0 * end.vel + 16.0 * start.vel) * T + (3.0 * start.acc - 2.0 * end.acc) * T * T) /
         (2.0 * T * T * T * T);
  a[5] = (12.0 * h - 6.0 * (end.vel + start.vel) * T + (end.acc - start.acc) * T * T) / (2.0 * T * T * T * T * T);
  return s;
}

RefSample QuinticSegment::sample(double t) const {
  const double tau = std::clamp(t - t0_, 0.0, duration_);
  const auto& a = coeff_;
  RefSample r;
  r.pos = a[0] + tau * (a[1] + tau * (a[2] + tau * (a[3] + tau * (a[4] + tau * a[5]))));
  r.vel = a[1] + tau * (2.0 * a[2] + tau * (3.0 * a[3] + tau * (4.0 * a[4] + tau * 5.0 * a[5])));
  r.acc = 2.0 * a[2] + tau * (6.0 * a[3] + tau * (12.0 * a[4] + tau * 20.0 * a[5]));
  return r;
}

QuinticSchedule::QuinticSchedule(const std::vector<Waypoint>& waypoints, double segment_duration) {
  build(waypoints, std::vector<double>(waypoints.empty() ? 0 : waypoints.size() - 1, segment_duration));
}

QuinticSchedule::QuinticSchedule(const std::vector<Waypoint>& waypoints,
                                 const std::vector<double>& segment_durations) {
  build(waypoints, segment_durations);
}

void QuinticSchedule::build(const std::vector<Waypoint>& waypoints, const std::vector<double>& durations) {
  if (waypoints.empty()) throw ValidationError("waypoints", "need at least one waypoint");
  if (durations.size() + 1 != waypoints.size()) {
    throw ValidationError("segment_durations", "expected one duration per move");
  }
  double t = 0.0;
  for (std::size_t i = 0; i < waypoints.size(); ++i) {
    const auto& w = waypoints[i];
    if (!std::isfinite(w.position)) throw ValidationError("waypoints[" + std::to_string(i) + "]", "non-finite");
    if (w.dwell < 0.0 || !std::isfinite(w.dwell)) {
      throw ValidationError("waypoints[" + std::to_string(i) + "].dwell", "must be >= 0");
    }
    const RefSample hold{w.position, 0.0, 0.0};
    if (w.dwell > 0.0) {
      segments_.push_back(QuinticSegment::fit(t, w.dwell, hold, hold));
      t += w.dwell;
    }
    if (i + 1 < waypoints.size()) {
      if (!(durations[i] > 0.0)) {
        throw ValidationError("segment_durations[" + std::to_string(i) + "]", "must be > 0");
      }
      segments_.push_back(QuinticSegment::fit(t, durations[i], hold, {waypoints[i + 1].position, 0.0, 0.0}));
      t += durations[i];
    }
  }
  if (segments_.empty()) segments_.push_back(QuinticSegment::fit(0.0, 1.0, {waypoints[0].position, 0, 0},
                                                                 {waypoints[0].position, 0, 0}));
}

RefSample QuinticSchedule::sample(double t) const {
  if (t <= segments_.front().t0()) return segments_.front().sample(segments_.front().t0());
  const auto it = std::lower_bound(segments_.begin(), segments_.end(), t,
                                   [](const QuinticSegment& s, double tt) { return s.t_end() < tt; });
  if (it == segments_.end()) {
    RefSample r = segments_.back().sample(segments_.back().t_end());
    r.vel = 0.0;
    r.acc = 0.0;
    return r;
  }
  return it->sample(t);
}

ReferenceSeries quintic_reference(const std::vector<Waypoint>& waypoints, double segment_duration, double dt) {
  if (!(dt > 0.0)) throw ValidationError("dt", "must be > 0");
  const QuinticSchedule schedule(waypoints, segment_duration);
  ReferenceSeries out;
  const auto steps = static_cast<std::size_t>(std::llround(std::floor(schedule.t_final() / dt + 1e-9)));
  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    const RefSample s = schedule.sample(t);
    out.t.push_back(t);
    out.x1d.push_back(s.pos);
    out.x2d.push_back(s.vel);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Workspace

std::vector<Eigen::VectorXd> sample_workspace(const Eigen::VectorXd& q_lb, const Eigen::VectorXd& q_ub,
                                              int points_per_axis, const ForwardKinematics& fk) {
  if (q_lb.size() != q_ub.size() || q_lb.size() == 0) throw ValidationError("q_lb", "size mismatch");
  if (points_per_axis < 1) throw ValidationError("points_per_axis", "must be >= 1");
  if (!fk) throw ValidationError("fk", "no forward-kinematics callable");
  for (Eigen::Index j = 0; j < q_lb.size(); ++j) {
    if (q_lb[j] > q_ub[j]) throw ValidationError("q_lb[" + std::to_string(j) + "]", "exceeds q_ub");
  }
  const auto n = q_lb.size();
  std::vector<int> idx(static_cast<std::size_t>(n), 0);
  std::vector<Eigen::VectorXd> cloud;
  while (true) {
    Eigen::VectorXd q(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double s = points_per_axis == 1 ? 0.5 : static_cast<double>(idx[static_cast<std::size_t>(j)]) /
                                                        (points_per_axis - 1);
      q[j] = q_lb[j] + s * (q_ub[j] - q_lb[j]);
    }
    cloud.push_back(fk(q));
    Eigen::Index j = 0;
    while (j < n && ++idx[static_cast<std::size_t>(j)] == points_per_axis) idx[static_cast<std::size_t>(j++)] = 0;
    if (j == n) break;
  }
  return cloud;
}

}  // namespace emla
