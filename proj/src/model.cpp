#include "emla/model.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "emla/error.hpp"

namespace emla {

namespace {

constexpr double kTwoPiOverThree = 2.0 * std::numbers::pi / 3.0;

void require_positive(double v, const char* field) {
  if (!std::isfinite(v) || v <= 0.0) {
    throw ValidationError(field, "must be finite and > 0 (got " + std::to_string(v) + ")");
  }
}

void require_finite(double v, const char* where) {
  if (!std::isfinite(v)) throw NumericError(where, "non-finite input");
}

}  // namespace

void validate(const EmlaParams& p) {
  require_positive(p.phi_pm, "phi_pm");
  require_positive(p.r_s, "r_s");
  require_positive(p.l_d, "l_d");
  require_positive(p.l_q, "l_q");
  if (p.n_p < 1) throw ValidationError("n_p", "must be >= 1");
  require_positive(p.j_m, "j_m");
  require_positive(p.j_c, "j_c");
  require_positive(p.j_gb, "j_gb");
  require_positive(p.m_bs, "m_bs");
  require_positive(p.b_m, "b_m");
  require_positive(p.b_bs, "b_bs");
  require_positive(p.rho, "rho");
  if (p.rho > 1.0) throw ValidationError("rho", "must be <= 1");
  require_positive(p.lead, "lead");
  require_positive(p.eta_gb, "eta_gb");
  if (p.eta_gb > 1.0) throw ValidationError("eta_gb", "must be <= 1");
  require_positive(p.k_tau1, "k_tau1");
  require_positive(p.k_tau2, "k_tau2");
  require_positive(p.k_tau3, "k_tau3");
  require_positive(p.k_bearing, "k_bearing");
  require_positive(p.k_screw, "k_screw");
  require_positive(p.k_nut, "k_nut");
  require_positive(p.k_tube, "k_tube");
}

double series_stiffness(double k_bearing, double k_screw, double k_nut, double k_tube) {
  return 1.0 / (1.0 / k_bearing + 1.0 / k_screw + 1.0 / k_nut + 1.0 / k_tube);
}

EquivalentParams equivalent_params(const EmlaParams& p) {
  validate(p);
  EquivalentParams eq;
  eq.alpha_rl = 2.0 * std::numbers::pi / (p.rho * p.lead);
  const double a = eq.alpha_rl;
  const double a2 = a * a;
  eq.k_l = series_stiffness(p.k_bearing, p.k_screw, p.k_nut, p.k_tube);
  eq.a_eq = a * (p.j_m + p.j_c + p.j_gb + p.m_bs / a2);
  eq.b_eq = a * (p.b_m + p.b_bs / a2);
  const double compliance =
      1.0 / p.k_tau1 + 1.0 / p.k_tau2 + 1.0 / (p.rho * p.rho * p.k_tau3) + a2 / eq.k_l;
  eq.c_eq = a2 / compliance;
  eq.d_eq = 1.0 / (a * p.eta_gb);
  return eq;
}

Dq0 park_abc_to_dq(const Abc& v, double angle) {
  require_finite(angle, "park_abc_to_dq.angle");
  require_finite(v.a, "park_abc_to_dq.a");
  require_finite(v.b, "park_abc_to_dq.b");
  require_finite(v.c, "park_abc_to_dq.c");
  const double c0 = std::cos(angle);
  const double c1 = std::cos(angle - kTwoPiOverThree);
  const double c2 = std::cos(angle + kTwoPiOverThree);
  const double s0 = std::sin(angle);
  const double s1 = std::sin(angle - kTwoPiOverThree);
  const double s2 = std::sin(angle + kTwoPiOverThree);
  constexpr double k = 2.0 / 3.0;
  return {k * (c0 * v.a + c1 * v.b + c2 * v.c), -k * (s0 * v.a + s1 * v.b + s2 * v.c),
          k * 0.5 * (v.a + v.b + v.c)};
}

Abc park_dq_to_abc(const Dq0& v, double angle) {
  require_finite(angle, "park_dq_to_abc.angle");
  require_finite(v.d, "park_dq_to_abc.d");
  require_finite(v.q, "park_dq_to_abc.q");
  require_finite(v.zero, "park_dq_to_abc.zero");
  const auto phase = [&](double theta) { return v.d * std::cos(theta) - v.q * std::sin(theta) + v.zero; };
  return {phase(angle), phase(angle - kTwoPiOverThree), phase(angle + kTwoPiOverThree)};
}

double electrical_angle(double x_l, const EmlaParams& p, const EquivalentParams& eq) {
  return p.n_p * eq.alpha_rl * x_l;
}

double electromagnetic_torque(double i_q, double i_d, const EmlaParams& p) {
  require_finite(i_q, "electromagnetic_torque.i_q");
  require_finite(i_d, "electromagnetic_torque.i_d");
  return 1.5 * p.n_p * (i_q * (i_d * p.l_d + p.phi_pm) - i_d * i_q * p.l_q);
}

double desired_q_current(double tau_ref, const EmlaParams& p) {
  return tau_ref / (1.5 * p.n_p * p.phi_pm);
}

JointState state_derivative(const JointState& x, const MotorInputs& u, double f_load,
                            const EmlaParams& p, const EquivalentParams& eq,
                            const std::array<double, 4>& extra, const ModelOptions& options) {
  const double omega_e = p.n_p * eq.alpha_rl * x.v_l;
  const double flux_current = options.flux_current == FluxCurrent::command ? u.i_q_ref : x.i_q;
  const double reluctance = x.i_q * x.i_d * p.l_d - x.i_q * x.i_d * p.l_q;

  JointState dx;
  dx.x_l = x.v_l + extra[0];
  dx.v_l = (1.5 * p.n_p * (reluctance + flux_current * p.phi_pm) - eq.b_eq * x.v_l -
            eq.c_eq * x.x_l - eq.d_eq * f_load) /
               eq.a_eq +
           extra[1];
  dx.i_q = (u.u_q - p.r_s * x.i_q - omega_e * (x.i_d * p.l_d + p.phi_pm)) / p.l_q + extra[2];
  dx.i_d = (u.u_d - p.r_s * x.i_d + omega_e * x.i_q * p.l_q) / p.l_d + extra[3];

  const auto rows = dx.as_array();
  for (int i = 0; i < 4; ++i) {
    if (!std::isfinite(rows[i])) {
      throw NumericError("subsystem " + std::to_string(i + 1), "non-finite state derivative");
    }
  }
  return dx;
}

}  // namespace emla
