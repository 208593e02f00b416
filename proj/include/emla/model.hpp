#pragma once

// Physics of a PMSM-driven electromechanical linear actuator (EMLA):
// d-q frame transforms, lumped equivalent parameters, and the four-state
// continuous model x = [x_L, v_L, i_q, i_d].

#include <array>

namespace emla {

/// Physical constants of one actuator. SI units throughout.
struct EmlaParams {
  double phi_pm = 0.0;  ///< permanent-magnet flux linkage [Wb]
  double r_s = 0.0;     ///< stator resistance [Ohm]
  double l_d = 0.0;     ///< d-axis inductance [H]
  double l_q = 0.0;     ///< q-axis inductance [H]
  int n_p = 1;          ///< pole pairs
  double j_m = 0.0;     ///< motor inertia [kg m^2]
  double j_c = 0.0;     ///< coupling inertia [kg m^2]
  double j_gb = 0.0;    ///< gearbox inertia [kg m^2]
  double m_bs = 0.0;    ///< screw mass [kg]
  double b_m = 0.0;     ///< motor viscous friction [N m s/rad]
  double b_bs = 0.0;    ///< screw viscous friction [N s/m]
  double rho = 1.0;     ///< inverse gearbox ratio, 0 < rho <= 1
  double lead = 0.0;    ///< screw lead [m]
  double eta_gb = 1.0;  ///< gearbox efficiency, 0 < eta <= 1
  double k_tau1 = 0.0;  ///< rotational stiffnesses [N m/rad]
  double k_tau2 = 0.0;
  double k_tau3 = 0.0;
  double k_bearing = 0.0;  ///< linear stiffnesses [N/m]
  double k_screw = 0.0;
  double k_nut = 0.0;
  double k_tube = 0.0;
};

/// Throws ValidationError naming the first offending field.
void validate(const EmlaParams& p);

/// Lumped coefficients of the linear-side torque balance
/// tau_m = a_eq x'' + b_eq x' + c_eq x + d_eq F_L.
struct EquivalentParams {
  double alpha_rl = 0.0;  ///< rotary-to-linear conversion ratio [rad/m]
  double a_eq = 0.0;
  double b_eq = 0.0;
  double c_eq = 0.0;
  double d_eq = 0.0;
  double k_l = 0.0;  ///< series stiffness of bearing, screw, nut and tube [N/m]
};

EquivalentParams equivalent_params(const EmlaParams& p);

/// Harmonic sum of four springs in series.
double series_stiffness(double k_bearing, double k_screw, double k_nut, double k_tube);

struct JointState {
  double x_l = 0.0;  ///< linear position [m]
  double v_l = 0.0;  ///< linear velocity [m/s]
  double i_q = 0.0;  ///< q-axis current [A]
  double i_d = 0.0;  ///< d-axis current [A]

  std::array<double, 4> as_array() const { return {x_l, v_l, i_q, i_d}; }
  static JointState from_array(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }
};

struct MotorInputs {
  double u_q = 0.0;      ///< q-axis voltage [V]
  double u_d = 0.0;      ///< d-axis voltage [V]
  double i_q_ref = 0.0;  ///< q-current command [A]
};

struct Abc {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
};

struct Dq0 {
  double d = 0.0;
  double q = 0.0;
  double zero = 0.0;
};

/// Amplitude-invariant Park transform (2/3 scaling).
Dq0 park_abc_to_dq(const Abc& v, double angle);
Abc park_dq_to_abc(const Dq0& v, double angle);

/// Electrical rotor angle for a given linear position: N_p * alpha_RL * x_L.
double electrical_angle(double x_l, const EmlaParams& p, const EquivalentParams& eq);

/// 1.5 N_p [i_q (i_d L_d + Phi) - i_d i_q L_q]
double electromagnetic_torque(double i_q, double i_d, const EmlaParams& p);

/// q-current that produces `tau_ref` with i_d = 0. The d-axis reference is 0.
double desired_q_current(double tau_ref, const EmlaParams& p);

/// Which current multiplies the flux linkage in the velocity equation.
/// `command` reproduces the published model (the q-current command enters
/// directly); `state` uses the measured q-current instead.
enum class FluxCurrent { command, state };

struct ModelOptions {
  FluxCurrent flux_current = FluxCurrent::command;
};

/// Right-hand side of the four-state model. `f_load` enters the velocity
/// equation as -d_eq * f_load / a_eq; `extra[i]` is added to row i verbatim
/// (non-triangular uncertainty plus disturbance, already in state units).
/// Throws NumericError("subsystem <i>") if a row is not finite.
JointState state_derivative(const JointState& x, const MotorInputs& u, double f_load,
                            const EmlaParams& p, const EquivalentParams& eq,
                            const std::array<double, 4>& extra = {},
                            const ModelOptions& options = {});

}  // namespace emla
