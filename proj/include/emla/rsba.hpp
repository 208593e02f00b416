#pragma once

// Robust subsystem-based adaptive (RSBA) control for one actuator: the
// four-subsystem decomposition, tracking variables, virtual control,
// adaptation laws and the three physical commands (i_q*, u_q, u_d).

#include <array>
#include <limits>

#include "emla/model.hpp"

namespace emla {

using Vec4 = std::array<double, 4>;

struct RsbaGains {
  Vec4 beta{};
  Vec4 zeta{};
  Vec4 delta{};
  Vec4 sigma{};
};

/// Throws ValidationError unless every gain is finite and > 0.
void validate(const RsbaGains& g);

/// x_i' = A_i u_i + g_i(x) for i = 1..4, with u = (x_2, i_q*, u_q, u_d).
struct SubsystemDecomposition {
  Vec4 a_coef{};
  Vec4 g_vals{};
};

/// `x` holds the controller's view of the state: estimated position and
/// velocity, measured currents.
SubsystemDecomposition decompose(const JointState& x, const EmlaParams& p, const EquivalentParams& eq);

/// P_i = x_i - x_id for i = 1, 3, 4 and P_2 = x_2 - x_2d - a1.
Vec4 tracking_transform(const JointState& x, const Vec4& x_ref, double a1);

/// a1 = -(beta1 + zeta1 theta1) P1 / (2 A1) + ref_sign x_2d - g1 / A1.
double virtual_control(double p1, double theta1, double x2d, double g1, double a_coef1, const RsbaGains& gains,
                       double ref_sign = -1.0);

/// One RK4 step of theta' = -delta sigma theta + zeta delta P^2 / 2 with P
/// held, clamped at 0.
double adaptation_step(double theta, double p, double zeta, double delta, double sigma, double dt);

/// Unsaturated (u1, u2, u3, u4) = (P2, i_q*, u_q, u_d).
Vec4 control_signals(const SubsystemDecomposition& d, const Vec4& p_track, const Vec4& theta, const RsbaGains& gains);

/// Same outputs assembled from the per-subsystem modular law W_i.
Vec4 control_signals_modular(const SubsystemDecomposition& d, const Vec4& p_track, const Vec4& theta,
                             const RsbaGains& gains);

/// W_i = -(beta_i + zeta_i theta_i) P_i / (2 A_i) - g_i / A_i.
double modular_law(int i, const SubsystemDecomposition& d, const Vec4& p_track, const Vec4& theta,
                   const RsbaGains& gains);

/// Cross term A1 P1 P2 entering the first subsystem's Lyapunov rate, and
/// the term contributed to the second by -(A1/A2) P1 inside u2.
double connector_first(const SubsystemDecomposition& d, const Vec4& p_track);
double connector_second(const SubsystemDecomposition& d, const Vec4& p_track);

struct SaturationLimits {
  double iq_max = std::numeric_limits<double>::infinity();
  double u_max = std::numeric_limits<double>::infinity();
};

struct ControllerOptions {
  double a1_ref_sign = -1.0;
  SaturationLimits limits;
  bool freeze_adaptation_when_saturated = true;
  /// Acceleration bound on the virtual control [m/s^2]. When positive, a1
  /// (the closing rate of P1) is capped at sqrt(2 a |P1|) and rate limited
  /// to a per second, so the demanded motion stays within what the actuator
  /// can brake. 0 keeps the unshaped law.
  double accel_limit = 0.0;
  /// Bound on the per-step contraction (beta_i + zeta_i theta_i) dt / 2 of
  /// each subsystem. When positive, every theta_i is projected onto
  /// [0, (2 bound / dt - beta_i) / zeta_i] so the sampled loop cannot be
  /// driven past its stability limit by adaptation. 0 disables.
  double max_step_gain = 0.0;
};

struct ControllerState {
  Vec4 theta_hat{};
  Vec4 p_track{};
  double a1 = 0.0;
  double iq_ref_prev = 0.0;                ///< x_3d for the next step
  std::array<bool, 3> saturated{};         ///< i_q*, u_q, u_d at the previous step
};

struct ControlReference {
  double x1d = 0.0;
  double x2d = 0.0;
};

struct ControllerStep {
  ControllerState next;
  MotorInputs inputs;
  SubsystemDecomposition decomposition;
  Vec4 raw{};  ///< unsaturated (P2, i_q*, u_q, u_d)
};

/// One sampling period of the controller, in the order decompose, P1,
/// theta1, a1, P2, theta2, u2, then subsystems 3 and 4.
ControllerStep controller_step(const JointState& x, const ControlReference& ref, const ControllerState& s,
                               const EmlaParams& p, const EquivalentParams& eq, const RsbaGains& gains,
                               const ControllerOptions& options, double dt);

/// Bitmask of saturated outputs: 1 = i_q*, 2 = u_q, 4 = u_d.
int saturation_mask(const std::array<bool, 3>& flags);

}  // namespace emla
