#include "emla/rsba.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "emla/error.hpp"

namespace emla {

void validate(const RsbaGains& g) {
  const std::pair<const Vec4*, const char*> sets[] = {
      {&g.beta, "beta"}, {&g.zeta, "zeta"}, {&g.delta, "delta"}, {&g.sigma, "sigma"}};
  for (const auto& [v, name] : sets) {
    for (int i = 0; i < 4; ++i) {
      if (!std::isfinite((*v)[i]) || (*v)[i] <= 0.0) {
        throw ValidationError(std::string("gains.") + name + "[" + std::to_string(i) + "]", "must be finite and > 0");
      }
    }
  }
}

SubsystemDecomposition decompose(const JointState& x, const EmlaParams& p, const EquivalentParams& eq) {
  SubsystemDecomposition d;
  d.a_coef = {1.0, 1.5 * p.n_p * p.phi_pm / eq.a_eq, 1.0 / p.l_q, 1.0 / p.l_d};
  const double omega_e = p.n_p * eq.alpha_rl * x.v_l;
  const double reluctance = x.i_q * x.i_d * p.l_d - x.i_q * x.i_d * p.l_q;
  d.g_vals[0] = 0.0;
  d.g_vals[1] = (1.5 * p.n_p * reluctance - eq.b_eq * x.v_l - eq.c_eq * x.x_l) / eq.a_eq;
  d.g_vals[2] = (-p.r_s * x.i_q - omega_e * (x.i_d * p.l_d + p.phi_pm)) / p.l_q;
  d.g_vals[3] = (-p.r_s * x.i_d + omega_e * x.i_q * p.l_q) / p.l_d;
  return d;
}

Vec4 tracking_transform(const JointState& x, const Vec4& x_ref, double a1) {
  return {x.x_l - x_ref[0], x.v_l - x_ref[1] - a1, x.i_q - x_ref[2], x.i_d - x_ref[3]};
}

namespace {

void require_nonzero(double a, int i) {
  if (a == 0.0 || !std::isfinite(a)) {
    throw ValidationError("A" + std::to_string(i + 1), "coefficient must be finite and nonzero");
  }
}

}  // namespace

double virtual_control(double p1, double theta1, double x2d, double g1, double a_coef1, const RsbaGains& gains,
                       double ref_sign) {
  require_nonzero(a_coef1, 0);
  return -(gains.beta[0] + gains.zeta[0] * theta1) * p1 / (2.0 * a_coef1) + ref_sign * x2d - g1 / a_coef1;
}

double adaptation_step(double theta, double p, double zeta, double delta, double sigma, double dt) {
  const double drive = 0.5 * zeta * delta * p * p;
  const double decay = delta * sigma;
  const auto f = [&](double th) { return -decay * th + drive; };
  const double k1 = f(theta);
  const double k2 = f(theta + 0.5 * dt * k1);
  const double k3 = f(theta + 0.5 * dt * k2);
  const double k4 = f(theta + dt * k3);
  return std::max(0.0, theta + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
}

double modular_law(int i, const SubsystemDecomposition& d, const Vec4& p_track, const Vec4& theta,
                   const RsbaGains& gains) {
  const double a = d.a_coef[i];
  require_nonzero(a, i);
  return -(gains.beta[i] + gains.zeta[i] * theta[i]) * p_track[i] / (2.0 * a) - d.g_vals[i] / a;
}

Vec4 control_signals(const SubsystemDecomposition& d, const Vec4& p_track, const Vec4& theta,
                     const RsbaGains& gains) {
  for (int i = 0; i < 4; ++i) require_nonzero(d.a_coef[i], i);
  const auto& a = d.a_coef;
  const auto& g = d.g_vals;
  const auto& P = p_track;
  Vec4 u;
  u[0] = P[1];
  u[1] = -(gains.beta[1] + gains.zeta[1] * theta[1]) * P[1] / (2.0 * a[1]) - g[1] / a[1] - (a[0] / a[1]) * P[0];
  u[2] = -(gains.beta[2] + gains.zeta[2] * theta[2]) * P[2] / (2.0 * a[2]) - g[2] / a[2];
  u[3] = -(gains.beta[3] + gains.zeta[3] * theta[3]) * P[3] / (2.0 * a[3]) - g[3] / a[3];
  return u;
}

Vec4 control_signals_modular(const SubsystemDecomposition& d, const Vec4& p_track, const Vec4& theta,
                             const RsbaGains& gains) {
  Vec4 u;
  for (int i = 0; i < 4; ++i) {
    if (i == 0) {
      u[i] = p_track[1];
    } else if (i == 1) {
      u[i] = modular_law(i, d, p_track, theta, gains) - (d.a_coef[i - 1] / d.a_coef[i]) * p_track[i - 1];
    } else {
      u[i] = modular_law(i, d, p_track, theta, gains);
    }
  }
  return u;
}

double connector_first(const SubsystemDecomposition& d, const Vec4& p_track) {
  return d.a_coef[0] * p_track[0] * p_track[1];
}

double connector_second(const SubsystemDecomposition& d, const Vec4& p_track) {
  return p_track[1] * d.a_coef[1] * (-(d.a_coef[0] / d.a_coef[1]) * p_track[0]);
}

ControllerStep controller_step(const JointState& x, const ControlReference& ref, const ControllerState& s,
                               const EmlaParams& p, const EquivalentParams& eq, const RsbaGains& gains,
                               const ControllerOptions& options, double dt) {
  if (!(dt > 0.0)) throw ValidationError("dt", "must be > 0");
  if (!std::isfinite(ref.x1d) || !std::isfinite(ref.x2d)) throw NumericError("controller", "non-finite reference");

  ControllerStep out;
  out.next = s;
  auto& th = out.next.theta_hat;
  auto& P = out.next.p_track;
  const auto& frozen = s.saturated;
  const bool freeze = options.freeze_adaptation_when_saturated;

  out.decomposition = decompose(x, p, eq);
  const auto& d = out.decomposition;

  const auto project = [&](int i) {
    if (options.max_step_gain <= 0.0) return;
    const auto k = static_cast<std::size_t>(i);
    const double cap = std::max(0.0, (2.0 * options.max_step_gain / dt - gains.beta[k]) / gains.zeta[k]);
    th[k] = std::min(th[k], cap);
  };
  P[0] = x.x_l - ref.x1d;
  th[0] = adaptation_step(th[0], P[0], gains.zeta[0], gains.delta[0], gains.sigma[0], dt);
  project(0);
  if (options.accel_limit > 0.0) {
    // a1 is the closing rate of P1; cap it by the braking curve.
    const double g_term = d.g_vals[0] / d.a_coef[0];
    const double raw = virtual_control(P[0], th[0], ref.x2d, d.g_vals[0], d.a_coef[0], gains, options.a1_ref_sign);
    const double cap = std::sqrt(2.0 * options.accel_limit * std::abs(P[0]));
    const double target = std::clamp(raw + g_term, -cap, cap) - g_term;
    const double step = options.accel_limit * dt;
    out.next.a1 = s.a1 + std::clamp(target - s.a1, -step, step);
  } else {
    out.next.a1 = virtual_control(P[0], th[0], ref.x2d, d.g_vals[0], d.a_coef[0], gains, options.a1_ref_sign);
  }

  const Vec4 x_ref{ref.x1d, ref.x2d, s.iq_ref_prev, 0.0};
  P = tracking_transform(x, x_ref, out.next.a1);
  for (int i = 1; i < 4; ++i) {
    if (freeze && frozen[static_cast<std::size_t>(i - 1)]) continue;
    th[i] = adaptation_step(th[i], P[i], gains.zeta[i], gains.delta[i], gains.sigma[i], dt);
    project(i);
  }

  out.raw = control_signals(d, P, th, gains);

  const auto clamp = [](double v, double lim, bool& flag) {
    flag = std::abs(v) > lim;
    return std::clamp(v, -lim, lim);
  };
  auto& sat = out.next.saturated;
  out.inputs.i_q_ref = clamp(out.raw[1], options.limits.iq_max, sat[0]);
  out.inputs.u_q = clamp(out.raw[2], options.limits.u_max, sat[1]);
  out.inputs.u_d = clamp(out.raw[3], options.limits.u_max, sat[2]);
  out.next.iq_ref_prev = out.inputs.i_q_ref;

  for (int i = 0; i < 4; ++i) {
    if (!std::isfinite(out.raw[i])) throw NumericError("controller u" + std::to_string(i + 1), "non-finite output");
  }
  return out;
}

int saturation_mask(const std::array<bool, 3>& flags) {
  return (flags[0] ? 1 : 0) | (flags[1] ? 2 : 0) | (flags[2] ? 4 : 0);
}

}  // namespace emla
