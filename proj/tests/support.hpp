#pragma once

// Shared fixtures for the C++ test suites.

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "emla/model.hpp"
#include "emla/observer.hpp"
#include "emla/stability.hpp"

namespace emla::test {

inline std::string config_path(const std::string& name) { return std::string(EMLA_CONFIG_DIR) + "/" + name; }
inline std::string data_path(const std::string& name) { return std::string(EMLA_TEST_DATA_DIR) + "/" + name; }

/// Lift actuator constants as bundled in configs/lift.json.
inline EmlaParams lift_params() {
  EmlaParams p;
  p.phi_pm = 0.15;
  p.r_s = 0.14;
  p.l_d = p.l_q = 2.4e-3;
  p.n_p = 8;
  p.j_m = 0.016;
  p.j_c = 5e-4;
  p.j_gb = 1.2e-3;
  p.m_bs = 156.5;
  p.b_m = 1e-4;
  p.b_bs = 100.0;
  p.rho = 1.0 / 7.0;
  p.lead = 0.02;
  p.eta_gb = 0.95;
  p.k_tau1 = p.k_tau2 = p.k_tau3 = 1e-7;
  p.k_bearing = p.k_screw = p.k_nut = p.k_tube = 1e6;
  return p;
}

/// A salient machine with stiff couplings, so every model term is active.
inline EmlaParams salient_params() {
  EmlaParams p = lift_params();
  p.l_d = 1.9e-3;
  p.l_q = 2.7e-3;
  p.k_tau1 = 2e4;
  p.k_tau2 = 3e4;
  p.k_tau3 = 5e4;
  return p;
}

/// Observer matrices of the published lift setup.
inline Eigen::Vector2d published_alpha() { return {0.3192, 0.3129}; }
inline Eigen::Matrix2d published_q() { return (Eigen::Matrix2d() << 0.7752, -0.0775, -0.0775, 0.3949).finished(); }
inline Eigen::Matrix2d published_p() { return (Eigen::Matrix2d() << 1.4078, -0.1975, -0.1975, 4.4535).finished(); }

/// Observer on a double integrator x1' = x2, x2' = u + d(t), with the input
/// u = sin(t_k) held over each step and the output y = x1 + n. d is unknown
/// to the observer.
struct ObserverBench {
  double disturbance = 0.0;  ///< amplitude of d = a sin(5 t)
  double noise = 0.0;        ///< half-width of uniform output noise
  double drive = 1.0;        ///< amplitude of the known input sin(t)
  double m0 = 1.0;
  double h = 5.0;            ///< constant output gain
  double pole_scale = 1.0;   ///< observer poles at -2s and -3s
  double duration = 30.0;
  double dt = 1e-3;
  Eigen::Vector2d x_hat0{0.01, 0.0};
  std::uint64_t seed = 5;

  ObserverConfig config() const {
    ObserverConfig c;
    c.alpha = synthesize_gain(c.a_mat, c.c_vec, {{{-2.0 * pole_scale, 0.0}, {-3.0 * pole_scale, 0.0}}}).alpha;
    c.q_mat = published_q();
    c.p_mat = solve_lyapunov_2x2(c.a_bar(), c.q_mat);
    c.m.m0 = m0;
    c.h.kind = OutputGain::Kind::constant;
    c.h.a = h;
    c.b_vec = Eigen::Vector2d(1.0, 1.0);
    return c;
  }

  struct Run {
    std::vector<double> t, err, eta;
    Eigen::Matrix2d p;
  };

  Run run() const {
    const ObserverConfig c = config();
    ObserverState s;
    s.x_hat = x_hat0;
    s.eta_hat = 1.0;
    Eigen::Vector2d x = Eigen::Vector2d::Zero();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double u_held = 0.0;
    const auto plant = [&](double t, const Eigen::Vector2d& z) {
      return Eigen::Vector2d(z(1), u_held + disturbance * std::sin(5.0 * t));
    };
    Run out;
    out.p = c.p_mat;
    const auto steps = static_cast<long>(std::lround(duration / dt));
    for (long k = 0; k < steps; ++k) {
      const double t = static_cast<double>(k) * dt;
      out.t.push_back(t);
      out.err.push_back((x - s.x_hat).norm());
      out.eta.push_back(s.eta_hat);
      const double n = noise > 0.0 ? noise * u(rng) : 0.0;
      u_held = drive * std::sin(t);
      s = observer_step(s, c, t, x(0) + n, Eigen::Vector2d::Zero(), Eigen::Vector2d(0.0, u_held), dt);
      const Eigen::Vector2d k1 = plant(t, x);
      const Eigen::Vector2d k2 = plant(t + 0.5 * dt, x + 0.5 * dt * k1);
      const Eigen::Vector2d k3 = plant(t + 0.5 * dt, x + 0.5 * dt * k2);
      const Eigen::Vector2d k4 = plant(t + dt, x + dt * k3);
      x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return out;
  }

  EnvelopeFit fit() const {
    const Run r = run();
    return fit_envelope(r.t, r.err);
  }
};

}  // namespace emla::test
