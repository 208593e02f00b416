#pragma once

// Stability diagnostics: 2x2 Hurwitz and Lyapunov checks, exponential
// envelope fits on error traces, composite Lyapunov traces and the decay
// rate diagnostics that bound the convergence ball.

#include <Eigen/Dense>
#include <array>
#include <span>
#include <string>
#include <vector>

#include "emla/csv.hpp"
#include "emla/rsba.hpp"

namespace emla {

/// Exact 2x2 test: trace < 0 and determinant > 0.
bool is_hurwitz(const Eigen::Matrix2d& m);

/// Frobenius norm of p A_bar + A_bar^T p + Q.
double lyapunov_residual(const Eigen::Matrix2d& a_bar, const Eigen::Matrix2d& p_mat, const Eigen::Matrix2d& q_mat);

/// e(t) <= c_bar e(t0) exp(-rate (t - t0)) + floor at every sample t >= t0.
struct EnvelopeFit {
  double c_bar = 0.0;
  double rate = 0.0;
  double floor = 0.0;
  double r2 = 0.0;
  double t0 = 0.0;
  double e0 = 0.0;  ///< reference amplitude (e(t0), or 1 when e(t0) = 0)
  bool not_exponential = false;
  bool at_floor = false;  ///< e(t0) = 0 and no sample exceeds the floor
  std::size_t fit_points = 0;

  /// Bounded by the fitted envelope: either a decaying transient or none at all.
  bool decays() const;

  double bound(double t) const;
};

/// Floor = max of the last 10% of samples from t0 on; rate and amplitude
/// by least squares on log(e - floor) over the leading segment where the
/// residual stays above 1e-3 of its peak; c_bar is then inflated until the
/// envelope majorizes every sample.
EnvelopeFit fit_envelope(std::span<const double> t, std::span<const double> e, std::size_t t0_index = 0);

struct LyapunovTrace {
  std::vector<double> t;
  std::vector<double> v0;
  std::array<std::vector<double>, 4> vi;
  std::vector<double> v;
};

/// V0 = e^T p e + eta_hat^2 / ell with e = x - x_hat, and
/// V_i = (P_i^2 + theta_i^2 / delta_i) / 2; V is their sum. Needs the
/// ground-truth columns of a simulation trace.
LyapunovTrace composite_lyapunov(const CsvTable& trace, const Eigen::Matrix2d& p_mat, const Vec4& delta, double ell);

struct PhiDiagnostics {
  Vec4 phi{};          ///< min(beta_i, delta_i sigma_i)
  double phi0 = 0.0;   ///< min(1, m_inf ell)
  double phi_total = 0.0;
  double empirical_floor = 0.0;
};

/// `m_inf` is the smallest value the observer's m takes over the horizon.
PhiDiagnostics ball_radius_estimate(const RsbaGains& gains, double m_inf, double ell, double empirical_floor);

}  // namespace emla
