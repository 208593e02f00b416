#pragma once

// Robust adaptive observer for the motion subsystem (x_L, v_L) of one
// actuator. Only the position is measured.

#include <Eigen/Dense>
#include <array>
#include <complex>
#include <cstdint>
#include <optional>

namespace emla {

/// m(t) = m0 * exp(-lambda t). lambda > 0 keeps its integral finite.
struct ExpDecay {
  double m0 = 200.0;
  double lambda = 0.001;
  double operator()(double t) const;
  /// Integral of m over [0, t].
  double integral(double t) const;
};

/// H(y) = a cos^4(y) + b sin^4(y), or the constant a.
struct OutputGain {
  enum class Kind { quartic, constant };
  Kind kind = Kind::quartic;
  double a = 20.0;
  double b = 20.0;
  double operator()(double y) const;
};

struct ObserverConfig {
  Eigen::Matrix2d a_mat = (Eigen::Matrix2d() << 0.0, 1.0, 0.0, 0.0).finished();
  Eigen::Vector2d b_vec = Eigen::Vector2d(1.0, 1.0);  ///< elementwise input map, B u = b .* u
  Eigen::RowVector2d c_vec = Eigen::RowVector2d(1.0, 0.0);
  Eigen::Vector2d alpha = Eigen::Vector2d::Zero();
  Eigen::Matrix2d p_mat = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d q_mat = Eigen::Matrix2d::Identity();
  double ell = 1.0;
  ExpDecay m;
  OutputGain h;
  bool use_model_terms = true;  ///< false drops g and B u from the estimate dynamics

  Eigen::Matrix2d a_bar() const { return a_mat - alpha * c_vec; }
};

/// Throws ValidationError unless A - alpha C is Hurwitz, p and Q are SPD,
/// the Lyapunov residual is within `residual_tol`, and ell, m are positive.
void validate(const ObserverConfig& cfg, double residual_tol = 1e-9);

struct ObserverState {
  Eigen::Vector2d x_hat = Eigen::Vector2d::Zero();
  double eta_hat = 1.0;
};

struct GainSynthesis {
  Eigen::Vector2d alpha;
  Eigen::Matrix2d a_bar;
};

/// Pole placement for the 2x2 pair (A, C). Targets must be real or a
/// conjugate pair. Throws ValidationError if (A, C) is unobservable.
GainSynthesis synthesize_gain(const Eigen::Matrix2d& a_mat, const Eigen::RowVector2d& c_vec,
                              const std::array<std::complex<double>, 2>& poles = {{{-1.0, 0.0}, {-2.0, 0.0}}});

/// alpha = 0; A itself must be Hurwitz.
GainSynthesis zero_gain(const Eigen::Matrix2d& a_mat, const Eigen::RowVector2d& c_vec);

/// Randomized search: draw alpha uniformly in [0, alpha_max]^2 until
/// A - alpha C is Hurwitz, then draw Q = R R^T until the Lyapunov solution
/// is positive definite.
struct RandomSynthesis {
  Eigen::Vector2d alpha;
  Eigen::Matrix2d a_bar, q_mat, p_mat;
  int alpha_draws = 0;
  int q_draws = 0;
};
RandomSynthesis random_synthesis(const Eigen::Matrix2d& a_mat, const Eigen::RowVector2d& c_vec, std::uint64_t seed,
                                 double alpha_max = 1.0, int max_draws = 100000);

/// Symmetric p with p A_bar + A_bar^T p + Q = 0. Throws NumericError when
/// A_bar is not Hurwitz.
Eigen::Matrix2d solve_lyapunov_2x2(const Eigen::Matrix2d& a_bar, const Eigen::Matrix2d& q_mat);

/// f = eta^2 H^2 y_bar / (eta H |y_bar| + m).
double robustifier(double y_bar, double eta_hat, double h_val, double m_val);

struct ObserverStepInfo {
  double y_bar = 0.0;  ///< output error at the start of the step
  double f = 0.0;      ///< robustifier at the start of the step
  double h = 0.0;
  double m = 0.0;
};

/// One RK4 step of the estimate and adaptation dynamics with y, g and u
/// held over [t, t + dt]. eta_hat is floored at 1e-12.
ObserverState observer_step(const ObserverState& s, const ObserverConfig& cfg, double t, double y,
                            const Eigen::Vector2d& g_val, const Eigen::Vector2d& u_val, double dt,
                            ObserverStepInfo* info = nullptr);

inline constexpr double kEtaFloor = 1e-12;

}  // namespace emla
