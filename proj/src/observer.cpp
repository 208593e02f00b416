#include "emla/observer.hpp"

#include <cmath>
#include <random>
#include <string>

#include "emla/error.hpp"
#include "emla/stability.hpp"

namespace emla {

double ExpDecay::operator()(double t) const { return m0 * std::exp(-lambda * t); }

double ExpDecay::integral(double t) const { return m0 * (1.0 - std::exp(-lambda * t)) / lambda; }

double OutputGain::operator()(double y) const {
  if (kind == Kind::constant) return a;
  const double c = std::cos(y);
  const double s = std::sin(y);
  const double c2 = c * c;
  const double s2 = s * s;
  return a * c2 * c2 + b * s2 * s2;
}

namespace {

bool is_spd(const Eigen::Matrix2d& m) {
  if (std::abs(m(0, 1) - m(1, 0)) > 1e-12 * (1.0 + m.cwiseAbs().maxCoeff())) return false;
  return m(0, 0) > 0.0 && m.determinant() > 0.0;
}

}  // namespace

void validate(const ObserverConfig& cfg, double residual_tol) {
  if (!cfg.a_mat.allFinite() || !cfg.alpha.allFinite() || !cfg.p_mat.allFinite() || !cfg.q_mat.allFinite()) {
    throw ValidationError("observer", "matrices must be finite");
  }
  if (!is_hurwitz(cfg.a_bar())) throw ValidationError("observer.alpha", "A - alpha C is not Hurwitz");
  if (!is_spd(cfg.q_mat)) throw ValidationError("observer.q", "must be symmetric positive definite");
  if (!is_spd(cfg.p_mat)) throw ValidationError("observer.p", "must be symmetric positive definite");
  const double res = lyapunov_residual(cfg.a_bar(), cfg.p_mat, cfg.q_mat);
  if (res > residual_tol) {
    throw ValidationError("observer.p", "Lyapunov residual " + std::to_string(res) + " exceeds tolerance");
  }
  if (!(cfg.ell > 0.0)) throw ValidationError("observer.ell", "must be > 0");
  if (!(cfg.m.m0 > 0.0)) throw ValidationError("observer.m.m0", "must be > 0");
  if (!(cfg.m.lambda > 0.0)) throw ValidationError("observer.m.lambda", "must be > 0");
  if (cfg.h.kind == OutputGain::Kind::constant ? !(cfg.h.a > 0.0) : !(cfg.h.a > 0.0 && cfg.h.b > 0.0)) {
    throw ValidationError("observer.h", "coefficients must be > 0");
  }
}

GainSynthesis synthesize_gain(const Eigen::Matrix2d& a_mat, const Eigen::RowVector2d& c_vec,
                              const std::array<std::complex<double>, 2>& poles) {
  Eigen::Matrix2d obs;
  obs.row(0) = c_vec;
  obs.row(1) = c_vec * a_mat;
  if (std::abs(obs.determinant()) < 1e-14) throw ValidationError("observer", "(A, C) is not observable");

  const auto& p1 = poles[0];
  const auto& p2 = poles[1];
  const bool real_pair = p1.imag() == 0.0 && p2.imag() == 0.0;
  const bool conj_pair = std::abs(p1.real() - p2.real()) <= 1e-15 * (1.0 + std::abs(p1.real())) &&
                         std::abs(p1.imag() + p2.imag()) <= 1e-15 * (1.0 + std::abs(p1.imag()));
  if (!real_pair && !conj_pair) throw ValidationError("observer.poles", "must be real or a conjugate pair");

  // Ackermann: alpha = phi(A) O^{-1} e2 with phi(s) = s^2 + c1 s + c0.
  const double c1 = -(p1 + p2).real();
  const double c0 = (p1 * p2).real();
  const Eigen::Matrix2d phi = a_mat * a_mat + c1 * a_mat + c0 * Eigen::Matrix2d::Identity();
  GainSynthesis out;
  out.alpha = phi * obs.inverse() * Eigen::Vector2d(0.0, 1.0);
  out.a_bar = a_mat - out.alpha * c_vec;
  return out;
}

GainSynthesis zero_gain(const Eigen::Matrix2d& a_mat, const Eigen::RowVector2d&) {
  if (!is_hurwitz(a_mat)) throw ValidationError("observer.alpha", "A is not Hurwitz, a nonzero gain is required");
  return {Eigen::Vector2d::Zero(), a_mat};
}

RandomSynthesis random_synthesis(const Eigen::Matrix2d& a_mat, const Eigen::RowVector2d& c_vec, std::uint64_t seed,
                                 double alpha_max, int max_draws) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  RandomSynthesis out;
  bool found = false;
  while (out.alpha_draws < max_draws) {
    ++out.alpha_draws;
    out.alpha = Eigen::Vector2d(alpha_max * unit(rng), alpha_max * unit(rng));
    out.a_bar = a_mat - out.alpha * c_vec;
    if (is_hurwitz(out.a_bar)) {
      found = true;
      break;
    }
  }
  if (!found) throw NumericError("random_synthesis", "no Hurwitz gain found");
  while (out.q_draws < max_draws) {
    ++out.q_draws;
    Eigen::Matrix2d r;
    r << unit(rng), unit(rng), unit(rng), unit(rng);
    out.q_mat = r * r.transpose();
    if (!is_spd(out.q_mat)) continue;
    out.p_mat = solve_lyapunov_2x2(out.a_bar, out.q_mat);
    if (is_spd(out.p_mat)) return out;
  }
  throw NumericError("random_synthesis", "no positive definite Lyapunov solution found");
}

Eigen::Matrix2d solve_lyapunov_2x2(const Eigen::Matrix2d& a_bar, const Eigen::Matrix2d& q_mat) {
  if (!is_hurwitz(a_bar)) throw NumericError("solve_lyapunov_2x2", "A_bar is not Hurwitz");
  const double a = a_bar(0, 0), b = a_bar(0, 1), c = a_bar(1, 0), d = a_bar(1, 1);
  // Unknowns (p11, p12, p22) from the (1,1), (1,2) and (2,2) entries.
  Eigen::Matrix3d m;
  m << 2.0 * a, 2.0 * c, 0.0,  //
      b, a + d, c,             //
      0.0, 2.0 * b, 2.0 * d;
  const Eigen::Vector3d rhs(-q_mat(0, 0), -0.5 * (q_mat(0, 1) + q_mat(1, 0)), -q_mat(1, 1));
  const Eigen::FullPivLU<Eigen::Matrix3d> lu(m);
  if (!lu.isInvertible()) throw NumericError("solve_lyapunov_2x2", "singular system");
  const Eigen::Vector3d x = lu.solve(rhs);
  Eigen::Matrix2d p;
  p << x[0], x[1], x[1], x[2];
  return p;
}

double robustifier(double y_bar, double eta_hat, double h_val, double m_val) {
  if (!(m_val > 0.0)) throw ValidationError("m", "must be > 0");
  const double eh = eta_hat * h_val;
  return eh * eh * y_bar / (eh * std::abs(y_bar) + m_val);
}

ObserverState observer_step(const ObserverState& s, const ObserverConfig& cfg, double t, double y,
                            const Eigen::Vector2d& g_val, const Eigen::Vector2d& u_val, double dt,
                            ObserverStepInfo* info) {
  if (!(dt > 0.0)) throw ValidationError("dt", "must be > 0");
  const double h = cfg.h(y);
  const Eigen::Vector2d drive =
      cfg.use_model_terms ? Eigen::Vector2d(cfg.b_vec.cwiseProduct(u_val) + g_val) : Eigen::Vector2d::Zero();
  const Eigen::Vector2d injection = cfg.p_mat.inverse() * cfg.c_vec.transpose();

  using Vec3 = Eigen::Vector3d;  // (x_hat1, x_hat2, eta_hat)
  const auto rhs = [&](double tau, const Vec3& z) {
    const Eigen::Vector2d xh = z.head<2>();
    const double y_bar = y - cfg.c_vec.dot(xh);
    const double m = cfg.m(tau);
    const double f = robustifier(y_bar, z[2], h, m);
    Vec3 dz;
    dz.head<2>() = cfg.a_mat * xh + drive + cfg.alpha * y_bar + injection * f;
    dz[2] = -m * cfg.ell * z[2] + cfg.ell * h * std::abs(y_bar);
    return dz;
  };

  const Vec3 z0(s.x_hat[0], s.x_hat[1], s.eta_hat);
  if (info) {
    info->y_bar = y - cfg.c_vec.dot(s.x_hat);
    info->m = cfg.m(t);
    info->h = h;
    info->f = robustifier(info->y_bar, s.eta_hat, h, info->m);
  }
  const Vec3 k1 = rhs(t, z0);
  const Vec3 k2 = rhs(t + 0.5 * dt, z0 + 0.5 * dt * k1);
  const Vec3 k3 = rhs(t + 0.5 * dt, z0 + 0.5 * dt * k2);
  const Vec3 k4 = rhs(t + dt, z0 + dt * k3);
  const Vec3 z1 = z0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

  const char* names[3] = {"x_hat1", "x_hat2", "eta_hat"};
  for (int i = 0; i < 3; ++i) {
    if (!std::isfinite(z1[i])) throw NumericError(std::string("observer ") + names[i], "non-finite update");
  }
  ObserverState out;
  out.x_hat = z1.head<2>();
  out.eta_hat = std::max(z1[2], kEtaFloor);
  return out;
}

}  // namespace emla
