#include "emla/stability.hpp"

#include <algorithm>
#include <cmath>

#include "emla/error.hpp"

namespace emla {

bool is_hurwitz(const Eigen::Matrix2d& m) { return m.trace() < 0.0 && m.determinant() > 0.0; }

double lyapunov_residual(const Eigen::Matrix2d& a_bar, const Eigen::Matrix2d& p_mat, const Eigen::Matrix2d& q_mat) {
  return (p_mat * a_bar + a_bar.transpose() * p_mat + q_mat).norm();
}

double EnvelopeFit::bound(double t) const { return c_bar * e0 * std::exp(-rate * (t - t0)) + floor; }

EnvelopeFit fit_envelope(std::span<const double> t, std::span<const double> e, std::size_t t0_index) {
  if (t.size() != e.size()) throw ValidationError("fit_envelope", "time and error series differ in length");
  if (t0_index >= t.size() || t.size() - t0_index < 20) {
    throw ValidationError("fit_envelope", "need at least 20 samples from t0");
  }
  const std::size_t n = t.size() - t0_index;
  const auto ts = t.subspan(t0_index);
  const auto es = e.subspan(t0_index);

  EnvelopeFit fit;
  fit.t0 = ts[0];
  fit.e0 = es[0] > 0.0 ? es[0] : 1.0;
  const std::size_t tail = std::max<std::size_t>(1, n / 10);
  fit.floor = *std::max_element(es.end() - static_cast<std::ptrdiff_t>(tail), es.end());
  fit.floor = std::max(fit.floor, 0.0);

  double peak = 0.0;
  for (const double v : es) peak = std::max(peak, v - fit.floor);
  // With e(t0) = 0 the transient term vanishes and the floor alone must hold.
  fit.at_floor = !(es[0] > 0.0) && !(peak > 0.0);

  // Least squares on the leading decaying segment.
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  std::size_t count = 0;
  if (peak > 0.0) {
    for (std::size_t k = 0; k < n; ++k) {
      const double r = es[k] - fit.floor;
      if (!(r > 1e-3 * peak)) {
        if (count >= 3) break;
        continue;
      }
      const double x = ts[k] - fit.t0;
      const double y = std::log(r);
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
      syy += y * y;
      ++count;
    }
  }
  fit.fit_points = count;
  double intercept = 0.0;
  if (count >= 3) {
    const double cn = static_cast<double>(count);
    const double den = cn * sxx - sx * sx;
    const double slope = den > 0.0 ? (cn * sxy - sx * sy) / den : 0.0;
    intercept = (sy - slope * sx) / cn;
    fit.rate = -slope;
    const double ss_tot = syy - sy * sy / cn;
    const double ss_res = syy - intercept * sy - slope * sxy;
    fit.r2 = ss_tot > 0.0 ? std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0) : 1.0;
  }
  fit.not_exponential = !fit.at_floor && !(fit.rate > 0.0);
  if (fit.not_exponential) fit.rate = std::min(fit.rate, 0.0);

  fit.c_bar = count >= 3 ? std::exp(intercept) / fit.e0 : 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double r = es[k] - fit.floor;
    if (r <= 0.0) continue;
    const double need = r / (fit.e0 * std::exp(-fit.rate * (ts[k] - fit.t0)));
    fit.c_bar = std::max(fit.c_bar, need);
  }
  fit.c_bar *= 1.0 + 1e-12;
  return fit;
}

bool EnvelopeFit::decays() const {
  if (!std::isfinite(floor)) return false;
  return at_floor || (!not_exponential && rate > 0.0);
}

LyapunovTrace composite_lyapunov(const CsvTable& trace, const Eigen::Matrix2d& p_mat, const Vec4& delta, double ell) {
  const std::vector<std::string> needed = {"t",  "x1", "x2", "x1hat", "x2hat", "eta_hat", "P1",  "P2",
                                           "P3", "P4", "th1", "th2",  "th3",   "th4"};
  const auto missing = trace.missing_columns(needed);
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw ValidationError("trace", "missing ground-truth columns: " + list);
  }
  if (!(ell > 0.0)) throw ValidationError("ell", "must be > 0");
  for (int i = 0; i < 4; ++i) {
    if (!(delta[i] > 0.0)) throw ValidationError("delta", "must be > 0");
  }
  const auto col = [&](const char* name) { return *trace.column(name); };
  const std::size_t c_t = col("t"), c_x1 = col("x1"), c_x2 = col("x2"), c_h1 = col("x1hat"), c_h2 = col("x2hat"),
                    c_eta = col("eta_hat");
  const std::size_t c_p[4] = {col("P1"), col("P2"), col("P3"), col("P4")};
  const std::size_t c_th[4] = {col("th1"), col("th2"), col("th3"), col("th4")};

  LyapunovTrace out;
  for (const auto& row : trace.rows) {
    const Eigen::Vector2d err(row[c_x1] - row[c_h1], row[c_x2] - row[c_h2]);
    const double eta = row[c_eta];
    const double v0 = err.dot(p_mat * err) + eta * eta / ell;
    double total = v0;
    out.t.push_back(row[c_t]);
    out.v0.push_back(v0);
    for (int i = 0; i < 4; ++i) {
      const double p = row[c_p[i]];
      const double th = row[c_th[i]];
      const double vi = 0.5 * (p * p + th * th / delta[i]);
      out.vi[static_cast<std::size_t>(i)].push_back(vi);
      total += vi;
    }
    out.v.push_back(total);
  }
  return out;
}

PhiDiagnostics ball_radius_estimate(const RsbaGains& gains, double m_inf, double ell, double empirical_floor) {
  validate(gains);
  if (!(m_inf > 0.0) || !(ell > 0.0)) throw ValidationError("observer", "m and ell must be > 0");
  PhiDiagnostics d;
  d.phi0 = std::min(1.0, m_inf * ell);
  d.phi_total = d.phi0;
  for (int i = 0; i < 4; ++i) {
    d.phi[i] = std::min(gains.beta[i], gains.delta[i] * gains.sigma[i]);
    d.phi_total = std::min(d.phi_total, d.phi[i]);
  }
  d.empirical_floor = empirical_floor;
  return d;
}

}  // namespace emla
