#include <algorithm>
#include <cmath>
#include <string>

#include "emla/error.hpp"
#include "emla/trajectory.hpp"

namespace emla {

std::vector<double> clamped_uniform_knots(int num_ctrl, int degree) {
  if (degree < 1) throw ValidationError("degree", "must be >= 1");
  if (num_ctrl < degree + 1) throw ValidationError("num_ctrl", "must be >= degree + 1");
  const int m = num_ctrl + degree + 1;
  const int interior = num_ctrl - degree - 1;
  std::vector<double> knots(static_cast<std::size_t>(m), 0.0);
  for (int i = 0; i < interior; ++i) {
    knots[static_cast<std::size_t>(degree + 1 + i)] = static_cast<double>(i + 1) / (interior + 1);
  }
  for (int i = m - degree - 1; i < m; ++i) knots[static_cast<std::size_t>(i)] = 1.0;
  return knots;
}

BasisRows bspline_basis(double t_norm, std::span<const double> knots, int degree) {
  const int p = degree;
  const int n = static_cast<int>(knots.size()) - p - 1;
  if (p < 1 || n < p + 1) throw ValidationError("knots", "too few knots for the degree");
  if (!std::isfinite(t_norm)) throw NumericError("bspline_basis", "non-finite parameter");

  BasisRows rows;
  double u = t_norm;
  if (u < 0.0 || u > 1.0) {
    rows.clamped = true;
    u = std::clamp(u, 0.0, 1.0);
  }

  // Knot span: largest i in [p, n-1] with knots[i] <= u.
  int span = n - 1;
  if (u < knots[static_cast<std::size_t>(n)]) {
    const auto it = std::upper_bound(knots.begin() + p, knots.begin() + n + 1, u);
    span = static_cast<int>(it - knots.begin()) - 1;
  }

  constexpr int kDerivs = 2;
  std::vector<std::vector<double>> ndu(p + 1, std::vector<double>(p + 1, 0.0));
  std::vector<double> left(p + 1, 0.0), right(p + 1, 0.0);
  ndu[0][0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = u - knots[static_cast<std::size_t>(span + 1 - j)];
    right[j] = knots[static_cast<std::size_t>(span + j)] - u;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu[j][r] = right[r + 1] + left[j - r];
      const double temp = ndu[r][j - 1] / ndu[j][r];
      ndu[r][j] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu[j][j] = saved;
  }

  std::vector<std::vector<double>> ders(kDerivs + 1, std::vector<double>(p + 1, 0.0));
  for (int j = 0; j <= p; ++j) ders[0][j] = ndu[j][p];

  std::vector<std::vector<double>> a(2, std::vector<double>(p + 1, 0.0));
  for (int r = 0; r <= p; ++r) {
    int s1 = 0;
    int s2 = 1;
    a[0][0] = 1.0;
    for (int k = 1; k <= kDerivs; ++k) {
      double d = 0.0;
      const int rk = r - k;
      const int pk = p - k;
      if (r >= k) {
        a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
        d = a[s2][0] * ndu[rk][pk];
      }
      const int j1 = rk >= -1 ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
        d += a[s2][j] * ndu[rk + j][pk];
      }
      if (r <= pk) {
        a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
        d += a[s2][k] * ndu[r][pk];
      }
      ders[k][r] = d;
      std::swap(s1, s2);
    }
  }
  double factor = p;
  for (int k = 1; k <= kDerivs; ++k) {
    for (int j = 0; j <= p; ++j) ders[k][j] *= factor;
    factor *= (p - k);
  }

  rows.value = Eigen::VectorXd::Zero(n);
  rows.first = Eigen::VectorXd::Zero(n);
  rows.second = Eigen::VectorXd::Zero(n);
  for (int j = 0; j <= p; ++j) {
    const int idx = span - p + j;
    rows.value[idx] = ders[0][j];
    rows.first[idx] = p >= 1 ? ders[1][j] : 0.0;
    rows.second[idx] = p >= 2 ? ders[2][j] : 0.0;
  }
  return rows;
}

// control_points is passed as an lvalue so its row count is read before any
// parameter is move-constructed.
BsplineCurve::BsplineCurve(int degree, Eigen::MatrixXd control_points, double t_final)
    : BsplineCurve(degree, clamped_uniform_knots(static_cast<int>(control_points.rows()), degree), control_points,
                   t_final) {}

BsplineCurve::BsplineCurve(int degree, std::vector<double> knots, Eigen::MatrixXd control_points,
                           double t_final)
    : degree_(degree), knots_(std::move(knots)), control_points_(std::move(control_points)), t_final_(t_final) {
  if (degree_ < 3) throw ValidationError("degree", "must be >= 3");
  if (!(t_final_ > 0.0) || !std::isfinite(t_final_)) throw ValidationError("t_final", "must be > 0");
  const auto n = static_cast<std::size_t>(control_points_.rows());
  if (knots_.size() != n + static_cast<std::size_t>(degree_) + 1) {
    throw ValidationError("knots", "expected num_ctrl + degree + 1 knots");
  }
  if (!std::is_sorted(knots_.begin(), knots_.end())) throw ValidationError("knots", "must be non-decreasing");
  for (int i = 0; i <= degree_; ++i) {
    if (knots_[static_cast<std::size_t>(i)] != knots_.front() || knots_[knots_.size() - 1 - i] != knots_.back()) {
      throw ValidationError("knots", "must be clamped (degree + 1 repeated end knots)");
    }
  }
  if (knots_.front() != 0.0 || knots_.back() != 1.0) throw ValidationError("knots", "must span [0, 1]");
}

BasisRows BsplineCurve::time_basis(double t) const {
  BasisRows rows = bspline_basis(t / t_final_, knots_, degree_);
  rows.first /= t_final_;
  rows.second /= (t_final_ * t_final_);
  return rows;
}

TrajectorySample eval_trajectory(const BsplineCurve& curve, double t) {
  if (!(t >= 0.0 && t <= curve.t_final())) {
    throw ValidationError("t", "outside [0, " + std::to_string(curve.t_final()) + "]");
  }
  const BasisRows rows = curve.time_basis(t);
  const auto& c = curve.control_points();
  return {c.transpose() * rows.value, c.transpose() * rows.first, c.transpose() * rows.second};
}

}  // namespace emla
