#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <random>

#include "emla/error.hpp"
#include "emla/observer.hpp"
#include "emla/stability.hpp"
#include "support.hpp"

using namespace emla;

TEST(Lyapunov, PublishedTriple) {
  ObserverConfig c;
  c.alpha = test::published_alpha();
  const Eigen::Matrix2d p = solve_lyapunov_2x2(c.a_bar(), test::published_q());
  EXPECT_LE((p - test::published_p()).cwiseAbs().maxCoeff(), 5e-3);
  EXPECT_LE(lyapunov_residual(c.a_bar(), test::published_p(), test::published_q()), 5e-3);
}

TEST(Lyapunov, ResidualVanishesOnRandomStableMatrices) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  int solved = 0;
  while (solved < 500) {
    Eigen::Matrix2d a;
    a << n(rng), n(rng), n(rng), n(rng);
    if (!is_hurwitz(a)) continue;
    Eigen::Matrix2d r;
    r << n(rng), n(rng), n(rng), n(rng);
    const Eigen::Matrix2d q = r * r.transpose() + 0.1 * Eigen::Matrix2d::Identity();
    const Eigen::Matrix2d p = solve_lyapunov_2x2(a, q);
    EXPECT_LE(lyapunov_residual(a, p, q), 1e-9 * (1.0 + p.norm() * a.norm()));
    EXPECT_NEAR(p(0, 1), p(1, 0), 1e-12 * (1.0 + p.norm()));
    EXPECT_GT(p.selfadjointView<Eigen::Lower>().eigenvalues().minCoeff(), 0.0);
    ++solved;
  }
}

TEST(Lyapunov, UnstableMatrixThrows) {
  Eigen::Matrix2d a;
  a << 0.1, 1.0, 0.0, -1.0;
  EXPECT_THROW((void)solve_lyapunov_2x2(a, Eigen::Matrix2d::Identity()), NumericError);
}

TEST(Hurwitz, AgreesWithEigenvalues) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int i = 0; i < 10000; ++i) {
    Eigen::Matrix2d m;
    m << u(rng), u(rng), u(rng), u(rng);
    const auto ev = m.eigenvalues();
    const double max_re = std::max(ev(0).real(), ev(1).real());
    if (std::abs(max_re) < 1e-9) continue;  // boundary cases are ill-conditioned
    EXPECT_EQ(is_hurwitz(m), max_re < 0.0) << m;
  }
}

TEST(Robustifier, BoundedByEtaH) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> y(-10.0, 10.0), eta(0.0, 50.0), h(0.0, 40.0), m(1e-9, 500.0);
  for (int i = 0; i < 10000; ++i) {
    const double e = eta(rng), hv = h(rng);
    const double f = robustifier(y(rng), e, hv, m(rng));
    EXPECT_LE(std::abs(f), e * hv * (1.0 + 1e-15));
  }
}

TEST(Robustifier, OddInOutputError) {
  for (double y : {1e-6, 0.01, 3.0}) EXPECT_DOUBLE_EQ(robustifier(-y, 2.0, 5.0, 0.3), -robustifier(y, 2.0, 5.0, 0.3));
  EXPECT_EQ(robustifier(0.0, 2.0, 5.0, 0.3), 0.0);
}

TEST(OutputGain, QuarticBounds) {
  OutputGain h;
  h.a = 20.0;
  h.b = 20.0;
  for (double y = -4.0; y < 4.0; y += 0.01) {
    EXPECT_GE(h(y), 10.0 - 1e-12);  // a(c^4 + s^4) >= a/2
    EXPECT_LE(h(y), 20.0 + 1e-12);
  }
}

TEST(ExpDecay, IntegralMatchesQuadrature) {
  ExpDecay m;
  m.m0 = 3.0;
  m.lambda = 0.7;
  double s = 0.0;
  const int n = 20000;
  const double t = 4.0, h = t / n;
  for (int k = 0; k < n; ++k) s += h * 0.5 * (m(k * h) + m((k + 1) * h));
  EXPECT_NEAR(m.integral(t), s, 1e-7);
}

TEST(GainSynthesis, PlacesPoles) {
  const Eigen::Matrix2d a = (Eigen::Matrix2d() << 0.0, 1.0, -2.0, -0.5).finished();
  const Eigen::RowVector2d c(1.0, 0.0);
  const auto g = synthesize_gain(a, c, {{{-4.0, 1.5}, {-4.0, -1.5}}});
  const auto ev = g.a_bar.eigenvalues();
  EXPECT_NEAR(ev(0).real(), -4.0, 1e-10);
  EXPECT_NEAR(std::abs(ev(0).imag()), 1.5, 1e-10);
  EXPECT_THROW((void)synthesize_gain(a, Eigen::RowVector2d(0.0, 0.0)), ValidationError);
}

TEST(GainSynthesis, RandomSearchIsSeededAndValid) {
  const Eigen::Matrix2d a = (Eigen::Matrix2d() << 0.0, 1.0, 0.0, 0.0).finished();
  const Eigen::RowVector2d c(1.0, 0.0);
  const auto r1 = random_synthesis(a, c, 77);
  const auto r2 = random_synthesis(a, c, 77);
  EXPECT_EQ(r1.alpha, r2.alpha);
  EXPECT_EQ(r1.q_mat, r2.q_mat);
  EXPECT_TRUE(is_hurwitz(r1.a_bar));
  EXPECT_LE(lyapunov_residual(r1.a_bar, r1.p_mat, r1.q_mat), 1e-9);
}

TEST(ObserverStep, EtaStaysPositive) {
  test::ObserverBench bench;
  bench.noise = 1e-2;
  bench.disturbance = 0.5;
  bench.duration = 5.0;
  const auto r = bench.run();
  for (double e : r.eta) EXPECT_GT(e, 0.0);
}

TEST(ObserverStep, ExactModelConvergesExponentially) {
  // Plant at rest so the held output sample is exact over each step.
  test::ObserverBench bench;
  bench.drive = 0.0;
  bench.x_hat0 = {0.01, -0.02};
  const auto fit = bench.fit();
  EXPECT_FALSE(fit.not_exponential);
  EXPECT_GT(fit.rate, 0.0);
  EXPECT_LE(fit.floor, 1e-6);
}

TEST(ObserverConfig, ValidateRejectsBadMatrices) {
  ObserverConfig c;
  c.alpha = test::published_alpha();
  c.q_mat = test::published_q();
  c.p_mat = solve_lyapunov_2x2(c.a_bar(), c.q_mat);
  EXPECT_NO_THROW(validate(c));
  ObserverConfig bad = c;
  bad.alpha = Eigen::Vector2d(-1.0, 1.0);
  EXPECT_THROW(validate(bad), ValidationError);
  bad = c;
  bad.p_mat(0, 1) += 0.1;
  EXPECT_THROW(validate(bad), ValidationError);
  bad = c;
  bad.ell = 0.0;
  EXPECT_THROW(validate(bad), ValidationError);
}
