#include <gtest/gtest.h>

#include <random>

#include "emla/error.hpp"
#include "emla/rsba.hpp"
#include "support.hpp"

using namespace emla;

namespace {

RsbaGains lift_gains() {
  RsbaGains g;
  g.beta = {3000, 3000, 1000, 1000};
  g.zeta = {100, 100, 100, 100};
  g.delta = {100, 100, 110, 110};
  g.sigma = {0.001, 0.001, 0.01, 0.01};
  return g;
}

struct RandomState {
  std::mt19937_64 rng{1234};
  std::uniform_real_distribution<double> pos{0.0, 0.6}, vel{-0.3, 0.3}, cur{-100.0, 100.0}, err{-0.05, 0.05},
      th{0.0, 50.0};
  JointState x() { return {pos(rng), vel(rng), cur(rng), cur(rng)}; }
  Vec4 p() { return {err(rng), err(rng), 100 * err(rng), 100 * err(rng)}; }
  Vec4 theta() { return {th(rng), th(rng), th(rng), th(rng)}; }
};

}  // namespace

TEST(Rsba, ConnectorCancels) {
  // The first subsystem's cross term A1 P1 P2 meets P2 A2 c in the second,
  // where c = -(A1/A2) P1 is the coupling part of u2.
  const EmlaParams p = test::salient_params();
  const EquivalentParams eq = equivalent_params(p);
  const RsbaGains g = lift_gains();
  RandomState r;
  for (int i = 0; i < 10000; ++i) {
    const auto d = decompose(r.x(), p, eq);
    const Vec4 P = r.p(), th = r.theta();
    const double first = d.a_coef[0] * P[0] * P[1];
    const double coupling = -(d.a_coef[0] / d.a_coef[1]) * P[0];
    const double second = P[1] * d.a_coef[1] * coupling;
    const double scale = std::max(std::abs(first), 1e-300);
    EXPECT_LE(std::abs(first + second), 1e-12 * scale);
    EXPECT_LE(std::abs(connector_first(d, P) + connector_second(d, P)), 1e-12 * scale);

    // u2 is the modular law plus exactly that coupling.
    const Vec4 u = control_signals(d, P, th, g);
    const double w2 = -(g.beta[1] + g.zeta[1] * th[1]) * P[1] / (2.0 * d.a_coef[1]) - d.g_vals[1] / d.a_coef[1];
    EXPECT_NEAR(u[1] - w2, coupling, 1e-13 * (std::abs(u[1]) + std::abs(w2)));
  }
}

TEST(Rsba, ModularLawMatchesDirectLaw) {
  const EmlaParams p = test::salient_params();
  const EquivalentParams eq = equivalent_params(p);
  const RsbaGains g = lift_gains();
  RandomState r;
  for (int i = 0; i < 1000; ++i) {
    const auto d = decompose(r.x(), p, eq);
    const Vec4 P = r.p(), th = r.theta();
    const Vec4 a = control_signals(d, P, th, g);
    const Vec4 b = control_signals_modular(d, P, th, g);
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(a[k], b[k], 1e-12 * (1.0 + std::abs(a[k])));
  }
}

TEST(Rsba, SubsystemClosedLoopIsDissipative) {
  // With u_i = W_i for i = 3, 4, P_i' = -(beta + zeta theta) P_i / 2 when the
  // reference is constant.
  const EmlaParams p = test::salient_params();
  const EquivalentParams eq = equivalent_params(p);
  const RsbaGains g = lift_gains();
  RandomState r;
  for (int i = 0; i < 200; ++i) {
    const auto d = decompose(r.x(), p, eq);
    const Vec4 P = r.p(), th = r.theta();
    const Vec4 u = control_signals(d, P, th, g);
    for (int k = 2; k < 4; ++k) {
      const double rate = d.a_coef[k] * u[k] + d.g_vals[k];
      EXPECT_NEAR(rate, -(g.beta[k] + g.zeta[k] * th[k]) * P[k] / 2.0, 1e-9 * (1.0 + std::abs(rate)));
    }
  }
}

TEST(Rsba, VirtualControlFormula) {
  const RsbaGains g = lift_gains();
  const double a1 = virtual_control(0.01, 2.0, 0.05, 0.0, 1.0, g, -1.0);
  EXPECT_DOUBLE_EQ(a1, -(3000.0 + 100.0 * 2.0) * 0.01 / 2.0 - 0.05);
  EXPECT_DOUBLE_EQ(virtual_control(0.0, 0.0, 0.05, 0.0, 1.0, g, 1.0), 0.05);
}

TEST(Rsba, TrackingTransform) {
  const Vec4 P = tracking_transform({1.0, 2.0, 3.0, 4.0}, {0.5, 0.25, 1.0, -1.0}, 0.5);
  EXPECT_DOUBLE_EQ(P[0], 0.5);
  EXPECT_DOUBLE_EQ(P[1], 1.25);
  EXPECT_DOUBLE_EQ(P[2], 2.0);
  EXPECT_DOUBLE_EQ(P[3], 5.0);
}

TEST(Rsba, AdaptationMatchesClosedForm) {
  // theta' = -a theta + b has theta(t) = b/a + (theta0 - b/a) e^{-a t}.
  const double zeta = 100, delta = 110, sigma = 0.01, P = 0.3, dt = 1e-3;
  const double a = delta * sigma, b = zeta * delta * P * P / 2.0;
  double th = 0.5;
  for (int k = 0; k < 1000; ++k) th = adaptation_step(th, P, zeta, delta, sigma, dt);
  const double exact = b / a + (0.5 - b / a) * std::exp(-a * 1.0);
  EXPECT_NEAR(th, exact, 1e-9 * exact);
}

TEST(Rsba, AdaptationStaysNonnegative) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> th(0.0, 10.0), P(-1.0, 1.0), dt(1e-5, 1e-1);
  for (int i = 0; i < 10000; ++i) {
    EXPECT_GE(adaptation_step(th(rng), P(rng), 100.0, 100.0, 1.0, dt(rng)), 0.0);
  }
}

TEST(Rsba, GainValidation) {
  RsbaGains g = lift_gains();
  g.delta[2] = 0.0;
  EXPECT_THROW(validate(g), ValidationError);
}

TEST(Rsba, SaturationClampsOutputs) {
  const EmlaParams p = test::lift_params();
  const EquivalentParams eq = equivalent_params(p);
  ControllerOptions opt;
  opt.limits.iq_max = 10.0;
  opt.limits.u_max = 50.0;
  const auto step = controller_step({0.0, 0.0, 0.0, 0.0}, {0.3, 0.0}, {}, p, eq, lift_gains(), opt, 1e-4);
  EXPECT_LE(std::abs(step.inputs.i_q_ref), 10.0);
  EXPECT_LE(std::abs(step.inputs.u_q), 50.0);
  EXPECT_LE(std::abs(step.inputs.u_d), 50.0);
  EXPECT_TRUE(step.next.saturated[0]);
  EXPECT_EQ(saturation_mask({true, false, true}), 5);
}

TEST(Rsba, StepGainProjectionCapsTheta) {
  const EmlaParams p = test::lift_params();
  const EquivalentParams eq = equivalent_params(p);
  ControllerOptions opt;
  opt.max_step_gain = 0.5;
  const RsbaGains g = lift_gains();
  const double dt = 1e-4;
  ControllerState s;
  JointState x{0.2, 0.0, -60.0, 5.0};
  for (int k = 0; k < 50; ++k) s = controller_step(x, {0.25, 0.0}, s, p, eq, g, opt, dt).next;
  for (int i = 0; i < 4; ++i) {
    const double cap = std::max(0.0, (2.0 * 0.5 / dt - g.beta[i]) / g.zeta[i]);
    EXPECT_LE(s.theta_hat[i], cap + 1e-12);
    EXPECT_GE(s.theta_hat[i], 0.0);
  }
}
