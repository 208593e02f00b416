#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "emla/error.hpp"
#include "emla/model.hpp"
#include "emla/rsba.hpp"
#include "support.hpp"

using namespace emla;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

}  // namespace

TEST(Park, RoundTripRandom) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> v(-300.0, 300.0), ang(-20.0, 20.0);
  for (int i = 0; i < 1000; ++i) {
    const Dq0 dq{v(rng), v(rng), v(rng)};
    const double th = ang(rng);
    const Dq0 back = park_abc_to_dq(park_dq_to_abc(dq, th), th);
    EXPECT_NEAR(back.d, dq.d, 1e-12 * 300.0);
    EXPECT_NEAR(back.q, dq.q, 1e-12 * 300.0);
    EXPECT_NEAR(back.zero, dq.zero, 1e-12 * 300.0);
  }
}

TEST(Park, BalancedSetMapsToConstantVector) {
  // A balanced set at electrical angle theta with peak I and phase lead
  // gamma gives d = I cos(gamma), q = I sin(gamma).
  const double amp = 12.0, gamma = 0.4;
  for (double th : {0.0, 0.7, 2.1, -3.0}) {
    const Abc abc{amp * std::cos(th + gamma), amp * std::cos(th + gamma - 2.0 * std::numbers::pi / 3.0),
                  amp * std::cos(th + gamma + 2.0 * std::numbers::pi / 3.0)};
    const Dq0 dq = park_abc_to_dq(abc, th);
    EXPECT_NEAR(dq.d, amp * std::cos(gamma), 1e-12);
    EXPECT_NEAR(dq.q, amp * std::sin(gamma), 1e-12);
    EXPECT_NEAR(dq.zero, 0.0, 1e-12);
  }
}

TEST(Park, RejectsNonFiniteAngle) {
  EXPECT_THROW(park_abc_to_dq({1, 2, 3}, std::nan("")), NumericError);
}

TEST(EquivalentParams, MatchHandComputation) {
  const EmlaParams p = test::salient_params();
  const EquivalentParams eq = equivalent_params(p);
  const double alpha = 2.0 * std::numbers::pi * 7.0 / 0.02;
  EXPECT_NEAR(eq.alpha_rl, alpha, 1e-9);
  const double jsum = 0.016 + 5e-4 + 1.2e-3;
  EXPECT_LT(rel_err(eq.a_eq, alpha * jsum + 156.5 / alpha), 1e-13);
  EXPECT_LT(rel_err(eq.b_eq, alpha * 1e-4 + 100.0 / alpha), 1e-13);
  const double kl = 1e6 / 4.0;
  const double compliance = 1.0 / 2e4 + 1.0 / 3e4 + 49.0 / 5e4 + alpha * alpha / kl;
  EXPECT_LT(rel_err(eq.c_eq, alpha * alpha / compliance), 1e-13);
  EXPECT_LT(rel_err(eq.d_eq, 1.0 / (alpha * 0.95)), 1e-13);
  EXPECT_LT(rel_err(eq.k_l, kl), 1e-13);
}

TEST(EquivalentParams, SeriesStiffnessIsBelowSoftestSpring) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> k(1e3, 1e9);
  for (int i = 0; i < 1000; ++i) {
    const double a = k(rng), b = k(rng), c = k(rng), d = k(rng);
    const double s = series_stiffness(a, b, c, d);
    EXPECT_LE(s, std::min({a, b, c, d}) * (1 + 1e-15));
    EXPECT_GE(s, std::min({a, b, c, d}) / 4.0 * (1 - 1e-15));
  }
}

TEST(EquivalentParams, ValidationNamesField) {
  EmlaParams p = test::lift_params();
  p.l_q = -1.0;
  try {
    (void)equivalent_params(p);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.field(), "l_q");
  }
  p = test::lift_params();
  p.rho = 1.5;
  EXPECT_THROW((void)equivalent_params(p), ValidationError);
}

TEST(Torque, CurrentCommandInvertsTorque) {
  const EmlaParams p = test::lift_params();
  for (double tau : {-150.0, -1.0, 0.0, 42.0, 190.0}) {
    EXPECT_NEAR(electromagnetic_torque(desired_q_current(tau, p), 0.0, p), tau, 1e-12 * 190.0);
  }
}

TEST(Model, DecompositionReconstructsStateEquations) {
  // x_i' = A_i u_i + g_i for random states and inputs, with the velocity
  // equation driven by the current command.
  const EmlaParams p = test::salient_params();
  const EquivalentParams eq = equivalent_params(p);
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> pos(0.0, 0.6), vel(-0.3, 0.3), cur(-100.0, 100.0), volt(-300.0, 300.0);
  for (int i = 0; i < 1000; ++i) {
    const JointState x{pos(rng), vel(rng), cur(rng), cur(rng)};
    const MotorInputs u{volt(rng), volt(rng), cur(rng)};
    const JointState dx = state_derivative(x, u, 0.0, p, eq);
    const auto d = decompose(x, p, eq);
    const std::array<double, 4> inputs{x.v_l, u.i_q_ref, u.u_q, u.u_d};
    const auto rows = dx.as_array();
    for (int k = 0; k < 4; ++k) {
      const double recon = d.a_coef[k] * inputs[k] + d.g_vals[k];
      const double scale = std::abs(d.a_coef[k] * inputs[k]) + std::abs(d.g_vals[k]) + 1e-300;
      EXPECT_LE(std::abs(recon - rows[k]) / scale, 1e-12) << "row " << k;
    }
  }
}

TEST(Model, LoadForceEntersThroughDeq) {
  const EmlaParams p = test::lift_params();
  const EquivalentParams eq = equivalent_params(p);
  const JointState x{0.3, 0.05, 10.0, 0.0};
  const MotorInputs u{10.0, 0.0, 10.0};
  const double f = 5e4;
  const double diff = state_derivative(x, u, f, p, eq).v_l - state_derivative(x, u, 0.0, p, eq).v_l;
  EXPECT_LT(rel_err(diff, -eq.d_eq * f / eq.a_eq), 1e-9);
}

TEST(Model, StateFluxOptionUsesMeasuredCurrent) {
  const EmlaParams p = test::lift_params();
  const EquivalentParams eq = equivalent_params(p);
  const JointState x{0.3, 0.0, 20.0, 0.0};
  const MotorInputs u{0.0, 0.0, 5.0};
  ModelOptions opt;
  opt.flux_current = FluxCurrent::state;
  const double a = state_derivative(x, u, 0.0, p, eq, {}, opt).v_l;
  const double b = state_derivative({0.3, 0.0, 20.0, 0.0}, {0.0, 0.0, 20.0}, 0.0, p, eq).v_l;
  EXPECT_DOUBLE_EQ(a, b);
}

TEST(Model, NonFiniteRowNamesSubsystem) {
  const EmlaParams p = test::lift_params();
  const EquivalentParams eq = equivalent_params(p);
  try {
    (void)state_derivative({0, 0, 0, 0}, {std::numeric_limits<double>::infinity(), 0, 0}, 0.0, p, eq);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.where(), "subsystem 3");
  }
}
