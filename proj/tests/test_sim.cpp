#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "emla/csv.hpp"
#include "emla/error.hpp"
#include "emla/sim.hpp"
#include "support.hpp"

using namespace emla;

namespace {

/// Open-loop plant under fixed voltages, integrated with RK4.
Eigen::Vector4d integrate(double dt, double horizon) {
  const EmlaParams p = test::lift_params();
  const EquivalentParams eq = equivalent_params(p);
  const auto f = [&](double t, const Eigen::Vector4d& x) {
    const MotorInputs u{40.0 * std::cos(30.0 * t), -5.0, x(2)};
    const JointState dx = state_derivative({x(0), x(1), x(2), x(3)}, u, 2e4, p, eq);
    return Eigen::Vector4d(dx.x_l, dx.v_l, dx.i_q, dx.i_d);
  };
  Eigen::Vector4d x(0.2, 0.0, 0.0, 0.0);
  const auto n = static_cast<long>(std::lround(horizon / dt));
  for (long k = 0; k < n; ++k) x = rk4_step(f, k * dt, x, dt);
  return x;
}

ScenarioConfig small_scenario() {
  ScenarioConfig cfg;
  cfg.name = "unit";
  cfg.params = test::lift_params();
  cfg.gains.beta = {3000, 3000, 1000, 1000};
  cfg.gains.zeta = {100, 100, 100, 100};
  cfg.gains.delta = {100, 100, 110, 110};
  cfg.gains.sigma = {0.001, 0.001, 0.01, 0.01};
  cfg.controller.limits = {105.5, 315.0};
  cfg.controller.accel_limit = 3.4;
  cfg.controller.max_step_gain = 0.5;
  auto& o = cfg.observer.config;
  o.alpha = test::published_alpha();
  o.q_mat = test::published_q();
  o.p_mat = solve_lyapunov_2x2(o.a_bar(), o.q_mat);
  cfg.reference = ConstantReference{0.25};
  cfg.load = ConstantLoad{1e4};
  cfg.initial.x = {0.24, 0.0, 0.0, 0.0};
  cfg.initial.x_hat = {0.24, 0.0};
  cfg.dt = 1e-4;
  cfg.duration = 0.3;
  cfg.trace_every = 50;
  cfg.seed = 3;
  return cfg;
}

std::string trace_text(const SimulationResult& r) {
  std::ostringstream out;
  write_trace_csv(out, r.trace);
  return out.str();
}

}  // namespace

TEST(Rk4, FourthOrderConvergence) {
  const double h = 1e-3, horizon = 0.05;
  const Eigen::Vector4d ref = integrate(h / 16.0, horizon);
  const double e1 = (integrate(h, horizon) - ref).norm();
  const double e2 = (integrate(h / 2.0, horizon) - ref).norm();
  const double ratio = e1 / e2;
  EXPECT_GE(ratio, 14.0) << e1 << " " << e2;
  EXPECT_LE(ratio, 18.0) << e1 << " " << e2;
}

TEST(Rk4, ExactForCubicPolynomials) {
  const auto f = [](double t, const Eigen::Matrix<double, 1, 1>& x) {
    (void)x;
    return Eigen::Matrix<double, 1, 1>(3.0 * t * t);
  };
  Eigen::Matrix<double, 1, 1> x(0.0);
  for (int k = 0; k < 10; ++k) x = rk4_step(f, 0.1 * k, x, 0.1);
  EXPECT_NEAR(x(0), 1.0, 1e-14);
}

TEST(Metrics, ConvergenceAndPostConvergenceMaxima) {
  TraceSeries s;
  for (int k = 0; k <= 100; ++k) {
    s.t.push_back(0.01 * k);
    s.pos_err.push_back(k < 30 ? 0.01 * (30 - k) / 30.0 + 1e-3 : 5e-5 * (k % 2 ? 1 : -1));
    s.vel_err.push_back(k < 30 ? 1.0 : 0.02);
    s.tau.push_back(k == 10 ? -150.0 : 20.0);
    s.sat.push_back(k < 3 ? 1 : 0);
  }
  MetricThresholds th;
  const auto m = compute_metrics(s, th);
  EXPECT_TRUE(m.converged);
  EXPECT_NEAR(m.threshold, 0.02 * 0.011, 1e-15);
  EXPECT_NEAR(m.convergence_speed, 0.30, 1e-12);
  EXPECT_DOUBLE_EQ(m.pos_error, 5e-5);
  EXPECT_DOUBLE_EQ(m.vel_error, 0.02);
  EXPECT_DOUBLE_EQ(m.torque_effort, 150.0);
  EXPECT_EQ(m.saturation_count, 3);
}

TEST(Metrics, NotConvergedWhenLastSampleOutside) {
  TraceSeries s;
  for (int k = 0; k < 10; ++k) {
    s.t.push_back(k);
    s.pos_err.push_back(1.0);
    s.vel_err.push_back(0.0);
    s.tau.push_back(0.0);
  }
  EXPECT_FALSE(compute_metrics(s, {}).converged);
}

TEST(Loads, StaircaseLevelsAndRipple) {
  StaircaseLoad st;
  st.times = {0.0, 40.0, 100.0};
  st.levels = {7e3, 2e4, 4e4};
  const Reference ref(ConstantReference{0.0});
  EXPECT_DOUBLE_EQ(eval_load(st, 10.0, ref), 7e3);
  EXPECT_DOUBLE_EQ(eval_load(st, 40.0, ref), 2e4);
  EXPECT_DOUBLE_EQ(eval_load(st, 500.0, ref), 4e4);
  st.ripple_amplitude = 100.0;
  st.ripple_frequency = 2.0;
  EXPECT_NEAR(eval_load(st, 1.0, ref), 7e3 + 100.0 * std::sin(2.0), 1e-9);
}

TEST(Loads, ReferenceOracleUsesReferenceKinematics) {
  const Reference ref(QuinticReference{{{0.0, 0.0}, {1.0, 0.0}}, {2.0}});
  const ReferenceOracleLoad load{100.0, 10.0, 5.0};
  const auto r = ref.sample(0.7);
  EXPECT_NEAR(eval_load(load, 0.7, ref), 100.0 * r.acc + 10.0 * r.vel + 5.0, 1e-12);
}

TEST(Disturbances, TermValues) {
  const JointState x{0.0, 0.5, 0.0, 0.0};
  EXPECT_NEAR(eval_disturbance(SineTerm{2.0, 3.0, 0.5}, 1.0, x), 2.0 * std::sin(3.5), 1e-15);
  EXPECT_NEAR(eval_disturbance(CosineTerm{2.0, 3.0, 0.5}, 1.0, x), 2.0 * std::cos(3.5), 1e-15);
  EXPECT_NEAR(eval_disturbance(ArctanDecayTerm{1.2, 3.0}, 0.5, x), 1.2 * std::atan(0.5) * std::exp(-1.5), 1e-15);
  EXPECT_DOUBLE_EQ(eval_disturbance(UniformTerm{0.0, 2.0, 1}, 0.0, x, 1.25), 1.25);
}

TEST(Disturbances, UniformDrawsStayInRangeAndAreSeeded) {
  DisturbanceSpec spec;
  spec.terms[1].push_back(UniformTerm{0.0, 2.0, 7});
  DisturbanceSampler a(spec, 1), b(spec, 1), c(spec, 2);
  const JointState x{};
  bool differs = false;
  for (int k = 0; k < 1000; ++k) {
    a.advance();
    b.advance();
    c.advance();
    const double va = a.channel(1, 0.0, x);
    EXPECT_GE(va, 0.0);
    EXPECT_LE(va, 2.0);
    EXPECT_EQ(va, b.channel(1, 0.0, x));
    differs |= va != c.channel(1, 0.0, x);
  }
  EXPECT_TRUE(differs);
}

TEST(Scenario, ConstantSetpointConverges) {
  const auto r = run_scenario(small_scenario());
  EXPECT_FALSE(r.diverged);
  EXPECT_TRUE(r.metrics.converged);
  EXPECT_LT(r.metrics.pos_error, 2e-4);
  ASSERT_FALSE(r.trace.empty());
  EXPECT_EQ(r.trace.front().size(), trace_columns().size());
  EXPECT_EQ(r.trace.size(), 3000u / 50u + 1u);
}

TEST(Scenario, ThetaAndEtaStayNonnegative) {
  const auto r = run_scenario(small_scenario());
  const auto& cols = trace_columns();
  const auto idx = [&](const char* n) { return std::find(cols.begin(), cols.end(), n) - cols.begin(); };
  for (const auto& row : r.trace) {
    EXPECT_GT(row[idx("eta_hat")], 0.0);
    for (const char* th : {"th1", "th2", "th3", "th4"}) EXPECT_GE(row[idx(th)], 0.0);
  }
}

TEST(Scenario, DeterministicAndSeedSensitive) {
  ScenarioConfig cfg = small_scenario();
  cfg.noise.kind = SensorNoise::Kind::uniform;
  cfg.noise.amplitude = 1e-6;
  cfg.noise.seed = 9;
  const std::string a = trace_text(run_scenario(cfg));
  const std::string b = trace_text(run_scenario(cfg));
  EXPECT_EQ(a, b);
  cfg.seed = 4;
  EXPECT_NE(a, trace_text(run_scenario(cfg)));
}

TEST(Scenario, DivergenceIsReported) {
  ScenarioConfig cfg = small_scenario();
  cfg.thresholds.guard = 1.0;  // currents exceed 1 A almost at once
  const auto r = run_scenario(cfg);
  EXPECT_TRUE(r.diverged);
  EXPECT_FALSE(r.divergence_message.empty());
}

TEST(Scenario, ValidationRejectsBadDt) {
  ScenarioConfig cfg = small_scenario();
  cfg.dt = -1.0;
  EXPECT_THROW((void)run_scenario(cfg), ValidationError);
}

TEST(TraceCsv, RoundTripsThroughReader) {
  const auto r = run_scenario(small_scenario());
  std::istringstream in(trace_text(r));
  const auto table = read_csv(in);
  EXPECT_EQ(table.header, trace_columns());
  ASSERT_EQ(table.rows.size(), r.trace.size());
  for (std::size_t i = 0; i < r.trace.size(); ++i) EXPECT_EQ(table.rows[i], r.trace[i]);
}

TEST(Csv, FormatNumberRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0}) {
    EXPECT_EQ(std::stod(format_number(v)), v);
  }
  EXPECT_EQ(format_number(std::nan("")), "nan");
}

TEST(Csv, MalformedRowNamesLine) {
  std::istringstream in("a,b\n1,2\n3,x\n");
  try {
    (void)read_csv(in, "f.csv");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.field(), "f.csv:3");
  }
}
