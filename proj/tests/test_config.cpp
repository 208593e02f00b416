#include <gtest/gtest.h>

#include <filesystem>
#include <map>

#include "emla/config.hpp"
#include "emla/error.hpp"
#include "support.hpp"

using namespace emla;
namespace fs = std::filesystem;

namespace {

std::string field_of(const std::string& path) {
  try {
    (void)load_scenario(path);
  } catch (const ValidationError& e) {
    return e.field();
  }
  return "<accepted>";
}

}  // namespace

TEST(Config, BundledScenariosParse) {
  for (const char* name : {"lift.json", "tilt.json", "telescope.json", "experiment1.json"}) {
    const std::string path = test::config_path(name);
    const std::string text = read_text_file(path);
    EXPECT_EQ(config_kind(text), "scenario") << name;
    EXPECT_NO_THROW((void)parse_scenario(text, fs::path(path).parent_path().string(), path)) << name;
  }
  const auto prob = load_trajectory_problem(test::config_path("trajectory_hdrm.json"));
  EXPECT_EQ(prob.constraints.num_joints(), 3);
  EXPECT_NEAR(prob.constraints.f_ub(0), 89.8e3, 1e-9);
}

TEST(Config, LiftValuesConvertedToSi) {
  const auto cfg = load_scenario(test::config_path("lift.json"));
  EXPECT_DOUBLE_EQ(cfg.params.l_q, 2.4e-3);
  EXPECT_NEAR(cfg.params.rho, 1.0 / 7.0, 1e-15);
  EXPECT_DOUBLE_EQ(cfg.gains.beta[0], 3000.0);
  EXPECT_DOUBLE_EQ(cfg.controller.limits.u_max, 315.0);
  EXPECT_LE((cfg.observer.config.p_mat - test::published_p()).cwiseAbs().maxCoeff(), 5e-3);
}

TEST(Config, SeedOverride) {
  const auto a = load_scenario(test::config_path("experiment1.json"), 42);
  EXPECT_EQ(a.seed, 42u);
}

TEST(Config, BrokenConfigsNameTheirField) {
  const std::map<std::string, std::string> expected = {
      {"bad_reference_type.json", "reference.type"},
      {"bad_unit.json", "plant.l_d.unit"},
      {"missing_plant_field.json", "plant.r_s"},
      {"negative_gain.json", "gains.zeta[1]"},
      {"nonpositive_dt.json", "integrator.dt"},
      {"observer_not_hurwitz.json", "observer.gain"},
      {"unknown_key.json", "gains.betta"},
      {"wrong_dimension.json", "plant.lead.unit"},
      {"wrong_schema_version.json", "schema_version"},
  };
  int seen = 0;
  for (const auto& entry : fs::directory_iterator(test::config_path("broken"))) {
    const std::string name = entry.path().filename().string();
    ++seen;
    if (name == "malformed.json") {
      try {
        (void)load_scenario(entry.path().string());
        ADD_FAILURE() << "malformed JSON accepted";
      } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("malformed JSON"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
      }
      continue;
    }
    const auto it = expected.find(name);
    ASSERT_NE(it, expected.end()) << "unexpected broken config " << name;
    EXPECT_EQ(field_of(entry.path().string()), it->second) << name;
  }
  EXPECT_EQ(seen, 10);
}

TEST(Config, UnitConversion) {
  EXPECT_DOUBLE_EQ(to_si(2.4, "mH"), 2.4e-3);
  EXPECT_DOUBLE_EQ(to_si(89.8, "kN"), 89.8e3);
  EXPECT_DOUBLE_EQ(to_si(1.0, "kN/mm"), 1e6);
  EXPECT_NEAR(to_si(180.0, "deg"), 3.141592653589793, 1e-15);
  EXPECT_THROW((void)to_si(1.0, "furlong"), ValidationError);
}

TEST(Config, MinimalScenarioDefaults) {
  const std::string text = R"({
    "schema_version": 1,
    "plant": {"phi_pm": 0.15, "r_s": 0.14, "l_d": 0.0024, "l_q": 0.0024, "n_p": 8, "j_m": 0.016,
              "j_c": 0.0005, "j_gb": 0.0012, "m_bs": 156.5, "b_m": 0.0001, "b_bs": 100, "rho": 0.5,
              "lead": 0.02, "eta_gb": 0.95, "k_tau1": 1e5, "k_tau2": 1e5, "k_tau3": 1e5,
              "k_bearing": 1e8, "k_screw": 1e8, "k_nut": 1e8, "k_tube": 1e8},
    "gains": {"beta": [1, 1, 1, 1], "zeta": [1, 1, 1, 1], "delta": [1, 1, 1, 1], "sigma": [1, 1, 1, 1]},
    "observer": {"gain": {"method": "pole_placement", "poles": [-1, -2]}, "q": [[1, 0], [0, 1]]},
    "reference": {"type": "constant", "position": 0.1},
    "initial": {"x": [0.1, 0, 0, 0], "x_hat": [0.1, 0]},
    "integrator": {"dt": 0.001, "duration": 0.01}
  })";
  const auto cfg = parse_scenario(text);
  EXPECT_DOUBLE_EQ(cfg.params.rho, 0.5);
  EXPECT_EQ(cfg.trace_every, 1);
  EXPECT_TRUE(is_hurwitz(cfg.observer.config.a_bar()));
}

TEST(Config, RhoAndGearRatioAreExclusive) {
  std::string text = read_text_file(test::config_path("lift.json"));
  const auto pos = text.find("\"gear_ratio\"");
  ASSERT_NE(pos, std::string::npos);
  text.insert(pos, "\"rho\": 0.5, ");
  try {
    (void)parse_scenario(text, test::config_path(""));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.field().rfind("plant", 0), 0u) << e.field();
  }
}
