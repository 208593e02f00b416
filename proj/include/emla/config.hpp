#pragma once

// JSON configuration for scenarios and trajectory problems. Every numeric
// field is either a bare SI number or {"value": v, "unit": "mH"}; units are
// converted on load and checked against the field's dimension. Errors are
// ValidationError carrying the dotted field path.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "emla/sim.hpp"
#include "emla/trajectory.hpp"

namespace emla {

inline constexpr int kSchemaVersion = 1;

struct TrajectoryProblem {
  std::string name;
  TrajectoryConstraints constraints;
  OptimizerOptions options;
  std::shared_ptr<LoadOracle> oracle;
  /// Per-joint affine coefficients when the oracle is affine.
  std::optional<Eigen::VectorXd> m_eff, b_eff, g_eff;
  int samples = 201;  ///< rows in the trajectory CSV
};

/// `base_dir` resolves relative file references.
TrajectoryProblem parse_trajectory_problem(const std::string& text, const std::string& base_dir = ".",
                                           const std::string& source = "config");
TrajectoryProblem load_trajectory_problem(const std::string& path);

ScenarioConfig parse_scenario(const std::string& text, const std::string& base_dir = ".",
                              const std::string& source = "config",
                              std::optional<std::uint64_t> seed_override = std::nullopt);
ScenarioConfig load_scenario(const std::string& path, std::optional<std::uint64_t> seed_override = std::nullopt);

/// Kind of document in a config file: "scenario" or "trajectory".
std::string config_kind(const std::string& text, const std::string& source = "config");

/// Converts `value` given in `unit` to SI; throws for unknown units.
double to_si(double value, const std::string& unit, const std::string& field = "unit");

std::string read_text_file(const std::string& path);

}  // namespace emla
