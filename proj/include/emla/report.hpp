#pragma once

// Post-processing of simulation traces: SVG plots and the stability
// verification summary.

#include <string>

#include "emla/csv.hpp"
#include "emla/sim.hpp"

namespace emla {

/// Columns a trace must carry to be plotted.
const std::vector<std::string>& report_columns();

/// Self-contained SVG with one panel each for position tracking, velocity
/// tracking, position error, velocity error and motor torque. The output
/// depends only on the table contents. Throws ValidationError when columns
/// are missing or the table is empty.
std::string render_report_svg(const CsvTable& trace);

struct VerificationSummary {
  std::string json;  ///< pretty-printed report
  bool passed = false;
};

/// Envelope fits on the observer error and the composite Lyapunov trace,
/// decay-rate diagnostics and pass flags for one simulated trace.
VerificationSummary verify_trace(const CsvTable& trace, const ScenarioConfig& cfg);

}  // namespace emla
