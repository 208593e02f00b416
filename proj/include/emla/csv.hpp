#pragma once

#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace emla {

/// Shortest round-trip decimal form of `v` ("nan"/"inf" for non-finite).
std::string format_number(double v);

/// A numeric CSV table with a single header row.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::optional<std::size_t> column(std::string_view name) const;
  std::vector<double> column_values(std::string_view name) const;  // throws if absent
  std::vector<std::string> missing_columns(const std::vector<std::string>& required) const;
};

/// Parses comma-separated numeric data. Blank lines are skipped; header
/// names are trimmed. Throws ValidationError("<source>:<line>") on malformed rows.
CsvTable read_csv(std::istream& in, const std::string& source = "csv");
CsvTable read_csv_file(const std::string& path);

/// Piecewise-linear interpolation with flat extrapolation. `xs` must be
/// non-decreasing.
double interpolate_linear(const std::vector<double>& xs, const std::vector<double>& ys, double x);

}  // namespace emla
