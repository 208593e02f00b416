#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

#include "emla/config.hpp"
#include "emla/csv.hpp"
#include "emla/error.hpp"
#include "emla/report.hpp"
#include "support.hpp"

using namespace emla;

namespace {

/// Every opened element is closed in order.
bool tags_balanced(const std::string& svg) {
  std::vector<std::string> stack;
  const std::regex tag(R"(<(/?)([A-Za-z]+)[^>]*?(/?)>)");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), tag); it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    if (m[1] == "/") {
      if (stack.empty() || stack.back() != m[2]) return false;
      stack.pop_back();
    } else if (m[3] != "/") {
      stack.push_back(m[2]);
    }
  }
  return stack.empty();
}

}  // namespace

TEST(Report, MatchesGoldenFile) {
  const auto svg = render_report_svg(read_csv_file(test::data_path("golden_trace.csv")));
  const std::string golden_path = test::data_path("golden_report.svg");
  if (std::getenv("EMLA_UPDATE_GOLDEN")) {
    std::ofstream(golden_path, std::ios::binary) << svg;
  }
  EXPECT_EQ(svg, read_text_file(golden_path));
}

TEST(Report, WellFormedWithLabelledPanels) {
  const auto svg = render_report_svg(read_csv_file(test::data_path("golden_trace.csv")));
  EXPECT_NE(svg.find("<svg "), std::string::npos);
  EXPECT_TRUE(tags_balanced(svg));
  for (const char* label : {"Position tracking", "Velocity tracking", "Position error", "Velocity error", "Motor torque", "time [s]", "position [m]"}) {
    EXPECT_NE(svg.find(label), std::string::npos) << label;
  }
}

TEST(Report, MissingColumnsListed) {
  try {
    (void)render_report_svg(read_csv_file(test::data_path("partial_trace.csv")));
    FAIL();
  } catch (const ValidationError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("x1d"), std::string::npos);
    EXPECT_NE(what.find("tau_m"), std::string::npos);
  }
}

TEST(Report, EmptyTraceRejected) {
  EXPECT_THROW((void)render_report_svg(read_csv_file(test::data_path("empty_trace.csv"))), ValidationError);
}
