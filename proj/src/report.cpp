#include "emla/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "emla/error.hpp"
#include "emla/stability.hpp"
#include "json.hpp"

namespace emla {

namespace {

constexpr double kWidth = 900.0;
constexpr double kPanelHeight = 220.0;
constexpr double kLeft = 90.0;
constexpr double kRight = 20.0;
constexpr double kTop = 30.0;
constexpr double kBottom = 45.0;
constexpr std::size_t kMaxPoints = 2000;

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

struct Series {
  std::string label;
  std::string color;
  std::vector<double> y;
  bool dashed = false;
};

struct Panel {
  std::string title;
  std::string y_label;
  std::vector<Series> series;
};

// Tick step of 1, 2 or 5 times a power of ten giving about five ticks.
double nice_step(double span) {
  if (!(span > 0.0)) return 1.0;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double r = raw / mag;
  return (r < 1.5 ? 1.0 : r < 3.5 ? 2.0 : r < 7.5 ? 5.0 : 10.0) * mag;
}

void draw_panel(std::ostringstream& out, const Panel& panel, const std::vector<double>& t, double y0) {
  const double pw = kWidth - kLeft - kRight;
  const double ph = kPanelHeight - kTop - kBottom;
  const double px = kLeft;
  const double py = y0 + kTop;

  double lo = INFINITY, hi = -INFINITY;
  for (const auto& s : panel.series) {
    for (double v : s.y) {
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  if (!std::isfinite(lo)) lo = hi = 0.0;
  if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) {
    const double pad = std::max(1e-9, 0.5 * std::abs(hi));
    lo -= pad;
    hi += pad;
  }
  const double margin = 0.05 * (hi - lo);
  lo -= margin;
  hi += margin;
  const double t_lo = t.front();
  const double t_hi = t.back() > t.front() ? t.back() : t.front() + 1.0;

  const auto sx = [&](double v) { return px + (v - t_lo) / (t_hi - t_lo) * pw; };
  const auto sy = [&](double v) { return py + ph - (v - lo) / (hi - lo) * ph; };

  out << "<g>\n";
  out << "<text x=\"" << fmt("%.1f", px) << "\" y=\"" << fmt("%.1f", y0 + 20.0)
      << "\" font-size=\"14\" font-weight=\"bold\">" << panel.title << "</text>\n";
  out << "<rect x=\"" << fmt("%.1f", px) << "\" y=\"" << fmt("%.1f", py) << "\" width=\"" << fmt("%.1f", pw)
      << "\" height=\"" << fmt("%.1f", ph) << "\" fill=\"none\" stroke=\"#000\"/>\n";

  const double ys = nice_step(hi - lo);
  for (double v = std::ceil(lo / ys) * ys; v <= hi; v += ys) {
    const double yy = sy(v);
    out << "<line x1=\"" << fmt("%.1f", px) << "\" y1=\"" << fmt("%.2f", yy) << "\" x2=\"" << fmt("%.1f", px + pw)
        << "\" y2=\"" << fmt("%.2f", yy) << "\" stroke=\"#ddd\"/>\n";
    out << "<text x=\"" << fmt("%.1f", px - 6.0) << "\" y=\"" << fmt("%.2f", yy + 4.0)
        << "\" font-size=\"10\" text-anchor=\"end\">" << fmt("%.4g", std::abs(v) < 1e-12 * ys ? 0.0 : v)
        << "</text>\n";
  }
  const double ts = nice_step(t_hi - t_lo);
  for (double v = std::ceil(t_lo / ts) * ts; v <= t_hi + 1e-9 * ts; v += ts) {
    const double xx = sx(v);
    out << "<line x1=\"" << fmt("%.2f", xx) << "\" y1=\"" << fmt("%.1f", py) << "\" x2=\"" << fmt("%.2f", xx)
        << "\" y2=\"" << fmt("%.1f", py + ph) << "\" stroke=\"#ddd\"/>\n";
    out << "<text x=\"" << fmt("%.2f", xx) << "\" y=\"" << fmt("%.1f", py + ph + 14.0)
        << "\" font-size=\"10\" text-anchor=\"middle\">" << fmt("%.4g", v) << "</text>\n";
  }
  out << "<text x=\"" << fmt("%.1f", px + pw / 2.0) << "\" y=\"" << fmt("%.1f", py + ph + 32.0)
      << "\" font-size=\"11\" text-anchor=\"middle\">time [s]</text>\n";
  out << "<text x=\"18\" y=\"" << fmt("%.1f", py + ph / 2.0) << "\" font-size=\"11\" text-anchor=\"middle\" "
      << "transform=\"rotate(-90 18 " << fmt("%.1f", py + ph / 2.0) << ")\">" << panel.y_label << "</text>\n";

  const std::size_t stride = std::max<std::size_t>(1, (t.size() + kMaxPoints - 1) / kMaxPoints);
  double legend_x = px + pw - 10.0;
  for (auto it = panel.series.rbegin(); it != panel.series.rend(); ++it) {
    const auto& s = *it;
    out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.2\""
        << (s.dashed ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
    bool first = true;
    for (std::size_t k = 0; k < t.size(); k += stride) {
      if (!std::isfinite(s.y[k])) continue;
      out << (first ? "" : " ") << fmt("%.2f", sx(t[k])) << ',' << fmt("%.2f", sy(s.y[k]));
      first = false;
    }
    out << "\"/>\n";
    out << "<text x=\"" << fmt("%.1f", legend_x) << "\" y=\"" << fmt("%.1f", y0 + 20.0) << "\" font-size=\"11\" "
        << "text-anchor=\"end\" fill=\"" << s.color << "\">" << s.label << "</text>\n";
    legend_x -= 10.0 + 7.0 * static_cast<double>(s.label.size());
  }
  out << "</g>\n";
}

}  // namespace

const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols{"t", "x1", "x1d", "x2", "x2d", "tau_m"};
  return cols;
}

std::string render_report_svg(const CsvTable& trace) {
  const auto missing = trace.missing_columns(report_columns());
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw ValidationError("trace", "missing columns: " + list);
  }
  if (trace.rows.empty()) throw ValidationError("trace", "no data rows");

  const auto t = trace.column_values("t");
  const auto x1 = trace.column_values("x1");
  const auto x1d = trace.column_values("x1d");
  const auto x2 = trace.column_values("x2");
  const auto x2d = trace.column_values("x2d");
  std::vector<double> e1(t.size()), e2(t.size());
  for (std::size_t k = 0; k < t.size(); ++k) {
    e1[k] = x1[k] - x1d[k];
    e2[k] = x2[k] - x2d[k];
  }

  const std::vector<Panel> panels{
      {"Position tracking", "position [m]", {{"x1d", "#d62728", x1d, true}, {"x1", "#1f77b4", x1}}},
      {"Velocity tracking", "velocity [m/s]", {{"x2d", "#d62728", x2d, true}, {"x2", "#1f77b4", x2}}},
      {"Position error", "x1 - x1d [m]", {{"e1", "#2ca02c", e1}}},
      {"Velocity error", "x2 - x2d [m/s]", {{"e2", "#2ca02c", e2}}},
      {"Motor torque", "torque [N*m]", {{"tau_m", "#9467bd", trace.column_values("tau_m")}}},
  };

  const double height = kPanelHeight * static_cast<double>(panels.size());
  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt("%.0f", kWidth) << "\" height=\""
      << fmt("%.0f", height) << "\" viewBox=\"0 0 " << fmt("%.0f", kWidth) << ' ' << fmt("%.0f", height)
      << "\" font-family=\"sans-serif\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n";
  for (std::size_t i = 0; i < panels.size(); ++i) draw_panel(out, panels[i], t, kPanelHeight * static_cast<double>(i));
  out << "</svg>\n";
  return out.str();
}

VerificationSummary verify_trace(const CsvTable& trace, const ScenarioConfig& cfg) {
  const auto missing = trace.missing_columns({"t", "x1", "x2", "x1hat", "x2hat", "eta_hat"});
  if (!missing.empty()) throw ValidationError("trace", "missing column '" + missing.front() + "'");
  if (trace.rows.size() < 20) throw ValidationError("trace", "need at least 20 rows");

  const auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  const auto fit_json = [&](const EnvelopeFit& f) {
    nlohmann::ordered_json j;
    j["c_bar"] = num(f.c_bar);
    j["rate"] = num(f.rate);
    j["floor"] = num(f.floor);
    j["r2"] = num(f.r2);
    j["e0"] = num(f.e0);
    j["not_exponential"] = f.not_exponential;
    j["at_floor"] = f.at_floor;
    j["fit_points"] = f.fit_points;
    return j;
  };

  const auto t = trace.column_values("t");
  const auto x1 = trace.column_values("x1");
  const auto x2 = trace.column_values("x2");
  const auto h1 = trace.column_values("x1hat");
  const auto h2 = trace.column_values("x2hat");
  const auto eta = trace.column_values("eta_hat");
  std::vector<double> obs_err(t.size());
  for (std::size_t k = 0; k < t.size(); ++k) obs_err[k] = std::hypot(x1[k] - h1[k], x2[k] - h2[k]);

  const auto& ocfg = cfg.observer.config;
  const EnvelopeFit obs_fit = fit_envelope(t, obs_err);
  const LyapunovTrace lyap = composite_lyapunov(trace, ocfg.p_mat, cfg.gains.delta, ocfg.ell);
  const EnvelopeFit v_fit = fit_envelope(lyap.t, lyap.v);
  const double m_inf = ocfg.m(t.back());
  const PhiDiagnostics phi = ball_radius_estimate(cfg.gains, m_inf, ocfg.ell, v_fit.floor);

  const bool eta_positive = std::all_of(eta.begin(), eta.end(), [](double v) { return v > 0.0; });
  const bool v_nonneg = std::all_of(lyap.v.begin(), lyap.v.end(), [](double v) { return v >= 0.0; });
  const bool obs_ok = obs_fit.decays();
  const bool v_ok = v_fit.decays();

  nlohmann::ordered_json j;
  j["scenario"] = cfg.name;
  j["samples"] = t.size();
  j["observer_error_envelope"] = fit_json(obs_fit);
  j["lyapunov_envelope"] = fit_json(v_fit);
  nlohmann::ordered_json pj;
  pj["phi"] = {num(phi.phi[0]), num(phi.phi[1]), num(phi.phi[2]), num(phi.phi[3])};
  pj["phi0"] = num(phi.phi0);
  pj["phi_total"] = num(phi.phi_total);
  pj["empirical_floor"] = num(phi.empirical_floor);
  pj["m_inf"] = num(m_inf);
  j["decay_diagnostics"] = pj;
  j["lyapunov_residual"] = num(lyapunov_residual(ocfg.a_bar(), ocfg.p_mat, ocfg.q_mat));
  nlohmann::ordered_json flags;
  flags["eta_hat_positive"] = eta_positive;
  flags["lyapunov_nonnegative"] = v_nonneg;
  flags["observer_envelope_decays"] = obs_ok;
  flags["lyapunov_envelope_decays"] = v_ok;
  j["checks"] = flags;
  const bool passed = eta_positive && v_nonneg && obs_ok && v_ok;
  j["passed"] = passed;
  return {j.dump(2), passed};
}

}  // namespace emla
