// emla_lab: command-line front end for simulation, trajectory
// optimization, verification and plotting.
//
// Exit codes: 0 success, 1 invalid input, 2 divergence or non-convergence.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "emla/config.hpp"
#include "emla/csv.hpp"
#include "emla/error.hpp"
#include "emla/report.hpp"
#include "emla/sim.hpp"
#include "emla/trajectory.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kFailed = 2;

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw emla::ValidationError(path.string(), "cannot write file");
  out << content;
}

unsigned thread_cap(std::size_t jobs) {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("EMLA_LAB_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) n = static_cast<unsigned>(v);
  }
  return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
}

std::string fixed(double v, const char* spec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

struct SimJob {
  std::string config;
  int code = kOk;
  std::string line;
  std::string error;
};

void run_sim_job(SimJob& job, const fs::path& out_dir, std::optional<std::uint64_t> seed, bool svg, bool prefixed) {
  try {
    const emla::ScenarioConfig cfg = emla::load_scenario(job.config, seed);
    const emla::SimulationResult res = emla::run_scenario(cfg);
    const std::string stem = prefixed ? fs::path(job.config).stem().string() + "_" : std::string();

    std::ostringstream trace;
    emla::write_trace_csv(trace, res.trace);
    write_file(out_dir / (stem + "trace.csv"), trace.str());
    write_file(out_dir / (stem + "metrics.json"), emla::metrics_json(cfg, res) + "\n");
    if (svg && !res.trace.empty()) {
      std::istringstream in(trace.str());
      write_file(out_dir / (stem + "report.svg"), emla::render_report_svg(emla::read_csv(in, "trace")));
    }

    const auto& m = res.metrics;
    job.line = (cfg.name.empty() ? job.config : cfg.name) + ": pos_err=" + fixed(m.pos_error, "%.3e") +
               " m vel_err=" + fixed(m.vel_error, "%.3e") + " m/s torque_effort=" + fixed(m.torque_effort, "%.2f") +
               " N*m conv_speed=" + fixed(m.convergence_speed, "%.4f") + " s";
    if (res.diverged) {
      job.line += " DIVERGED (" + res.divergence_message + ")";
      job.code = kFailed;
    } else if (!m.converged) {
      job.line += " NOT CONVERGED";
      job.code = kFailed;
    }
  } catch (const emla::ValidationError& e) {
    job.error = std::string("error: ") + e.what();
    job.code = kInvalid;
  } catch (const std::exception& e) {
    job.error = std::string("error: ") + e.what();
    job.code = kFailed;
  }
}

int cmd_simulate(const std::vector<std::string>& configs, const std::string& out, std::optional<std::uint64_t> seed,
                 bool svg) {
  std::vector<SimJob> jobs(configs.size());
  for (std::size_t i = 0; i < configs.size(); ++i) jobs[i].config = configs[i];
  const bool prefixed = configs.size() > 1;
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  const unsigned n = thread_cap(jobs.size());
  for (unsigned w = 0; w < n; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < jobs.size(); i = next++) run_sim_job(jobs[i], out, seed, svg, prefixed);
    });
  }
  for (auto& w : workers) w.join();

  int code = kOk;
  for (const auto& j : jobs) {
    if (!j.error.empty()) std::cerr << j.config << ": " << j.error << "\n";
    if (!j.line.empty()) std::cout << j.line << "\n";
    code = std::max(code, j.code);
  }
  return code;
}

int cmd_optimize(const std::string& path, const std::string& out) {
  const emla::TrajectoryProblem prob = emla::load_trajectory_problem(path);
  const auto res = emla::optimize_trajectory(prob.constraints, *prob.oracle, std::nullopt, prob.options);
  std::ostringstream csv;
  emla::write_trajectory_csv(csv, res.curve, prob.samples);
  write_file(fs::path(out) / "trajectory.csv", csv.str());

  const auto& r = res.report;
  nlohmann::ordered_json j;
  j["problem"] = prob.name;
  j["converged"] = r.converged;
  j["t_final"] = r.t_final;
  j["final_cost"] = r.final_cost;
  j["seed_cost"] = r.seed_cost;
  j["max_violation"] = r.max_violation;
  j["iterations"] = r.iterations;
  j["cost_evaluations"] = r.cost_evaluations;
  j["pattern_search_polls"] = r.pattern_search_polls;
  j["returned_seed"] = r.returned_seed;
  j["degree"] = res.curve.degree();
  nlohmann::ordered_json cp = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < res.curve.control_points().rows(); ++i) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (Eigen::Index k = 0; k < res.curve.control_points().cols(); ++k) row.push_back(res.curve.control_points()(i, k));
    cp.push_back(row);
  }
  j["control_points"] = cp;
  write_file(fs::path(out) / "optimization.json", j.dump(2) + "\n");

  std::cout << (prob.name.empty() ? path : prob.name) << ": T=" << fixed(r.t_final, "%.4f")
            << " s J=" << fixed(r.final_cost, "%.6e") << " (seed " << fixed(r.seed_cost, "%.6e")
            << ") max_violation=" << fixed(r.max_violation, "%.2e") << (r.converged ? "" : " NOT CONVERGED") << "\n";
  return r.converged ? kOk : kFailed;
}

int cmd_verify(const std::string& trace_path, const std::string& config, const std::string& out) {
  const emla::ScenarioConfig cfg = emla::load_scenario(config);
  const auto trace = emla::read_csv_file(trace_path);
  const auto summary = emla::verify_trace(trace, cfg);
  if (out.empty()) {
    std::cout << summary.json << "\n";
  } else {
    write_file(out, summary.json + "\n");
    std::cout << (summary.passed ? "verification passed" : "verification FAILED") << "\n";
  }
  return summary.passed ? kOk : kFailed;
}

int cmd_report(const std::string& trace_path, std::string svg) {
  const auto trace = emla::read_csv_file(trace_path);
  if (svg.empty()) svg = fs::path(trace_path).replace_extension(".svg").string();
  write_file(svg, emla::render_report_svg(trace));
  std::cout << "wrote " << svg << "\n";
  return kOk;
}

int cmd_validate(const std::vector<std::string>& paths) {
  int code = kOk;
  for (const auto& p : paths) {
    try {
      const std::string text = emla::read_text_file(p);
      const std::string base = fs::path(p).parent_path().string();
      if (emla::config_kind(text, p) == "trajectory") {
        emla::parse_trajectory_problem(text, base, p);
      } else {
        emla::parse_scenario(text, base, p);
      }
      std::cout << "ok " << p << "\n";
    } catch (const emla::ValidationError& e) {
      std::cerr << p << ": error: " << e.what() << "\n";
      code = kInvalid;
    }
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulation and analysis of electromechanical linear actuators under RSBA control"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "emla_lab 0.1.0");

  std::vector<std::string> sim_configs;
  std::string sim_out = ".";
  std::optional<std::uint64_t> sim_seed;
  bool sim_svg = false;
  auto* sim = app.add_subcommand("simulate", "Run closed-loop scenarios and write trace CSV and metrics JSON");
  sim->add_option("config", sim_configs, "Scenario config file(s)")->required()->check(CLI::ExistingFile);
  sim->add_option("--out", sim_out, "Output directory");
  sim->add_option("--seed", sim_seed, "Override the scenario seed");
  sim->add_flag("--svg", sim_svg, "Also write the SVG report");

  std::string opt_config, opt_out = ".";
  auto* opt = app.add_subcommand("optimize", "Optimize a joint trajectory");
  opt->add_option("config", opt_config, "Trajectory problem file")->required()->check(CLI::ExistingFile);
  opt->add_option("--out", opt_out, "Output directory");

  std::string ver_trace, ver_config, ver_out;
  auto* ver = app.add_subcommand("verify", "Stability diagnostics for a simulated trace");
  ver->add_option("trace", ver_trace, "Trace CSV")->required()->check(CLI::ExistingFile);
  ver->add_option("config", ver_config, "Scenario config used for the run")->required()->check(CLI::ExistingFile);
  ver->add_option("--out", ver_out, "Write the JSON report here instead of stdout");

  std::string rep_trace, rep_svg;
  auto* rep = app.add_subcommand("report", "Plot a trace as SVG");
  rep->add_option("trace", rep_trace, "Trace CSV")->required()->check(CLI::ExistingFile);
  rep->add_option("--svg", rep_svg, "Output SVG path (default: trace path with .svg)");

  std::vector<std::string> val_configs;
  auto* val = app.add_subcommand("validate", "Check config files against the schema");
  val->add_option("config", val_configs, "Config file(s)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInvalid;
  }

  try {
    if (*sim) return cmd_simulate(sim_configs, sim_out, sim_seed, sim_svg);
    if (*opt) return cmd_optimize(opt_config, opt_out);
    if (*ver) return cmd_verify(ver_trace, ver_config, ver_out);
    if (*rep) return cmd_report(rep_trace, rep_svg);
    if (*val) return cmd_validate(val_configs);
  } catch (const emla::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kInvalid;
}
