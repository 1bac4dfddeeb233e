#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <iostream>
#include <optional>
#include <string>

#include "linabs/errors.hpp"
#include "linabs/experiments.hpp"
#include "linabs/units.hpp"

namespace {

using linabs::ExperimentConfig;
using nlohmann::json;

struct Options {
  std::string config;
  std::string out = "results";
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  bool force = false;
  bool verbose = false;
};

std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json sweep_failures(const std::string& dataset, const linabs::SweepResult& r) {
  json out = json::array();
  for (const auto& row : r.rows) {
    if (row.flags.empty()) continue;
    out.push_back({{"dataset", dataset}, {"A2", row.energy}, {"flags", row.flags},
                   {"P_s", row.populations[linabs::lambda_levels::s]},
                   {"P_f", row.populations[linabs::lambda_levels::f]}, {"P1_f", row.first_order}});
  }
  return out;
}

json run(const std::string& verb, const Options& opt) {
  ExperimentConfig config = opt.config.empty() ? ExperimentConfig::defaults() : ExperimentConfig::load(opt.config);
  if (opt.seed) config.seed = *opt.seed;
  const linabs::Setup setup(config);
  const linabs::OutputDirectory out(opt.out, setup.config, opt.force);
  const linabs::RunOptions run{opt.threads, opt.verbose};
  const std::string started = utc_now();

  json failures = json::array();
  if (verb == "sweep-constant") {
    const auto r = linabs::run_constant_phase_sweep(setup, run);
    linabs::write_sweep(out, "sweep_constant", setup, r);
    failures = sweep_failures("sweep_constant", r);
  } else if (verb == "sweep-optimized") {
    const auto r = linabs::run_optimized_sweep(setup, &out, run);
    linabs::write_sweep(out, "sweep_optimized", setup, r);
    linabs::write_phases(out, "phases_optimized", setup, r);
    failures = sweep_failures("sweep_optimized", r);
  } else if (verb == "dynamics") {
    const auto pairs = linabs::run_dynamics_comparison(setup, &out, run);
    linabs::write_dynamics(out, setup, pairs);
    for (const auto& p : pairs) {
      if (p.flags.empty()) continue;
      failures.push_back({{"dataset", "dynamics"}, {"A2", p.energy}, {"flags", p.flags},
                          {"support_optimized_fs", linabs::units::atomic_to_fs(p.optimized_support)}});
    }
  } else if (verb == "noise") {
    const auto r = linabs::run_noise_study(setup, &out, run);
    linabs::write_noise(out, setup, r);
    for (const auto& s : r.summary) {
      if (s.flags.empty()) continue;
      failures.push_back({{"dataset", "noise"}, {"snr_db", s.snr_db}, {"flags", s.flags},
                          {"max_error", s.max_error}});
    }
  } else {
    const auto checks = linabs::run_validation(setup, run);
    linabs::write_validation(out, checks);
    for (const auto& c : checks) {
      if (c.passed) continue;
      failures.push_back({{"dataset", "validation"}, {"check", c.name}, {"value", c.value}, {"limit", c.limit}});
    }
  }

  const std::string status = failures.empty() ? "ok" : "flagged";
  out.append_log(verb + " " + started + " " + utc_now() + " " + status);
  return {{"verb", verb}, {"status", status}, {"config_hash", out.hash()}, {"out", opt.out}, {"failures", failures}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linear absorption control experiments"};
  app.require_subcommand(1);
  Options opt;
  const char* verbs[][2] = {
      {"sweep-constant", "final populations of TL pulses over the A^2 grid"},
      {"sweep-optimized", "stage 1 and linear-response matching over the A^2 grid"},
      {"dynamics", "time series for constant and optimized phases"},
      {"noise", "robustness of the stage-1 pulse to spectral noise"},
      {"validate", "invariant checks"},
  };
  for (const auto& [name, help] : verbs) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "INI file (built-in defaults when omitted)")->check(CLI::ExistingFile);
    sub->add_option("--out", opt.out, "output directory")->capture_default_str();
    sub->add_option("--seed", opt.seed, "base seed for noise trials");
    sub->add_option("--threads", opt.threads, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_flag("--force", opt.force, "overwrite results made with a different config");
    sub->add_flag("-v,--verbose", opt.verbose, "progress on stderr");
  }
  CLI11_PARSE(app, argc, argv);

  const std::string verb = app.get_subcommands().front()->get_name();
  try {
    const json summary = run(verb, opt);
    std::cout << summary.dump(2) << '\n';
    return summary["status"] == "ok" ? 0 : 2;
  } catch (const std::exception& e) {
    const json summary = {{"verb", verb}, {"status", "error"}, {"error", e.what()}};
    std::cout << summary.dump(2) << '\n';
    return 1;
  }
}
