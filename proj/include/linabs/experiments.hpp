#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "linabs/field.hpp"
#include "linabs/gradient.hpp"
#include "linabs/optimizer.hpp"
#include "linabs/quantum.hpp"

namespace linabs {

/// Everything an experiment needs. Loaded from an INI file in laboratory
/// units (cm^-1, fs, dB) and converted to atomic units once.
struct ExperimentConfig {
  // [system]
  double omega0 = 0.0;  // au
  double s_ratio = 0.02;
  double mu_gf = 1.0;
  double mu_sf = 1.0;
  // [pulse]
  double fwhm = 0.0;                      // au of time
  std::vector<double> energies;           // A^2(w0) grid for the sweeps
  std::vector<double> dynamics_energies;  // shown as time series
  // [grid]
  double half_span_fwhm = 6.0;  // frequency grid half-width in spectral FWHMs
  double window = 0.0;          // au of time
  double samples_per_cycle = 72.0;
  std::size_t grid_alignment = 50;
  std::size_t min_frequency_points = 2048;
  // [filter]
  double sigma = 0.0;  // au
  // [flow]
  FlowConfig flow;
  double softening = 0.05;
  // [stage1]
  double stage1_energy = 1.0;
  double stage1_f_target = 0.99999;
  double stage1_s_target = 1e-8;
  // [stage2]
  double match_tolerance = 1e-4;
  double suppress_target = 1e-3;
  // [noise]
  std::vector<double> snr_db;
  std::size_t trials = 50;
  std::uint64_t seed = 20240601;
  // [output]
  std::size_t trajectory_stride = 50;
  std::size_t dyson_orders = 3;
  bool gnuplot = true;
  // [thresholds] a row outside these is flagged
  double flag_stage1_f = 0.999;
  double flag_stage1_s = 1e-6;
  double flag_match = 5e-3;
  double flag_suppress = 5e-3;
  double flag_noise_snr = 70.0;
  double flag_noise_error = 1e-4;
  double flag_support = 0.0;  // au of time

  static ExperimentConfig defaults();
  static ExperimentConfig load(const std::filesystem::path& path);
  static ExperimentConfig parse(std::istream& in);

  void validate() const;
  // key = value text of every setting, atomic units, full precision. Its
  // hash identifies an output directory.
  std::string canonical() const;
  std::string hash() const;
};

std::uint64_t fnv1a64(const std::string& text);

/// Objects derived from a config and shared by all runners.
struct Setup {
  ExperimentConfig config;
  LevelSystem system;
  SimulationGrid grid;
  SpectralField base;  // TL spectrum with A^2(w0) = 1
  ControlProblem problem;
  FilterSpec filter;

  explicit Setup(ExperimentConfig config);
  // Field with A^2(w0) = energy and the given phase (zero if empty).
  SpectralField field(double energy, const std::vector<double>& phase = {}) const;
  double first_order(double energy) const;
};

struct SweepRow {
  double energy = 0.0;
  std::vector<double> populations;
  double first_order = 0.0;
  std::size_t iterations = 0;
  std::string status;  // flow status, "ok" or "propagation_failed"
  std::vector<std::string> flags;
};

struct SweepResult {
  std::string config_hash;
  std::string started;  // UTC, ISO 8601
  std::string finished;
  std::vector<SweepRow> rows;
  std::vector<std::vector<double>> phases;  // per row, optimized sweeps only
  bool flagged() const;
};

/// Output directory bound to one config hash. A directory written for another
/// hash is refused unless `force` is set, in which case its checkpoints are
/// discarded.
class OutputDirectory {
 public:
  OutputDirectory(std::filesystem::path root, const ExperimentConfig& config, bool force);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path path(const std::string& name) const { return root_ / name; }
  const std::string& hash() const { return hash_; }
  // Opens `name` and writes the comment header (notes, then the hash).
  std::ofstream open_csv(const std::string& name, const std::vector<std::string>& notes) const;
  void append_log(const std::string& line) const;

 private:
  std::filesystem::path root_;
  std::string hash_;
};

struct RunOptions {
  std::size_t threads = 1;
  bool verbose = false;
};

SweepResult run_constant_phase_sweep(const Setup& setup, const RunOptions& options);

/// Stage 1 at the configured energy from zero phase. With `out` the flow is
/// checkpointed there and a finished or interrupted run is resumed.
FlowResult run_stage1(const Setup& setup, const OutputDirectory* out, const RunOptions& options);

/// Stage 1, then linear-response matching at each of `energies` (the config
/// grid when empty), warm-started from the stage-1 phase.
SweepResult run_optimized_sweep(const Setup& setup, const OutputDirectory* out, const RunOptions& options,
                                std::vector<double> energies = {});

struct DynamicsPair {
  double energy = 0.0;
  TemporalField constant_drive;
  Trajectory constant;
  PerturbationStack constant_dyson;
  TemporalField optimized_drive;
  Trajectory optimized;
  PerturbationStack optimized_dyson;
  double constant_support = 0.0;  // 1% of peak |e(t)|
  double optimized_support = 0.0;
  std::vector<std::string> flags;
};

std::vector<DynamicsPair> run_dynamics_comparison(const Setup& setup, const OutputDirectory* out,
                                                  const RunOptions& options);

struct NoiseTrial {
  double snr_db = 0.0;
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  double p_f = 0.0;
};

struct NoiseSummary {
  double snr_db = 0.0;
  double mean_error = 0.0;  // of |1 - P_f|
  double max_error = 0.0;
  std::vector<std::string> flags;
};

struct NoiseResult {
  double noiseless_p_f = 0.0;
  std::vector<NoiseTrial> trials;
  std::vector<NoiseSummary> summary;
  bool flagged() const;
};

NoiseResult run_noise_study(const Setup& setup, const OutputDirectory* out, const RunOptions& options);

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double limit = 0.0;
};

/// Quick invariant suite: norm and Parseval, phase-only energy invariance,
/// Dyson parity and first order, adjoint against finite differences, Gamma
/// properties, dt halving.
std::vector<CheckResult> run_validation(const Setup& setup, const RunOptions& options);

void write_sweep(const OutputDirectory& out, const std::string& name, const Setup& setup, const SweepResult& result);
void write_phases(const OutputDirectory& out, const std::string& name, const Setup& setup,
                  const SweepResult& result);
void write_history(const OutputDirectory& out, const std::string& name, const Setup& setup,
                   const FlowResult& result);
void write_dynamics(const OutputDirectory& out, const Setup& setup, const std::vector<DynamicsPair>& pairs);
void write_noise(const OutputDirectory& out, const Setup& setup, const NoiseResult& result);
void write_validation(const OutputDirectory& out, const std::vector<CheckResult>& checks);

}  // namespace linabs
