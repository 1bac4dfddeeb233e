#include "linabs/experiments.hpp"

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <functional>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "linabs/errors.hpp"
#include "linabs/units.hpp"

namespace linabs {

namespace {

namespace pt = boost::property_tree;
using lambda_levels::f;
using lambda_levels::g;
using lambda_levels::s;

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string join(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + format_double(values[i]);
  return out;
}

std::string join(const std::vector<std::string>& items, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

std::vector<double> parse_list(const std::string& text, const std::string& key) {
  std::vector<std::string> parts;
  boost::split(parts, text, boost::is_any_of(", \t"), boost::token_compress_on);
  std::vector<double> out;
  for (auto& p : parts) {
    boost::trim(p);
    if (p.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(p, &used));
      if (used != p.size()) throw std::invalid_argument(p);
    } catch (const std::exception&) {
      throw ConfigurationError("config: " + key + ": not a number: " + p);
    }
  }
  return out;
}

double parse_number(const std::string& text, const std::string& key) {
  const auto v = parse_list(text, key);
  if (v.size() != 1) throw ConfigurationError("config: " + key + ": expected one number");
  return v.front();
}

std::size_t parse_count(const std::string& text, const std::string& key) {
  const double v = parse_number(text, key);
  if (!(v >= 0.0) || v != std::floor(v) || v > 1e15) {
    throw ConfigurationError("config: " + key + ": expected a non-negative integer");
  }
  return static_cast<std::size_t>(v);
}

bool parse_bool(std::string text, const std::string& key) {
  boost::to_lower(text);
  boost::trim(text);
  if (text == "true" || text == "yes" || text == "1" || text == "on") return true;
  if (text == "false" || text == "no" || text == "0" || text == "off") return false;
  throw ConfigurationError("config: " + key + ": expected true or false");
}

// One row of the key table: reads a value into the config, and writes it
// back in lab units for the canonical text.
struct Key {
  std::string name;  // section.key
  std::function<void(ExperimentConfig&, const std::string&)> read;
  std::function<std::string(const ExperimentConfig&)> write;
};

Key number(std::string name, double ExperimentConfig::*field, double (*to_au)(double) = nullptr,
           double (*from_au)(double) = nullptr) {
  return {name,
          [=](ExperimentConfig& c, const std::string& v) {
            const double x = parse_number(v, name);
            c.*field = to_au ? to_au(x) : x;
          },
          [=](const ExperimentConfig& c) { return format_double(from_au ? from_au(c.*field) : c.*field); }};
}

Key flow_number(std::string name, double FlowConfig::*field) {
  return {name, [=](ExperimentConfig& c, const std::string& v) { c.flow.*field = parse_number(v, name); },
          [=](const ExperimentConfig& c) { return format_double(c.flow.*field); }};
}

Key count(std::string name, std::size_t ExperimentConfig::*field) {
  return {name, [=](ExperimentConfig& c, const std::string& v) { c.*field = parse_count(v, name); },
          [=](const ExperimentConfig& c) { return std::to_string(c.*field); }};
}

Key flow_count(std::string name, std::size_t FlowConfig::*field) {
  return {name, [=](ExperimentConfig& c, const std::string& v) { c.flow.*field = parse_count(v, name); },
          [=](const ExperimentConfig& c) { return std::to_string(c.flow.*field); }};
}

Key list(std::string name, std::vector<double> ExperimentConfig::*field) {
  return {name, [=](ExperimentConfig& c, const std::string& v) { c.*field = parse_list(v, name); },
          [=](const ExperimentConfig& c) { return join(c.*field); }};
}

double cm_to_au(double x) { return units::wavenumber_to_hartree(x); }
double au_to_cm(double x) { return units::hartree_to_wavenumber(x); }
double fs_to_au(double x) { return units::fs_to_atomic(x); }
double au_to_fs(double x) { return units::atomic_to_fs(x); }

const std::vector<Key>& key_table() {
  using C = ExperimentConfig;
  static const std::vector<Key> table = {
      number("system.omega0_cm", &C::omega0, cm_to_au, au_to_cm),
      number("system.s_ratio", &C::s_ratio),
      number("system.mu_gf", &C::mu_gf),
      number("system.mu_sf", &C::mu_sf),
      number("pulse.fwhm_fs", &C::fwhm, fs_to_au, au_to_fs),
      list("pulse.energies", &C::energies),
      list("pulse.dynamics_energies", &C::dynamics_energies),
      number("grid.half_span_fwhm", &C::half_span_fwhm),
      number("grid.window_fs", &C::window, fs_to_au, au_to_fs),
      number("grid.samples_per_cycle", &C::samples_per_cycle),
      count("grid.alignment", &C::grid_alignment),
      count("grid.min_frequency_points", &C::min_frequency_points),
      number("filter.sigma_cm", &C::sigma, cm_to_au, au_to_cm),
      flow_number("flow.dx_initial", &FlowConfig::dx_initial),
      flow_number("flow.dx_max", &FlowConfig::dx_max),
      flow_number("flow.dx_min", &FlowConfig::dx_min),
      flow_number("flow.dx_growth", &FlowConfig::dx_growth),
      flow_count("flow.growth_after", &FlowConfig::growth_after),
      flow_count("flow.max_iterations", &FlowConfig::max_iterations),
      flow_number("flow.regularization", &FlowConfig::regularization),
      flow_number("flow.condition_cap", &FlowConfig::condition_cap),
      flow_count("flow.checkpoint_interval", &FlowConfig::checkpoint_interval),
      number("flow.softening", &C::softening),
      number("stage1.energy", &C::stage1_energy),
      number("stage1.f_target", &C::stage1_f_target),
      number("stage1.s_target", &C::stage1_s_target),
      number("stage2.match_tolerance", &C::match_tolerance),
      number("stage2.suppress_target", &C::suppress_target),
      list("noise.snr_db", &C::snr_db),
      count("noise.trials", &C::trials),
      {"noise.seed",
       [](C& c, const std::string& v) { c.seed = parse_count(v, "noise.seed"); },
       [](const C& c) { return std::to_string(c.seed); }},
      count("output.trajectory_stride", &C::trajectory_stride),
      count("output.dyson_orders", &C::dyson_orders),
      {"output.gnuplot", [](C& c, const std::string& v) { c.gnuplot = parse_bool(v, "output.gnuplot"); },
       [](const C& c) { return std::string(c.gnuplot ? "true" : "false"); }},
      number("thresholds.stage1_f", &C::flag_stage1_f),
      number("thresholds.stage1_s", &C::flag_stage1_s),
      number("thresholds.match", &C::flag_match),
      number("thresholds.suppress", &C::flag_suppress),
      number("thresholds.noise_snr_db", &C::flag_noise_snr),
      number("thresholds.noise_error", &C::flag_noise_error),
      number("thresholds.support_fs", &C::flag_support, fs_to_au, au_to_fs),
  };
  return table;
}

std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string energy_tag(double energy) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", energy);
  return buf;
}

bool same_energy(double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)); }

void note_population_sum(const std::vector<double>& p, std::vector<std::string>& flags) {
  double sum = 0.0;
  for (double x : p) sum += x;
  if (std::abs(sum - 1.0) > 1e-8) flags.push_back("population_sum");
}

// run_flow with a checkpoint file under `out` that is resumed when present.
FlowResult checkpointed_flow(const Setup& setup, const SpectralField& field, const ObjectiveSet& objectives,
                             const OutputDirectory* out, const std::string& name, const RunOptions& options,
                             const std::string& label) {
  FlowConfig flow = setup.config.flow;
  std::optional<FlowState> resume;
  if (out) {
    flow.checkpoint_path = out->path(name).string();
    flow.checkpoint_tag = out->hash();
    if (std::filesystem::exists(flow.checkpoint_path)) resume = load_checkpoint(flow.checkpoint_path, out->hash());
  }
  std::function<void(const IterationRecord&)> observer;
  if (options.verbose) {
    observer = [&label](const IterationRecord& r) {
      if (r.iteration % 100 != 0) return;
      std::fprintf(stderr, "[%s] it %zu x %.6f dx %.3g P_s %.3e P_f %.8f\n", label.c_str(), r.iteration, r.x, r.dx,
                   r.populations[s], r.populations[f]);
    };
  }
  return run_flow(setup.problem, field, objectives, setup.filter, flow, std::move(resume), observer);
}

SweepRow flow_row(const Setup& setup, double energy, const FlowResult& result) {
  SweepRow row;
  row.energy = energy;
  row.populations = result.state.populations;
  row.first_order = setup.first_order(energy);
  row.iterations = result.state.iteration;
  row.status = to_string(result.status);
  note_population_sum(row.populations, row.flags);
  return row;
}

void write_gnuplot(const OutputDirectory& out, const std::string& name, const std::string& body) {
  std::ofstream gp(out.path(name));
  gp << "# config hash " << out.hash() << "\nset datafile separator ','\nset key autotitle columnhead\n" << body;
}

}  // namespace

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;
  c.omega0 = units::wavenumber_to_hartree(12500.0);
  c.fwhm = units::fs_to_atomic(30.0);
  c.energies = {0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  c.dynamics_energies = {0.1, 0.5, 1.0};
  c.window = units::fs_to_atomic(12000.0);
  c.sigma = units::wavenumber_to_hartree(20.0);
  c.flow.checkpoint_interval = 25;
  for (int db = 50; db <= 100; db += 5) c.snr_db.push_back(db);
  c.flag_support = units::fs_to_atomic(1000.0);
  return c;
}

ExperimentConfig ExperimentConfig::parse(std::istream& in) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigurationError(std::string("config: ") + e.what());
  }
  ExperimentConfig c = defaults();
  std::map<std::string, const Key*> keys;
  for (const auto& k : key_table()) keys[k.name] = &k;
  for (const auto& [section, entries] : tree) {
    if (entries.empty() && !entries.data().empty()) {
      throw ConfigurationError("config: key outside a section: " + section);
    }
    for (const auto& [key, value] : entries) {
      const auto it = keys.find(section + "." + key);
      if (it == keys.end()) throw ConfigurationError("config: unknown key " + section + "." + key);
      it->second->read(c, value.data());
    }
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("config: cannot read " + path.string());
  return parse(in);
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigurationError(std::string("config: ") + what);
  };
  require(omega0 > 0.0 && std::isfinite(omega0), "omega0 must be positive");
  require(s_ratio > 0.0 && s_ratio < 1.0, "s_ratio must lie in (0, 1)");
  require(mu_gf > 0.0 && mu_sf > 0.0, "dipole moments must be positive");
  require(fwhm > 0.0, "pulse FWHM must be positive");
  require(!energies.empty(), "energy grid is empty");
  for (double e : energies) require(e > 0.0 && e <= 1.0, "energies must lie in (0, 1]");
  for (double e : dynamics_energies) require(e > 0.0 && e <= 1.0, "dynamics energies must lie in (0, 1]");
  require(half_span_fwhm > 0.0 && window > 0.0 && samples_per_cycle > 0.0, "grid settings must be positive");
  require(grid_alignment > 0, "grid alignment must be positive");
  require(sigma > 0.0, "filter sigma must be positive");
  require(flow.dx_initial > 0.0 && flow.dx_max >= flow.dx_initial && flow.dx_min > 0.0, "bad flow step sizes");
  require(flow.dx_growth >= 1.0 && flow.growth_after > 0, "bad flow step growth");
  require(flow.regularization >= 0.0 && flow.condition_cap > 1.0, "bad flow regularization");
  require(softening >= 0.0, "softening must be non-negative");
  require(stage1_energy > 0.0 && stage1_energy <= 1.0, "stage1 energy must lie in (0, 1]");
  require(stage1_f_target > 0.0 && stage1_f_target <= 1.0, "stage1 f target must lie in (0, 1]");
  require(stage1_s_target >= 0.0 && match_tolerance >= 0.0 && suppress_target >= 0.0, "targets must be >= 0");
  require(trials > 0, "noise trials must be positive");
  for (double db : snr_db) require(!std::isnan(db) && db != -INFINITY, "SNR values must be numbers or inf");
  require(dyson_orders >= 1, "at least one Dyson order is needed");
}

std::string ExperimentConfig::canonical() const {
  std::string out;
  for (const auto& k : key_table()) out += k.name + " = " + k.write(*this) + "\n";
  return out;
}

std::string ExperimentConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical())));
  return buf;
}

namespace {

SimulationGrid grid_for(const ExperimentConfig& c) {
  return make_simulation_grid({c.omega0, c.half_span_fwhm * gaussian_spectral_fwhm(c.fwhm), c.window,
                               c.grid_alignment, c.samples_per_cycle, c.min_frequency_points});
}

}  // namespace

Setup::Setup(ExperimentConfig c)
    : config((c.validate(), std::move(c))),
      system(make_lambda_system(config.omega0, config.s_ratio, config.mu_gf, config.mu_sf)),
      grid(grid_for(config)),
      base(make_gaussian_tl_spectrum({config.omega0, config.fwhm, 1.0}, grid.frequencies)),
      problem(system, grid.frequencies, grid.times),
      filter{config.sigma} {}

SpectralField Setup::field(double energy, const std::vector<double>& phase) const {
  if (!(energy > 0.0)) throw DomainError("setup: energy must be positive");
  SpectralField out = base.scaled(std::sqrt(energy) / base.amplitude_at(config.omega0));
  return phase.empty() ? out : out.with_phase(phase);
}

double Setup::first_order(double energy) const { return first_order_probability(system, field(energy), g, f); }

bool SweepResult::flagged() const {
  return std::any_of(rows.begin(), rows.end(), [](const SweepRow& r) { return !r.flags.empty(); });
}

bool NoiseResult::flagged() const {
  return std::any_of(summary.begin(), summary.end(), [](const NoiseSummary& r) { return !r.flags.empty(); });
}

OutputDirectory::OutputDirectory(std::filesystem::path root, const ExperimentConfig& config, bool force)
    : root_(std::move(root)), hash_(config.hash()) {
  namespace fs = std::filesystem;
  fs::create_directories(root_);
  const fs::path marker = root_ / "config.hash";
  if (fs::exists(marker)) {
    std::ifstream in(marker);
    std::string existing;
    in >> existing;
    if (existing != hash_) {
      if (!force) {
        throw ConfigurationError("output: " + root_.string() + " holds results for config " + existing +
                                 ", not " + hash_ + " (use --force to overwrite)");
      }
      for (const auto& entry : fs::directory_iterator(root_)) {
        if (entry.path().extension() == ".json") fs::remove(entry.path());
      }
    }
  }
  std::ofstream(marker) << hash_ << '\n';
  std::ofstream(root_ / "config.ini") << "# config hash " << hash_ << "\n" << config.canonical();
}

std::ofstream OutputDirectory::open_csv(const std::string& name, const std::vector<std::string>& notes) const {
  std::ofstream os(path(name));
  if (!os) throw Error("output: cannot write " + path(name).string());
  for (const auto& n : notes) os << "# " << n << '\n';
  os << "# config hash " << hash_ << '\n' << std::setprecision(17);
  return os;
}

void OutputDirectory::append_log(const std::string& line) const {
  std::ofstream(path("runs.log"), std::ios::app) << line << '\n';
}

SweepResult run_constant_phase_sweep(const Setup& setup, const RunOptions& options) {
  SweepResult result;
  result.config_hash = setup.config.hash();
  result.started = utc_now();
  const auto& energies = setup.config.energies;
  result.rows.resize(energies.size());
  parallel_for(energies.size(), options.threads, [&](std::size_t i) {
    SweepRow& row = result.rows[i];
    row.energy = energies[i];
    row.first_order = setup.first_order(row.energy);
    try {
      row.populations = populations(setup.problem.final_state(setup.field(row.energy)));
      row.status = "ok";
      note_population_sum(row.populations, row.flags);
    } catch (const IntegrationError& e) {
      row.populations.assign(setup.system.size(), std::nan(""));
      row.status = "propagation_failed";
      row.flags.push_back("propagation_failed");
    }
  });
  result.finished = utc_now();
  return result;
}

FlowResult run_stage1(const Setup& setup, const OutputDirectory* out, const RunOptions& options) {
  const auto& c = setup.config;
  const ObjectiveSet objectives(
      {
          Objective{f, 1.0, 1.0, 1.0 - c.stage1_f_target, c.softening},
          Objective{s, -1.0, 0.0, c.stage1_s_target, c.softening},
      },
      {s});
  return checkpointed_flow(setup, setup.field(c.stage1_energy), objectives, out, "stage1.json", options, "stage1");
}

SweepResult run_optimized_sweep(const Setup& setup, const OutputDirectory* out, const RunOptions& options,
                                std::vector<double> energies) {
  const auto& c = setup.config;
  if (energies.empty()) energies = c.energies;
  SweepResult result;
  result.config_hash = c.hash();
  result.started = utc_now();

  const FlowResult stage1 = run_stage1(setup, out, options);
  if (out) write_history(*out, "stage1_history.csv", setup, stage1);

  const LinearResponseConfig lr{f, s, c.omega0, g, c.match_tolerance, c.suppress_target, c.softening, c.flow, 1};

  result.rows.resize(energies.size());
  result.phases.resize(energies.size());
  parallel_for(energies.size(), options.threads, [&](std::size_t i) {
    const double energy = energies[i];
    SweepRow& row = result.rows[i];
    if (same_energy(energy, c.stage1_energy)) {
      row = flow_row(setup, energy, stage1);
      result.phases[i] = stage1.field.phase();
      if (!(row.populations[f] > c.flag_stage1_f)) row.flags.push_back("stage1_f");
      if (!(row.populations[s] < c.flag_stage1_s)) row.flags.push_back("stage1_s");
      return;
    }
    const SpectralField start = setup.field(energy, stage1.field.phase());
    const double p1 = setup.first_order(energy);
    const std::string tag = energy_tag(energy);
    const FlowResult r = checkpointed_flow(setup, start, linear_response_objectives(p1, lr), out,
                                           "stage2_A2_" + tag + ".json", options, "A2=" + tag);
    row = flow_row(setup, energy, r);
    result.phases[i] = r.field.phase();
    if (!(std::abs(row.populations[f] - p1) <= c.flag_match)) row.flags.push_back("match");
    if (!(row.populations[s] < c.flag_suppress)) row.flags.push_back("suppress");
  });
  result.finished = utc_now();
  return result;
}

std::vector<DynamicsPair> run_dynamics_comparison(const Setup& setup, const OutputDirectory* out,
                                                  const RunOptions& options) {
  const auto& c = setup.config;
  const SweepResult optimized = run_optimized_sweep(setup, out, options, c.dynamics_energies);
  const PropagationOptions record{c.trajectory_stride};
  const StateVector& initial = setup.problem.initial();

  std::vector<std::optional<DynamicsPair>> slots(c.dynamics_energies.size());
  parallel_for(slots.size(), options.threads, [&](std::size_t i) {
    const double energy = c.dynamics_energies[i];
    DynamicsPair& p = slots[i].emplace(DynamicsPair{energy, setup.problem.drive(setup.field(energy)), {}, {},
                                                    setup.problem.drive(setup.field(energy, optimized.phases[i])),
                                                    {}, {}, 0.0, 0.0, {}});
    p.constant = propagate_exact(setup.system, p.constant_drive, initial, record);
    p.constant_dyson = propagate_dyson(setup.system, p.constant_drive, initial, c.dyson_orders, record);
    p.optimized = propagate_exact(setup.system, p.optimized_drive, initial, record);
    p.optimized_dyson = propagate_dyson(setup.system, p.optimized_drive, initial, c.dyson_orders, record);
    p.constant_support = temporal_support(p.constant_drive, 0.01);
    p.optimized_support = temporal_support(p.optimized_drive, 0.01);
    if (!(p.optimized_support > c.flag_support)) p.flags.push_back("support");
    // The time series must end where the sweep row did.
    const double final_f = p.optimized.populations.back()[f];
    if (!(std::abs(final_f - optimized.rows[i].populations[f]) <= 1e-10)) p.flags.push_back("consistency");
    for (const auto& flag : optimized.rows[i].flags) p.flags.push_back(flag);
  });
  std::vector<DynamicsPair> pairs;
  for (auto& p : slots) pairs.push_back(std::move(*p));
  return pairs;
}

NoiseResult run_noise_study(const Setup& setup, const OutputDirectory* out, const RunOptions& options) {
  const auto& c = setup.config;
  const FlowResult stage1 = run_stage1(setup, out, options);
  const SpectralField& field = stage1.field;

  NoiseResult result;
  result.noiseless_p_f = setup.problem.final_populations(field)[f];
  const std::size_t n = c.snr_db.size() * c.trials;
  result.trials.resize(n);
  parallel_for(n, options.threads, [&](std::size_t i) {
    NoiseTrial& t = result.trials[i];
    t.snr_db = c.snr_db[i / c.trials];
    t.trial = i % c.trials;
    t.seed = c.seed + t.trial;
    t.p_f = setup.problem.final_populations(add_spectral_noise(field, t.snr_db, t.seed))[f];
  });
  for (std::size_t k = 0; k < c.snr_db.size(); ++k) {
    NoiseSummary sum;
    sum.snr_db = c.snr_db[k];
    for (std::size_t t = 0; t < c.trials; ++t) {
      const double err = std::abs(1.0 - result.trials[k * c.trials + t].p_f);
      sum.mean_error += err;
      sum.max_error = std::max(sum.max_error, err);
    }
    sum.mean_error /= static_cast<double>(c.trials);
    if (sum.snr_db >= c.flag_noise_snr && !(sum.max_error < c.flag_noise_error)) sum.flags.push_back("noise");
    result.summary.push_back(std::move(sum));
  }
  return result;
}

std::vector<CheckResult> run_validation(const Setup& setup, const RunOptions& options) {
  const auto& c = setup.config;
  const auto& problem = setup.problem;
  std::vector<CheckResult> checks;
  auto add = [&](std::string name, double value, double limit, bool passed) {
    checks.push_back({std::move(name), passed, value, limit});
  };

  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> angle(-units::kPi, units::kPi);
  std::vector<double> random_phase(setup.grid.frequencies.size());
  for (double& p : random_phase) p = 0.3 * angle(rng);

  // Norm and population sum under the strongest TL pulse.
  const SpectralField tl = setup.field(1.0);
  const TemporalField tl_drive = problem.drive(tl);
  const Trajectory traj = propagate_exact(setup.system, tl_drive, problem.initial());
  add("norm_drift", traj.max_norm_drift, 1e-8, traj.max_norm_drift < 1e-8);
  double sum = 0.0;
  for (double p : populations(traj.final_state)) sum += p;
  add("population_sum", std::abs(sum - 1.0), 1e-8, std::abs(sum - 1.0) < 1e-8);

  const double spectral = pulse_energy(tl) * kParsevalFactor;
  const double parseval = std::abs(temporal_energy(tl_drive) - spectral) / spectral;
  add("parseval", parseval, 1e-12, parseval < 1e-12);

  const SpectralField shaped = tl.with_phase(random_phase);
  const double energy_change = std::abs(pulse_energy(shaped) - pulse_energy(tl));
  add("energy_invariance", energy_change, 0.0, energy_change == 0.0);

  // Dyson orders: parity zeros and the first-order formula.
  const TemporalField shaped_drive = problem.drive(shaped);
  const PerturbationStack dyson = propagate_dyson(setup.system, shaped_drive, problem.initial(), 3);
  double forbidden = 0.0;
  for (std::size_t m = 0; m < dyson.orders.size(); ++m) {
    const auto& o = dyson.orders[m];
    if (m % 2 == 0) {
      forbidden = std::max(forbidden, std::abs(o(f)));
    } else {
      forbidden = std::max({forbidden, std::abs(o(g)), std::abs(o(s))});
    }
  }
  add("dyson_parity", forbidden, 0.0, forbidden == 0.0);
  const double p1 = first_order_probability(setup.system, shaped, g, f);
  const double first = std::abs(std::norm(dyson.orders[1](f)) - p1) / p1;
  add("first_order", first, 1e-6, first < 1e-6);

  // Adjoint against central differences on bins inside the pulse spectrum.
  const std::size_t levels[] = {g, s, f};
  const auto eval = problem.evaluate(shaped, levels);
  const double half = 2.0 * gaussian_spectral_fwhm(c.fwhm);
  const auto& grid = setup.grid.frequencies;
  std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(grid.position(c.omega0 - half)),
                                                  static_cast<std::size_t>(grid.position(c.omega0 + half)));
  std::vector<std::size_t> bins(8);
  for (auto& b : bins) b = pick(rng);
  const std::size_t objective_levels[] = {s, f};
  const auto fd = finite_difference_gradient(problem, shaped, objective_levels, kOracleStep, bins, kOracleStencil);
  double worst = 0.0;
  for (std::size_t b : bins) {
    for (std::size_t l : objective_levels) {
      const double a = eval.gradients.of(l)[b];
      const double n = fd.of(l)[b];
      worst = std::max(worst, std::abs(a - n) / std::max(1e-4 * std::abs(n), 1e-10));
    }
  }
  add("adjoint_vs_fd", worst, 1.0, worst <= 1.0);
  double gsum = 0.0;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    gsum = std::max(gsum, std::abs(eval.gradients.of(g)[j] + eval.gradients.of(s)[j] + eval.gradients.of(f)[j]));
  }
  add("gradient_sum", gsum, 1e-10, gsum < 1e-10);

  const SpectralFilter filter(grid, setup.filter);
  const std::vector<std::vector<double>> rows = {eval.gradients.of(f), eval.gradients.of(s)};
  const Eigen::MatrixXd gamma = gamma_matrix(rows, filter);
  const double asym = (gamma - gamma.transpose()).cwiseAbs().maxCoeff();
  const double min_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gamma).eigenvalues().minCoeff();
  add("gamma_symmetric", asym, 1e-12, asym <= 1e-12);
  add("gamma_psd", -min_eig, 1e-10, min_eig >= -1e-10);

  // One small flow step realizes dP/dx = k.
  const double k[] = {1.0, -1.0};
  const PhaseUpdate update = phase_update(rows, k, filter, c.flow.regularization);
  const double dx = 1e-4;
  std::vector<double> stepped = shaped.phase();
  for (std::size_t j = 0; j < stepped.size(); ++j) stepped[j] += dx * update.direction[j];
  const auto after = problem.final_populations(shaped.with_phase(stepped));
  const double rate_error = std::max(std::abs((after[f] - eval.populations[f]) / dx - k[0]),
                                     std::abs((after[s] - eval.populations[s]) / dx - k[1]));
  add("flow_identity", rate_error, 0.1, rate_error <= 0.1);

  // Halving dt.
  ExperimentConfig fine = c;
  fine.samples_per_cycle *= 2.0;
  const SimulationGrid fine_grid = grid_for(fine);
  double halving = 0.0;
  if (fine_grid.frequencies == grid) {
    const ControlProblem fine_problem(setup.system, fine_grid.frequencies, fine_grid.times);
    const auto coarse = problem.final_populations(tl);
    const auto refined = fine_problem.final_populations(tl);
    for (std::size_t l = 0; l < coarse.size(); ++l) halving = std::max(halving, std::abs(coarse[l] - refined[l]));
  } else {
    halving = INFINITY;
  }
  add("dt_halving", halving, 1e-8, halving < 1e-8);
  (void)options;
  return checks;
}

void write_sweep(const OutputDirectory& out, const std::string& name, const Setup& setup, const SweepResult& result) {
  auto os = out.open_csv(name + ".csv", {"final populations versus spectral energy density at w0",
                                         "A2: A^2(w0) in atomic units; P_*: dimensionless; P1_f: first order",
                                         "iterations: flow iterations (0 for constant phase)"});
  os << "A2";
  for (const auto& l : setup.system.labels()) os << ",P_" << l;
  os << ",P1_f,iterations,status,flags\n";
  for (const auto& r : result.rows) {
    os << r.energy;
    for (double p : r.populations) os << ',' << p;
    os << ',' << r.first_order << ',' << r.iterations << ',' << r.status << ',' << join(r.flags, ";") << '\n';
  }
  if (setup.config.gnuplot) {
    write_gnuplot(out, name + ".gp",
                  "set xlabel 'A^2(w0)'\nset ylabel 'population'\nplot '" + name +
                      ".csv' using 1:2 with linespoints, '' using 1:3 with linespoints, "
                      "'' using 1:4 with linespoints, '' using 1:5 with lines dt 2\n");
  }
}

void write_phases(const OutputDirectory& out, const std::string& name, const Setup& setup,
                  const SweepResult& result) {
  auto os = out.open_csv(name + ".csv", {"optimized spectral phases",
                                         "omega_cm: angular frequency in cm^-1; amplitude: A(w) at A^2(w0) = 1, "
                                         "atomic units; phase_A2_*: radians"});
  os << "omega_cm,amplitude";
  for (const auto& r : result.rows) os << ",phase_A2_" << energy_tag(r.energy);
  os << '\n';
  const auto& grid = setup.grid.frequencies;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    os << units::hartree_to_wavenumber(grid.omega(j)) << ',' << setup.base.amplitude()[j];
    for (const auto& ph : result.phases) os << ',' << ph[j];
    os << '\n';
  }
  if (setup.config.gnuplot) {
    write_gnuplot(out, name + ".gp",
                  "set xlabel 'wavenumber (cm^-1)'\nset ylabel 'phase (rad)'\n"
                  "plot for [i=3:*] '" + name + ".csv' using 1:i with lines\n");
  }
}

void write_history(const OutputDirectory& out, const std::string& name, const Setup& setup,
                   const FlowResult& result) {
  auto os = out.open_csv(name, {"flow history; populations at the trial phase of each iteration",
                                "x, dx: flow variable (dimensionless); cond_gamma: condition number of the "
                                "scaled, regularized Gamma",
                                std::string("status: ") + to_string(result.status)});
  write_history_csv(os, setup.system, result.state.history);
}

void write_dynamics(const OutputDirectory& out, const Setup& setup, const std::vector<DynamicsPair>& pairs) {
  const std::size_t stride = std::max<std::size_t>(1, setup.config.trajectory_stride);
  for (const auto& p : pairs) {
    const std::string tag = energy_tag(p.energy);
    auto os = out.open_csv("dynamics_A2_" + tag + ".csv",
                           {"populations versus time, constant (c_) and optimized (o_) spectral phase",
                            "t_fs: femtoseconds; P_*: exact; P1_f: first-order Dyson term",
                            "A2 = " + tag});
    os << "t_fs,c_P_g,c_P_s,c_P_f,c_P1_f,o_P_g,o_P_s,o_P_f,o_P1_f\n";
    for (std::size_t i = 0; i < p.constant.times.size(); ++i) {
      os << units::atomic_to_fs(p.constant.times[i]);
      for (double x : p.constant.populations[i]) os << ',' << x;
      os << ',' << p.constant_dyson.order_populations[i][1][f];
      for (double x : p.optimized.populations[i]) os << ',' << x;
      os << ',' << p.optimized_dyson.order_populations[i][1][f] << '\n';
    }
    auto fields = out.open_csv("fields_A2_" + tag + ".csv",
                               {"electric field samples", "t_fs: femtoseconds; e_*: atomic units", "A2 = " + tag});
    fields << "t_fs,e_constant,e_optimized\n";
    for (std::size_t k = 0; k < p.constant_drive.values.size(); k += stride) {
      fields << units::atomic_to_fs(p.constant_drive.axis.time(k)) << ',' << p.constant_drive.values[k] << ','
             << p.optimized_drive.values[k] << '\n';
    }
    if (setup.config.gnuplot) {
      write_gnuplot(out, "dynamics_A2_" + tag + ".gp",
                    "set xlabel 'time (fs)'\nset ylabel 'P_f'\nplot 'dynamics_A2_" + tag +
                        ".csv' using 1:4 with lines, '' using 1:5 with lines, '' using 1:8 with lines, "
                        "'' using 1:9 with lines\n");
    }
  }
  auto os = out.open_csv("dynamics_summary.csv", {"final values and 1% temporal support of |e(t)|",
                                                  "support_*_fs: femtoseconds; P_f, P1_f at the final time"});
  os << "A2,support_constant_fs,support_optimized_fs,c_P_f,c_P1_f,o_P_f,o_P1_f,flags\n";
  for (const auto& p : pairs) {
    os << p.energy << ',' << units::atomic_to_fs(p.constant_support) << ','
       << units::atomic_to_fs(p.optimized_support) << ',' << p.constant.populations.back()[f] << ','
       << p.constant_dyson.order_populations.back()[1][f] << ',' << p.optimized.populations.back()[f] << ','
       << p.optimized_dyson.order_populations.back()[1][f] << ',' << join(p.flags, ";") << '\n';
  }
}

void write_noise(const OutputDirectory& out, const Setup& setup, const NoiseResult& result) {
  {
    auto os = out.open_csv("noise_trials.csv", {"P_f of the stage-1 pulse with white noise on amplitude and phase",
                                                "snr_db: decibel; seed = base seed + trial",
                                                "noiseless P_f = " + format_double(result.noiseless_p_f)});
    os << "snr_db,trial,seed,P_f,error\n";
    for (const auto& t : result.trials) {
      os << t.snr_db << ',' << t.trial << ',' << t.seed << ',' << t.p_f << ',' << std::abs(1.0 - t.p_f) << '\n';
    }
  }
  auto os = out.open_csv("noise_summary.csv", {"per-SNR statistics of |1 - P_f|", "snr_db: decibel"});
  os << "snr_db,mean_error,max_error,flags\n";
  for (const auto& s : result.summary) {
    os << s.snr_db << ',' << s.mean_error << ',' << s.max_error << ',' << join(s.flags, ";") << '\n';
  }
  if (setup.config.gnuplot) {
    write_gnuplot(out, "noise.gp",
                  "set logscale y\nset xlabel 'SNR (dB)'\nset ylabel '|1 - P_f|'\n"
                  "plot 'noise_trials.csv' using 1:5 with points, 'noise_summary.csv' using 1:2 with lines\n");
  }
}

void write_validation(const OutputDirectory& out, const std::vector<CheckResult>& checks) {
  auto os = out.open_csv("validation.csv", {"invariant checks; value is compared against limit"});
  os << "check,value,limit,passed\n";
  for (const auto& c : checks) os << c.name << ',' << c.value << ',' << c.limit << ',' << (c.passed ? 1 : 0) << '\n';
}

}  // namespace linabs
