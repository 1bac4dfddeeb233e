#include "linabs/optimizer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <thread>

#include "linabs/errors.hpp"

namespace linabs {

double Objective::coefficient(double p) const {
  if (!goal) return k;
  if (met(p)) return 0.0;
  const double d = *goal - p;
  if (softening > 0.0) {
    // aim at the middle of the tolerance band so the taper ends inside it
    const double excess = std::copysign(std::abs(d) - 0.5 * tolerance, d);
    return std::abs(k) * std::clamp(excess / softening, -1.0, 1.0);
  }
  return d > 0.0 ? std::abs(k) : -std::abs(k);
}

ObjectiveSet::ObjectiveSet(std::vector<Objective> entries, std::vector<std::size_t> holds)
    : entries_(std::move(entries)), holds_(std::move(holds)) {
  if (entries_.empty()) throw ConfigurationError("objectives: need at least one");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (!(entries_[i].k != 0.0) || !std::isfinite(entries_[i].k)) {
      throw ConfigurationError("objectives: k must be finite and nonzero");
    }
    if (entries_[i].tolerance < 0.0 || entries_[i].softening < 0.0) {
      throw ConfigurationError("objectives: negative tolerance or softening");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (entries_[i].level == entries_[j].level) throw ConfigurationError("objectives: duplicate level");
    }
  }
  for (std::size_t i = 0; i < holds_.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (holds_[i] == holds_[j]) throw ConfigurationError("objectives: duplicate hold");
    }
  }
}

std::vector<std::size_t> ObjectiveSet::levels() const {
  std::vector<std::size_t> out;
  for (const auto& o : entries_) out.push_back(o.level);
  return out;
}

bool ObjectiveSet::all_met(std::span<const double> populations) const {
  return std::all_of(entries_.begin(), entries_.end(), [&](const Objective& o) {
    return o.met(populations[o.level]);
  });
}

double FilterSpec::kernel(double delta) const {
  const double r = delta / sigma;
  return std::exp(-4.0 * std::log(2.0) * r * r);
}

SpectralFilter::SpectralFilter(const FrequencyGrid& grid, const FilterSpec& spec) : n_(grid.size()), taps_(n_) {
  if (!(spec.sigma > 0.0)) throw ConfigurationError("filter: sigma must be positive");
  for (std::size_t j = 0; j < n_; ++j) taps_[j] = spec.kernel(static_cast<double>(j) * grid.spacing());
}

std::vector<double> SpectralFilter::apply(std::span<const double> values) const {
  if (values.size() != n_) throw DomainError("filter: array does not match the grid");
  // Taps below this are dropped; exp(-4 ln2 r^2) reaches it near r = 5.
  std::size_t reach = n_;
  while (reach > 1 && taps_[reach - 1] < 1e-30) --reach;
  std::vector<double> out(n_, 0.0);
  for (std::size_t i = 0; i < n_; ++i) {
    const std::size_t lo = i >= reach - 1 ? i - (reach - 1) : 0;
    const std::size_t hi = std::min(n_ - 1, i + reach - 1);
    double acc = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) acc += taps_[i > j ? i - j : j - i] * values[j];
    out[i] = acc;
  }
  return out;
}

Eigen::MatrixXd gamma_matrix(const std::vector<std::vector<double>>& gradients, const SpectralFilter& filter) {
  const auto m = static_cast<Eigen::Index>(gradients.size());
  Eigen::MatrixXd gamma(m, m);
  for (Eigen::Index b = 0; b < m; ++b) {
    const auto smoothed = filter.apply(gradients[static_cast<std::size_t>(b)]);
    for (Eigen::Index a = 0; a < m; ++a) {
      const auto& g = gradients[static_cast<std::size_t>(a)];
      double acc = 0.0;
      for (std::size_t j = 0; j < g.size(); ++j) acc += g[j] * smoothed[j];
      gamma(a, b) = acc;
    }
  }
  return 0.5 * (gamma + gamma.transpose());
}

PhaseUpdate phase_update(const std::vector<std::vector<double>>& gradients, std::span<const double> k,
                         const SpectralFilter& filter, double regularization) {
  if (gradients.size() != k.size()) throw DomainError("phase update: one coefficient per gradient");
  PhaseUpdate out;
  out.direction.assign(filter.size(), 0.0);

  if (gradients.empty()) return out;

  const Eigen::MatrixXd gamma = gamma_matrix(gradients, filter);
  const auto m = gamma.rows();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gamma, Eigen::EigenvaluesOnly);
  out.min_eigenvalue = eig.eigenvalues().minCoeff();
  const Eigen::Map<const Eigen::VectorXd> rhs(k.data(), m);

  // Rows without any sensitivity cannot be steered; they drop out.
  const Eigen::VectorXd diag = gamma.diagonal();
  const double scale = diag.maxCoeff();
  if (!(scale > 0.0)) {
    out.condition = 1.0;
    return out;
  }
  Eigen::VectorXd d(m);
  for (Eigen::Index i = 0; i < m; ++i) d(i) = diag(i) > 1e-300 * scale ? 1.0 / std::sqrt(diag(i)) : 0.0;

  // Regularize the unit-diagonal form D Gamma D. Row norms scale with the
  // populations involved, so a trace-relative shift on the raw matrix would
  // swamp the rows of nearly empty levels.
  Eigen::MatrixXd unit = d.asDiagonal() * gamma * d.asDiagonal();
  for (Eigen::Index i = 0; i < m; ++i) {
    if (d(i) == 0.0) unit(i, i) = 1.0;
  }
  const double eps = regularization * unit.trace() / static_cast<double>(m);
  const Eigen::MatrixXd reg = unit + eps * Eigen::MatrixXd::Identity(m, m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> reg_eig(reg, Eigen::EigenvaluesOnly);
  out.condition = reg_eig.eigenvalues().maxCoeff() / reg_eig.eigenvalues().minCoeff();

  if (rhs.isZero(0.0)) return out;
  const Eigen::VectorXd scaled_rhs = d.asDiagonal() * rhs;
  const Eigen::VectorXd z = reg.ldlt().solve(scaled_rhs);
  out.residual = (reg * z - scaled_rhs).norm() / std::max(scaled_rhs.norm(), 1e-300);
  const Eigen::VectorXd y = d.asDiagonal() * z;

  // c = sum_l y_l g_l with y = Gamma_reg^-1 k (Gamma symmetric).
  std::vector<double> combined(filter.size(), 0.0);
  for (Eigen::Index a = 0; a < m; ++a) {
    const auto& g = gradients[static_cast<std::size_t>(a)];
    for (std::size_t j = 0; j < combined.size(); ++j) combined[j] += y(a) * g[j];
  }
  out.direction = filter.apply(combined);
  return out;
}

const char* to_string(FlowStatus status) {
  switch (status) {
    case FlowStatus::targets_met: return "targets_met";
    case FlowStatus::max_iterations: return "max_iterations";
    case FlowStatus::step_underflow: return "step_underflow";
  }
  return "unknown";
}

namespace {

void validate(const FlowConfig& c) {
  if (!(c.dx_initial > 0.0) || !(c.dx_max >= c.dx_initial) || !(c.dx_min > 0.0) || !(c.dx_min <= c.dx_initial)) {
    throw ConfigurationError("flow: need 0 < dx_min <= dx_initial <= dx_max");
  }
  if (!(c.dx_growth >= 1.0)) throw ConfigurationError("flow: dx_growth must be >= 1");
  if (!(c.regularization >= 0.0)) throw ConfigurationError("flow: negative regularization");
}

}  // namespace

FlowResult run_flow(const ControlProblem& problem, const SpectralField& field, const ObjectiveSet& objectives,
                    const FilterSpec& filter_spec, const FlowConfig& config, std::optional<FlowState> resume,
                    const std::function<void(const IterationRecord&)>& observer) {
  validate(config);
  for (const auto& o : objectives.entries()) {
    if (o.level >= problem.system().size()) throw ConfigurationError("flow: objective level out of range");
  }
  for (std::size_t h : objectives.holds()) {
    if (h >= problem.system().size()) throw ConfigurationError("flow: hold level out of range");
  }
  const SpectralFilter filter(field.grid(), filter_spec);
  const std::vector<std::size_t> levels = objectives.levels();
  const auto& entries = objectives.entries();
  const auto& holds = objectives.holds();

  FlowState state;
  if (resume) {
    state = std::move(*resume);
    if (state.phase.size() != field.grid().size()) throw ConfigurationError("flow: resumed phase has wrong size");
    if (!(state.dx > 0.0)) state.dx = config.dx_initial;
  } else {
    state.dx = config.dx_initial;
    state.phase = field.phase();
  }

  SpectralField current = field.with_phase(state.phase);
  auto eval = problem.evaluate(current, levels, holds);
  state.populations = eval.populations;

  FlowResult result{current, {}, FlowStatus::max_iterations, 0};
  result.accepted_steps = static_cast<std::size_t>(std::count_if(
      state.history.begin(), state.history.end(), [](const IterationRecord& r) { return r.accepted; }));
  auto checkpoint = [&] {
    if (!config.checkpoint_path.empty() && config.checkpoint_interval > 0 &&
        result.accepted_steps % config.checkpoint_interval == 0) {
      save_checkpoint(config.checkpoint_path, state, config.checkpoint_tag);
    }
  };

  while (true) {
    if (objectives.all_met(state.populations)) {
      result.status = FlowStatus::targets_met;
      break;
    }
    if (state.iteration >= config.max_iterations) {
      result.status = FlowStatus::max_iterations;
      break;
    }
    if (state.dx < config.dx_min) {
      result.status = FlowStatus::step_underflow;
      break;
    }

    // Gamma rows: objectives that are still driven (a tapered objective
    // stays in as a hold once it reaches its goal), then the holds.
    std::vector<double> k(entries.size());
    std::vector<std::vector<double>> rows;
    std::vector<double> k_rows;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      k[i] = entries[i].coefficient(state.populations[entries[i].level]);
      if (k[i] != 0.0 || entries[i].softening > 0.0) {
        rows.push_back(eval.gradients.values[i]);
        k_rows.push_back(k[i]);
      }
    }
    for (std::size_t h = 0; h < holds.size(); ++h) {
      rows.push_back(eval.gradients.values[entries.size() + h]);
      k_rows.push_back(0.0);
    }
    const std::size_t n_active = rows.size();
    const PhaseUpdate update = phase_update(rows, k_rows, filter, config.regularization);

    IterationRecord rec;
    rec.iteration = state.iteration++;
    rec.x = state.x;
    rec.dx = state.dx;
    rec.condition = update.condition;
    rec.active = n_active;

    std::vector<double> trial_phase = state.phase;
    for (std::size_t j = 0; j < trial_phase.size(); ++j) trial_phase[j] += state.dx * update.direction[j];
    SpectralField trial = field.with_phase(trial_phase);

    bool ok = update.condition <= config.condition_cap;
    std::optional<StateVector> trial_state;
    if (ok) {
      // Populations first; gradients are only needed if the step is kept.
      trial_state = problem.final_state(trial);
      rec.populations = populations(*trial_state);
      for (std::size_t i = 0; i < entries.size(); ++i) {
        const double d = rec.populations[entries[i].level] - state.populations[entries[i].level];
        rec.delta.push_back(d);
        // Active objectives must move strictly in the requested direction.
        if (k[i] != 0.0 && !(d * k[i] > 0.0)) ok = false;
      }
    } else {
      rec.populations = state.populations;
      rec.delta.assign(entries.size(), 0.0);
    }
    rec.accepted = ok;

    if (ok) {
      state.x += state.dx;
      state.phase = std::move(trial_phase);
      eval = problem.evaluate(trial, levels, holds, &*trial_state);
      state.populations = eval.populations;
      current = std::move(trial);
      ++result.accepted_steps;
      if (++state.consecutive_accepts >= config.growth_after) {
        state.dx = std::min(config.dx_max, state.dx * config.dx_growth);
        state.consecutive_accepts = 0;
      }
    } else {
      state.dx *= 0.5;
      state.consecutive_accepts = 0;
    }
    if (observer) observer(rec);
    state.history.push_back(std::move(rec));
    if (ok) checkpoint();
  }
  if (!config.checkpoint_path.empty()) save_checkpoint(config.checkpoint_path, state, config.checkpoint_tag);

  result.field = current;
  result.state = std::move(state);
  return result;
}

void write_history_csv(std::ostream& os, const LevelSystem& system, const std::vector<IterationRecord>& history) {
  os << "iteration,x,dx";
  for (const auto& label : system.labels()) os << ",P_" << label;
  os << ",cond_gamma,accepted,active\n" << std::setprecision(17);
  for (const auto& r : history) {
    os << r.iteration << ',' << r.x << ',' << r.dx;
    for (double p : r.populations) os << ',' << p;
    os << ',' << r.condition << ',' << (r.accepted ? 1 : 0) << ',' << r.active << '\n';
  }
}

void save_checkpoint(const std::string& path, const FlowState& state, const std::string& tag) {
  nlohmann::json j;
  j["tag"] = tag;
  j["x"] = state.x;
  j["dx"] = state.dx;
  j["iteration"] = state.iteration;
  j["consecutive_accepts"] = state.consecutive_accepts;
  j["populations"] = state.populations;
  j["phase"] = state.phase;
  auto& history = j["history"] = nlohmann::json::array();
  for (const auto& r : state.history) {
    history.push_back({{"iteration", r.iteration}, {"x", r.x}, {"dx", r.dx}, {"populations", r.populations},
                       {"delta", r.delta}, {"condition", r.condition}, {"accepted", r.accepted},
                       {"active", r.active}});
  }
  // Write then rename so an interrupted run never leaves a torn file.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw Error("checkpoint: cannot write " + tmp);
    out << j.dump() << '\n';
    if (!out) throw Error("checkpoint: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("checkpoint: cannot replace " + path);
}

FlowState load_checkpoint(const std::string& path, const std::string& expected_tag) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("checkpoint: cannot read " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError("checkpoint: malformed " + path + ": " + e.what());
  }
  if (j.value("tag", std::string{}) != expected_tag) {
    throw ConfigurationError("checkpoint: " + path + " belongs to a different configuration");
  }
  FlowState s;
  try {
    s.x = j.at("x").get<double>();
    s.dx = j.at("dx").get<double>();
    s.iteration = j.at("iteration").get<std::size_t>();
    s.consecutive_accepts = j.at("consecutive_accepts").get<std::size_t>();
    s.populations = j.at("populations").get<std::vector<double>>();
    s.phase = j.at("phase").get<std::vector<double>>();
    for (const auto& h : j.value("history", nlohmann::json::array())) {
      IterationRecord r;
      r.iteration = h.at("iteration").get<std::size_t>();
      r.x = h.at("x").get<double>();
      r.dx = h.at("dx").get<double>();
      r.populations = h.at("populations").get<std::vector<double>>();
      r.delta = h.at("delta").get<std::vector<double>>();
      r.condition = h.at("condition").get<double>();
      r.accepted = h.at("accepted").get<bool>();
      r.active = h.at("active").get<std::size_t>();
      s.history.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError("checkpoint: missing field in " + path + ": " + e.what());
  }
  return s;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& job) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            job(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

ObjectiveSet linear_response_objectives(double first_order, const LinearResponseConfig& config) {
  return ObjectiveSet(
      {
          Objective{config.level, -1.0, first_order, config.match_tolerance, config.softening},
          Objective{config.suppressed_level, -1.0, 0.0, config.suppress_target, config.softening},
      },
      {config.suppressed_level});
}

std::vector<LinearResponsePoint> match_linear_response(const ControlProblem& problem, const SpectralField& base,
                                                       std::span<const double> phase,
                                                       std::span<const double> energies,
                                                       const FilterSpec& filter,
                                                       const LinearResponseConfig& config) {
  if (phase.size() != base.grid().size()) throw ConfigurationError("linear response: phase has wrong size");
  const double a_ref = base.amplitude_at(config.reference_frequency);
  if (!(a_ref > 0.0)) throw ConfigurationError("linear response: no amplitude at the reference frequency");
  const std::vector<double> start_phase(phase.begin(), phase.end());

  std::vector<std::optional<LinearResponsePoint>> out(energies.size());
  parallel_for(energies.size(), config.threads, [&](std::size_t i) {
    const double energy = energies[i];
    if (!(energy > 0.0)) throw ConfigurationError("linear response: energies must be positive");
    const SpectralField field = base.scaled(std::sqrt(energy) / a_ref).with_phase(start_phase);
    const double p1 = first_order_probability(problem.system(), field, config.from_level, config.level);
    const ObjectiveSet objectives = linear_response_objectives(p1, config);
    out[i].emplace(LinearResponsePoint{energy, p1, run_flow(problem, field, objectives, filter, config.flow)});
  });

  std::vector<LinearResponsePoint> points;
  for (auto& p : out) points.push_back(std::move(*p));
  return points;
}

}  // namespace linabs
