#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "linabs/field.hpp"
#include "linabs/gradient.hpp"

namespace linabs {

/// One control objective: drive P_level in the direction of k.
///
/// Without a goal the coefficient is the constant k. With a goal the sign
/// follows goal - P and the magnitude is |k|, tapered linearly to zero over
/// the last `softening` before half the tolerance (softening 0: no taper).
/// The objective is met once |P - goal| <= tolerance; a met objective has
/// k = 0.
struct Objective {
  std::size_t level;
  double k;
  std::optional<double> goal;
  double tolerance = 0.0;
  double softening = 0.0;

  // Signed coefficient k_l(x) to use at population p.
  double coefficient(double p) const;
  bool met(double p) const { return goal && std::abs(p - *goal) <= tolerance; }
};

/// Objectives plus optional quadrature holds.
///
/// A hold on level l adds the row 2 Im(a_l* grad a_l) with k = 0 to Gamma,
/// freezing the phase of the amplitude a_l = <l|psi(T)> to first order. The
/// population gradient alone only controls |a_l|; when a population is
/// driven toward zero the unconstrained phase direction otherwise lets |a_l|
/// grow back at first order in dx.
class ObjectiveSet {
 public:
  explicit ObjectiveSet(std::vector<Objective> entries, std::vector<std::size_t> holds = {});

  const std::vector<Objective>& entries() const { return entries_; }
  const std::vector<std::size_t>& holds() const { return holds_; }
  std::size_t size() const { return entries_.size(); }
  std::vector<std::size_t> levels() const;
  bool all_met(std::span<const double> populations) const;

 private:
  std::vector<Objective> entries_;
  std::vector<std::size_t> holds_;
};

/// Gaussian smoothing kernel S(d) = exp(-4 ln2 d^2 / sigma^2), peak value 1.
struct FilterSpec {
  double sigma;
  double kernel(double delta) const;
};

/// (S * v)_i = sum_j S(w_i - w_j) v_j on a uniform grid.
class SpectralFilter {
 public:
  SpectralFilter(const FrequencyGrid& grid, const FilterSpec& spec);

  std::vector<double> apply(std::span<const double> values) const;
  std::size_t size() const { return n_; }

 private:
  std::size_t n_;
  std::vector<double> taps_;  // S(j dw), j = 0..n-1
};

/// Gamma_{ll'} = sum_j g_l(w_j) (S * g_l')(w_j), symmetrized.
///
/// The discrete sums drop the dw factors of the double integral; the same
/// convention is used for the update, so the flow identity dP_l/dx = k_l is
/// unaffected.
Eigen::MatrixXd gamma_matrix(const std::vector<std::vector<double>>& gradients, const SpectralFilter& filter);

struct FlowConfig {
  double dx_initial = 1e-3;
  double dx_max = 1e-2;
  double dx_min = 1e-8;
  double dx_growth = 1.2;
  std::size_t growth_after = 5;  // consecutive accepted steps
  std::size_t max_iterations = 5000;
  double regularization = 1e-8;  // Tikhonov eps, relative to the unit-diagonal Gamma
  double condition_cap = 1e14;
  // Write a checkpoint every `checkpoint_interval` accepted steps (0: never).
  std::string checkpoint_path;
  std::size_t checkpoint_interval = 0;
  std::string checkpoint_tag;
};

struct PhaseUpdate {
  std::vector<double> direction;  // S * sum k_l [Gamma_reg^-1]_{ll'} g_l'; multiply by dx
  double condition = 0.0;         // of the regularized unit-diagonal Gamma
  double min_eigenvalue = 0.0;    // of Gamma before any scaling or regularization
  double residual = 0.0;          // relative residual of the regularized solve
};

/// Flow direction for the given gradient rows and signed coefficients. Every
/// row enters Gamma; a zero coefficient holds that functional fixed to first
/// order. All-zero gradients give a zero direction.
///
/// Gamma is first scaled to unit diagonal, D Gamma D, and Tikhonov-shifted by
/// regularization * trace / M there; the unregularized solution does not
/// depend on the scaling.
PhaseUpdate phase_update(const std::vector<std::vector<double>>& gradients, std::span<const double> k,
                         const SpectralFilter& filter, double regularization);

struct IterationRecord {
  std::size_t iteration = 0;
  double x = 0.0;
  double dx = 0.0;
  std::vector<double> populations;  // at the trial phase
  std::vector<double> delta;        // per objective, trial minus current
  double condition = 0.0;
  bool accepted = false;
  std::size_t active = 0;  // rows in Gamma
};

struct FlowState {
  double x = 0.0;
  double dx = 0.0;
  std::size_t iteration = 0;
  std::size_t consecutive_accepts = 0;
  std::vector<double> phase;
  std::vector<double> populations;
  std::vector<IterationRecord> history;
};

enum class FlowStatus { targets_met, max_iterations, step_underflow };
const char* to_string(FlowStatus status);

struct FlowResult {
  SpectralField field;  // best accepted field (amplitude untouched)
  FlowState state;
  FlowStatus status;
  std::size_t accepted_steps = 0;
  bool converged() const { return status == FlowStatus::targets_met; }
};

/// Euler integration of the multi-objective gradient flow in the phase.
///
/// Each trial step is propagated once; it is accepted only when every
/// objective with nonzero k moved in its direction, otherwise dx is halved.
/// The flow stops when all objectives are met. With softening 0 a met
/// objective is dropped from Gamma until it drifts out of tolerance again.
/// `resume` continues from a saved state (phase, x, dx, counters).
/// `observer` sees every iteration record as it is produced.
FlowResult run_flow(const ControlProblem& problem, const SpectralField& field, const ObjectiveSet& objectives,
                    const FilterSpec& filter, const FlowConfig& config, std::optional<FlowState> resume = {},
                    const std::function<void(const IterationRecord&)>& observer = {});

void write_history_csv(std::ostream& os, const LevelSystem& system, const std::vector<IterationRecord>& history);

/// Checkpoints are JSON: phase array, flow scalars, the last populations and
/// the iteration history. `tag` is an arbitrary string the caller can use to
/// refuse resuming a run with a different configuration.
void save_checkpoint(const std::string& path, const FlowState& state, const std::string& tag);
FlowState load_checkpoint(const std::string& path, const std::string& expected_tag);

struct LinearResponsePoint {
  double energy;            // A^2(w0)
  double first_order;       // mu^2 A^2 at the transition
  FlowResult result;
};

struct LinearResponseConfig {
  std::size_t level;              // level whose population should match first order
  std::size_t suppressed_level;   // level to keep empty
  double reference_frequency;     // where A^2 is measured and P^(1) evaluated
  std::size_t from_level = 0;
  double match_tolerance = 1e-4;
  double suppress_target = 1e-3;
  double softening = 0.05;
  FlowConfig flow;
  std::size_t threads = 1;
};

/// P_level toward `first_order` and P_suppressed toward zero, both with
/// k = -1 and tapered, plus a quadrature hold on the suppressed level.
ObjectiveSet linear_response_objectives(double first_order, const LinearResponseConfig& config);

/// Rescales `base` so that A^2(reference) hits each energy, warm-starts from
/// `phase`, and drives P_level toward its first-order value while lowering
/// P_suppressed. Points are independent and run on up to `threads` workers;
/// results keep the order of `energies`.
std::vector<LinearResponsePoint> match_linear_response(const ControlProblem& problem, const SpectralField& base,
                                                       std::span<const double> phase,
                                                       std::span<const double> energies,
                                                       const FilterSpec& filter,
                                                       const LinearResponseConfig& config);

/// Runs jobs 0..n-1 on up to `threads` workers. Results must be written by
/// index; the first exception is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& job);

}  // namespace linabs
