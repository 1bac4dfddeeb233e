#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "linabs/field.hpp"

namespace linabs {

using StateVector = Eigen::VectorXcd;

inline constexpr Eigen::Index kMaxLevels = 16;
// Stack-allocated complex vector of at most kMaxLevels entries.
using SmallVector = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, 1, 0, kMaxLevels, 1>;

/// Field-free N-level system H0 = diag(E) coupled to the drive through a
/// real symmetric dipole matrix: H(t) = H0 - mu e(t).
class LevelSystem {
 public:
  LevelSystem(std::vector<double> energies, Eigen::MatrixXd dipole, std::vector<std::string> labels = {});

  std::size_t size() const { return energies_.size(); }
  const std::vector<double>& energies() const { return energies_; }
  const Eigen::MatrixXd& dipole() const { return dipole_; }
  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t index_of(const std::string& label) const;
  // E_to - E_from
  double transition_frequency(std::size_t from, std::size_t to) const;

 private:
  std::vector<double> energies_;
  Eigen::MatrixXd dipole_;
  std::vector<std::string> labels_;
};

/// Three-level Lambda system |g>, |s>, |f> (indices 0, 1, 2) with
/// E_g = 0, E_s = s_ratio * w0, E_f = w0. g and s couple only through f.
LevelSystem make_lambda_system(double omega0, double s_ratio, double mu_gf, double mu_sf);

namespace lambda_levels {
inline constexpr std::size_t g = 0;
inline constexpr std::size_t s = 1;
inline constexpr std::size_t f = 2;
}  // namespace lambda_levels

StateVector basis_state(std::size_t n, std::size_t index);
std::vector<double> populations(const StateVector& state);

/// Moves a Schroedinger-picture state at time t into the interaction
/// picture: exp(i H0 t) |psi>.
StateVector to_interaction_picture(const LevelSystem& system, const StateVector& state, double t);

enum class DriveNode { before, center, after };

/// Split-operator propagation step for H0 - mu e(t) over [t_k - dt/2, t_k + dt/2].
///
/// The step alternates exact free evolutions exp(-i H0 a dt) with dipole
/// kicks exp(i e(t_node) w dt mu). With only a center node this is the
/// second-order Strang step, i.e. the exponential midpoint rule in the
/// interaction picture. Fields that carry node samples use the fourth-order
/// triple-jump composition of three Strang steps (weights w1, 1 - 2 w1, w1),
/// whose kicks fall at t_k + c dt, t_k and t_k - c dt in that order. Every
/// factor is unitary and no rotating-wave approximation is made.
class SplitStepper {
 public:
  struct Kick {
    DriveNode node;
    double weight;
  };

  SplitStepper(const LevelSystem& system, double dt, bool fourth_order);
  static SplitStepper for_drive(const LevelSystem& system, const TemporalField& drive);

  double dt() const { return dt_; }
  // Kicks in execution order; free segment i precedes kick i and segment
  // kicks().size() closes the step.
  const std::vector<Kick>& kicks() const { return kicks_; }
  static double node_offset(DriveNode node);  // in units of dt
  static double node_value(const TemporalField& drive, DriveNode node, std::size_t k);

  void free(StateVector& psi, std::size_t segment) const { psi.array() *= free_[segment].array(); }
  void free_inverse(StateVector& psi, std::size_t segment) const {
    psi.array() *= free_[segment].array().conjugate();
  }
  // exp(i field weight dt mu). The phase factors depend only on the field
  // sample, so several states can share them.
  void kick(StateVector& psi, double field, double weight) const;
  void kick_phases(double field, double weight, SmallVector& phases) const;
  void apply_kick(StateVector& psi, const SmallVector& phases) const;
  void step(StateVector& psi, const TemporalField& drive, std::size_t k) const;
  // mu |psi>
  StateVector apply_dipole(const StateVector& psi) const { return dipole_ * psi; }
  void apply_dipole(const StateVector& psi, SmallVector& out) const;

 private:
  double dt_;
  Eigen::MatrixXd dipole_;
  Eigen::MatrixXd dipole_vectors_;  // columns: eigenvectors of mu
  Eigen::VectorXd dipole_values_;
  // Eigenvalue i equals -eigenvalue mirror_[i] (or is zero when mirror_[i] == i);
  // -1 when it has no partner. Saves sincos calls for symmetric spectra.
  std::vector<int> mirror_;
  std::vector<Kick> kicks_;
  std::vector<Eigen::VectorXcd> free_;
};

/// Populations at the edges of the propagation steps, plus the final state
/// (Schroedinger picture at t_end = t_max + dt/2).
struct Trajectory {
  std::vector<double> times;
  std::vector<std::vector<double>> populations;  // [time][level]
  StateVector final_state;
  double final_time = 0.0;
  double max_norm_drift = 0.0;
};

struct PropagationOptions {
  // Record populations every `record_stride` steps; 0 keeps only the final state.
  std::size_t record_stride = 0;
};

// Norm drift beyond which propagation is reported as failed.
inline constexpr double kNormFailureTolerance = 1e-6;

Trajectory propagate_exact(const LevelSystem& system, const TemporalField& drive, const StateVector& initial,
                           const PropagationOptions& options = {});

/// Final Schroedinger-picture state only.
StateVector propagate_final(const LevelSystem& system, const TemporalField& drive, const StateVector& initial);

/// Perturbative (Dyson) components |psi^(k)> in the interaction picture.
///
/// Orders are accumulated step by step with the same drive samples as
/// propagate_exact: each step contributes the exact order-by-order expansion
/// of its kick, so sum_k orders[k] converges to the exact final state.
struct PerturbationStack {
  std::vector<StateVector> orders;  // at the final time
  double final_time = 0.0;
  // Optional traces: populations |<i|psi^(k)(t)>|^2 at recorded step edges.
  std::vector<double> times;
  std::vector<std::vector<std::vector<double>>> order_populations;  // [time][order][level]

  StateVector partial_sum(std::size_t k_max) const;
};

PerturbationStack propagate_dyson(const LevelSystem& system, const TemporalField& drive,
                                  const StateVector& initial, std::size_t k_max,
                                  const PropagationOptions& options = {});

/// Single-photon probability mu_{to,from}^2 A^2(w_{to,from}) with A linearly
/// interpolated on the grid.
double first_order_probability(const LevelSystem& system, const SpectralField& field, std::size_t from,
                               std::size_t to);

/// CSV with columns t, P_<label>... and, when given, the first-order
/// population of `first_order_level`.
void write_trajectory_csv(std::ostream& os, const LevelSystem& system, const Trajectory& trajectory,
                          const PerturbationStack* dyson = nullptr, std::size_t first_order_level = 0);

}  // namespace linabs
