#include "linabs/quantum.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "linabs/errors.hpp"

namespace linabs {

namespace {

constexpr std::complex<double> kI{0.0, 1.0};

double norm_drift(const StateVector& psi) { return std::abs(psi.squaredNorm() - 1.0); }

void check_norm(const StateVector& psi, double t) {
  const double drift = norm_drift(psi);
  if (!(drift <= kNormFailureTolerance)) {
    std::ostringstream msg;
    msg << "propagation lost unitarity: |norm^2 - 1| = " << drift << " at t = " << t;
    throw IntegrationError(msg.str());
  }
}

}  // namespace

LevelSystem::LevelSystem(std::vector<double> energies, Eigen::MatrixXd dipole, std::vector<std::string> labels)
    : energies_(std::move(energies)), dipole_(std::move(dipole)), labels_(std::move(labels)) {
  const auto n = static_cast<Eigen::Index>(energies_.size());
  if (n < 2) throw ConfigurationError("level system: need at least two levels");
  if (n > kMaxLevels) throw ConfigurationError("level system: at most 16 levels are supported");
  if (dipole_.rows() != n || dipole_.cols() != n) throw ConfigurationError("level system: dipole must be N x N");
  if (!std::is_sorted(energies_.begin(), energies_.end())) {
    throw ConfigurationError("level system: energies must be non-decreasing");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (dipole_(i, i) != 0.0) throw ConfigurationError("level system: dipole diagonal must vanish");
    for (Eigen::Index j = 0; j < i; ++j) {
      if (dipole_(i, j) != dipole_(j, i)) throw ConfigurationError("level system: dipole must be symmetric");
    }
  }
  if (labels_.empty()) {
    for (Eigen::Index i = 0; i < n; ++i) labels_.push_back(std::to_string(i));
  }
  if (labels_.size() != energies_.size()) throw ConfigurationError("level system: one label per level");
}

std::size_t LevelSystem::index_of(const std::string& label) const {
  const auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) throw DomainError("unknown level '" + label + "'");
  return static_cast<std::size_t>(it - labels_.begin());
}

double LevelSystem::transition_frequency(std::size_t from, std::size_t to) const {
  if (from >= size() || to >= size()) throw DomainError("level index out of range");
  return energies_[to] - energies_[from];
}

LevelSystem make_lambda_system(double omega0, double s_ratio, double mu_gf, double mu_sf) {
  if (!(omega0 > 0.0) || !(s_ratio > 0.0 && s_ratio < 1.0)) {
    throw ConfigurationError("lambda system: need w0 > 0 and 0 < E_s/w0 < 1");
  }
  Eigen::MatrixXd mu = Eigen::MatrixXd::Zero(3, 3);
  mu(lambda_levels::g, lambda_levels::f) = mu(lambda_levels::f, lambda_levels::g) = mu_gf;
  mu(lambda_levels::s, lambda_levels::f) = mu(lambda_levels::f, lambda_levels::s) = mu_sf;
  return LevelSystem({0.0, s_ratio * omega0, omega0}, mu, {"g", "s", "f"});
}

StateVector basis_state(std::size_t n, std::size_t index) {
  if (index >= n) throw DomainError("basis state index out of range");
  StateVector v = StateVector::Zero(static_cast<Eigen::Index>(n));
  v(static_cast<Eigen::Index>(index)) = 1.0;
  return v;
}

std::vector<double> populations(const StateVector& state) {
  std::vector<double> p(static_cast<std::size_t>(state.size()));
  for (Eigen::Index i = 0; i < state.size(); ++i) p[static_cast<std::size_t>(i)] = std::norm(state(i));
  return p;
}

StateVector to_interaction_picture(const LevelSystem& system, const StateVector& state, double t) {
  StateVector out = state;
  for (Eigen::Index i = 0; i < out.size(); ++i) out(i) *= std::polar(1.0, system.energies()[static_cast<std::size_t>(i)] * t);
  return out;
}

// ---------------------------------------------------------------------------

SplitStepper::SplitStepper(const LevelSystem& system, double dt, bool fourth_order)
    : dt_(dt), dipole_(system.dipole()) {
  if (!(dt > 0.0)) throw ConfigurationError("split stepper: dt must be positive");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(dipole_);
  dipole_vectors_ = eig.eigenvectors();
  dipole_values_ = eig.eigenvalues();
  const double scale = std::max(1.0, dipole_values_.cwiseAbs().maxCoeff());
  mirror_.assign(static_cast<std::size_t>(dipole_values_.size()), -1);
  for (Eigen::Index i = 0; i < dipole_values_.size(); ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      if (std::abs(dipole_values_(i) + dipole_values_(j)) <= 1e-15 * scale) {
        mirror_[static_cast<std::size_t>(i)] = static_cast<int>(j);
        break;
      }
    }
  }

  std::vector<double> segments;
  if (fourth_order) {
    const double w1 = 1.0 + 2.0 * kDriveNodeOffset;
    const double w0 = 1.0 - 2.0 * w1;
    kicks_ = {{DriveNode::after, w1}, {DriveNode::center, w0}, {DriveNode::before, w1}};
    segments = {0.5 * w1, 0.5 * (w1 + w0), 0.5 * (w0 + w1), 0.5 * w1};
  } else {
    kicks_ = {{DriveNode::center, 1.0}};
    segments = {0.5, 0.5};
  }
  for (double a : segments) {
    Eigen::VectorXcd f(static_cast<Eigen::Index>(system.size()));
    for (std::size_t i = 0; i < system.size(); ++i) {
      f(static_cast<Eigen::Index>(i)) = std::polar(1.0, -a * dt * system.energies()[i]);
    }
    free_.push_back(std::move(f));
  }
}

SplitStepper SplitStepper::for_drive(const LevelSystem& system, const TemporalField& drive) {
  const std::size_t n = drive.values.size();
  if (n != drive.axis.size()) throw DomainError("drive: sample count does not match its time axis");
  if (drive.has_nodes() && (drive.before.size() != n || drive.after.size() != n)) {
    throw DomainError("drive: node samples do not match the time axis");
  }
  return SplitStepper(system, drive.axis.step(), drive.has_nodes());
}

double SplitStepper::node_offset(DriveNode node) {
  switch (node) {
    case DriveNode::before: return -kDriveNodeOffset;
    case DriveNode::after: return kDriveNodeOffset;
    case DriveNode::center: break;
  }
  return 0.0;
}

double SplitStepper::node_value(const TemporalField& drive, DriveNode node, std::size_t k) {
  switch (node) {
    case DriveNode::before: return drive.before[k];
    case DriveNode::after: return drive.after[k];
    case DriveNode::center: break;
  }
  return drive.values[k];
}

void SplitStepper::kick_phases(double field, double weight, SmallVector& phases) const {
  const Eigen::Index n = dipole_values_.size();
  phases.resize(n);
  const double angle = field * weight * dt_;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int m = mirror_[static_cast<std::size_t>(i)];
    if (m == i) {
      phases(i) = 1.0;
    } else if (m >= 0) {
      phases(i) = std::conj(phases(m));
    } else {
      phases(i) = std::polar(1.0, angle * dipole_values_(i));
    }
  }
}

// The matrices here are tiny (N <= 16, usually 3); plain loops avoid the
// per-call overhead of Eigen's dynamic-size products in the hot path, and
// the three-level case gets fully unrolled.
namespace {

template <int N>
void rotate_kick(const double* w, std::complex<double>* p, const std::complex<double>* phases, Eigen::Index n_rt) {
  const Eigen::Index n = N > 0 ? N : n_rt;
  double yr[kMaxLevels];
  double yi[kMaxLevels];
  for (Eigen::Index i = 0; i < n; ++i) {
    double ar = 0.0;
    double ai = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      ar += w[i * n + j] * p[j].real();
      ai += w[i * n + j] * p[j].imag();
    }
    const double c = phases[i].real();
    const double s = phases[i].imag();
    yr[i] = ar * c - ai * s;
    yi[i] = ar * s + ai * c;
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    double ar = 0.0;
    double ai = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      ar += w[i * n + j] * yr[i];
      ai += w[i * n + j] * yi[i];
    }
    p[j] = {ar, ai};
  }
}

}  // namespace

void SplitStepper::apply_kick(StateVector& psi, const SmallVector& phases) const {
  if (psi.size() == 3) {
    rotate_kick<3>(dipole_vectors_.data(), psi.data(), phases.data(), 3);
  } else {
    rotate_kick<0>(dipole_vectors_.data(), psi.data(), phases.data(), psi.size());
  }
}

void SplitStepper::apply_dipole(const StateVector& psi, SmallVector& out) const {
  const Eigen::Index n = psi.size();
  out.resize(n);
  const double* m = dipole_.data();
  for (Eigen::Index j = 0; j < n; ++j) out(j) = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) out(j) += m[i * n + j] * psi(i);
  }
}

void SplitStepper::kick(StateVector& psi, double field, double weight) const {
  SmallVector phases;
  kick_phases(field, weight, phases);
  apply_kick(psi, phases);
}

void SplitStepper::step(StateVector& psi, const TemporalField& drive, std::size_t k) const {
  for (std::size_t i = 0; i < kicks_.size(); ++i) {
    free(psi, i);
    kick(psi, node_value(drive, kicks_[i].node, k), kicks_[i].weight);
  }
  free(psi, kicks_.size());
}

// ---------------------------------------------------------------------------

Trajectory propagate_exact(const LevelSystem& system, const TemporalField& drive, const StateVector& initial,
                           const PropagationOptions& options) {
  if (static_cast<std::size_t>(initial.size()) != system.size()) {
    throw DomainError("propagation: initial state dimension mismatch");
  }
  if (norm_drift(initial) > 1e-10) throw DomainError("propagation: initial state must be normalized");
  const SplitStepper stepper = SplitStepper::for_drive(system, drive);
  const double dt = drive.axis.step();
  const double t_start = drive.axis.t_min() - 0.5 * dt;

  Trajectory out;
  StateVector psi = initial;
  auto record = [&](std::size_t edge) {
    const double t = t_start + static_cast<double>(edge) * dt;
    out.times.push_back(t);
    out.populations.push_back(populations(psi));
    out.max_norm_drift = std::max(out.max_norm_drift, norm_drift(psi));
    check_norm(psi, t);
  };

  const std::size_t n = drive.values.size();
  if (options.record_stride > 0) record(0);
  for (std::size_t k = 0; k < n; ++k) {
    stepper.step(psi, drive, k);
    if (options.record_stride > 0 && ((k + 1) % options.record_stride == 0 || k + 1 == n)) record(k + 1);
  }
  out.final_time = t_start + static_cast<double>(n) * dt;
  out.max_norm_drift = std::max(out.max_norm_drift, norm_drift(psi));
  check_norm(psi, out.final_time);
  out.final_state = std::move(psi);
  return out;
}

StateVector propagate_final(const LevelSystem& system, const TemporalField& drive, const StateVector& initial) {
  return propagate_exact(system, drive, initial).final_state;
}

StateVector PerturbationStack::partial_sum(std::size_t k_max) const {
  StateVector sum = StateVector::Zero(orders.front().size());
  for (std::size_t k = 0; k <= std::min(k_max, orders.size() - 1); ++k) sum += orders[k];
  return sum;
}

PerturbationStack propagate_dyson(const LevelSystem& system, const TemporalField& drive,
                                  const StateVector& initial, std::size_t k_max,
                                  const PropagationOptions& options) {
  if (k_max < 1) throw DomainError("dyson: k_max must be at least 1");
  if (static_cast<std::size_t>(initial.size()) != system.size()) {
    throw DomainError("dyson: initial state dimension mismatch");
  }
  const SplitStepper stepper = SplitStepper::for_drive(system, drive);
  const auto n_levels = static_cast<Eigen::Index>(system.size());
  const double dt = drive.axis.step();
  const double t_start = drive.axis.t_min() - 0.5 * dt;
  const Eigen::MatrixXcd mu = system.dipole().cast<std::complex<double>>();

  std::vector<double> inv_factorial(k_max + 1, 1.0);
  for (std::size_t m = 1; m <= k_max; ++m) inv_factorial[m] = inv_factorial[m - 1] / static_cast<double>(m);

  PerturbationStack out;
  out.orders.assign(k_max + 1, StateVector::Zero(n_levels));
  out.orders[0] = to_interaction_picture(system, initial, t_start);

  auto record = [&](std::size_t edge) {
    out.times.push_back(t_start + static_cast<double>(edge) * dt);
    std::vector<std::vector<double>> pops;
    pops.reserve(out.orders.size());
    for (const auto& v : out.orders) pops.push_back(populations(v));
    out.order_populations.push_back(std::move(pops));
  };

  std::vector<SmallVector> rotated(k_max + 1, SmallVector(n_levels));
  std::vector<SmallVector> update(k_max + 1, SmallVector(n_levels));
  SmallVector phase(n_levels);
  SmallVector power(n_levels);

  // In the interaction picture a kick of weight h at time tau is
  // exp(i e h mu_I(tau)) = sum_m (i e h)^m / m! mu_I(tau)^m, and
  // mu_I(tau)^m = D mu^m D^dagger with D = exp(i H0 tau). Order q collects
  // the m-th term applied to order q - m.
  const std::size_t n = drive.values.size();
  if (options.record_stride > 0) record(0);
  for (std::size_t k = 0; k < n; ++k) {
    for (const auto& kick : stepper.kicks()) {
      const double field = SplitStepper::node_value(drive, kick.node, k);
      if (field == 0.0) continue;
      const double tau = drive.axis.time(k) + SplitStepper::node_offset(kick.node) * dt;
      for (Eigen::Index i = 0; i < n_levels; ++i) {
        phase(i) = std::polar(1.0, system.energies()[static_cast<std::size_t>(i)] * tau);
      }
      for (std::size_t p = 0; p < k_max; ++p) rotated[p] = phase.conjugate().cwiseProduct(out.orders[p]);
      for (auto& u : update) u.setZero();
      const std::complex<double> ieh = kI * field * kick.weight * dt;
      for (std::size_t p = 0; p < k_max; ++p) {
        if (rotated[p].isZero(0.0)) continue;
        power = rotated[p];
        std::complex<double> coeff = 1.0;
        for (std::size_t m = 1; p + m <= k_max; ++m) {
          power = (mu * power).eval();
          coeff *= ieh;
          update[p + m] += (coeff * inv_factorial[m]) * power;
        }
      }
      for (std::size_t q = 1; q <= k_max; ++q) out.orders[q] += phase.cwiseProduct(update[q]);
    }
    if (options.record_stride > 0 && ((k + 1) % options.record_stride == 0 || k + 1 == n)) record(k + 1);
  }
  out.final_time = t_start + static_cast<double>(n) * dt;
  return out;
}

double first_order_probability(const LevelSystem& system, const SpectralField& field, std::size_t from,
                               std::size_t to) {
  const double w = system.transition_frequency(from, to);
  if (!(w > 0.0)) throw DomainError("first-order probability: 'to' must lie above 'from'");
  const double mu = system.dipole()(static_cast<Eigen::Index>(to), static_cast<Eigen::Index>(from));
  const double a = field.amplitude_at(w);
  return mu * mu * a * a;
}

void write_trajectory_csv(std::ostream& os, const LevelSystem& system, const Trajectory& trajectory,
                          const PerturbationStack* dyson, std::size_t first_order_level) {
  if (dyson && dyson->times.size() != trajectory.times.size()) {
    throw DomainError("trajectory csv: exact and perturbative traces are recorded on different times");
  }
  os << 't';
  for (const auto& label : system.labels()) os << ",P_" << label;
  if (dyson) os << ",P1_" << system.labels()[first_order_level];
  os << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < trajectory.times.size(); ++i) {
    os << trajectory.times[i];
    for (double p : trajectory.populations[i]) os << ',' << p;
    if (dyson) os << ',' << dyson->order_populations[i][1][first_order_level];
    os << '\n';
  }
}

}  // namespace linabs
