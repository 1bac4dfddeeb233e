#include "linabs/gradient.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>

#include "linabs/errors.hpp"

namespace linabs {

const std::vector<double>& GradientField::of(std::size_t level) const {
  const auto it = std::find(levels.begin(), levels.end(), level);
  if (it == levels.end()) throw DomainError("gradient field: level not present");
  return values[static_cast<std::size_t>(it - levels.begin())];
}

TimeGradients adjoint_time_gradients(const LevelSystem& system, const TemporalField& drive,
                                     const StateVector& initial, std::span<const std::size_t> targets,
                                     std::span<const std::size_t> quadratures, const StateVector* final_state) {
  for (std::size_t t : targets) {
    if (t >= system.size()) throw DomainError("adjoint gradient: target level out of range");
  }
  for (std::size_t t : quadratures) {
    if (t >= system.size()) throw DomainError("adjoint gradient: quadrature level out of range");
  }
  const std::size_t rows = targets.size() + quadratures.size();
  const SplitStepper stepper = SplitStepper::for_drive(system, drive);
  const auto& kicks = stepper.kicks();
  const std::size_t n = drive.values.size();

  TimeGradients out;
  out.final_state = final_state ? *final_state : propagate_final(system, drive, initial);
  out.values.assign(rows, std::vector<double>(n, 0.0));
  if (drive.has_nodes()) {
    out.before.assign(rows, std::vector<double>(n, 0.0));
    out.after.assign(rows, std::vector<double>(n, 0.0));
  }
  auto slot = [&](std::size_t l, DriveNode node) -> std::vector<double>& {
    switch (node) {
      case DriveNode::before: return out.before[l];
      case DriveNode::after: return out.after[l];
      case DriveNode::center: break;
    }
    return out.values[l];
  };

  // The costate of P_l is chi_l(T) = a_l |l>, a_l = <l|psi(T)>, and
  // dP_l/de = 2 Re <chi_l|d psi(T)/de>; the kick derivative is i w dt mu.
  // For Im(a_l* da_l) the costate is i chi_l. Both only need U^dag |l>, so
  // one backward vector per distinct level is propagated and the rows are
  // recovered from z = <U^dag l|mu psi> with a complex factor.
  std::vector<std::size_t> distinct;
  std::vector<std::size_t> column(rows);
  std::vector<std::complex<double>> factor(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t level = r < targets.size() ? targets[r] : quadratures[r - targets.size()];
    auto it = std::find(distinct.begin(), distinct.end(), level);
    column[r] = static_cast<std::size_t>(it - distinct.begin());
    if (it == distinct.end()) distinct.push_back(level);
    const std::complex<double> a = std::conj(out.final_state(static_cast<Eigen::Index>(level)));
    // -2 w Im(a* z) for populations, -2 w Im(-i a* z) for quadratures
    factor[r] = r < targets.size() ? a : std::complex<double>(0.0, -1.0) * a;
  }

  StateVector psi = out.final_state;
  std::vector<StateVector> chi;
  for (std::size_t level : distinct) chi.push_back(basis_state(system.size(), level));

  SmallVector mu_psi(psi.size());
  SmallVector phases;
  std::vector<std::complex<double>> z(distinct.size());
  for (std::size_t k = n; k-- > 0;) {
    stepper.free_inverse(psi, kicks.size());
    for (auto& c : chi) stepper.free_inverse(c, kicks.size());
    for (std::size_t i = kicks.size(); i-- > 0;) {
      const double field = SplitStepper::node_value(drive, kicks[i].node, k);
      stepper.apply_dipole(psi, mu_psi);
      for (std::size_t c = 0; c < chi.size(); ++c) z[c] = chi[c].dot(mu_psi);
      for (std::size_t l = 0; l < rows; ++l) {
        // Per unit time: the partial derivative divided by dt.
        slot(l, kicks[i].node)[k] = -2.0 * kicks[i].weight * (factor[l] * z[column[l]]).imag();
      }
      stepper.kick_phases(-field, kicks[i].weight, phases);
      stepper.apply_kick(psi, phases);
      stepper.free_inverse(psi, i);
      for (auto& c : chi) {
        stepper.apply_kick(c, phases);
        stepper.free_inverse(c, i);
      }
    }
  }
  return out;
}

std::vector<double> adjoint_time_gradient(const LevelSystem& system, const TemporalField& drive,
                                          const StateVector& initial, std::size_t target) {
  const std::size_t targets[] = {target};
  return std::move(adjoint_time_gradients(system, drive, initial, targets).values.front());
}

namespace {

void accumulate_projection(std::span<const double> time_gradient, double shift,
                           const SpectralSynthesizer& synthesizer, std::vector<std::complex<double>>& sum) {
  if (time_gradient.size() != synthesizer.axis().size()) {
    throw DomainError("chain rule: time gradient does not match the synthesis time axis");
  }
  const double dt = synthesizer.axis().step();
  std::vector<double> weights(time_gradient.begin(), time_gradient.end());
  for (double& w : weights) w *= dt;
  const auto projected = synthesizer.project(weights, shift);
  if (sum.empty()) {
    sum = projected;
  } else {
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += projected[j];
  }
}

std::vector<double> finish_chain(const std::vector<std::complex<double>>& projected, const SpectralField& field) {
  const double scale = -field.grid().spacing() / std::numbers::pi;
  std::vector<double> g(field.grid().size(), 0.0);
  for (std::size_t j = 0; j < g.size(); ++j) {
    const double a = field.amplitude()[j];
    if (a == 0.0) continue;
    // sum_k w_k sin(phi_j - w_j t_k) = Im[exp(i phi_j) Y_j]
    g[j] = scale * a * (std::polar(1.0, field.phase()[j]) * projected[j]).imag();
  }
  return g;
}

}  // namespace

std::vector<double> chain_to_spectral(std::span<const double> time_gradient, const SpectralSynthesizer& synthesizer,
                                      const SpectralField& field) {
  if (!(field.grid() == synthesizer.grid())) throw DomainError("chain rule: field grid differs from synthesis grid");
  std::vector<std::complex<double>> projected;
  accumulate_projection(time_gradient, 0.0, synthesizer, projected);
  return finish_chain(projected, field);
}

std::vector<double> chain_to_spectral(const TimeGradients& gradients, std::size_t row,
                                      const SpectralSynthesizer& synthesizer, const SpectralField& field) {
  if (!(field.grid() == synthesizer.grid())) throw DomainError("chain rule: field grid differs from synthesis grid");
  if (row >= gradients.values.size()) throw DomainError("chain rule: gradient row out of range");
  std::vector<std::complex<double>> projected;
  accumulate_projection(gradients.values[row], 0.0, synthesizer, projected);
  if (!gradients.before.empty()) {
    const double shift = kDriveNodeOffset * synthesizer.axis().step();
    accumulate_projection(gradients.before[row], -shift, synthesizer, projected);
    accumulate_projection(gradients.after[row], shift, synthesizer, projected);
  }
  return finish_chain(projected, field);
}

ControlProblem::ControlProblem(LevelSystem system, FrequencyGrid grid, TimeAxis axis, std::optional<StateVector> initial)
    : system_(std::move(system)),
      synthesizer_(grid, axis),
      initial_(initial ? *initial : basis_state(system_.size(), 0)) {
  if (static_cast<std::size_t>(initial_.size()) != system_.size()) {
    throw ConfigurationError("control problem: initial state dimension mismatch");
  }
}

TemporalField ControlProblem::drive(const SpectralField& field) const { return synthesizer_.synthesize(field); }

StateVector ControlProblem::final_state(const SpectralField& field) const {
  return propagate_final(system_, drive(field), initial_);
}

std::vector<double> ControlProblem::final_populations(const SpectralField& field) const {
  return populations(final_state(field));
}

ControlProblem::Evaluation ControlProblem::evaluate(const SpectralField& field,
                                                    std::span<const std::size_t> targets,
                                                    std::span<const std::size_t> quadratures,
                                                    const StateVector* final_state) const {
  const TemporalField e = drive(field);
  TimeGradients tg = adjoint_time_gradients(system_, e, initial_, targets, quadratures, final_state);
  Evaluation out{populations(tg.final_state), GradientField{grid(), {targets.begin(), targets.end()}, {}}};
  for (std::size_t l = 0; l < tg.values.size(); ++l) {
    out.gradients.values.push_back(chain_to_spectral(tg, l, synthesizer_, field));
  }
  return out;
}

GradientField finite_difference_gradient(const ControlProblem& problem, const SpectralField& field,
                                         std::span<const std::size_t> targets, double h,
                                         std::optional<std::vector<std::size_t>> bins, Stencil stencil) {
  if (!(h > 0.0)) throw DomainError("finite differences: step must be positive");
  const std::size_t n = field.grid().size();
  if (!bins) {
    bins.emplace(n);
    for (std::size_t j = 0; j < n; ++j) (*bins)[j] = j;
  }
  GradientField out{field.grid(), {targets.begin(), targets.end()},
                    std::vector<std::vector<double>>(targets.size(), std::vector<double>(n, 0.0))};
  std::vector<double> phase = field.phase();
  for (std::size_t j : *bins) {
    if (j >= n) throw DomainError("finite differences: bin out of range");
    if (field.amplitude()[j] == 0.0) continue;
    const double original = phase[j];
    auto difference = [&](double step) {
      phase[j] = original + step;
      auto d = problem.final_populations(field.with_phase(phase));
      phase[j] = original - step;
      const auto minus = problem.final_populations(field.with_phase(phase));
      for (std::size_t l = 0; l < d.size(); ++l) d[l] = (d[l] - minus[l]) / (2.0 * step);
      return d;
    };
    const auto d1 = difference(h);
    std::vector<double> d2;
    if (stencil == Stencil::central4) d2 = difference(2.0 * h);
    phase[j] = original;
    for (std::size_t l = 0; l < targets.size(); ++l) {
      const double a = d1[targets[l]];
      // Richardson: (4 D(h) - D(2h)) / 3 cancels the h^2 term
      out.values[l][j] = stencil == Stencil::central4 ? (4.0 * a - d2[targets[l]]) / 3.0 : a;
    }
  }
  return out;
}

void write_gradient_csv(std::ostream& os, const LevelSystem& system, const GradientField& gradients) {
  os << "omega";
  for (std::size_t l : gradients.levels) os << ",g_" << system.labels()[l];
  os << '\n' << std::setprecision(17);
  for (std::size_t j = 0; j < gradients.grid.size(); ++j) {
    os << gradients.grid.omega(j);
    for (const auto& row : gradients.values) os << ',' << row[j];
    os << '\n';
  }
}

}  // namespace linabs
