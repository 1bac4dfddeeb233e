#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "linabs/field.hpp"
#include "linabs/quantum.hpp"

namespace linabs {

/// Derivatives g_l(w_j) = dP_l/dphi_j of final populations with respect to
/// the discrete spectral phase, one row per objective level.
struct GradientField {
  FrequencyGrid grid;
  std::vector<std::size_t> levels;
  std::vector<std::vector<double>> values;

  const std::vector<double>& of(std::size_t level) const;
};

/// dP_target/de(t_k) per unit time for the discrete propagator, from one
/// forward and one backward (adjoint) sweep. Multiplying by dt gives the
/// exact partial derivative with respect to the drive sample e_k.
std::vector<double> adjoint_time_gradient(const LevelSystem& system, const TemporalField& drive,
                                          const StateVector& initial, std::size_t target);

struct TimeGradients {
  StateVector final_state;
  std::vector<std::vector<double>> values;  // [target][k], at t_k
  // Node derivatives at t_k -+ c dt; empty for drives without node samples.
  std::vector<std::vector<double>> before;
  std::vector<std::vector<double>> after;
};

/// Same as adjoint_time_gradient for several targets sharing one forward
/// sweep. The backward sweep re-derives the forward states by running the
/// (unitary) steps in reverse.
///
/// Rows for `quadratures` follow the population rows: for a = <l|psi(T)>
/// they hold 2 Im(a* da/de) = 2 P_l d(arg a)/de, the derivative orthogonal
/// to the population one. A known `final_state` skips the forward sweep.
TimeGradients adjoint_time_gradients(const LevelSystem& system, const TemporalField& drive,
                                     const StateVector& initial, std::span<const std::size_t> targets,
                                     std::span<const std::size_t> quadratures = {},
                                     const StateVector* final_state = nullptr);

/// Chain rule through the synthesis formula:
/// g_j = sum_k d(t_k) dt * de_k/dphi_j, de_k/dphi_j = -(dw/pi) A_j sin(phi_j - w_j t_k).
std::vector<double> chain_to_spectral(std::span<const double> time_gradient, const SpectralSynthesizer& synthesizer,
                                      const SpectralField& field);
/// Same, summing the contributions of all integrator nodes of target `row`.
std::vector<double> chain_to_spectral(const TimeGradients& gradients, std::size_t row,
                                      const SpectralSynthesizer& synthesizer, const SpectralField& field);

/// Everything needed to evaluate final populations and their phase
/// gradients for spectral fields on one fixed frequency grid.
class ControlProblem {
 public:
  ControlProblem(LevelSystem system, FrequencyGrid grid, TimeAxis axis, std::optional<StateVector> initial = {});

  const LevelSystem& system() const { return system_; }
  const SpectralSynthesizer& synthesizer() const { return synthesizer_; }
  const FrequencyGrid& grid() const { return synthesizer_.grid(); }
  const TimeAxis& axis() const { return synthesizer_.axis(); }
  const StateVector& initial() const { return initial_; }

  TemporalField drive(const SpectralField& field) const;
  StateVector final_state(const SpectralField& field) const;
  std::vector<double> final_populations(const SpectralField& field) const;

  struct Evaluation {
    std::vector<double> populations;
    GradientField gradients;
  };
  // Gradient rows: populations of `targets`, then quadratures (see
  // adjoint_time_gradients). GradientField::levels lists only the targets.
  Evaluation evaluate(const SpectralField& field, std::span<const std::size_t> targets,
                      std::span<const std::size_t> quadratures = {},
                      const StateVector* final_state = nullptr) const;

 private:
  LevelSystem system_;
  SpectralSynthesizer synthesizer_;
  StateVector initial_;
};

enum class Stencil {
  central2,  // [P(phi_j + h) - P(phi_j - h)] / (2h)
  central4,  // Richardson combination of the central differences at h and 2h
};

/// Finite-difference oracle, two (central2) or four (central4) full
/// propagations per bin. Only `bins` are evaluated when given (others 0).
GradientField finite_difference_gradient(const ControlProblem& problem, const SpectralField& field,
                                         std::span<const std::size_t> targets, double h,
                                         std::optional<std::vector<std::size_t>> bins = std::nullopt,
                                         Stencil stencil = Stencil::central2);

// Oracle settings for gradient checks. Rounding over ~1e5 steps leaves P
// uncertain at the 1e-12 level, which a central2 step small enough to keep
// the h^2 error below 1e-4 turns into errors above 1e-10; the fourth-order
// stencil allows a step large enough to bury the rounding. Its h^4 error
// still shows on strongly shaped fields at h = 0.05 (9x the tolerance on the
// stage-1 pulse), hence the smaller step.
inline constexpr double kOracleStep = 0.02;
inline constexpr Stencil kOracleStencil = Stencil::central4;

void write_gradient_csv(std::ostream& os, const LevelSystem& system, const GradientField& gradients);

}  // namespace linabs
