#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <memory>
#include <span>
#include <vector>

namespace linabs {

/// Uniform angular-frequency grid w_j = omega_min + j*dw, j = 0..n-1, in
/// atomic units.
class FrequencyGrid {
 public:
  FrequencyGrid(double omega_min, double omega_max, std::size_t n_points);

  double omega_min() const { return omega_min_; }
  double omega_max() const { return omega_max_; }
  std::size_t size() const { return n_; }
  double spacing() const { return (omega_max_ - omega_min_) / static_cast<double>(n_ - 1); }
  double omega(std::size_t j) const { return omega_min_ + static_cast<double>(j) * spacing(); }
  bool contains(double omega) const { return omega >= omega_min_ && omega <= omega_max_; }
  // Fractional index of omega on the grid (no bounds check).
  double position(double omega) const { return (omega - omega_min_) / spacing(); }

  bool operator==(const FrequencyGrid&) const = default;

 private:
  double omega_min_;
  double omega_max_;
  std::size_t n_;
};

/// Uniform time samples t_k = t_min + k*dt, k = 0..n-1.
class TimeAxis {
 public:
  TimeAxis(double t_min, double t_max, std::size_t n_points);

  double t_min() const { return t_min_; }
  double t_max() const { return t_max_; }
  std::size_t size() const { return n_; }
  double step() const { return (t_max_ - t_min_) / static_cast<double>(n_ - 1); }
  double time(std::size_t k) const { return t_min_ + static_cast<double>(k) * step(); }

  bool operator==(const TimeAxis&) const = default;

 private:
  double t_min_;
  double t_max_;
  std::size_t n_;
};

/// Complex spectrum E(w) = A(w) exp(i phi(w)) sampled on a FrequencyGrid.
/// Amplitudes are non-negative; the phase is in radians.
class SpectralField {
 public:
  SpectralField(FrequencyGrid grid, std::vector<double> amplitude, std::vector<double> phase);

  const FrequencyGrid& grid() const { return grid_; }
  const std::vector<double>& amplitude() const { return amplitude_; }
  const std::vector<double>& phase() const { return phase_; }

  // Same amplitude, new phase.
  SpectralField with_phase(std::vector<double> phase) const;
  // Amplitude multiplied by a non-negative factor, phase kept.
  SpectralField scaled(double factor) const;
  // Linear interpolation of A(w); throws DomainError outside the grid.
  double amplitude_at(double omega) const;

 private:
  FrequencyGrid grid_;
  std::vector<double> amplitude_;
  std::vector<double> phase_;
};

/// Off-center nodes of the fourth-order propagation step sit at
/// t_k -+ kDriveNodeOffset * dt. With w1 = 1/(2 - 2^(1/3)) the offset is
/// (w1 - 1)/2.
inline constexpr double kDriveNodeOffset = 0.17560359597982877;

/// Real electric field e(t_k) on a TimeAxis.
///
/// Synthesized fields also carry the samples at the off-center integrator
/// nodes t_k -+ c*dt. Fields given only on the axis leave them empty and are
/// propagated with the second-order split step.
struct TemporalField {
  TimeAxis axis;
  std::vector<double> values;
  std::vector<double> before;  // e(t_k - c dt)
  std::vector<double> after;   // e(t_k + c dt)

  bool has_nodes() const { return !before.empty(); }
};

struct GaussianPulseSpec {
  double center_frequency;  // w0
  double fwhm_duration;     // intensity FWHM in time
  double peak_amplitude;    // A(w0)
};

/// Full width at half maximum of the power spectrum |E(w)|^2 of a
/// transform-limited Gaussian pulse with intensity FWHM `fwhm_duration`.
double gaussian_spectral_fwhm(double fwhm_duration);

SpectralField make_gaussian_tl_spectrum(const GaussianPulseSpec& spec, const FrequencyGrid& grid);

/// Evaluates e(t) = (1/pi) Re sum_j A_j exp(i(phi_j - w_j t)) dw.
///
/// The sum is exact quadrature of the frequency integral on the grid. When
/// the two grids are commensurate (2*pi/(dw*dt) is an integer) it is carried
/// out with a single FFT, otherwise by direct summation. A plan can be
/// reused for many spectra sharing the same grids.
class SpectralSynthesizer {
 public:
  SpectralSynthesizer(FrequencyGrid grid, TimeAxis axis);

  const FrequencyGrid& grid() const { return grid_; }
  const TimeAxis& axis() const { return axis_; }
  bool uses_fft() const { return fft_length_ != 0; }

  // Analytic signal z(t_k + shift) with e = Re z; `shift` moves every sample
  // time by the same amount.
  std::vector<std::complex<double>> analytic(std::span<const double> amplitude,
                                             std::span<const double> phase, double shift = 0.0) const;
  std::vector<double> synthesize(std::span<const double> amplitude,
                                 std::span<const double> phase, double shift = 0.0) const;
  // Samples on the axis and at both integrator nodes.
  TemporalField synthesize(const SpectralField& field) const;

  // Y_j = sum_k w_k exp(-i w_j (t_k + shift)); the transpose of synthesis
  // used by the chain rule from time-domain to spectral-phase gradients.
  std::vector<std::complex<double>> project(std::span<const double> time_weights, double shift = 0.0) const;

 private:
  struct FftPlan;

  std::vector<std::complex<double>> analytic_direct(std::span<const double> amplitude,
                                                    std::span<const double> phase, double shift) const;
  std::vector<std::complex<double>> project_direct(std::span<const double> weights, double shift) const;

  FrequencyGrid grid_;
  TimeAxis axis_;
  std::size_t fft_length_ = 0;
  std::shared_ptr<const FftPlan> plan_;
};

TemporalField synthesize_temporal(const SpectralField& field, double t_min, double t_max,
                                  std::size_t n_t);
/// Reference quadrature without any FFT acceleration.
TemporalField synthesize_temporal_direct(const SpectralField& field, double t_min, double t_max,
                                         std::size_t n_t);

/// Spectral pulse energy sum_j A_j^2 dw (phase does not enter).
double pulse_energy(const SpectralField& field);
/// sum_k e(t_k)^2 dt. For a window covering one period of the discrete
/// spectrum this equals pulse_energy / pi exactly.
double temporal_energy(const TemporalField& field);
inline constexpr double kParsevalFactor = 1.0 / 3.14159265358979323846;

/// No-noise sentinel for add_spectral_noise.
inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

/// Adds independent white Gaussian noise to amplitude and phase, each at the
/// given SNR relative to the array's own mean-square value. Negative noisy
/// amplitudes are clamped to zero.
SpectralField add_spectral_noise(const SpectralField& field, double snr_db, std::uint64_t seed);

/// Intensity FWHM of a pulse, from the squared envelope |z(t)|^2.
double intensity_fwhm(const TimeAxis& axis, std::span<const std::complex<double>> analytic);
/// Span between the first and last samples with |e| above `fraction` of max|e|.
double temporal_support(const TemporalField& field, double fraction);

/// Frequency and time grids that share one period: the time window is
/// exactly 2*pi/dw, so synthesis is a DFT and first-order transition
/// amplitudes are reproduced without quadrature error.
struct SimulationGrid {
  FrequencyGrid frequencies;
  TimeAxis times;
};

struct SimulationGridSpec {
  double center_frequency;       // w0, placed exactly on the grid
  double half_span;              // frequency grid covers w0 +- half_span
  double window;                 // target time window length
  std::size_t grid_alignment = 50;  // w0 / dw is a multiple of this
  double samples_per_cycle = 40.0;  // at the highest grid frequency
  std::size_t min_frequency_points = 2048;
};

SimulationGrid make_simulation_grid(const SimulationGridSpec& spec);

void write_spectral_csv(std::ostream& os, const SpectralField& field);
void write_temporal_csv(std::ostream& os, const TemporalField& field, std::size_t stride = 1);

}  // namespace linabs
