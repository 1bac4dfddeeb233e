#include "linabs/field.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <mutex>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include "linabs/errors.hpp"

namespace linabs {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kLn2 = std::numbers::ln2;

// Edge amplitude allowed by make_gaussian_tl_spectrum, relative to A(w0).
constexpr double kSpectrumTruncation = 1e-6;

// FFTW's planner is not re-entrant.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

bool is_five_smooth(std::size_t n) {
  for (std::size_t p : {2u, 3u, 5u}) {
    while (n % p == 0) n /= p;
  }
  return n == 1;
}

std::size_t next_five_smooth(std::size_t n) {
  while (!is_five_smooth(n)) ++n;
  return n;
}

}  // namespace

FrequencyGrid::FrequencyGrid(double omega_min, double omega_max, std::size_t n_points)
    : omega_min_(omega_min), omega_max_(omega_max), n_(n_points) {
  if (!(omega_min >= 0.0)) throw ConfigurationError("frequency grid: omega_min must be >= 0");
  if (!(omega_max > omega_min)) throw ConfigurationError("frequency grid: omega_max must exceed omega_min");
  if (n_points < 2) throw ConfigurationError("frequency grid: need at least 2 points");
}

TimeAxis::TimeAxis(double t_min, double t_max, std::size_t n_points)
    : t_min_(t_min), t_max_(t_max), n_(n_points) {
  if (n_points < 2) throw ConfigurationError("time axis: need at least 2 points");
  if (!(t_max > t_min)) throw ConfigurationError("time axis: t_max must exceed t_min");
}

SpectralField::SpectralField(FrequencyGrid grid, std::vector<double> amplitude,
                             std::vector<double> phase)
    : grid_(grid), amplitude_(std::move(amplitude)), phase_(std::move(phase)) {
  if (amplitude_.size() != grid_.size() || phase_.size() != grid_.size()) {
    throw ConfigurationError("spectral field: amplitude/phase length must match the grid");
  }
  for (double a : amplitude_) {
    if (!(a >= 0.0) || !std::isfinite(a)) {
      throw ConfigurationError("spectral field: amplitudes must be finite and non-negative");
    }
  }
  for (double p : phase_) {
    if (!std::isfinite(p)) throw ConfigurationError("spectral field: phase must be finite");
  }
}

SpectralField SpectralField::with_phase(std::vector<double> phase) const {
  return SpectralField(grid_, amplitude_, std::move(phase));
}

SpectralField SpectralField::scaled(double factor) const {
  if (!(factor >= 0.0)) throw DomainError("spectral field: scale factor must be non-negative");
  std::vector<double> a(amplitude_);
  for (double& v : a) v *= factor;
  return SpectralField(grid_, std::move(a), phase_);
}

double SpectralField::amplitude_at(double omega) const {
  if (!grid_.contains(omega)) {
    std::ostringstream msg;
    msg << "frequency " << omega << " outside grid [" << grid_.omega_min() << ", "
        << grid_.omega_max() << "]";
    throw DomainError(msg.str());
  }
  const double pos = grid_.position(omega);
  const auto lo = std::min(static_cast<std::size_t>(std::floor(pos)), grid_.size() - 2);
  const double frac = pos - static_cast<double>(lo);
  return (1.0 - frac) * amplitude_[lo] + frac * amplitude_[lo + 1];
}

double gaussian_spectral_fwhm(double fwhm_duration) { return 4.0 * kLn2 / fwhm_duration; }

SpectralField make_gaussian_tl_spectrum(const GaussianPulseSpec& spec, const FrequencyGrid& grid) {
  if (!(spec.fwhm_duration > 0.0) || !(spec.center_frequency > 0.0) || !(spec.peak_amplitude >= 0.0)) {
    throw ConfigurationError("gaussian pulse: need fwhm > 0, w0 > 0 and A0 >= 0");
  }
  if (!grid.contains(spec.center_frequency)) {
    throw ConfigurationError("gaussian pulse: center frequency outside the grid");
  }
  // Field envelope exp(-2 ln2 t^2/tau^2) <-> spectrum exp(-(w-w0)^2 tau^2/(8 ln2)).
  const double a = spec.fwhm_duration * spec.fwhm_duration / (8.0 * kLn2);
  auto shape = [&](double w) { return std::exp(-(w - spec.center_frequency) * (w - spec.center_frequency) * a); };
  if (shape(grid.omega_min()) > kSpectrumTruncation || shape(grid.omega_max()) > kSpectrumTruncation) {
    throw ConfigurationError("gaussian pulse: frequency grid too narrow to contain the spectrum");
  }
  std::vector<double> amplitude(grid.size());
  for (std::size_t j = 0; j < grid.size(); ++j) amplitude[j] = spec.peak_amplitude * shape(grid.omega(j));
  return SpectralField(grid, std::move(amplitude), std::vector<double>(grid.size(), 0.0));
}

// ---------------------------------------------------------------------------
// Synthesis

struct SpectralSynthesizer::FftPlan {
  std::size_t length = 0;
  fftw_plan plan = nullptr;
  std::vector<std::complex<double>> time_twiddle;  // exp(-i w_min t_k)
  std::vector<std::complex<double>> freq_twiddle;  // exp(-i j dw t_0)

  ~FftPlan() {
    if (plan) {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(plan);
    }
  }

  // In-place forward transform of an fftw_malloc'ed buffer.
  void execute(fftw_complex* buffer) const { fftw_execute_dft(plan, buffer, buffer); }
};

namespace {

struct FftwBuffer {
  explicit FftwBuffer(std::size_t n)
      : data(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n))), size(n) {
    std::fill_n(reinterpret_cast<double*>(data), 2 * n, 0.0);
  }
  ~FftwBuffer() { fftw_free(data); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;

  std::complex<double>& operator[](std::size_t i) { return reinterpret_cast<std::complex<double>*>(data)[i]; }

  fftw_complex* data;
  std::size_t size;
};

}  // namespace

SpectralSynthesizer::SpectralSynthesizer(FrequencyGrid grid, TimeAxis axis)
    : grid_(grid), axis_(axis) {
  const double ratio = 2.0 * kPi / (grid_.spacing() * axis_.step());
  const double rounded = std::round(ratio);
  if (rounded < 2.0) return;
  // The DFT kernel replaces exp(-i j dw k dt); accept it only while the
  // accumulated phase error over the whole grid stays negligible.
  const double rel = std::abs(ratio - rounded) / rounded;
  const double max_phase_error = 2.0 * kPi * rel * static_cast<double>(grid_.size()) *
                                 static_cast<double>(axis_.size()) / rounded;
  if (max_phase_error > 1e-9) return;

  auto plan = std::make_shared<FftPlan>();
  plan->length = static_cast<std::size_t>(rounded);
  {
    FftwBuffer scratch(plan->length);
    std::lock_guard lock(fftw_planner_mutex());
    plan->plan = fftw_plan_dft_1d(static_cast<int>(plan->length), scratch.data, scratch.data,
                                  FFTW_FORWARD, FFTW_ESTIMATE);
  }
  if (!plan->plan) return;
  plan->time_twiddle.resize(axis_.size());
  for (std::size_t k = 0; k < axis_.size(); ++k) {
    plan->time_twiddle[k] = std::polar(1.0, -grid_.omega_min() * axis_.time(k));
  }
  plan->freq_twiddle.resize(grid_.size());
  const double dw = grid_.spacing();
  for (std::size_t j = 0; j < grid_.size(); ++j) {
    plan->freq_twiddle[j] = std::polar(1.0, -static_cast<double>(j) * dw * axis_.t_min());
  }
  fft_length_ = plan->length;
  plan_ = std::move(plan);
}

std::vector<std::complex<double>> SpectralSynthesizer::analytic(std::span<const double> amplitude,
                                                                std::span<const double> phase,
                                                                double shift) const {
  if (amplitude.size() != grid_.size() || phase.size() != grid_.size()) {
    throw DomainError("synthesis: spectrum length does not match the frequency grid");
  }
  if (!plan_) return analytic_direct(amplitude, phase, shift);

  // exp(-i w_j (t_k + s)) = exp(-i w_min (t_k + s)) exp(-i j dw (t_0 + s)) exp(-2 pi i j k / L)
  const std::size_t len = plan_->length;
  const double dw = grid_.spacing();
  FftwBuffer buffer(len);
  for (std::size_t j = 0; j < grid_.size(); ++j) {
    if (amplitude[j] == 0.0) continue;
    std::complex<double> c = std::polar(amplitude[j], phase[j]) * plan_->freq_twiddle[j];
    if (shift != 0.0) c *= std::polar(1.0, -static_cast<double>(j) * dw * shift);
    buffer[j % len] += c;
  }
  plan_->execute(buffer.data);
  const std::complex<double> scale = grid_.spacing() / kPi * std::polar(1.0, -grid_.omega_min() * shift);
  std::vector<std::complex<double>> z(axis_.size());
  for (std::size_t k = 0; k < axis_.size(); ++k) {
    z[k] = scale * plan_->time_twiddle[k] * buffer[k % len];
  }
  return z;
}

std::vector<std::complex<double>> SpectralSynthesizer::analytic_direct(
    std::span<const double> amplitude, std::span<const double> phase, double shift) const {
  const double scale = grid_.spacing() / kPi;
  std::vector<std::complex<double>> z(axis_.size());
  for (std::size_t k = 0; k < axis_.size(); ++k) {
    const double t = axis_.time(k) + shift;
    std::complex<double> acc = 0.0;
    for (std::size_t j = 0; j < grid_.size(); ++j) {
      if (amplitude[j] == 0.0) continue;
      acc += std::polar(amplitude[j], phase[j] - grid_.omega(j) * t);
    }
    z[k] = scale * acc;
  }
  return z;
}

std::vector<double> SpectralSynthesizer::synthesize(std::span<const double> amplitude,
                                                    std::span<const double> phase, double shift) const {
  const auto z = analytic(amplitude, phase, shift);
  std::vector<double> e(z.size());
  std::transform(z.begin(), z.end(), e.begin(), [](const auto& c) { return c.real(); });
  return e;
}

TemporalField SpectralSynthesizer::synthesize(const SpectralField& field) const {
  if (!(field.grid() == grid_)) throw DomainError("synthesis: field grid differs from the plan grid");
  const double c = kDriveNodeOffset * axis_.step();
  return TemporalField{axis_, synthesize(field.amplitude(), field.phase()),
                       synthesize(field.amplitude(), field.phase(), -c),
                       synthesize(field.amplitude(), field.phase(), c)};
}

std::vector<std::complex<double>> SpectralSynthesizer::project(std::span<const double> weights, double shift) const {
  if (weights.size() != axis_.size()) throw DomainError("projection: weights do not match the time axis");
  if (!plan_) return project_direct(weights, shift);

  const std::size_t len = plan_->length;
  const double dw = grid_.spacing();
  FftwBuffer buffer(len);
  for (std::size_t k = 0; k < axis_.size(); ++k) {
    buffer[k % len] += weights[k] * plan_->time_twiddle[k];
  }
  plan_->execute(buffer.data);
  const std::complex<double> common = std::polar(1.0, -grid_.omega_min() * shift);
  std::vector<std::complex<double>> y(grid_.size());
  for (std::size_t j = 0; j < grid_.size(); ++j) {
    std::complex<double> f = common * plan_->freq_twiddle[j];
    if (shift != 0.0) f *= std::polar(1.0, -static_cast<double>(j) * dw * shift);
    y[j] = f * buffer[j % len];
  }
  return y;
}

std::vector<std::complex<double>> SpectralSynthesizer::project_direct(std::span<const double> weights,
                                                                      double shift) const {
  std::vector<std::complex<double>> y(grid_.size());
  for (std::size_t j = 0; j < grid_.size(); ++j) {
    const double w = grid_.omega(j);
    std::complex<double> acc = 0.0;
    for (std::size_t k = 0; k < axis_.size(); ++k) acc += std::polar(weights[k], -w * (axis_.time(k) + shift));
    y[j] = acc;
  }
  return y;
}

TemporalField synthesize_temporal(const SpectralField& field, double t_min, double t_max, std::size_t n_t) {
  return SpectralSynthesizer(field.grid(), TimeAxis(t_min, t_max, n_t)).synthesize(field);
}

TemporalField synthesize_temporal_direct(const SpectralField& field, double t_min, double t_max,
                                         std::size_t n_t) {
  TimeAxis axis(t_min, t_max, n_t);
  const FrequencyGrid& grid = field.grid();
  const double scale = grid.spacing() / kPi;
  auto sample = [&](double shift) {
    std::vector<double> values(n_t);
    for (std::size_t k = 0; k < n_t; ++k) {
      const double t = axis.time(k) + shift;
      double acc = 0.0;
      for (std::size_t j = 0; j < grid.size(); ++j) {
        acc += field.amplitude()[j] * std::cos(field.phase()[j] - grid.omega(j) * t);
      }
      values[k] = scale * acc;
    }
    return values;
  };
  const double c = kDriveNodeOffset * axis.step();
  return TemporalField{axis, sample(0.0), sample(-c), sample(c)};
}

double pulse_energy(const SpectralField& field) {
  double acc = 0.0;
  for (double a : field.amplitude()) acc += a * a;
  return acc * field.grid().spacing();
}

double temporal_energy(const TemporalField& field) {
  double acc = 0.0;
  for (double e : field.values) acc += e * e;
  return acc * field.axis.step();
}

SpectralField add_spectral_noise(const SpectralField& field, double snr_db, std::uint64_t seed) {
  if (std::isinf(snr_db) && snr_db > 0.0) return field;
  if (!std::isfinite(snr_db)) throw DomainError("noise: SNR must be finite or +inf");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto noise_sigma = [snr_db](const std::vector<double>& x) {
    double power = 0.0;
    for (double v : x) power += v * v;
    power /= static_cast<double>(x.size());
    return std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  };

  std::vector<double> amplitude(field.amplitude());
  std::vector<double> phase(field.phase());
  const double sigma_a = noise_sigma(amplitude);
  const double sigma_p = noise_sigma(phase);
  for (double& a : amplitude) a = std::max(0.0, a + sigma_a * normal(rng));
  for (double& p : phase) p += sigma_p * normal(rng);
  return SpectralField(field.grid(), std::move(amplitude), std::move(phase));
}

double intensity_fwhm(const TimeAxis& axis, std::span<const std::complex<double>> analytic) {
  if (analytic.size() != axis.size()) throw DomainError("fwhm: sample count mismatch");
  std::vector<double> intensity(analytic.size());
  std::transform(analytic.begin(), analytic.end(), intensity.begin(), [](const auto& z) { return std::norm(z); });
  const auto peak = static_cast<std::size_t>(std::distance(
      intensity.begin(), std::max_element(intensity.begin(), intensity.end())));
  const double half = 0.5 * intensity[peak];
  if (!(half > 0.0)) throw DomainError("fwhm: pulse is identically zero");

  std::size_t lo = peak;
  while (lo > 0 && intensity[lo] >= half) --lo;
  std::size_t hi = peak;
  while (hi + 1 < intensity.size() && intensity[hi] >= half) ++hi;
  if (intensity[lo] >= half || intensity[hi] >= half) throw DomainError("fwhm: pulse not contained in window");

  auto crossing = [&](std::size_t below, std::size_t above) {
    const double f = (half - intensity[below]) / (intensity[above] - intensity[below]);
    return axis.time(below) + f * (axis.time(above) - axis.time(below));
  };
  return crossing(hi, hi - 1) - crossing(lo, lo + 1);
}

double temporal_support(const TemporalField& field, double fraction) {
  double peak = 0.0;
  for (double e : field.values) peak = std::max(peak, std::abs(e));
  if (peak == 0.0) return 0.0;
  const double threshold = fraction * peak;
  std::size_t first = field.values.size();
  std::size_t last = 0;
  for (std::size_t k = 0; k < field.values.size(); ++k) {
    if (std::abs(field.values[k]) > threshold) {
      first = std::min(first, k);
      last = k;
    }
  }
  return static_cast<double>(last - first) * field.axis.step();
}

SimulationGrid make_simulation_grid(const SimulationGridSpec& spec) {
  if (!(spec.center_frequency > 0.0) || !(spec.half_span > 0.0) || !(spec.window > 0.0) ||
      spec.grid_alignment == 0 || !(spec.samples_per_cycle >= 2.0)) {
    throw ConfigurationError("simulation grid: invalid specification");
  }
  const double w0 = spec.center_frequency;
  const auto align = static_cast<double>(spec.grid_alignment);
  // w0 = n0 * dw with n0 a multiple of the alignment, dw ~ 2 pi / window.
  const double n0 = std::max(align, std::round(w0 * spec.window / (2.0 * kPi) / align) * align);
  const double dw = w0 / n0;
  const double period = 2.0 * kPi / dw;

  auto half_bins = static_cast<std::size_t>(std::ceil(spec.half_span / dw));
  half_bins = std::max(half_bins, (spec.min_frequency_points + 1) / 2);
  const auto center = static_cast<std::size_t>(n0);
  const std::size_t j_min = center > half_bins ? center - half_bins : 0;
  const std::size_t j_max = center + half_bins;

  const double omega_max = static_cast<double>(j_max) * dw;
  const double dt_max = 2.0 * kPi / omega_max / spec.samples_per_cycle;
  auto n_t = static_cast<std::size_t>(std::ceil(period / dt_max));
  n_t = next_five_smooth(std::max(n_t, 2 * j_max + 2));
  const double dt = period / static_cast<double>(n_t);

  return SimulationGrid{
      FrequencyGrid(static_cast<double>(j_min) * dw, omega_max, j_max - j_min + 1),
      TimeAxis(-0.5 * period + 0.5 * dt, 0.5 * period - 0.5 * dt, n_t),
  };
}

void write_spectral_csv(std::ostream& os, const SpectralField& field) {
  os << "omega,amplitude,phase\n" << std::setprecision(17);
  for (std::size_t j = 0; j < field.grid().size(); ++j) {
    os << field.grid().omega(j) << ',' << field.amplitude()[j] << ',' << field.phase()[j] << '\n';
  }
}

void write_temporal_csv(std::ostream& os, const TemporalField& field, std::size_t stride) {
  stride = std::max<std::size_t>(stride, 1);
  os << "t,e\n" << std::setprecision(17);
  for (std::size_t k = 0; k < field.values.size(); k += stride) {
    os << field.axis.time(k) << ',' << field.values[k] << '\n';
  }
}

}  // namespace linabs
