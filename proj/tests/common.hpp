#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "linabs/field.hpp"
#include "linabs/gradient.hpp"
#include "linabs/quantum.hpp"
#include "linabs/units.hpp"

namespace testing {

inline double omega0() { return linabs::units::wavenumber_to_hartree(12500.0); }
inline double tau() { return linabs::units::fs_to_atomic(30.0); }

inline linabs::SimulationGrid paper_grid(double samples_per_cycle = 40.0) {
  return linabs::make_simulation_grid({omega0(), 6.0 * linabs::gaussian_spectral_fwhm(tau()),
                                       linabs::units::fs_to_atomic(12000.0), 50, samples_per_cycle, 2048});
}

inline linabs::LevelSystem paper_system() { return linabs::make_lambda_system(omega0(), 0.02, 1.0, 1.0); }

// TL spectrum with A^2(w0) = energy.
inline linabs::SpectralField tl(const linabs::FrequencyGrid& grid, double energy) {
  return linabs::make_gaussian_tl_spectrum({omega0(), tau(), std::sqrt(energy)}, grid);
}

inline std::vector<double> random_phase(std::size_t n, unsigned seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> p(n);
  for (auto& x : p) x = u(rng);
  return p;
}

// Smooth random phase: a few random chirp coefficients around w0.
inline std::vector<double> smooth_phase(const linabs::FrequencyGrid& grid, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  const double width = linabs::gaussian_spectral_fwhm(tau());
  const double c1 = 2.0 * n(rng), c2 = 3.0 * n(rng), c3 = 2.0 * n(rng);
  std::vector<double> p(grid.size());
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double x = (grid.omega(j) - omega0()) / width;
    p[j] = c1 * x + c2 * x * x + c3 * std::sin(3.0 * x);
  }
  return p;
}

}  // namespace testing
