#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "common.hpp"
#include "linabs/gradient.hpp"

using namespace linabs;
using lambda_levels::f;
using lambda_levels::g;
using lambda_levels::s;

namespace {

// coarse dt is fine here: the adjoint is exact for the discrete propagator
struct Fixture {
  SimulationGrid grid = testing::paper_grid(16.0);
  ControlProblem problem{testing::paper_system(), grid.frequencies, grid.times};

  SpectralField shaped(double energy, unsigned seed) const {
    return testing::tl(grid.frequencies, energy).with_phase(testing::smooth_phase(grid.frequencies, seed));
  }
};

std::vector<std::size_t> sample_bins(const SpectralField& field, std::size_t count, unsigned seed) {
  const auto& a = field.amplitude();
  const double peak = *std::max_element(a.begin(), a.end());
  std::vector<std::size_t> support;
  for (std::size_t j = 0; j < a.size(); ++j)
    if (a[j] > 1e-3 * peak) support.push_back(j);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> bins;
  std::sample(support.begin(), support.end(), std::back_inserter(bins), count, rng);
  return bins;
}

bool close(double adjoint, double fd) { return std::abs(adjoint - fd) <= std::max(1e-4 * std::abs(fd), 1e-10); }

}  // namespace

TEST_CASE("adjoint spectral gradients match central differences") {
  Fixture fx;
  const std::size_t targets[] = {s, f};
  for (double energy : {0.2, 1.0}) {
    const auto field = fx.shaped(energy, 21);
    const auto bins = sample_bins(field, 32, 22);
    REQUIRE(bins.size() == 32);
    const auto adj = fx.problem.evaluate(field, targets);
    const auto fd = finite_difference_gradient(fx.problem, field, targets, kOracleStep, bins, kOracleStencil);
    std::size_t bad = 0;
    double scale = 0.0;
    for (std::size_t r = 0; r < 2; ++r) {
      for (std::size_t j : bins) {
        scale = std::max(scale, std::abs(fd.values[r][j]));
        if (close(adj.gradients.values[r][j], fd.values[r][j])) continue;
        ++bad;
        MESSAGE("bin " << j << " row " << r << ": adjoint " << adj.gradients.values[r][j] << " fd " << fd.values[r][j]);
      }
    }
    CHECK(bad == 0);
    CHECK(scale > 1e-4);  // the comparison is not vacuous
  }
}

TEST_CASE("quadrature rows are 2 Im(a* da)") {
  Fixture fx;
  const auto field = fx.shaped(0.6, 31);
  const std::size_t targets[] = {f};
  const std::size_t quads[] = {s, g};
  const auto eval = fx.problem.evaluate(field, targets, quads);
  REQUIRE(eval.gradients.values.size() == 3);
  CHECK(eval.gradients.levels == std::vector<std::size_t>{f});

  const auto a0 = fx.problem.final_state(field);
  const double h = kOracleStep;
  for (std::size_t j : sample_bins(field, 6, 32)) {
    // fourth-order central difference of the complex amplitudes
    auto shifted = [&](double step) {
      auto p = field.phase();
      p[j] += step;
      return fx.problem.final_state(field.with_phase(p));
    };
    const StateVector da = (8.0 * (shifted(h) - shifted(-h)) - (shifted(2.0 * h) - shifted(-2.0 * h))) / (12.0 * h);
    for (std::size_t q = 0; q < 2; ++q) {
      const std::size_t l = quads[q];
      const double expected = 2.0 * std::imag(std::conj(a0(l)) * da(l));
      CHECK(close(eval.gradients.values[1 + q][j], expected));
    }
  }
}

TEST_CASE("a 1e-6 phase kick moves P_f by g h") {
  Fixture fx;
  const auto field = fx.shaped(1.0, 21);
  const std::size_t targets[] = {f};
  const auto g_f = fx.problem.evaluate(field, targets).gradients.of(f);
  const std::size_t c = static_cast<std::size_t>(std::lround(fx.grid.frequencies.position(testing::omega0())));
  const auto fd = finite_difference_gradient(fx.problem, field, targets, 1e-6,
                                             std::vector<std::size_t>{c - 40, c - 7, c});
  for (std::size_t j : {c - 40, c - 7, c}) {
    REQUIRE(std::abs(g_f[j]) > 1e-3);
    CHECK(fd.of(f)[j] == doctest::Approx(g_f[j]).epsilon(1e-4));
  }
}

TEST_CASE("population gradients sum to zero in every bin") {
  Fixture fx;
  const std::size_t all[] = {g, s, f};
  const auto eval = fx.problem.evaluate(fx.shaped(1.0, 41), all);
  double worst = 0.0, scale = 0.0;
  for (std::size_t j = 0; j < fx.grid.frequencies.size(); ++j) {
    worst = std::max(worst, std::abs(eval.gradients.values[0][j] + eval.gradients.values[1][j] +
                                     eval.gradients.values[2][j]));
    scale = std::max(scale, std::abs(eval.gradients.values[2][j]));
  }
  CHECK(worst < 1e-10);
  CHECK(scale > 1e-3);
}

TEST_CASE("a supplied final state gives identical gradients") {
  Fixture fx;
  const auto field = fx.shaped(0.5, 51);
  const std::size_t targets[] = {s, f};
  const auto psi = fx.problem.final_state(field);
  const auto a = fx.problem.evaluate(field, targets);
  const auto b = fx.problem.evaluate(field, targets, {}, &psi);
  CHECK(a.populations == b.populations);
  CHECK(a.gradients.values == b.gradients.values);
}

TEST_CASE("transform-limited pulse: first-order gradient vanishes") {
  // weak field, zero phase: P_f depends on the phase only at second order in A
  Fixture fx;
  const std::size_t targets[] = {f};
  const auto strong = fx.problem.evaluate(testing::tl(fx.grid.frequencies, 1.0), targets);
  const auto weak = fx.problem.evaluate(testing::tl(fx.grid.frequencies, 1e-4), targets);
  auto peak = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
  };
  // P^(1) is phase-independent, so grad P_f scales like A^4, not A^2
  CHECK(peak(weak.gradients.of(f)) < 1e-6 * peak(strong.gradients.of(f)));
}

TEST_CASE("time gradient against perturbed drive samples") {
  // Strang drive (no node samples): dP/de_k = gradient * dt exactly
  Fixture fx;
  const auto full = fx.problem.drive(fx.shaped(0.8, 61));
  TemporalField drive{full.axis, full.values, {}, {}};
  const auto sys = testing::paper_system();
  const auto grad = adjoint_time_gradient(sys, drive, basis_state(3, g), f);
  const double dt = drive.axis.step();
  const double h = 1e-6;
  const std::size_t mid = drive.values.size() / 2;
  for (std::size_t k : {mid - 400, mid - 37, mid, mid + 211}) {
    auto plus = drive, minus = drive;
    plus.values[k] += h;
    minus.values[k] -= h;
    const double fd = (populations(propagate_final(sys, plus, basis_state(3, g)))[f] -
                       populations(propagate_final(sys, minus, basis_state(3, g)))[f]) /
                      (2.0 * h);
    CHECK(close(grad[k] * dt, fd));
  }
}
