#include <doctest.h>

#include <cmath>
#include <numeric>

#include "common.hpp"
#include "linabs/errors.hpp"
#include "linabs/quantum.hpp"

using namespace linabs;
using lambda_levels::f;
using lambda_levels::g;
using lambda_levels::s;

namespace {

struct Fixture {
  SimulationGrid grid = testing::paper_grid();
  LevelSystem system = testing::paper_system();
  SpectralSynthesizer synth{grid.frequencies, grid.times};

  TemporalField drive(double energy, const std::vector<double>& phase = {}) const {
    auto field = testing::tl(grid.frequencies, energy);
    return synth.synthesize(phase.empty() ? field : field.with_phase(phase));
  }
};

double total(const std::vector<double>& p) { return std::accumulate(p.begin(), p.end(), 0.0); }

}  // namespace

TEST_CASE("lambda system layout") {
  const auto sys = testing::paper_system();
  REQUIRE(sys.size() == 3);
  CHECK(sys.energies()[g] == 0.0);
  CHECK(sys.energies()[s] == doctest::Approx(0.02 * testing::omega0()));
  CHECK(sys.energies()[f] == doctest::Approx(testing::omega0()));
  CHECK(sys.dipole()(g, s) == 0.0);
  CHECK(sys.dipole()(g, f) == 1.0);
  CHECK(sys.dipole()(s, f) == 1.0);
  CHECK(sys.index_of("f") == f);
  CHECK_THROWS_AS(make_lambda_system(1.0, 1.5, 1.0, 1.0), ConfigurationError);
}

TEST_CASE("level system rejects a non-symmetric dipole") {
  Eigen::MatrixXd mu = Eigen::MatrixXd::Zero(2, 2);
  mu(0, 1) = 1.0;
  CHECK_THROWS_AS(LevelSystem({0.0, 1.0}, mu), ConfigurationError);
}

TEST_CASE("zero field: populations frozen, phases free") {
  Fixture fx;
  TemporalField zero{fx.grid.times, std::vector<double>(fx.grid.times.size(), 0.0), {}, {}};
  StateVector psi(3);
  psi << std::sqrt(0.5), 0.0, std::complex<double>(0.0, std::sqrt(0.5));
  const auto out = propagate_exact(fx.system, zero, psi);
  // only rounding in ~1e6 unit-modulus products moves the populations
  CHECK(std::norm(out.final_state(g)) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(std::norm(out.final_state(f)) == doctest::Approx(0.5).epsilon(1e-9));
  const double t = out.final_time - fx.grid.times.t_min() + 0.5 * fx.grid.times.step();
  const auto expected = psi(f) * std::polar(1.0, -testing::omega0() * t);
  CHECK(std::abs(out.final_state(f) - expected) < 1e-9);
}

TEST_CASE("norm is conserved to 1e-8 for strong shaped pulses") {
  Fixture fx;
  for (unsigned seed : {1u, 2u}) {
    const auto tr = propagate_exact(fx.system, fx.drive(1.0, testing::smooth_phase(fx.grid.frequencies, seed)),
                                    basis_state(3, g), {1000});
    CHECK(tr.max_norm_drift < 1e-8);
    for (const auto& p : tr.populations) CHECK(std::abs(total(p) - 1.0) < 1e-8);
  }
}

TEST_CASE("weak field: P_f follows A^2(w0)") {
  Fixture fx;
  const auto p = populations(propagate_final(fx.system, fx.drive(0.01), basis_state(3, g)));
  // first-order oracle mu^2 A^2 = 0.01, within 2%
  CHECK(p[f] == doctest::Approx(0.01).epsilon(0.02));
  CHECK(std::abs(total(p) - 1.0) < 1e-8);
}

TEST_CASE("strong TL pulse leaks into s") {
  Fixture fx;
  const auto p = populations(propagate_final(fx.system, fx.drive(1.0), basis_state(3, g)));
  CHECK(p[f] < 0.95);
  CHECK(p[s] > 1e-2);
}

TEST_CASE("Dyson orders: parity zeros and the single-photon formula") {
  Fixture fx;
  for (double energy : {0.1, 1.0}) {
    for (unsigned seed : {4u, 5u}) {
      const auto phase = testing::random_phase(fx.grid.frequencies.size(), seed, 3.0);
      const auto stack = propagate_dyson(fx.system, fx.drive(energy, phase), basis_state(3, g), 4);
      REQUIRE(stack.orders.size() == 5);
      for (std::size_t m = 0; m < stack.orders.size(); ++m) {
        const auto& o = stack.orders[m];
        if (m % 2 == 0) {
          CHECK(o(f) == std::complex<double>(0.0, 0.0));
        } else {
          CHECK(o(g) == std::complex<double>(0.0, 0.0));
          CHECK(o(s) == std::complex<double>(0.0, 0.0));
        }
      }
      // mu_fg^2 A^2(w_fg) with A(w0) = sqrt(energy) by construction
      CHECK(std::norm(stack.orders[1](f)) == doctest::Approx(energy).epsilon(1e-6));
    }
  }
}

TEST_CASE("Dyson partial sums converge to the exact state") {
  Fixture fx;
  const auto drive = fx.drive(0.05, testing::smooth_phase(fx.grid.frequencies, 6));
  const auto exact = propagate_exact(fx.system, drive, basis_state(3, g));
  const auto stack = propagate_dyson(fx.system, drive, basis_state(3, g), 6);
  const auto target = to_interaction_picture(fx.system, exact.final_state, exact.final_time);
  double previous = 1.0;
  for (std::size_t k = 1; k <= 6; ++k) {
    const double r = (stack.partial_sum(k) - target).norm();
    CHECK(r < previous);
    previous = r;
  }
  CHECK(previous < 1e-6);
}

TEST_CASE("recorded Dyson traces line up with the exact trajectory") {
  Fixture fx;
  const auto drive = fx.drive(0.3);
  const auto tr = propagate_exact(fx.system, drive, basis_state(3, g), {500});
  const auto dy = propagate_dyson(fx.system, drive, basis_state(3, g), 2, {500});
  REQUIRE(tr.times.size() == dy.times.size());
  CHECK(tr.times.front() == dy.times.front());
  CHECK(tr.times.back() == doctest::Approx(tr.final_time));
  CHECK(tr.populations.back() == populations(tr.final_state));
  CHECK(dy.order_populations.back()[1][f] == doctest::Approx(0.3).epsilon(1e-6));
}

TEST_CASE("halving dt moves final populations by less than 1e-8") {
  const auto coarse = testing::paper_grid(72.0);
  const auto fine = testing::paper_grid(144.0);
  REQUIRE(coarse.frequencies == fine.frequencies);
  const auto sys = testing::paper_system();
  const auto field = testing::tl(coarse.frequencies, 1.0).with_phase(testing::smooth_phase(coarse.frequencies, 7));
  const auto a = populations(propagate_final(sys, synthesize_temporal(field, coarse.times.t_min(),
                                                                      coarse.times.t_max(), coarse.times.size()),
                                             basis_state(3, g)));
  const auto b = populations(propagate_final(
      sys, synthesize_temporal(field, fine.times.t_min(), fine.times.t_max(), fine.times.size()), basis_state(3, g)));
  for (std::size_t l = 0; l < 3; ++l) CHECK(std::abs(a[l] - b[l]) < 1e-8);
}

TEST_CASE("stepper steps are exactly reversible") {
  Fixture fx;
  const auto drive = fx.drive(1.0);
  const auto stepper = SplitStepper::for_drive(fx.system, drive);
  StateVector psi = basis_state(3, g);
  const std::size_t k = drive.values.size() / 2;
  stepper.step(psi, drive, k);
  // undo: inverse free segments and kicks in reverse order
  const auto& kicks = stepper.kicks();
  stepper.free_inverse(psi, kicks.size());
  for (std::size_t i = kicks.size(); i-- > 0;) {
    stepper.kick(psi, -SplitStepper::node_value(drive, kicks[i].node, k), kicks[i].weight);
    stepper.free_inverse(psi, i);
  }
  CHECK((psi - basis_state(3, g)).norm() < 1e-14);
}

TEST_CASE("bad inputs") {
  Fixture fx;
  CHECK_THROWS_AS(propagate_exact(fx.system, fx.drive(0.1), basis_state(2, 0)), DomainError);
  StateVector unnormalized = 2.0 * basis_state(3, g);
  CHECK_THROWS_AS(propagate_exact(fx.system, fx.drive(0.1), unnormalized), DomainError);
}
