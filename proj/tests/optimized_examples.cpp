// Checks on the optimized datasets of the default config. Reuses (and resumes)
// the flow checkpoints of the acceptance run, so run it after that.

#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "linabs/experiments.hpp"
#include "linabs/units.hpp"

using namespace linabs;
using lambda_levels::f;
using lambda_levels::s;

namespace {

struct Shared {
  ExperimentConfig config = ExperimentConfig::load(LINABS_DEFAULT_CONFIG);
  Setup setup{config};
  OutputDirectory out{LINABS_ACCEPTANCE_DIR, config, false};
};

Shared& shared() {
  static Shared instance;
  return instance;
}

const SweepResult& sweep() {
  static const SweepResult r = run_optimized_sweep(shared().setup, &shared().out, {});
  return r;
}

}  // namespace

TEST_CASE("optimized sweep: full transfer at A2 = 1 and linear response everywhere") {
  const auto& r = sweep();
  REQUIRE(!r.rows.empty());
  const auto& top = r.rows.back();
  REQUIRE(top.energy == 1.0);
  CHECK(top.populations[f] > 0.999);
  CHECK(top.populations[s] < 1e-6);
  for (const auto& row : r.rows) {
    INFO("A2 = " << row.energy << ", P_f = " << row.populations[f] << ", P1_f = " << row.first_order);
    CHECK(std::abs(row.populations[f] - row.first_order) <= 5e-3);
  }
}

TEST_CASE("optimized phases are modulated near the two transition frequencies") {
  // deviation from the initial zero phase, over bins that carry amplitude
  const auto& setup = shared().setup;
  const auto& grid = setup.grid.frequencies;
  const double w0 = setup.config.omega0;
  const double ws = w0 - setup.system.energies()[s];  // 0.98 w0
  const double window = 3.0 * setup.config.sigma;
  const auto amp = setup.field(1.0).amplitude();
  const double peak_amp = *std::max_element(amp.begin(), amp.end());
  const auto& r = sweep();
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    double inside = 0.0, outside = 0.0;
    for (std::size_t j = 0; j < grid.size(); ++j) {
      if (amp[j] < 1e-2 * peak_amp) continue;
      const double w = grid.omega(j);
      const double dev = std::abs(r.phases[i][j]);
      if (std::abs(w - w0) <= window || std::abs(w - ws) <= window)
        inside = std::max(inside, dev);
      else
        outside = std::max(outside, dev);
    }
    INFO("A2 = " << r.rows[i].energy << ": max deviation near the lines " << inside << ", elsewhere " << outside);
    CHECK(outside < 0.1 * std::max(inside, outside));
  }
}

TEST_CASE("dynamics comparison") {
  const auto& setup = shared().setup;
  const auto pairs = run_dynamics_comparison(setup, &shared().out, {});
  const auto constant = run_constant_phase_sweep(setup, {});
  REQUIRE(pairs.size() == 3);
  for (const auto& p : pairs) {
    INFO("A2 = " << p.energy);
    CHECK(p.flags.empty());
    CHECK(p.optimized_support > units::fs_to_atomic(1000.0));
  }

  SUBCASE("constant weak field ends with the sweep's nonlinear deficit") {
    const auto& p = pairs[0];
    REQUIRE(p.energy == doctest::Approx(0.1));
    const auto row = std::find_if(constant.rows.begin(), constant.rows.end(),
                                  [](const SweepRow& r) { return std::abs(r.energy - 0.1) < 1e-12; });
    REQUIRE(row != constant.rows.end());
    const double exact = p.constant.populations.back()[f];
    const double first = std::norm(p.constant_dyson.orders[1](f));
    CHECK(std::abs(exact - row->populations[f]) <= 1e-10);
    CHECK(std::abs((exact - first) - (row->populations[f] - row->first_order)) <= 1e-8);
    CHECK(std::abs(exact - first) > 1e-3);  // the deficit is visible
  }

  SUBCASE("optimized strong field reaches P_f = 1 through oscillations") {
    const auto& p = pairs[2];
    REQUIRE(p.energy == 1.0);
    const auto& traj = p.optimized.populations;
    CHECK(std::abs(1.0 - traj.back()[f]) < 1e-3);
    // non-monotone: some earlier value exceeds a later one
    double running_max = 0.0, drop = 0.0;
    for (const auto& row : traj) {
      running_max = std::max(running_max, row[f]);
      drop = std::max(drop, running_max - row[f]);
    }
    INFO("largest fall of P_f(t) below its running maximum " << drop);
    CHECK(drop > 1e-2);
  }
}

TEST_CASE("noise study on the stage-1 pulse") {
  const auto& setup = shared().setup;
  const auto r = run_noise_study(setup, &shared().out, {});
  const auto& c = setup.config;
  REQUIRE(r.summary.size() == c.snr_db.size());
  for (std::size_t k = 0; k < r.summary.size(); ++k) {
    const auto& sum = r.summary[k];
    INFO("SNR " << sum.snr_db << " dB: mean " << sum.mean_error << ", max " << sum.max_error);
    if (std::isinf(sum.snr_db)) {
      for (std::size_t t = 0; t < c.trials; ++t) CHECK(r.trials[k * c.trials + t].p_f == r.noiseless_p_f);
    }
    if (sum.snr_db == 70.0) CHECK(sum.max_error < 1e-4);
    if (k > 0 && sum.snr_db > r.summary[k - 1].snr_db) CHECK(sum.mean_error <= r.summary[k - 1].mean_error);
  }
}
