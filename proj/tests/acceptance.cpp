// Acceptance run on the default configuration. Prints one PASS/FAIL line per
// criterion and exits nonzero if any fails. Flow results are cached (and
// resumed) in LINABS_ACCEPTANCE_DIR.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "linabs/experiments.hpp"
#include "linabs/units.hpp"

using namespace linabs;
using lambda_levels::f;
using lambda_levels::g;
using lambda_levels::s;

namespace {

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail) {
  std::printf("[%s] %d %s: %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c, d);
  return buf;
}

std::vector<double> uniform_phase(std::size_t n, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> p(n);
  for (auto& x : p) x = u(rng);
  return p;
}

void single_photon(const Setup& setup) {
  // exactly 2048 bins centred on w0, same spacing as the simulation grid
  const auto& full = setup.grid.frequencies;
  const double dw = full.spacing();
  const double j0 = std::round(setup.config.omega0 / dw) - 1024.0;
  const FrequencyGrid grid(j0 * dw, (j0 + 2047.0) * dw, 2048);
  const auto& axis = setup.grid.times;
  const auto tl = make_gaussian_tl_spectrum({setup.config.omega0, setup.config.fwhm, 1.0}, grid);
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto field = tl.scaled(std::sqrt(0.1 * static_cast<double>(3 * seed)))
                           .with_phase(uniform_phase(grid.size(), seed, units::kPi));
    const auto drive = synthesize_temporal(field, axis.t_min(), axis.t_max(), axis.size());
    const auto stack = propagate_dyson(setup.system, drive, setup.problem.initial(), 1);
    const double mu = setup.system.dipole()(g, f);
    const double a = field.amplitude_at(setup.config.omega0);
    const double oracle = mu * mu * a * a;
    worst = std::max(worst, std::abs(std::norm(stack.orders[1](f)) - oracle) / oracle);
  }
  report(1, "single-photon formula", worst <= 1e-6, fmt("max relative error %.3e on 2048 bins (limit 1e-6)", worst));
}

void flow_identity(const Setup& setup) {
  FlowConfig cfg = setup.config.flow;
  cfg.dx_initial = 1e-3;
  cfg.dx_max = 1e-3;
  cfg.max_iterations = 0;
  cfg.checkpoint_interval = 0;
  const ObjectiveSet objectives({Objective{f, 1.0}, Objective{s, -1.0}});
  std::size_t accepted = 0;
  double worst = 0.0, largest_dx = 0.0;
  auto observe = [&](const IterationRecord& rec) {
    if (!rec.accepted || accepted >= 100) return;
    ++accepted;
    largest_dx = std::max(largest_dx, rec.dx);
    worst = std::max({worst, std::abs(rec.delta[0] / rec.dx - 1.0), std::abs(rec.delta[1] / rec.dx + 1.0)});
  };
  // constant k never meets a target, so run in short legs until 100 steps are in
  std::optional<FlowState> state;
  while (accepted < 100 && cfg.max_iterations < 1000) {
    cfg.max_iterations += 20;
    state = run_flow(setup.problem, setup.field(1.0), objectives, setup.filter, cfg, state, observe).state;
  }
  const bool ok = accepted == 100 && worst <= 0.1 && largest_dx <= 1e-3;
  report(2, "monotonic flow identity", ok,
         fmt("%.0f accepted steps, max |dP/dx - k| = %.3e (limit 0.1), max dx %.1e", static_cast<double>(accepted),
             worst, largest_dx));
}

}  // namespace

int main() {
  const auto started = std::chrono::steady_clock::now();
  const ExperimentConfig config = ExperimentConfig::load(LINABS_DEFAULT_CONFIG);
  const Setup setup(config);
  const OutputDirectory out(LINABS_ACCEPTANCE_DIR, setup.config, true);
  const RunOptions run{1, true};
  std::printf("config %s, %zu frequency bins, %zu time steps, sigma %.0f cm^-1\n", out.hash().c_str(),
              setup.grid.frequencies.size(), setup.grid.times.size(), units::hartree_to_wavenumber(config.sigma));

  single_photon(setup);
  flow_identity(setup);

  // 3: stage 1
  const FlowResult stage1 = run_stage1(setup, &out, run);
  const auto& p = stage1.state.populations;
  {
    const bool ok = p[f] > 0.999 && p[s] < 1e-6 && stage1.state.iteration <= 5000;
    const bool stretch = p[f] > 0.99999 && p[s] < 1e-8;
    report(3, "stage-1 maximization", ok,
           fmt("P_f = %.8f, P_s = %.3e after %.0f iterations", p[f], p[s],
               static_cast<double>(stage1.state.iteration)) +
               (stretch ? ", stretch targets met" : ", stretch targets not met"));
  }

  // 4: linear response over A^2 in 0.1..1.0
  std::vector<double> energies;
  for (double e : config.energies)
    if (e >= 0.1 - 1e-12) energies.push_back(e);
  const SweepResult sweep = run_optimized_sweep(setup, &out, run, energies);
  {
    double worst_match = 0.0, worst_s = 0.0;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(sweep.rows.size());
    for (const auto& r : sweep.rows) {
      worst_match = std::max(worst_match, std::abs(r.populations[f] - r.first_order));
      worst_s = std::max(worst_s, r.populations[s]);
      sx += r.energy;
      sy += r.populations[f];
      sxx += r.energy * r.energy;
      sxy += r.energy * r.populations[f];
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double intercept = (sy - slope * sx) / n;
    const bool ok = energies.size() == 10 && worst_match <= 5e-3 && worst_s < 5e-3 && std::abs(slope - 1.0) <= 0.01 &&
                    std::abs(intercept) <= 1e-3;
    report(4, "linear-response restoration", ok,
           fmt("max |P_f - P1_f| = %.3e, max P_s = %.3e, slope %.5f, intercept %.2e", worst_match, worst_s, slope,
               intercept));
  }

  // 5: adjoint against central differences on 32 random bins inside the spectrum
  {
    const auto field = stage1.field;
    const double half = 2.0 * gaussian_spectral_fwhm(config.fwhm);
    const auto& grid = setup.grid.frequencies;
    std::mt19937_64 rng(config.seed);
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(grid.position(config.omega0 - half)),
                                                    static_cast<std::size_t>(grid.position(config.omega0 + half)));
    std::vector<std::size_t> bins;
    while (bins.size() < 32) {
      const std::size_t b = pick(rng);
      if (std::find(bins.begin(), bins.end(), b) == bins.end()) bins.push_back(b);
    }
    const std::size_t levels[] = {s, f};
    const auto adj = setup.problem.evaluate(field, levels);
    const auto fd = finite_difference_gradient(setup.problem, field, levels, kOracleStep, bins, kOracleStencil);
    std::size_t bad = 0;
    double worst = 0.0;
    for (std::size_t b : bins) {
      for (std::size_t l : levels) {
        const double a = adj.gradients.of(l)[b], n = fd.of(l)[b];
        const double ratio = std::abs(a - n) / std::max(1e-4 * std::abs(n), 1e-10);
        worst = std::max(worst, ratio);
        if (ratio > 1.0) ++bad;
      }
    }
    report(5, "gradient correctness", bad == 0,
           fmt("%.0f bins x 2 objectives, worst error / tolerance = %.3f", static_cast<double>(bins.size()), worst));
  }

  // 6: conservation
  {
    double drift = 0.0;
    bool energy_exact = true;
    std::vector<SpectralField> fields = {setup.field(1.0), stage1.field};
    for (std::size_t i = 0; i < sweep.rows.size(); ++i) {
      fields.push_back(setup.field(sweep.rows[i].energy, sweep.phases[i]));
      energy_exact = energy_exact && pulse_energy(fields.back()) == pulse_energy(setup.field(sweep.rows[i].energy));
    }
    energy_exact = energy_exact && pulse_energy(stage1.field) == pulse_energy(setup.field(config.stage1_energy));
    for (const auto& field : fields) {
      drift = std::max(drift, propagate_exact(setup.system, setup.problem.drive(field), setup.problem.initial())
                                  .max_norm_drift);
    }
    const std::size_t all[] = {g, s, f};
    double gsum = 0.0;
    for (const auto* field : {&fields[0], &fields[1]}) {
      const auto eval = setup.problem.evaluate(*field, all);
      for (std::size_t j = 0; j < setup.grid.frequencies.size(); ++j) {
        gsum = std::max(gsum, std::abs(eval.gradients.values[0][j] + eval.gradients.values[1][j] +
                                       eval.gradients.values[2][j]));
      }
    }
    const bool ok = drift < 1e-8 && energy_exact && gsum < 1e-10;
    report(6, "conservation suite", ok,
           fmt("norm drift %.2e over %.0f propagations, max |sum_l dP_l/dphi| %.2e, pulse energy ", drift,
               static_cast<double>(fields.size()), gsum) +
               (energy_exact ? "bit-identical" : "changed"));
  }

  // 7: Dyson parity
  {
    double forbidden = 0.0;
    std::vector<SpectralField> fields = {stage1.field, setup.field(0.5, uniform_phase(setup.grid.frequencies.size(), 7,
                                                                                       units::kPi))};
    for (const auto& field : fields) {
      const auto stack = propagate_dyson(setup.system, setup.problem.drive(field), setup.problem.initial(), 5);
      for (std::size_t m = 0; m < stack.orders.size(); ++m) {
        const auto& o = stack.orders[m];
        forbidden = std::max(forbidden, m % 2 == 0 ? std::abs(o(f)) : std::max(std::abs(o(g)), std::abs(o(s))));
      }
    }
    report(7, "Dyson parity", forbidden == 0.0, fmt("largest forbidden amplitude %.1e (orders 0..5)", forbidden));
  }

  // 8: 50 noisy copies of the stage-1 pulse at 70 dB
  {
    double worst = 0.0;
    for (std::size_t t = 0; t < 50; ++t) {
      const auto noisy = add_spectral_noise(stage1.field, 70.0, config.seed + t);
      worst = std::max(worst, std::abs(1.0 - setup.problem.final_populations(noisy)[f]));
    }
    report(8, "noise robustness", worst < 1e-4, fmt("max |1 - P_f| over 50 trials at 70 dB = %.3e (limit 1e-4)", worst));
  }

  // 9: temporal support of the optimized pulses
  {
    const double tl = temporal_support(setup.problem.drive(setup.field(1.0)), 0.01);
    double shortest = INFINITY;
    for (std::size_t i = 0; i < sweep.rows.size(); ++i) {
      shortest = std::min(shortest, temporal_support(setup.problem.drive(setup.field(sweep.rows[i].energy,
                                                                                      sweep.phases[i])),
                                                     0.01));
    }
    report(9, "pulse stretching", shortest > units::fs_to_atomic(1000.0),
           fmt("shortest optimized 1%% support %.0f fs versus %.0f fs unshaped", units::atomic_to_fs(shortest),
               units::atomic_to_fs(tl)));
  }

  const double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count() / 60.0;
  std::printf("%d of 9 criteria failed (%.1f min)\n", failures, minutes);
  return failures == 0 ? 0 : 1;
}
