#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "lattice/ensemble.hpp"
#include "lattice/propagate.hpp"

using namespace lattice;

namespace {

EnsembleOptions wide_box_options() {
  EnsembleOptions opts;
  opts.grid.n_wells = 64;
  opts.grid.points_per_well = 32;
  opts.threads = 2;
  // the sudden kick leaves ~1e-5 above the barrier; it streams out through
  // the periodic box exactly as it falls out of the real lattice
  opts.propagate.boundary_tol = 1e-3;
  return opts;
}

std::vector<double> uniform_delays(double t_max, double step) {
  std::vector<double> delays;
  for (double t = 0.0; t <= t_max + 1e-12; t += step) delays.push_back(t);
  return delays;
}

} // namespace

TEST_SUITE_BEGIN("ensemble");

TEST_CASE("depth distributions: construction, moments, csv round trip") {
  DepthDistribution g = DepthDistribution::gaussian(18.0, 1.5, 41);
  g.validate();
  CHECK(g.integral() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(g.mean() == doctest::Approx(18.0).epsilon(1e-6));
  CHECK(g.stddev() == doctest::Approx(1.5).epsilon(0.01)); // truncated at 3 sigma

  DepthDistribution d = DepthDistribution::delta(25.0);
  CHECK(d.quadrature_weights() == std::vector<double>{1.0});

  const std::string path = "dist_roundtrip.csv";
  export_distribution_csv(g, path);
  DepthDistribution back = import_distribution_csv(path);
  REQUIRE(back.depths.size() == g.depths.size());
  for (std::size_t i = 0; i < g.depths.size(); ++i)
    CHECK(back.weights[i] == doctest::Approx(g.weights[i]).epsilon(1e-12));
  std::remove(path.c_str());

  DepthDistribution bad;
  bad.depths = {2.0, 1.0};
  bad.weights = {0.5, 0.5};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("model-data fit recovers all five parameters to 0.1%") {
  DampedCosineParams truth;
  truth.amplitude = 0.35;
  truth.decay_rate = 2910.0; // angular reading of the measured linewidth
  truth.omega = two_pi * 5007.0;
  truth.phase = 0.2;
  truth.offset = 0.55;

  RamseySignal signal;
  signal.delays = uniform_delays(3e-3, 5e-6);
  for (double t : signal.delays) signal.p0_values.push_back(damped_cosine(truth, t));

  RamseyFit fit = fit_ramsey(signal);
  CHECK(fit.amplitude == doctest::Approx(truth.amplitude).epsilon(1e-3));
  CHECK(fit.decay_rate == doctest::Approx(truth.decay_rate).epsilon(1e-3));
  CHECK(fit.omega == doctest::Approx(truth.omega).epsilon(1e-3));
  CHECK(fit.phase == doctest::Approx(truth.phase).epsilon(1e-3));
  CHECK(fit.offset == doctest::Approx(truth.offset).epsilon(1e-3));
  CHECK_FALSE(fit.omega_unidentifiable);
}

TEST_CASE("zero-amplitude signal flags the frequency as unidentifiable") {
  RamseySignal signal;
  signal.delays = uniform_delays(2e-3, 10e-6);
  signal.p0_values.assign(signal.delays.size(), 0.733);
  RamseyFit fit = fit_ramsey(signal);
  CHECK(fit.omega_unidentifiable);
  CHECK(std::abs(fit.amplitude) < 1e-6);
}

TEST_CASE("fit survives 1% additive noise in >= 95 of 100 trials") {
  DampedCosineParams truth;
  truth.amplitude = 0.35;
  truth.decay_rate = 2000.0;
  truth.omega = two_pi * 5007.0;
  truth.phase = -0.4;
  truth.offset = 0.55;
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> noise(0.0, 0.01);

  const auto delays = uniform_delays(2.5e-3, 8e-6);
  int good = 0;
  for (int trial = 0; trial < 100; ++trial) {
    RamseySignal signal;
    signal.delays = delays;
    for (double t : delays) {
      const double v = damped_cosine(truth, t) + noise(rng);
      signal.p0_values.push_back(std::clamp(v, 0.0, 1.0));
    }
    try {
      RamseyFit fit = fit_ramsey(signal);
      if (std::abs(fit.omega - truth.omega) < 0.005 * truth.omega) ++good;
    } catch (const FitError&) {
    }
  }
  CHECK(good >= 95);
}

TEST_CASE("single-depth fringe oscillates undamped at omega01") {
  LatticeConfig base = config_from_recoil_frequency(685.0, 18.0);
  DepthDistribution delta = DepthDistribution::delta(18.0);
  RamseySignal signal = simulate_ramsey(delta, 0.025, uniform_delays(2e-3, 10e-6), base,
                                        wide_box_options());
  for (double v : signal.p0_values) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0 + 1e-12);
  }
  RamseyFit fit = fit_ramsey(signal);
  BandOptions bo;
  bo.check_convergence = false;
  const double omega01 = compute_band_structure(base, 3, 32, bo).omega01(base);
  CHECK(fit.omega == doctest::Approx(omega01).epsilon(0.01));
  CHECK(fit.decay_rate < 0.1 * fit.omega); // essentially undamped

  // recovery concentrates at the true depth
  std::vector<double> depths;
  for (double u = 12.0; u <= 24.0 + 1e-9; u += 0.2) depths.push_back(u);
  Omega01Curve curve = omega01_of_depth(base, depths, 32);
  DepthDistribution rec = recover_depth_distribution(signal, curve);
  CHECK(rec.mean() == doctest::Approx(18.0).epsilon(0.02));
  // point mass: the recovered width is set by the spectral window alone
  const double resolution_U = (two_pi / signal.delays.back()) / curve.derivative_at(18.0);
  CHECK(rec.stddev() < 0.6 * resolution_U);
}

TEST_CASE("gaussian broadening round trip: signal, fit, recovery") {
  LatticeConfig base = config_from_recoil_frequency(685.0, 18.0);
  DepthDistribution truth = DepthDistribution::gaussian(18.0, 1.5, 17);
  RamseySignal signal = simulate_ramsey(truth, 0.025, uniform_delays(5e-3, 10e-6), base,
                                        wide_box_options());
  RamseyFit fit = fit_ramsey(signal);

  std::vector<double> depths;
  for (double u = 11.0; u <= 27.0 + 1e-9; u += 0.2) depths.push_back(u);
  Omega01Curve curve = omega01_of_depth(base, depths, 32);

  // the fitted decay rate equals the induced omega01 spread
  const double induced_sigma = 1.5 * curve.derivative_at(18.0);
  CHECK(fit.decay_rate == doctest::Approx(induced_sigma).epsilon(0.10));

  DepthDistribution rec = recover_depth_distribution(signal, curve);
  CHECK(rec.mean() == doctest::Approx(18.0).epsilon(0.02));
  CHECK(rec.stddev() == doctest::Approx(1.5).epsilon(0.10));
}

TEST_CASE("ensemble average: degenerate distribution equals direct propagation") {
  LatticeConfig base = config_from_recoil_frequency(685.0, 18.0);
  PulseSpec spec;
  spec.variant = PulseVariant::SinePM;
  spec.amplitude_pm = 1.0 / 72.0;
  spec.frequency = two_pi * 5000.0;
  spec.duration = 3.0 * two_pi / spec.frequency;
  Waveform wf = synthesize(spec, 1e-6);

  EnsembleOptions opts = wide_box_options();
  opts.propagate.boundary_tol = 1e-6;
  Populations ens = ensemble_average(wf, DepthDistribution::delta(18.0), 1.0, 0.0, base,
                                     Frame::Lab, opts);

  BandOptions bo;
  bo.check_convergence = false;
  BlochSpectrum spec18 = compute_band_structure(base, 3, opts.grid.n_wells, bo);
  BandProjector projector(spec18, opts.grid, 2);
  WannierBasis basis = wannier_states(spec18, opts.grid);
  Populations direct = propagate(init_state(opts.grid, basis, 0), wf, base, Frame::Lab, 0,
                                 opts.propagate, &projector)
                           .final_populations();
  CHECK(ens.p0 == doctest::Approx(direct.p0).epsilon(1e-12));
  CHECK(ens.p1 == doctest::Approx(direct.p1).epsilon(1e-12));
  CHECK(ens.p_leak == doctest::Approx(direct.p_leak).epsilon(1e-12));
}

TEST_CASE("ensemble average: identity pulse and linearity in the distribution") {
  LatticeConfig base = config_from_recoil_frequency(685.0, 18.0);
  Waveform idle;
  idle.dt = 1e-6;
  idle.theta.assign(51, 0.0);
  idle.eta.assign(51, 0.0);
  idle.accel.assign(51, 0.0);
  idle.endpoint_compliant = true;

  EnsembleOptions opts = wide_box_options();
  opts.propagate.boundary_tol = 1e-6;
  Populations idle_pops = ensemble_average(idle, DepthDistribution::delta(18.0), 1.0, 0.0,
                                           base, Frame::Lab, opts);
  CHECK(idle_pops.p0 == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(idle_pops.p1 < 1e-9);

  // averaging two half-weighted depths equals the mean of the two singles
  PulseSpec spec;
  spec.variant = PulseVariant::SinePM;
  spec.amplitude_pm = 1.0 / 72.0;
  spec.frequency = two_pi * 5000.0;
  spec.duration = 2.0 * two_pi / spec.frequency;
  Waveform wf = synthesize(spec, 1e-6);

  DepthDistribution pair;
  pair.depths = {17.0, 19.0};
  pair.weights = {0.5, 0.5};
  pair.normalize();
  Populations both = ensemble_average(wf, pair, 1.0, 0.0, base, Frame::Lab, opts);
  Populations a = ensemble_average(wf, DepthDistribution::delta(17.0), 1.0, 0.0, base,
                                   Frame::Lab, opts);
  Populations b = ensemble_average(wf, DepthDistribution::delta(19.0), 1.0, 0.0, base,
                                   Frame::Lab, opts);
  CHECK(both.p0 == doctest::Approx(0.5 * (a.p0 + b.p0)).epsilon(1e-12));
  CHECK(both.p1 == doctest::Approx(0.5 * (a.p1 + b.p1)).epsilon(1e-12));
}

TEST_CASE("depth-sample refinement leaves the average stable") {
  LatticeConfig base = config_from_recoil_frequency(685.0, 18.0);
  PulseSpec spec;
  spec.variant = PulseVariant::SinePM;
  spec.amplitude_pm = 1.0 / 72.0;
  spec.frequency = two_pi * 5000.0;
  spec.duration = 3.0 * two_pi / spec.frequency;
  Waveform wf = synthesize(spec, 1e-6);

  EnsembleOptions opts = wide_box_options();
  opts.propagate.boundary_tol = 1e-6;
  Populations coarse = ensemble_average(wf, DepthDistribution::gaussian(18.0, 1.5, 21),
                                        0.925, 0.075, base, Frame::Lab, opts);
  Populations fine = ensemble_average(wf, DepthDistribution::gaussian(18.0, 1.5, 41),
                                      0.925, 0.075, base, Frame::Lab, opts);
  CHECK(std::abs(coarse.p0 - fine.p0) < 0.005);
  CHECK(std::abs(coarse.p1 - fine.p1) < 0.005);
  CHECK(std::abs(coarse.p_leak - fine.p_leak) < 0.005);
}

TEST_SUITE_END();
