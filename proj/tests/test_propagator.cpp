#include <doctest.h>

#include <cmath>
#include <complex>

#include "lattice/band_structure.hpp"
#include "lattice/ensemble.hpp"
#include "lattice/fitting.hpp"
#include "lattice/propagate.hpp"
#include "lattice/pulse.hpp"
#include "lattice/units.hpp"
#include "lattice/wannier.hpp"

using namespace lattice;

namespace {

struct Setup {
  LatticeConfig cfg;
  SpatialGrid grid;
  BlochSpectrum spectrum;
  WannierBasis basis;
  BandProjector projector;

  Setup(double depth, int n_wells = 32, int ppw = 64, bool gravity = false)
      : cfg(make_cfg(depth, gravity)),
        grid(make_grid(n_wells, ppw)),
        spectrum(compute_band_structure(cfg, 4, n_wells,
                                        [] {
                                          BandOptions o;
                                          o.check_convergence = false;
                                          return o;
                                        }())),
        basis(wannier_states(spectrum, grid)),
        projector(spectrum, grid, 2) {}

  static LatticeConfig make_cfg(double depth, bool gravity) {
    LatticeConfig c = config_from_recoil_frequency(685.0, depth);
    c.gravity_enabled = gravity;
    return c;
  }
  static SpatialGrid make_grid(int n_wells, int ppw) {
    SpatialGrid g;
    g.n_wells = n_wells;
    g.points_per_well = ppw;
    return g;
  }
};

Waveform zero_waveform(double duration, double dt = 1e-6) {
  Waveform wf;
  wf.dt = dt;
  const std::size_t n = static_cast<std::size_t>(std::llround(duration / dt)) + 1;
  wf.theta.assign(n, 0.0);
  wf.eta.assign(n, 0.0);
  wf.accel.assign(n, 0.0);
  wf.endpoint_compliant = true;
  return wf;
}

Waveform sine_pm(double amplitude, double freq_hz, int periods, double dt = 1e-6) {
  PulseSpec spec;
  spec.variant = PulseVariant::SinePM;
  spec.amplitude_pm = amplitude;
  spec.frequency = two_pi * freq_hz;
  spec.duration = periods * two_pi / spec.frequency;
  return synthesize(spec, dt);
}

double overlap_sq(const Eigen::VectorXcd& a, const Eigen::VectorXcd& b) {
  return std::norm(a.dot(b));
}

} // namespace

TEST_SUITE_BEGIN("propagator");

TEST_CASE("initial states project onto their own band") {
  Setup s(18.0);
  WaveFunction psi0 = init_state(s.grid, s.basis, 0);
  WaveFunction psi1 = init_state(s.grid, s.basis, 1);
  CHECK(std::abs(psi0.norm() - 1.0) < 1e-12);
  const Populations p0 = s.projector.project(psi0.amplitudes);
  const Populations p1 = s.projector.project(psi1.amplitudes);
  CHECK(p0.p0 >= 0.999);
  CHECK(p1.p1 >= 0.999);
  CHECK(p1.p0 <= 1e-6);
  CHECK_THROWS_AS(init_state(s.grid, s.basis, 9), std::out_of_range);
}

TEST_CASE("zero waveform leaves populations unchanged") {
  Setup s(18.0);
  WaveFunction psi0 = init_state(s.grid, s.basis, 0);
  auto result = propagate(psi0, zero_waveform(1e-3), s.cfg, Frame::Lattice, 100, {}, &s.projector);
  CHECK(result.final_populations().p0 == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(std::abs(result.final_state.norm() - 1.0) < 1e-10);
  for (const auto& p : result.populations)
    CHECK(std::abs(p.sum() - 1.0) < 1e-9);
}

TEST_CASE("driven propagation conserves the norm") {
  Setup s(18.0, 64, 32); // wide box: the resonant drive leaks fast atoms
  WaveFunction psi0 = init_state(s.grid, s.basis, 0);
  Waveform wf = sine_pm(1.0 / 36.0, 5000.0, 10);
  auto result = propagate(psi0, wf, s.cfg, Frame::Lab, 0, {}, &s.projector);
  CHECK(std::abs(result.final_state.norm() - 1.0) < 1e-10);
}

TEST_CASE("lab and lattice frames give the same final state for compliant drives") {
  PropagateOptions opts;
  opts.substeps = 16;
  SUBCASE("without gravity") {
    Setup s(18.0);
    WaveFunction psi0 = init_state(s.grid, s.basis, 0);
    Waveform wf = sine_pm(1.0 / 36.0, 5000.0, 5);
    auto lab = propagate(psi0, wf, s.cfg, Frame::Lab, 0, opts, &s.projector);
    auto lat = propagate(psi0, wf, s.cfg, Frame::Lattice, 0, opts, &s.projector);
    CHECK(overlap_sq(lab.final_state.amplitudes, lat.final_state.amplitudes) >=
          1.0 - 1e-6);
  }
  SUBCASE("with gravity") {
    Setup s(18.0, 32, 64, true);
    WaveFunction psi0 = init_state(s.grid, s.basis, 0);
    Waveform wf = sine_pm(1.0 / 36.0, 5000.0, 5);
    auto lab = propagate(psi0, wf, s.cfg, Frame::Lab, 0, opts, &s.projector);
    auto lat = propagate(psi0, wf, s.cfg, Frame::Lattice, 0, opts, &s.projector);
    CHECK(overlap_sq(lab.final_state.amplitudes, lat.final_state.amplitudes) >=
          1.0 - 1e-6);
  }
}

TEST_CASE("lattice frame rejects step-like waveforms") {
  Setup s(18.0);
  WaveFunction psi0 = init_state(s.grid, s.basis, 0);
  PulseSpec spec;
  spec.variant = PulseVariant::Square;
  spec.amplitude_pm = 0.05;
  spec.duration = 50e-6;
  Waveform square = synthesize(spec, 1e-6);
  CHECK_THROWS_AS(propagate(psi0, square, s.cfg, Frame::Lattice, 0, {}, &s.projector),
                  std::invalid_argument);
}

TEST_CASE("norm guard catches an unnormalized state") {
  Setup s(18.0);
  WaveFunction psi0 = init_state(s.grid, s.basis, 0);
  psi0.amplitudes *= 1.001;
  CHECK_THROWS_AS(propagate(psi0, zero_waveform(10e-6), s.cfg, Frame::Lab, 0, {}, &s.projector),
                  SolverInstabilityError);
}

TEST_CASE("boundary guard catches a spilling wavepacket") {
  // shallow tilted lattice: the packet runs downhill into the guard zone
  Setup s(0.05, 16, 64, true);
  WaveFunction psi0 = init_state(s.grid, s.basis, 0);
  CHECK_THROWS_AS(propagate(psi0, zero_waveform(20e-3), s.cfg, Frame::Lab, 50, {}, &s.projector),
                  BoundaryContaminationError);
}

TEST_CASE("sudden displacement: zero displacement is the identity") {
  Setup s(18.0);
  WaveFunction psi0 = init_state(s.grid, s.basis, 0);
  auto r = sudden_displacement_delay(psi0, 0.0, 200e-6, s.cfg, 0, {}, &s.projector);
  CHECK(r.final_populations().p0 == doctest::Approx(1.0).epsilon(1e-9));
  CHECK_THROWS_AS(sudden_displacement_delay(psi0, 0.6, 1e-6, s.cfg), std::domain_error);
}

TEST_CASE("sudden displacement: P0 oscillates at omega01") {
  // wide box: the tiny above-barrier component streams ballistically and
  // must stay clear of the guard wells over the record
  Setup s(18.0, 64, 32);
  WaveFunction psi0 = init_state(s.grid, s.basis, 0);
  auto r = sudden_displacement_delay(psi0, 0.05, 1.5e-3, s.cfg, 1, {}, &s.projector);
  RamseySignal signal;
  signal.delays = r.times;
  signal.displacement_used = 0.05;
  for (const auto& p : r.populations) signal.p0_values.push_back(p.p0);
  auto fit = fit_ramsey(signal);
  CHECK(fit.omega == doctest::Approx(s.spectrum.omega01(s.cfg)).epsilon(0.01));
}

TEST_CASE("energy is conserved for the static Hamiltonian") {
  Setup s(18.0);
  WaveFunction psi0 = init_state(s.grid, s.basis, 0);
  const double e0 = energy_expectation_Er(psi0, s.cfg);
  auto r = propagate(psi0, zero_waveform(5e-3), s.cfg, Frame::Lab, 0, {}, &s.projector);
  const double e1 = energy_expectation_Er(r.final_state, s.cfg);
  CHECK(std::abs(e1 - e0) < 1e-8);
}

TEST_CASE("second-order convergence in the solver step") {
  Setup s(18.0);
  WaveFunction psi0 = init_state(s.grid, s.basis, 0);
  Waveform wf = sine_pm(1.0 / 36.0, 5000.0, 3);

  auto run = [&](int substeps) {
    PropagateOptions opts;
    opts.substeps = substeps;
    return propagate(psi0, wf, s.cfg, Frame::Lab, 0, opts, &s.projector).final_state.amplitudes;
  };
  const Eigen::VectorXcd a = run(2), b = run(4), c = run(8);

  auto phase_aligned_diff = [](const Eigen::VectorXcd& x, const Eigen::VectorXcd& y) {
    const std::complex<double> ov = y.dot(x);
    return (x - (ov / std::abs(ov)) * y).norm();
  };
  const double r = phase_aligned_diff(a, b) / phase_aligned_diff(b, c);
  const double order = std::log2(r);
  CHECK(order > 1.8);
  CHECK(order < 2.2);
}

TEST_CASE("solver-step halving leaves final populations unchanged at tolerance") {
  Setup s(18.0);
  WaveFunction psi0 = init_state(s.grid, s.basis, 0);
  Waveform wf = sine_pm(1.0 / 72.0, 5000.0, 5);
  PropagateOptions coarse, fine;
  coarse.substeps = 32; // differences fall off 4x per halving; this pair is
  fine.substeps = 64;   // inside the < 1e-7 window for a resonant drive
  auto a = propagate(psi0, wf, s.cfg, Frame::Lab, 0, coarse, &s.projector).final_populations();
  auto b = propagate(psi0, wf, s.cfg, Frame::Lab, 0, fine, &s.projector).final_populations();
  CHECK(std::abs(a.p0 - b.p0) < 1e-7);
  CHECK(std::abs(a.p1 - b.p1) < 1e-7);
  CHECK(std::abs(a.p_leak - b.p_leak) < 1e-7);
}

TEST_CASE("waveform-sampling refinement leaves final populations unchanged") {
  Setup s(18.0, 64, 32);
  WaveFunction psi0 = init_state(s.grid, s.basis, 0);
  PulseSpec ps;
  ps.variant = PulseVariant::SinePM;
  ps.amplitude_pm = 1.0 / 72.0;
  ps.frequency = two_pi * 5000.0;
  ps.duration = 5.0 * two_pi / ps.frequency;
  // fixed solver step, waveform sampling refined 2x
  PropagateOptions coarse, fine;
  coarse.substeps = 4;
  fine.substeps = 2;
  auto a = propagate(psi0, synthesize(ps, 1e-6), s.cfg, Frame::Lab, 0, coarse, &s.projector)
               .final_populations();
  auto b = propagate(psi0, synthesize(ps, 0.5e-6), s.cfg, Frame::Lab, 0, fine, &s.projector)
               .final_populations();
  CHECK(std::abs(a.p0 - b.p0) < 1e-6);
  CHECK(std::abs(a.p1 - b.p1) < 1e-6);
  CHECK(std::abs(a.p_leak - b.p_leak) < 1e-6);
}

TEST_CASE("spatial-resolution doubling leaves recorded populations unchanged") {
  Setup coarse(18.0, 32, 64), fine(18.0, 32, 128);
  Waveform wf = sine_pm(1.0 / 36.0, 5000.0, 5);
  auto pa = propagate(init_state(coarse.grid, coarse.basis, 0), wf, coarse.cfg, Frame::Lab,
                      0, {}, &coarse.projector)
                .final_populations();
  auto pb = propagate(init_state(fine.grid, fine.basis, 0), wf, fine.cfg, Frame::Lab, 0,
                      {}, &fine.projector)
                .final_populations();
  CHECK(std::abs(pa.p0 - pb.p0) < 1e-6);
  CHECK(std::abs(pa.p1 - pb.p1) < 1e-6);
  CHECK(std::abs(pa.p_leak - pb.p_leak) < 1e-6);
}

TEST_SUITE_END();
