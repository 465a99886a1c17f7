#pragma once

#include <cmath>
#include <complex>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lattice/fft.hpp"
#include "lattice/observables.hpp"
#include "lattice/pulse.hpp"
#include "lattice/units.hpp"
#include "lattice/wannier.hpp"

namespace lattice {

struct SolverInstabilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BoundaryContaminationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Frame { Lab, Lattice };

inline const char* to_string(Frame f) { return f == Frame::Lab ? "lab" : "lattice"; }

struct WaveFunction {
  SpatialGrid grid;
  Eigen::VectorXcd amplitudes;

  double norm() const { return amplitudes.norm(); }
};

//! Center-well Wannier state of band `band`, embedded on the basis grid.
inline WaveFunction init_state(const SpatialGrid& grid, const WannierBasis& basis, int band) {
  grid.validate();
  if (band < 0 || band >= basis.n_bands())
    throw std::out_of_range("init_state: band outside basis");
  if (basis.grid.n_wells != grid.n_wells || basis.grid.points_per_well != grid.points_per_well)
    throw std::invalid_argument("init_state: basis grid does not match requested grid");
  WaveFunction psi;
  psi.grid = grid;
  psi.amplitudes = basis.states.col(band);
  psi.amplitudes.normalize();
  return psi;
}

struct PropagationResult {
  std::vector<double> times;
  std::vector<Populations> populations;
  WaveFunction final_state;
  Frame frame_used = Frame::Lab;

  const Populations& final_populations() const { return populations.back(); }
};

struct PropagateOptions {
  int substeps = 4;              // solver step = waveform dt / substeps
  double norm_tol = 1e-8;
  double boundary_tol = 1e-6;
  int boundary_guard_wells = 2;
  bool check_boundary = true;
};

namespace detail {

//! One split-operator engine instance: owns the FFT plans and phase tables
//! for a fixed grid/config/solver-step combination.
class SplitStepEngine {
 public:
  SplitStepEngine(const SpatialGrid& grid, const LatticeConfig& cfg, double dt_solver,
                  Frame frame)
      : grid_(grid), frame_(frame), dt_(dt_solver), fft_(grid.total_points()) {
    const NaturalUnits nu = natural_units(cfg);
    omega_r_ = nu.recoil_angular_frequency;
    depth_ = cfg.depth_Er;
    tilt_ = gravity_tilt_per_site(cfg);
    const int n = grid.total_points();
    const int nw = grid.n_wells;

    kinetic_half_.resize(n);
    kinetic_full_.resize(n);
    for (int i = 0; i < n; ++i) {
      const int m = i <= n / 2 ? i : i - n;
      const double ptilde = 2.0 * m / static_cast<double>(nw);
      const double phase = -dt_ * omega_r_ * ptilde * ptilde;
      kinetic_full_[i] = std::polar(1.0 / n, phase);       // inverse-FFT scale folded in
      kinetic_half_[i] = std::polar(1.0 / n, 0.5 * phase);
    }

    const int ppw = grid.points_per_well;
    cos2_.resize(ppw);
    sin2_.resize(ppw);
    for (int r = 0; r < ppw; ++r) {
      // one well of cos/sin(2 pi x) starting at the grid origin x = -n_wells/2
      const double x = grid.position(r);
      cos2_[r] = std::cos(two_pi * x);
      sin2_[r] = std::sin(two_pi * x);
    }
    if (tilt_ != 0.0) {
      gravity_.resize(n);
      for (int i = 0; i < n; ++i)
        gravity_[i] = std::polar(1.0, -dt_ * omega_r_ * tilt_ * grid.position(i));
    }
    well_phase_.resize(ppw);
  }

  double dt() const { return dt_; }

  //! Advance from one synchronized (position-space) point through n_sub
  //! substeps: K(dt/2) [V K]^(n-1) V K(dt/2), with the potential evaluated at
  //! each substep's midpoint time.
  void advance(std::complex<double>* psi, double t_start, int n_sub, const Waveform& wf) {
    apply_kinetic(psi, kinetic_half_);
    for (int s = 0; s < n_sub; ++s) {
      const double tm = t_start + (s + 0.5) * dt_;
      apply_potential(psi, tm, wf);
      apply_kinetic(psi, s + 1 < n_sub ? kinetic_full_ : kinetic_half_);
    }
  }

 private:
  void apply_kinetic(std::complex<double>* psi, const std::vector<std::complex<double>>& phase) {
    const int n = grid_.total_points();
    std::complex<double>* buf = fft_.data();
    if (buf != psi) std::copy(psi, psi + n, buf);
    fft_.forward();
    for (int i = 0; i < n; ++i) buf[i] *= phase[i];
    fft_.backward();
    if (buf != psi) std::copy(buf, buf + n, psi);
  }

  void apply_potential(std::complex<double>* psi, double t, const Waveform& wf) {
    const int n = grid_.total_points();
    const int ppw = grid_.points_per_well;
    const double eta = wf.eta_at(t);
    const double depth_term = dt_ * omega_r_ * (1.0 + eta) * depth_ * 0.5;

    if (frame_ == Frame::Lab) {
      // (1+eta) U sin^2(pi(x+theta)) = const - (1+eta) U/2 cos(2pi x + 2pi theta)
      const double th = wf.theta_at(t);
      const double c = std::cos(two_pi * th), s = std::sin(two_pi * th);
      for (int r = 0; r < ppw; ++r) {
        const double u = cos2_[r] * c - sin2_[r] * s;
        well_phase_[r] = std::polar(1.0, depth_term * u);
      }
      multiply_tables(psi, n, ppw, 0.0);
    } else {
      // (1+eta) U sin^2(pi x) - m theta-ddot x: the linear force phase is
      // applied by a geometric recursion over the grid.
      const double accel = wf.has_accel() ? wf.accel_at(t) : 0.0;
      const double force_coeff = accel * pi * pi / (2.0 * omega_r_ * omega_r_); // m*a*d^2/E_r
      for (int r = 0; r < ppw; ++r)
        well_phase_[r] = std::polar(1.0, depth_term * cos2_[r]);
      multiply_tables(psi, n, ppw, dt_ * omega_r_ * force_coeff);
    }
  }

  //! psi_i *= well_phase[i % ppw] * gravity_i * exp(i * linear_rate * x_i).
  void multiply_tables(std::complex<double>* psi, int n, int ppw, double linear_rate) {
    const bool grav = !gravity_.empty();
    if (linear_rate == 0.0) {
      for (int i = 0; i < n; ++i) {
        std::complex<double> f = well_phase_[i % ppw];
        if (grav) f *= gravity_[i];
        psi[i] *= f;
      }
      return;
    }
    const double dx = grid_.dx();
    const std::complex<double> ratio = std::polar(1.0, linear_rate * dx);
    std::complex<double> lin = std::polar(1.0, linear_rate * grid_.position(0));
    for (int i = 0; i < n; ++i) {
      if ((i & 127) == 0) lin = std::polar(1.0, linear_rate * grid_.position(i)); // curb drift
      std::complex<double> f = well_phase_[i % ppw] * lin;
      if (grav) f *= gravity_[i];
      psi[i] *= f;
      lin *= ratio;
    }
  }

  SpatialGrid grid_;
  Frame frame_;
  double dt_;
  double omega_r_ = 0.0;
  double depth_ = 0.0;
  double tilt_ = 0.0;
  Fft1d fft_;
  std::vector<std::complex<double>> kinetic_half_;
  std::vector<std::complex<double>> kinetic_full_;
  std::vector<std::complex<double>> gravity_;
  std::vector<double> cos2_;
  std::vector<double> sin2_;
  std::vector<std::complex<double>> well_phase_;
};

inline double boundary_probability(const Eigen::VectorXcd& psi, const SpatialGrid& grid,
                                   int guard_wells) {
  const int n = grid.total_points();
  const int guard = guard_wells * grid.points_per_well;
  double p = 0.0;
  for (int i = 0; i < guard; ++i) p += std::norm(psi[i]);
  for (int i = n - guard; i < n; ++i) p += std::norm(psi[i]);
  return p;
}

} // namespace detail

//! Solve the time-dependent problem for a sampled control waveform by
//! second-order split-operator stepping. Band populations are recorded every
//! `record_stride` waveform samples (always at t = 0 and the final time;
//! stride <= 0 records endpoints only) by projection onto the gravity-free
//! Bloch bands.
inline PropagationResult propagate(const WaveFunction& psi0, const Waveform& wf,
                                   const LatticeConfig& cfg, Frame frame,
                                   int record_stride, const PropagateOptions& opts = {},
                                   const BandProjector* projector = nullptr) {
  wf.validate();
  cfg.validate();
  psi0.grid.validate();
  if (opts.substeps < 1) throw std::invalid_argument("propagate: substeps must be >= 1");
  if (frame == Frame::Lattice) {
    if (wf.step_like || !wf.has_accel())
      throw std::invalid_argument(
          "propagate: lattice frame needs a finite acceleration profile");
    if (!wf.endpoint_compliant)
      throw std::invalid_argument(
          "propagate: lattice frame requires endpoint-compliant waveforms");
  }

  std::unique_ptr<BandProjector> own_projector;
  if (!projector) {
    BandOptions bo;
    bo.check_convergence = false;
    const BlochSpectrum spec = compute_band_structure(cfg, 3, 1, bo);
    own_projector = std::make_unique<BandProjector>(spec, psi0.grid, 2);
    projector = own_projector.get();
  }
  if (projector->grid().total_points() != psi0.grid.total_points())
    throw std::invalid_argument("propagate: projector grid mismatch");

  const std::size_t n_samples = wf.size();
  const int stride = record_stride > 0 ? record_stride : static_cast<int>(n_samples - 1);
  const double dt_solver = wf.dt / opts.substeps;

  detail::SplitStepEngine engine(psi0.grid, cfg, dt_solver, frame);

  PropagationResult result;
  result.frame_used = frame;
  result.final_state.grid = psi0.grid;
  Eigen::VectorXcd psi = psi0.amplitudes;

  auto record = [&](double t, std::size_t sample_index) {
    const double norm_sq = psi.squaredNorm();
    if (std::abs(std::sqrt(norm_sq) - 1.0) > opts.norm_tol)
      throw SolverInstabilityError("propagate: norm drift " +
                                   std::to_string(std::sqrt(norm_sq) - 1.0) +
                                   " at waveform sample " + std::to_string(sample_index));
    if (opts.check_boundary &&
        detail::boundary_probability(psi, psi0.grid, opts.boundary_guard_wells) >
            opts.boundary_tol)
      throw BoundaryContaminationError(
          "propagate: wavepacket reached the grid boundary near t = " + std::to_string(t));
    result.times.push_back(t);
    result.populations.push_back(projector->project(psi));
  };

  record(0.0, 0);
  for (std::size_t i = 0; i + 1 < n_samples; ++i) {
    engine.advance(psi.data(), i * wf.dt, opts.substeps, wf);
    const std::size_t next = i + 1;
    if (next == n_samples - 1 || next % stride == 0) record(next * wf.dt, next);
  }
  result.final_state.amplitudes = std::move(psi);
  return result;
}

//! Ramsey primitive: hold the lattice displaced for `delay`, snap it back,
//! and measure. The back-displacement leaves the state untouched, so the
//! populations recorded against the reference lattice during the displaced
//! hold are exactly the post-sequence populations at each delay.
inline PropagationResult sudden_displacement_delay(const WaveFunction& psi0,
                                                   double displacement, double delay,
                                                   const LatticeConfig& cfg,
                                                   int record_stride = 0,
                                                   const PropagateOptions& opts = {},
                                                   const BandProjector* projector = nullptr) {
  if (std::abs(displacement) >= 0.5)
    throw std::domain_error(
        "sudden_displacement_delay: |displacement| >= d/2 is ambiguous (well reassignment)");
  if (delay < 0.0) throw std::domain_error("sudden_displacement_delay: negative delay");

  if (delay == 0.0) {
    PropagationResult r;
    r.frame_used = Frame::Lab;
    r.final_state = psi0;
    std::unique_ptr<BandProjector> own;
    if (!projector) {
      BandOptions bo;
      bo.check_convergence = false;
      own = std::make_unique<BandProjector>(compute_band_structure(cfg, 3, 1, bo), psi0.grid, 2);
      projector = own.get();
    }
    r.times.push_back(0.0);
    r.populations.push_back(projector->project(psi0.amplitudes));
    return r;
  }

  // static displaced potential as a (trivially sampled) waveform
  Waveform hold;
  const std::size_t n = std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(delay / 1e-6)) + 1);
  hold.dt = delay / (n - 1);
  hold.theta.assign(n, displacement);
  hold.eta.assign(n, 0.0);
  hold.step_like = true;
  hold.endpoint_compliant = false;
  return propagate(psi0, hold, cfg, Frame::Lab, record_stride, opts, projector);
}

//! <H>/E_r for the static, gravity-aware Hamiltonian; used by conservation checks.
inline double energy_expectation_Er(const WaveFunction& psi, const LatticeConfig& cfg) {
  const int n = psi.grid.total_points();
  Fft1d fft(n);
  std::copy(psi.amplitudes.data(), psi.amplitudes.data() + n, fft.data());
  fft.forward();
  double kinetic = 0.0;
  for (int i = 0; i < n; ++i) {
    const int m = i <= n / 2 ? i : i - n;
    const double ptilde = 2.0 * m / static_cast<double>(psi.grid.n_wells);
    kinetic += ptilde * ptilde * std::norm(fft.data()[i]);
  }
  kinetic /= n; // unnormalized forward transform
  double potential = 0.0;
  const double tilt = gravity_tilt_per_site(cfg);
  for (int i = 0; i < n; ++i) {
    const double x = psi.grid.position(i);
    const double s = std::sin(pi * x);
    potential += (cfg.depth_Er * s * s + tilt * x) * std::norm(psi.amplitudes[i]);
  }
  return kinetic + potential;
}

} // namespace lattice
