#pragma once

#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

#include "lattice/fft.hpp"
#include "lattice/wannier.hpp"

namespace lattice {

struct Populations {
  double p0 = 0.0;
  double p1 = 0.0;
  double p_leak = 0.0;

  double sum() const { return p0 + p1 + p_leak; }
};

//! Projector onto the lowest Bloch bands of the gravity-free lattice,
//! evaluated on a periodic grid. P_n = sum_q |<psi_nq|psi>|^2; the leak
//! population is reported as the remainder, mirroring a measurement that
//! only discriminates the two lowest vibrational states.
class BandProjector {
 public:
  BandProjector(const BlochSpectrum& spectrum, const SpatialGrid& grid, int n_bands = 2)
      : grid_(grid), depth_Er_(spectrum.depth_Er), n_bands_(n_bands) {
    grid.validate();
    if (n_bands < 2) throw std::invalid_argument("BandProjector: need >= 2 bands");
    const int n = grid.total_points();
    const int nw = grid.n_wells;
    const auto qs = detail::quasi_momentum_grid(nw);
    Fft1d fft(n);
    band_states_.resize(n_bands);
    for (int b = 0; b < n_bands; ++b) band_states_[b].resize(n, nw);
    const int lo = -(nw / 2) + 1;
    for (int iq = 0; iq < nw; ++iq) {
      auto sol = detail::solve_bands_at_q(spectrum.depth_Er, qs[iq],
                                          spectrum.plane_wave_cutoff, n_bands);
      for (int b = 0; b < n_bands; ++b)
        band_states_[b].col(iq) =
            detail::bloch_state_on_grid(sol.coefficients, b, lo + iq, grid, fft);
    }
  }

  const SpatialGrid& grid() const { return grid_; }
  double depth_Er() const { return depth_Er_; }
  int n_bands() const { return n_bands_; }

  double band_population(const Eigen::VectorXcd& psi, int band) const {
    return (band_states_[band].adjoint() * psi).squaredNorm();
  }

  Populations project(const Eigen::VectorXcd& psi) const {
    if (psi.size() != grid_.total_points())
      throw std::invalid_argument("BandProjector: state/grid size mismatch");
    Populations p;
    p.p0 = band_population(psi, 0);
    p.p1 = band_population(psi, 1);
    p.p_leak = std::max(0.0, psi.squaredNorm() - p.p0 - p.p1);
    return p;
  }

  //! Populations measured in a lattice displaced by `displacement` (units of
  //! d): the state is shifted back onto the reference lattice and projected.
  Populations project_displaced(const Eigen::VectorXcd& psi, double displacement) const {
    return project(shift_state(psi, -displacement));
  }

  //! Rigid translation by `shift` lattice constants via the spectral phase.
  Eigen::VectorXcd shift_state(const Eigen::VectorXcd& psi, double shift) const {
    const int n = grid_.total_points();
    Fft1d fft(n);
    std::copy(psi.data(), psi.data() + n, fft.data());
    fft.forward();
    for (int i = 0; i < n; ++i) {
      const int m = i <= n / 2 ? i : i - n;
      const double ptilde = 2.0 * m / static_cast<double>(grid_.n_wells);
      fft.data()[i] *= std::polar(1.0 / n, -pi * ptilde * shift);
    }
    fft.backward();
    Eigen::VectorXcd out(n);
    std::copy(fft.data(), fft.data() + n, out.data());
    return out;
  }

 private:
  SpatialGrid grid_;
  double depth_Er_;
  int n_bands_;
  std::vector<Eigen::MatrixXcd> band_states_; // per band: n x n_q
};

struct RenormalizedPopulations {
  double p0_tilde = 0.0;
  double p1_tilde = 0.0;
  double p_leak_tilde = 0.0;
  double initial_p0 = 1.0;
  double initial_p1 = 0.0;
};

//! Correct for imperfect state preparation: only the change in P1 counts and
//! everything is referenced to the initial ground-state population.
inline RenormalizedPopulations renormalize(const Populations& final_pops,
                                           double initial_p0, double initial_p1) {
  if (!(initial_p0 > 0.0))
    throw std::domain_error("renormalize: initial ground population must be positive");
  RenormalizedPopulations r;
  r.initial_p0 = initial_p0;
  r.initial_p1 = initial_p1;
  r.p0_tilde = final_pops.p0 / initial_p0;
  r.p1_tilde = (final_pops.p1 - initial_p1) / initial_p0;
  r.p_leak_tilde = final_pops.p_leak / initial_p0;
  return r;
}

struct MeritReport {
  double inversion = 0.0;       // (P1~ - P0~)/(P1~ + P0~)
  double branching_ratio = 0.0; // raw P1/PL; +inf when PL = 0
  double max_p1_tilde = 0.0;
  double leak_at_max = 0.0;
};

inline MeritReport merit_report(const RenormalizedPopulations& renorm,
                                const Populations& raw) {
  if (!(renorm.p0_tilde + renorm.p1_tilde > 0.0))
    throw std::domain_error("merit_report: P0~ + P1~ must be positive for the inversion");
  MeritReport m;
  m.inversion = (renorm.p1_tilde - renorm.p0_tilde) / (renorm.p1_tilde + renorm.p0_tilde);
  m.branching_ratio = raw.p_leak > 0.0 ? raw.p1 / raw.p_leak
                                       : std::numeric_limits<double>::infinity();
  m.max_p1_tilde = renorm.p1_tilde;
  m.leak_at_max = renorm.p_leak_tilde;
  return m;
}

} // namespace lattice
