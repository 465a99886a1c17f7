#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "lattice/band_structure.hpp"
#include "lattice/fft.hpp"
#include "lattice/units.hpp"

namespace lattice {

//! Periodic spatial grid: n_wells lattice sites, points_per_well samples
//! each, total a power of two. Positions are in units of d, centered on the
//! middle well (x = 0 is a potential minimum).
struct SpatialGrid {
  int n_wells = 32;
  int points_per_well = 64;

  int total_points() const { return n_wells * points_per_well; }
  double dx() const { return 1.0 / points_per_well; }
  double extent() const { return static_cast<double>(n_wells); }
  double position(int i) const { return (i - total_points() / 2) * dx(); }

  void validate() const {
    if (n_wells < 2 || points_per_well < 4)
      throw std::invalid_argument("SpatialGrid: too small");
    const int n = total_points();
    if (n <= 0 || (n & (n - 1)) != 0)
      throw std::invalid_argument("SpatialGrid: total points must be a power of two");
    if (n_wells % 2 != 0)
      throw std::invalid_argument("SpatialGrid: n_wells must be even");
  }
};

namespace detail {

//! Evaluate the band-n Bloch state for commensurate quasi-momentum index
//! l (q = 2l/n_wells) on the grid via an inverse FFT over plane-wave
//! components. Unit-normalized in the discrete inner product.
inline Eigen::VectorXcd bloch_state_on_grid(const Eigen::MatrixXd& coeffs, int band,
                                            int l, const SpatialGrid& grid, Fft1d& fft) {
  const int n = grid.total_points();
  const int cutoff = (static_cast<int>(coeffs.rows()) - 1) / 2;
  std::complex<double>* buf = fft.data();
  std::fill(buf, buf + n, std::complex<double>(0.0, 0.0));
  for (int j = -cutoff; j <= cutoff; ++j) {
    const int mom = l + j * grid.n_wells; // momentum index on the grid
    if (2 * std::abs(mom) >= n) continue; // discard negligible tail beyond the grid band
    const int bin = mom >= 0 ? mom : mom + n;
    buf[bin] = coeffs(j + cutoff, band);
  }
  fft.backward(); // sum_m c_m e^{+i 2 pi m i / n}
  Eigen::VectorXcd psi(n);
  // the FFT phase is relative to grid index 0; re-reference to x=0 at index n/2
  // by the half-turn sign flip e^{-i pi m} folded in through conjugate symmetry:
  // simply rotate indices so position(i) ordering matches.
  for (int i = 0; i < n; ++i) psi[i] = buf[(i + n / 2) % n];
  psi.normalize();
  return psi;
}

} // namespace detail

//! Well-centered Wannier states for the lowest bands, sampled on a grid.
struct WannierBasis {
  SpatialGrid grid;
  double depth_Er = 0.0;
  Eigen::MatrixXcd states;                   // total_points x n_bands
  std::vector<double> band_average_energies; // E_r
  bool phase_ambiguity_flagged = false;

  int n_bands() const { return static_cast<int>(states.cols()); }
};

//! Kohn-convention Wannier states: superpose Bloch states over the
//! commensurate q-set with each Bloch function phased to be real-positive
//! (even bands) or to have real-positive slope (odd bands) at the well
//! center. Unique for the symmetric lattice; bands above the well depth can
//! lose a sharp phase reference and are flagged.
inline WannierBasis wannier_states(const BlochSpectrum& spectrum, const SpatialGrid& grid) {
  grid.validate();
  if (spectrum.n_bands < 2)
    throw std::invalid_argument("wannier_states: spectrum needs >= 2 bands");

  const int n = grid.total_points();
  const int nw = grid.n_wells;
  const int nb = spectrum.n_bands;

  // Bloch solutions at the grid's commensurate quasi-momenta. Reuse the
  // spectrum's data when its q-grid already matches, otherwise re-solve.
  const std::vector<double> qs = detail::quasi_momentum_grid(nw);
  const bool reuse = spectrum.n_q() == nw &&
                     std::equal(qs.begin(), qs.end(), spectrum.quasi_momenta.begin(),
                                [](double a, double b) { return std::abs(a - b) < 1e-12; });

  WannierBasis basis;
  basis.grid = grid;
  basis.depth_Er = spectrum.depth_Er;
  basis.states = Eigen::MatrixXcd::Zero(n, nb);
  basis.band_average_energies.assign(nb, 0.0);

  Fft1d fft(n);
  const int lo = -(nw / 2) + 1;
  for (int iq = 0; iq < nw; ++iq) {
    Eigen::MatrixXd coeffs;
    Eigen::VectorXd energies;
    if (reuse) {
      coeffs = spectrum.bloch_coefficients[iq];
      energies = spectrum.band_energies.col(iq);
    } else {
      auto sol = detail::solve_bands_at_q(spectrum.depth_Er, qs[iq],
                                          spectrum.plane_wave_cutoff, nb);
      coeffs = std::move(sol.coefficients);
      energies = sol.energies;
    }
    for (int b = 0; b < nb; ++b) {
      Eigen::VectorXcd psi = detail::bloch_state_on_grid(coeffs, b, lo + iq, grid, fft);
      // phase fixing at the well center x = 0 (grid index n/2)
      const std::complex<double> value = psi[n / 2];
      const std::complex<double> slope = (psi[n / 2 + 1] - psi[n / 2 - 1]);
      const double scale = psi.cwiseAbs().maxCoeff();
      std::complex<double> ref = (b % 2 == 0) ? value : slope;
      if (std::abs(ref) < 1e-6 * scale) {
        basis.phase_ambiguity_flagged = true;
        ref = (std::abs(value) > std::abs(slope)) ? value : slope;
      }
      psi *= std::conj(ref) / std::abs(ref);
      basis.states.col(b) += psi;
      basis.band_average_energies[b] += energies[b] / nw;
    }
  }
  for (int b = 0; b < nb; ++b) basis.states.col(b).normalize();
  return basis;
}

//! Single-well coupling data: the omega01 resonance and the matrix elements
//! of the two control operators, x (lattice displacement force channel) and
//! sin^2(kx) (depth modulation channel).
struct TransitionData {
  double omega01 = 0.0;                // rad/s
  Eigen::MatrixXd x_matrix_elements;   // <n|x|m> in units of d
  Eigen::MatrixXd am_matrix_elements;  // <n|sin^2(kx)|m>, dimensionless
  std::vector<double> band_energies;   // band averages, E_r
  double depth_Er = 0.0;
};

inline TransitionData coupling_matrix_elements(const WannierBasis& basis,
                                               const LatticeConfig& cfg) {
  if (basis.n_bands() < 3)
    throw std::invalid_argument("coupling_matrix_elements: need >= 3 bands");
  const int n = basis.grid.total_points();
  const int nb = basis.n_bands();

  Eigen::VectorXd x(n), s2(n);
  for (int i = 0; i < n; ++i) {
    const double xi = basis.grid.position(i);
    x[i] = xi;
    const double s = std::sin(pi * xi);
    s2[i] = s * s;
  }

  TransitionData data;
  data.depth_Er = basis.depth_Er;
  data.x_matrix_elements.resize(nb, nb);
  data.am_matrix_elements.resize(nb, nb);
  for (int a = 0; a < nb; ++a) {
    for (int b = 0; b < nb; ++b) {
      std::complex<double> xe(0.0, 0.0), se(0.0, 0.0);
      for (int i = 0; i < n; ++i) {
        const std::complex<double> prod =
            std::conj(basis.states(i, a)) * basis.states(i, b);
        xe += x[i] * prod;
        se += s2[i] * prod;
      }
      data.x_matrix_elements(a, b) = xe.real();
      data.am_matrix_elements(a, b) = se.real();
    }
  }
  data.x_matrix_elements = 0.5 * (data.x_matrix_elements + data.x_matrix_elements.transpose()).eval();
  data.am_matrix_elements = 0.5 * (data.am_matrix_elements + data.am_matrix_elements.transpose()).eval();

  const double wr = natural_units(cfg).recoil_angular_frequency;
  data.band_energies = basis.band_average_energies;
  data.omega01 = (basis.band_average_energies[1] - basis.band_average_energies[0]) * wr;
  return data;
}

} // namespace lattice
