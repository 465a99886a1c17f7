#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "lattice/band_structure.hpp"
#include "lattice/csv.hpp"
#include "lattice/units.hpp"
#include "lattice/wannier.hpp"

namespace lattice {

//! Three lowest vibrational levels driven through the displacement force
//! channel: H(t) = sum E_n |n><n| + hbar cos(wt) [Omega01 sigma01 + Omega12 sigma12].
struct ThreeLevelSystem {
  std::array<double, 3> energies{};  // E_n / hbar, rad/s
  double rabi01 = 0.0;               // rad/s
  double rabi12 = 0.0;               // rad/s
  double drive_amplitude = 0.0;      // a_PM in units of d

  double omega01() const { return energies[1] - energies[0]; }
  double omega12() const { return energies[2] - energies[1]; }
  double omega_two_photon() const { return 0.5 * (energies[2] - energies[0]); }

  void validate() const {
    if (!(energies[0] < energies[1] && energies[1] < energies[2]))
      throw std::invalid_argument("ThreeLevelSystem: energies must be strictly increasing");
    if (rabi01 < 0.0 || rabi12 < 0.0)
      throw std::invalid_argument("ThreeLevelSystem: Rabi frequencies must be >= 0");
  }
};

//! Reduce the driven lattice to the three-level model at one well: level
//! energies from band averages, couplings from the inertial-force matrix
//! elements evaluated at the drive frequency (Omega_nm = m a w^2 |<n|x|m>| / hbar).
inline ThreeLevelSystem reduce_to_three_level(const LatticeConfig& cfg,
                                              const TransitionData& transition,
                                              double a_pm, double drive_omega) {
  cfg.validate();
  if (a_pm < 0.0) throw std::invalid_argument("reduce_to_three_level: a_pm must be >= 0");
  if (transition.band_energies.size() < 3 || transition.x_matrix_elements.rows() < 3)
    throw std::invalid_argument("reduce_to_three_level: need >= 3 bands of transition data");
  const double wr = natural_units(cfg).recoil_angular_frequency;
  // m a d^2 w^2 x / hbar with a, x in units of d; m d^2/hbar = pi^2/(2 w_r)
  const double scale = a_pm * drive_omega * drive_omega * pi * pi / (2.0 * wr);
  ThreeLevelSystem sys;
  for (int n = 0; n < 3; ++n) sys.energies[n] = transition.band_energies[n] * wr;
  sys.rabi01 = scale * std::abs(transition.x_matrix_elements(0, 1));
  sys.rabi12 = scale * std::abs(transition.x_matrix_elements(1, 2));
  sys.drive_amplitude = a_pm;
  sys.validate();
  return sys;
}

struct CrossingGaps {
  double omega_a = 0.0; // two-photon 0<->2 gap, rad/s
  double omega_b = 0.0; // 1<->2 gap, rad/s
  double omega_c = 0.0; // 0<->1 gap, rad/s
  std::array<double, 3> crossing_frequencies{}; // drive frequencies (a, b, c)
};

namespace detail {

inline Eigen::MatrixXd floquet_matrix(const ThreeLevelSystem& sys, double omega, int blocks) {
  const int dim = 3 * (2 * blocks + 1);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::Matrix3d coupling = Eigen::Matrix3d::Zero();
  coupling(0, 1) = coupling(1, 0) = 0.5 * sys.rabi01;
  coupling(1, 2) = coupling(2, 1) = 0.5 * sys.rabi12;
  for (int b = -blocks; b <= blocks; ++b) {
    const int o = 3 * (b + blocks);
    for (int n = 0; n < 3; ++n) h(o + n, o + n) = sys.energies[n] + b * omega;
    if (b < blocks) h.block<3, 3>(o, o + 3) = h.block<3, 3>(o + 3, o) = coupling;
  }
  return h;
}

//! Separation of the two quasi-energy levels carrying the bare Floquet
//! states (level_lo, photon 0) and (level_hi, photon d_photon).
inline double floquet_pair_gap(const ThreeLevelSystem& sys, double omega, int blocks,
                               int level_lo, int level_hi, int d_photon) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(floquet_matrix(sys, omega, blocks));
  const Eigen::MatrixXd& vecs = solver.eigenvectors();
  const int idx_lo = 3 * blocks + level_lo;
  const int idx_hi = 3 * (blocks + d_photon) + level_hi;
  int best_lo = 0, best_hi = 0;
  double w_lo = -1.0, w_hi = -1.0;
  for (int k = 0; k < vecs.cols(); ++k) {
    const double a = vecs(idx_lo, k) * vecs(idx_lo, k);
    const double b = vecs(idx_hi, k) * vecs(idx_hi, k);
    if (a > w_lo) { w_lo = a; best_lo = k; }
    if (b > w_hi) { w_hi = b; best_hi = k; }
  }
  if (best_lo == best_hi) {
    // fully hybridized at the crossing: take the partner with the next
    // largest weight on either bare state
    int second = -1;
    double w2 = -1.0;
    for (int k = 0; k < vecs.cols(); ++k) {
      if (k == best_lo) continue;
      const double w = std::max(vecs(idx_lo, k) * vecs(idx_lo, k),
                                vecs(idx_hi, k) * vecs(idx_hi, k));
      if (w > w2) { w2 = w; second = k; }
    }
    best_hi = second;
  }
  return std::abs(solver.eigenvalues()[best_lo] - solver.eigenvalues()[best_hi]);
}

inline double golden_min(double lo, double hi, double rel_tol,
                         const std::function<double(double)>& f) {
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = lo, b = hi;
  double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while ((b - a) > rel_tol * std::abs(a + b) * 0.5) {
    if (f1 < f2) {
      b = x2; x2 = x1; f2 = f1;
      x1 = b - phi * (b - a); f1 = f(x1);
    } else {
      a = x1; x1 = x2; f1 = f2;
      x2 = a + phi * (b - a); f2 = f(x2);
    }
  }
  return 0.5 * (a + b);
}

} // namespace detail

struct FloquetScan {
  std::vector<double> omegas;
  Eigen::MatrixXd quasi_energies; // n_states x n_omega, continuity-ordered
};

//! Quasi-energies of the truncated Floquet operator over a drive-frequency
//! scan, with levels tracked continuously by eigenvector overlap.
inline FloquetScan floquet_spectrum(const ThreeLevelSystem& sys,
                                    const std::vector<double>& drive_frequencies,
                                    int blocks = 6) {
  sys.validate();
  if (drive_frequencies.size() < 2)
    throw std::invalid_argument("floquet_spectrum: need >= 2 drive frequencies");
  FloquetScan scan;
  scan.omegas = drive_frequencies;
  const int dim = 3 * (2 * blocks + 1);
  scan.quasi_energies.resize(dim, drive_frequencies.size());
  Eigen::MatrixXd prev_vecs;
  std::vector<int> order(dim);
  for (std::size_t i = 0; i < drive_frequencies.size(); ++i) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(
        detail::floquet_matrix(sys, drive_frequencies[i], blocks));
    Eigen::MatrixXd vecs = solver.eigenvectors();
    Eigen::VectorXd vals = solver.eigenvalues();
    if (i == 0) {
      for (int k = 0; k < dim; ++k) order[k] = k;
    } else {
      // greedy overlap matching against the previous column's ordering
      Eigen::MatrixXd overlap = (prev_vecs.transpose() * vecs).cwiseAbs();
      std::vector<bool> used(dim, false);
      for (int row = 0; row < dim; ++row) {
        int best = -1;
        double w = -1.0;
        for (int k = 0; k < dim; ++k)
          if (!used[k] && overlap(row, k) > w) { w = overlap(row, k); best = k; }
        order[row] = best;
        used[best] = true;
      }
    }
    Eigen::MatrixXd reordered(dim, dim);
    for (int row = 0; row < dim; ++row) {
      scan.quasi_energies(row, i) = vals[order[row]];
      reordered.col(row) = vecs.col(order[row]);
    }
    prev_vecs = reordered;
  }
  return scan;
}

//! Locate the three avoided crossings and their gaps by golden-section
//! minimization of the tracked level separation around each predicted
//! crossing frequency. Escalates the photon-block truncation as a
//! convergence check.
inline CrossingGaps extract_gaps(const ThreeLevelSystem& sys, int blocks = 6,
                                 double rel_tol = 1e-4) {
  sys.validate();
  if (!(sys.rabi01 > 0.0) && !(sys.rabi12 > 0.0))
    throw std::invalid_argument("extract_gaps: zero drive has no avoided crossings");

  struct Crossing {
    double predicted;
    int level_lo, level_hi, d_photon;
    bool active;
  };
  const Crossing crossings[3] = {
      {sys.omega_two_photon(), 0, 2, -2, sys.rabi01 > 0.0 && sys.rabi12 > 0.0}, // a
      {sys.omega12(), 1, 2, -1, sys.rabi12 > 0.0},                              // b
      {sys.omega01(), 0, 1, -1, sys.rabi01 > 0.0},                              // c
  };
  const double spread = std::min(std::abs(sys.omega01() - sys.omega_two_photon()),
                                 std::abs(sys.omega12() - sys.omega_two_photon()));
  CrossingGaps gaps;
  double results[3] = {0.0, 0.0, 0.0};
  for (int c = 0; c < 3; ++c) {
    if (!crossings[c].active) {
      gaps.crossing_frequencies[c] = crossings[c].predicted;
      continue;
    }
    const double half = 0.6 * spread;
    auto gap_at = [&](double w) {
      return detail::floquet_pair_gap(sys, w, blocks, crossings[c].level_lo,
                                      crossings[c].level_hi, crossings[c].d_photon);
    };
    const double w_min = detail::golden_min(crossings[c].predicted - half,
                                            crossings[c].predicted + half, rel_tol, gap_at);
    // near the crossing the squared separation is a hyperbola,
    // f^2 = g^2 + s^2 (w - w*)^2; three samples pin g exactly, which matters
    // when the gap is far below the golden-section frequency resolution
    auto refine = [&](double w, double h) {
      const double q0 = std::pow(gap_at(w), 2);
      const double qm = std::pow(gap_at(w - h), 2);
      const double qp = std::pow(gap_at(w + h), 2);
      const double curv = (qp + qm - 2.0 * q0) / (2.0 * h * h);
      if (!(curv > 0.0)) return std::sqrt(q0);
      const double offset = (qm - qp) / (8.0 * curv * h) * 2.0;
      const double g2 = q0 - curv * offset * offset;
      return std::sqrt(std::max(g2, 0.0));
    };
    const double g = refine(w_min, std::max(1e-4 * w_min, 1e-6));
    const double g_fine = [&] {
      auto gap_fine = [&](double w) {
        return detail::floquet_pair_gap(sys, w, blocks + 2, crossings[c].level_lo,
                                        crossings[c].level_hi, crossings[c].d_photon);
      };
      const double q0 = std::pow(gap_fine(w_min), 2);
      const double h = std::max(1e-4 * w_min, 1e-6);
      const double qm = std::pow(gap_fine(w_min - h), 2);
      const double qp = std::pow(gap_fine(w_min + h), 2);
      const double curv = (qp + qm - 2.0 * q0) / (2.0 * h * h);
      if (!(curv > 0.0)) return std::sqrt(q0);
      const double offset = (qm - qp) / (8.0 * curv * h) * 2.0;
      return std::sqrt(std::max(q0 - curv * offset * offset, 0.0));
    }();
    if (std::abs(g - g_fine) > 0.01 * std::max(g, g_fine))
      throw ConvergenceError("extract_gaps: photon-block truncation not converged");
    results[c] = g;
    gaps.crossing_frequencies[c] = w_min;
  }
  gaps.omega_a = results[0];
  gaps.omega_b = results[1];
  gaps.omega_c = results[2];
  return gaps;
}

//! Diabatic (Landau-Zener) passage probability as the closed-form
//! exp(-Omega^2 / (4 |beta|)). Consistent with the numerically integrated
//! sweeps when `chirp_rate` carries the ordinary-frequency sweep rate
//! (angular rate / 2 pi).
inline double lz_probability(double gap, double chirp_rate) {
  if (!(std::abs(chirp_rate) > 0.0))
    throw std::domain_error("lz_probability: chirp rate must be nonzero");
  return std::exp(-0.25 * gap * gap / std::abs(chirp_rate));
}

struct ChirpedTransferResult {
  std::array<double, 3> populations{};
  double sweep_duration = 0.0;
};

//! Integrate the driven three-level system through a linear frequency sweep
//! centered on the two-photon crossing (or an explicit center). Positive
//! beta sweeps upward. The stepping is midpoint-exponential (second order),
//! dt set so the fastest drive phase advances < 0.05 rad per step.
inline ChirpedTransferResult chirped_transfer(const ThreeLevelSystem& sys, double beta,
                                              double sweep_span, int initial_level,
                                              double sweep_center = 0.0,
                                              double envelope_ramp_fraction = 0.0,
                                              double phase_step_limit = 0.05) {
  sys.validate();
  if (beta == 0.0) throw std::invalid_argument("chirped_transfer: beta must be nonzero");
  if (!(sweep_span > 0.0)) throw std::invalid_argument("chirped_transfer: bad sweep span");
  if (initial_level < 0 || initial_level > 2)
    throw std::out_of_range("chirped_transfer: initial level");
  if (envelope_ramp_fraction < 0.0 || envelope_ramp_fraction > 0.4)
    throw std::invalid_argument("chirped_transfer: ramp fraction outside [0, 0.4]");
  const double center = sweep_center > 0.0 ? sweep_center : sys.omega_two_photon();
  const double w_start = beta > 0.0 ? center - 0.5 * sweep_span : center + 0.5 * sweep_span;
  const double duration = sweep_span / std::abs(beta);
  const double w_max = center + 0.5 * sweep_span;
  const double dt = phase_step_limit / w_max;
  const std::size_t steps = static_cast<std::size_t>(std::ceil(duration / dt));
  const double dts = duration / steps;
  const double t_ramp = envelope_ramp_fraction * duration;

  // raised-cosine switching at the far-detuned edges; suppresses the
  // switch-on Stuckelberg ringing that otherwise masks the crossing physics
  auto envelope = [&](double t) {
    if (t_ramp <= 0.0) return 1.0;
    if (t < t_ramp) return 0.5 * (1.0 - std::cos(pi * t / t_ramp));
    if (t > duration - t_ramp) return 0.5 * (1.0 - std::cos(pi * (duration - t) / t_ramp));
    return 1.0;
  };

  Eigen::Vector3cd psi = Eigen::Vector3cd::Zero();
  psi[initial_level] = 1.0;
  Eigen::Matrix3d h;
  for (std::size_t s = 0; s < steps; ++s) {
    const double tm = (s + 0.5) * dts;
    const double phase = w_start * tm + 0.5 * beta * tm * tm;
    const double drive = envelope(tm) * std::cos(phase);
    h.setZero();
    h(0, 0) = sys.energies[0];
    h(1, 1) = sys.energies[1];
    h(2, 2) = sys.energies[2];
    h(0, 1) = h(1, 0) = sys.rabi01 * drive;
    h(1, 2) = h(2, 1) = sys.rabi12 * drive;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(h);
    Eigen::Vector3cd phases;
    for (int k = 0; k < 3; ++k)
      phases[k] = std::polar(1.0, -eig.eigenvalues()[k] * dts);
    psi = eig.eigenvectors() * (phases.asDiagonal() * (eig.eigenvectors().transpose() * psi));
  }
  ChirpedTransferResult r;
  for (int n = 0; n < 3; ++n) r.populations[n] = std::norm(psi[n]);
  r.sweep_duration = duration;
  return r;
}

inline void export_floquet_csv(const FloquetScan& scan, const std::string& path) {
  CsvTable t;
  t.header.push_back("omega");
  for (int k = 0; k < scan.quasi_energies.rows(); ++k)
    t.header.push_back("eps" + std::to_string(k));
  t.columns.assign(t.header.size(), {});
  for (std::size_t i = 0; i < scan.omegas.size(); ++i) {
    t.columns[0].push_back(scan.omegas[i]);
    for (int k = 0; k < scan.quasi_energies.rows(); ++k)
      t.columns[1 + k].push_back(scan.quasi_energies(k, i));
  }
  write_csv(path, t);
}

} // namespace lattice
