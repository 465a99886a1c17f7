#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lattice/csv.hpp"
#include "lattice/units.hpp"

namespace lattice {

struct ConvergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

//! Bloch bands of H = p^2/2m + U sin^2(kx), from the plane-wave (central
//! equation) eigenproblem. Energies are in units of E_r, quasi-momenta in
//! units of hbar*k over the first Brillouin zone (-1, 1].
struct BlochSpectrum {
  double depth_Er = 0.0;
  int n_bands = 0;
  int plane_wave_cutoff = 0;       // components run over e^{i 2 j k x}, |j| <= cutoff
  std::vector<double> quasi_momenta;
  Eigen::MatrixXd band_energies;   // n_bands x n_q
  std::vector<Eigen::MatrixXd> bloch_coefficients; // per q: (2*cutoff+1) x n_bands, real

  int n_q() const { return static_cast<int>(quasi_momenta.size()); }

  double energy(int band, int q_index) const { return band_energies(band, q_index); }

  double band_average_energy(int band) const {
    return band_energies.row(band).mean();
  }

  //! (E1 - E0)/hbar in rad/s, from band-averaged energies.
  double omega01(const LatticeConfig& cfg) const {
    const double wr = natural_units(cfg).recoil_angular_frequency;
    return (band_average_energy(1) - band_average_energy(0)) * wr;
  }
};

namespace detail {

//! H/E_r in the plane-wave basis e^{i(q + 2j)kx}: diagonal (q+2j)^2 + U/2,
//! off-diagonal -U/4 coupling j <-> j+-1. Real symmetric for real q.
inline Eigen::MatrixXd central_equation_matrix(double depth_Er, double q, int cutoff) {
  const int dim = 2 * cutoff + 1;
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim, dim);
  for (int row = 0; row < dim; ++row) {
    const double j = static_cast<double>(row - cutoff);
    h(row, row) = (q + 2.0 * j) * (q + 2.0 * j) + 0.5 * depth_Er;
    if (row + 1 < dim) {
      h(row, row + 1) = -0.25 * depth_Er;
      h(row + 1, row) = -0.25 * depth_Er;
    }
  }
  return h;
}

struct BandSolution {
  Eigen::VectorXd energies;       // ascending
  Eigen::MatrixXd coefficients;   // dim x n_bands, columns unit-normalized
};

inline BandSolution solve_bands_at_q(double depth_Er, double q, int cutoff, int n_bands) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(
      central_equation_matrix(depth_Er, q, cutoff));
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("solve_bands_at_q: eigensolver failed");
  BandSolution sol;
  sol.energies = solver.eigenvalues().head(n_bands);
  sol.coefficients = solver.eigenvectors().leftCols(n_bands);
  return sol;
}

//! Quasi-momentum grid 2i/n covering (-1, 1]; commensurate with an n-well
//! periodic box, so the same set serves Wannier sums and grid projectors.
inline std::vector<double> quasi_momentum_grid(int n_q) {
  std::vector<double> q(n_q);
  const int lo = -(n_q / 2) + 1;
  for (int i = 0; i < n_q; ++i) q[i] = 2.0 * (lo + i) / n_q;
  return q;
}

} // namespace detail

struct BandOptions {
  int plane_wave_cutoff = 16;  // 33 components; converged well past 50 E_r
  bool check_convergence = true;
  double convergence_tol_Er = 1e-9;
};

inline BlochSpectrum compute_band_structure(const LatticeConfig& cfg, int n_bands,
                                            int n_q, const BandOptions& opts = {}) {
  cfg.validate();
  if (n_bands < 3) throw std::invalid_argument("compute_band_structure: n_bands >= 3 required");
  if (n_q < 1) throw std::invalid_argument("compute_band_structure: n_q >= 1 required");
  // keep at least 4 plane-wave components per requested band
  const int cutoff = std::max(opts.plane_wave_cutoff, 2 * n_bands);

  BlochSpectrum spec;
  spec.depth_Er = cfg.depth_Er;
  spec.n_bands = n_bands;
  spec.plane_wave_cutoff = cutoff;
  spec.quasi_momenta = detail::quasi_momentum_grid(n_q);
  spec.band_energies.resize(n_bands, n_q);
  spec.bloch_coefficients.resize(n_q);

  for (int i = 0; i < n_q; ++i) {
    auto sol = detail::solve_bands_at_q(cfg.depth_Er, spec.quasi_momenta[i], cutoff, n_bands);
    spec.band_energies.col(i) = sol.energies;
    spec.bloch_coefficients[i] = std::move(sol.coefficients);
  }

  if (opts.check_convergence) {
    for (double q : {0.0, 1.0}) {
      auto coarse = detail::solve_bands_at_q(cfg.depth_Er, q, cutoff, n_bands);
      auto fine = detail::solve_bands_at_q(cfg.depth_Er, q, 2 * cutoff, n_bands);
      const double delta = (coarse.energies - fine.energies).cwiseAbs().maxCoeff();
      if (delta > opts.convergence_tol_Er)
        throw ConvergenceError("compute_band_structure: plane-wave cutoff " +
                               std::to_string(cutoff) + " not converged (dE=" +
                               std::to_string(delta) + " E_r)");
    }
  }
  return spec;
}

//! Tabulated omega01(U) with its monotone inverse. Frequencies in rad/s.
class Omega01Curve {
 public:
  Omega01Curve(std::vector<double> depths, std::vector<double> omegas)
      : depths_(std::move(depths)), omegas_(std::move(omegas)) {
    if (depths_.size() != omegas_.size() || depths_.size() < 2)
      throw std::invalid_argument("Omega01Curve: need >= 2 samples");
    for (std::size_t i = 1; i < depths_.size(); ++i) {
      if (!(depths_[i] > depths_[i - 1]))
        throw std::invalid_argument("Omega01Curve: depths must be strictly increasing");
      if (!(omegas_[i] > omegas_[i - 1]))
        throw std::invalid_argument("Omega01Curve: curve not strictly monotonic");
    }
  }

  const std::vector<double>& depths() const { return depths_; }
  const std::vector<double>& omegas() const { return omegas_; }

  double omega_at(double depth) const { return interp(depths_, omegas_, depth, "depth"); }
  double depth_at(double omega) const { return interp(omegas_, depths_, omega, "omega01"); }

  //! d(omega01)/dU by central differences on the tabulation.
  double derivative_at(double depth) const {
    const std::size_t i = bracket(depths_, depth, "depth");
    const std::size_t lo = i > 0 ? i - 1 : 0;
    const std::size_t hi = std::min(i + 1, depths_.size() - 1);
    return (omegas_[hi] - omegas_[lo]) / (depths_[hi] - depths_[lo]);
  }

  double min_omega() const { return omegas_.front(); }
  double max_omega() const { return omegas_.back(); }

 private:
  static std::size_t bracket(const std::vector<double>& xs, double x, const char* what) {
    if (x < xs.front() || x > xs.back())
      throw std::out_of_range(std::string("Omega01Curve: ") + what + " outside tabulated range");
    auto it = std::upper_bound(xs.begin(), xs.end(), x);
    std::size_t i = static_cast<std::size_t>(it - xs.begin());
    if (i > 0) --i;
    return std::min(i, xs.size() - 2);
  }

  static double interp(const std::vector<double>& xs, const std::vector<double>& ys,
                       double x, const char* what) {
    const std::size_t i = bracket(xs, x, what);
    const double t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    return ys[i] + t * (ys[i + 1] - ys[i]);
  }

  std::vector<double> depths_;
  std::vector<double> omegas_;
};

inline Omega01Curve omega01_of_depth(const LatticeConfig& base,
                                     const std::vector<double>& depth_list,
                                     int n_q = 64, const BandOptions& opts = {}) {
  if (depth_list.size() < 2)
    throw std::invalid_argument("omega01_of_depth: need >= 2 depths");
  std::vector<double> omegas;
  omegas.reserve(depth_list.size());
  for (double u : depth_list) {
    LatticeConfig cfg = base;
    cfg.depth_Er = u;
    BandOptions o = opts;
    o.check_convergence = false; // cutoff validated once below
    omegas.push_back(compute_band_structure(cfg, 3, n_q, o).omega01(cfg));
  }
  {
    LatticeConfig cfg = base;
    cfg.depth_Er = depth_list.back();
    compute_band_structure(cfg, 3, 1, opts); // convergence probe at the deepest point
  }
  return Omega01Curve(depth_list, omegas);
}

inline void export_bands_csv(const BlochSpectrum& spec, const std::string& path) {
  CsvTable t;
  t.header.push_back("q");
  for (int n = 0; n < spec.n_bands; ++n) t.header.push_back("E" + std::to_string(n));
  t.columns.assign(t.header.size(), {});
  for (int i = 0; i < spec.n_q(); ++i) {
    t.columns[0].push_back(spec.quasi_momenta[i]);
    for (int n = 0; n < spec.n_bands; ++n)
      t.columns[1 + n].push_back(spec.band_energies(n, i));
  }
  write_csv(path, t);
}

inline void export_curve_csv(const Omega01Curve& curve, const std::string& path) {
  CsvTable t;
  t.header = {"U_Er", "omega01_rad_s"};
  t.columns = {curve.depths(), curve.omegas()};
  write_csv(path, t);
}

} // namespace lattice
