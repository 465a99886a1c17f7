#pragma once

#include <cmath>
#include <complex>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lattice/band_structure.hpp"
#include "lattice/csv.hpp"
#include "lattice/pulse.hpp"
#include "lattice/units.hpp"

namespace lattice {

struct ExportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateSeedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

//! One quasi-momentum member of the control ensemble: band energies on the
//! diagonal, the depth-modulation and displacement-force operators as the
//! two control channels. All entries in rad/s; controls are dimensionless
//! (eta, and force in units of E_r/d).
struct EnsembleMember {
  double q = 0.0;
  Eigen::VectorXd energies;  // rad/s
  Eigen::MatrixXcd am_op;    // d H / d eta, rad/s
  Eigen::MatrixXcd force_op; // d H / d f,   rad/s
};

enum class GrapeObjective { StateTransfer, Gate };

struct ControlProblem {
  std::vector<EnsembleMember> members;
  double duration = 0.0; // s
  int n_slices = 0;
  int n_levels = 0;
  double eta_bound = 0.2;
  double force_bound = 12.0; // units of E_r/d
  GrapeObjective objective = GrapeObjective::StateTransfer;

  double dt() const { return duration / n_slices; }

  void validate() const {
    if (members.empty()) throw std::invalid_argument("ControlProblem: no members");
    if (n_slices < 10) throw std::invalid_argument("ControlProblem: n_slices >= 10 required");
    if (!(duration > 0.0)) throw std::invalid_argument("ControlProblem: duration must be positive");
    if (!(eta_bound > 0.0) || !(force_bound > 0.0))
      throw std::invalid_argument("ControlProblem: bounds must be positive");
  }
};

namespace detail {

//! Interband elements of x between Bloch states at fixed q, from
//! perturbation of the central equation: <u_n|x|u_m> = i (d/pi) <u_n|dH/dq|u_m>/(E_m - E_n),
//! with dH/dq diagonal 2(q + 2j) in E_r units. Purely imaginary and
//! Hermitian in this gauge; the diagonal vanishes for the symmetric lattice.
inline Eigen::MatrixXcd x_elements_at_q(const Eigen::MatrixXd& coeffs,
                                        const Eigen::VectorXd& energies, double q) {
  const int nb = static_cast<int>(energies.size());
  const int cutoff = (static_cast<int>(coeffs.rows()) - 1) / 2;
  Eigen::VectorXd hprime(2 * cutoff + 1);
  for (int row = 0; row < 2 * cutoff + 1; ++row)
    hprime[row] = 2.0 * (q + 2.0 * (row - cutoff));
  Eigen::MatrixXcd x = Eigen::MatrixXcd::Zero(nb, nb);
  for (int n = 0; n < nb; ++n) {
    for (int m = n + 1; m < nb; ++m) {
      const double num = coeffs.col(n).dot(hprime.asDiagonal() * coeffs.col(m));
      const double de = energies[m] - energies[n];
      const std::complex<double> val(0.0, num / (pi * de));
      x(n, m) = val;
      x(m, n) = std::conj(val);
    }
  }
  return x;
}

//! <u_n|sin^2(kx)|u_m> from plane-wave coefficients:
//! sin^2 = 1/2 - (e^{2ikx} + e^{-2ikx})/4.
inline Eigen::MatrixXd am_elements(const Eigen::MatrixXd& coeffs) {
  const int nb = static_cast<int>(coeffs.cols());
  const int dim = static_cast<int>(coeffs.rows());
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(nb, nb);
  for (int n = 0; n < nb; ++n) {
    for (int m = n; m < nb; ++m) {
      double v = 0.5 * coeffs.col(n).dot(coeffs.col(m));
      for (int row = 0; row + 1 < dim; ++row) {
        v -= 0.25 * coeffs(row, n) * coeffs(row + 1, m);
        v -= 0.25 * coeffs(row + 1, n) * coeffs(row, m);
      }
      s(n, m) = v;
      s(m, n) = v;
    }
  }
  return s;
}

} // namespace detail

struct BuildProblemOptions {
  double eta_bound = 0.2;
  double force_bound = 12.0;
  GrapeObjective objective = GrapeObjective::StateTransfer;
};

//! Assemble the quasi-momentum ensemble at one lattice depth. Members sit on
//! a midpoint grid over the Brillouin zone (a single member sits at q = 0).
inline ControlProblem build_problem(const LatticeConfig& cfg, const BlochSpectrum& spectrum,
                                    int n_levels, int n_q_ensemble, double duration,
                                    int n_slices, const BuildProblemOptions& opts = {}) {
  cfg.validate();
  if (n_levels < 4) throw std::invalid_argument("build_problem: n_levels >= 4 required");
  if (n_levels > spectrum.n_bands)
    throw std::invalid_argument("build_problem: n_levels exceeds computed bands");
  if (n_q_ensemble < 1) throw std::invalid_argument("build_problem: n_q_ensemble >= 1");

  const double wr = natural_units(cfg).recoil_angular_frequency;
  ControlProblem problem;
  problem.duration = duration;
  problem.n_slices = n_slices;
  problem.n_levels = n_levels;
  problem.eta_bound = opts.eta_bound;
  problem.force_bound = opts.force_bound;
  problem.objective = opts.objective;

  for (int j = 0; j < n_q_ensemble; ++j) {
    const double q = -1.0 + 2.0 * (j + 0.5) / n_q_ensemble;
    auto sol = detail::solve_bands_at_q(spectrum.depth_Er, q, spectrum.plane_wave_cutoff,
                                        n_levels);
    EnsembleMember member;
    member.q = q;
    member.energies = sol.energies * wr;
    member.am_op = (spectrum.depth_Er * wr) * detail::am_elements(sol.coefficients);
    member.force_op = wr * detail::x_elements_at_q(sol.coefficients, sol.energies, q);
    problem.members.push_back(std::move(member));
  }
  problem.validate();
  return problem;
}

struct FidelityGradient {
  double fidelity = 0.0;
  Eigen::MatrixXd gradient; // n_slices x 2 (eta, force)
  std::vector<double> member_fidelities;
};

//! Ensemble-averaged transfer fidelity and its exact gradient. Slice
//! propagators are eigen-decomposed, and the gradient uses the exact Frechet
//! derivative of the matrix exponential, so it matches finite differences to
//! discretization-free accuracy.
inline FidelityGradient fidelity_and_gradient(const ControlProblem& problem,
                                              const Eigen::MatrixXd& controls) {
  problem.validate();
  if (controls.rows() != problem.n_slices || controls.cols() != 2)
    throw std::invalid_argument("fidelity_and_gradient: controls must be n_slices x 2");

  const int n = problem.n_levels;
  const int ns = problem.n_slices;
  const double dt = problem.dt();
  using Mat = Eigen::MatrixXcd;
  using Vec = Eigen::VectorXcd;

  FidelityGradient out;
  out.gradient = Eigen::MatrixXd::Zero(ns, 2);

  const bool gate = problem.objective == GrapeObjective::Gate;
  const int n_cols = gate ? 2 : 1;

  for (const auto& member : problem.members) {
    std::vector<Eigen::VectorXd> evals(ns);
    std::vector<Mat> evecs(ns);
    std::vector<Mat> fwd(ns + 1); // states before each slice (columns)
    fwd[0] = Mat::Zero(n, n_cols);
    for (int c = 0; c < n_cols; ++c) fwd[0](c, c) = 1.0;

    for (int j = 0; j < ns; ++j) {
      Mat h = member.am_op * controls(j, 0) + member.force_op * controls(j, 1);
      h.diagonal() += member.energies.cast<std::complex<double>>();
      Eigen::SelfAdjointEigenSolver<Mat> eig(h);
      evals[j] = eig.eigenvalues();
      evecs[j] = eig.eigenvectors();
      Vec phases(n);
      for (int k = 0; k < n; ++k) phases[k] = std::polar(1.0, -evals[j][k] * dt);
      fwd[j + 1] = evecs[j] * (phases.asDiagonal() * (evecs[j].adjoint() * fwd[j]));
    }

    // overlap with the target
    std::complex<double> c;
    Mat cost(n, n_cols); // costates: (U_N ... U_{j+1})^dagger target columns
    if (gate) {
      // X_pi on the two lowest levels: target couples |0> <-> |1>
      c = 0.5 * (fwd[ns](1, 0) + fwd[ns](0, 1));
      cost = Mat::Zero(n, 2);
      cost(1, 0) = 1.0;
      cost(0, 1) = 1.0;
    } else {
      c = fwd[ns](1, 0);
      cost = Mat::Zero(n, 1);
      cost(1, 0) = 1.0;
    }
    out.member_fidelities.push_back(std::norm(c));
    out.fidelity += std::norm(c);

    for (int j = ns - 1; j >= 0; --j) {
      // Frechet derivative of exp(-i H dt) in the slice eigenbasis:
      // G_ab = -i dt e^{-i (l_a + l_b) dt / 2} sinc((l_a - l_b) dt / 2)
      Mat gfac(n, n);
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
          const double s = 0.5 * (evals[j][a] - evals[j][b]) * dt;
          const double sinc = std::abs(s) < 1e-12 ? 1.0 : std::sin(s) / s;
          gfac(a, b) = std::complex<double>(0.0, -dt) *
                       std::polar(sinc, -0.5 * (evals[j][a] + evals[j][b]) * dt);
        }
      const Mat left = evecs[j].adjoint() * cost;   // n x n_cols
      const Mat right = evecs[j].adjoint() * fwd[j]; // n x n_cols
      for (int ch = 0; ch < 2; ++ch) {
        const Mat& hc = ch == 0 ? member.am_op : member.force_op;
        const Mat mid = gfac.cwiseProduct(evecs[j].adjoint() * hc * evecs[j]);
        std::complex<double> dc(0.0, 0.0);
        for (int col = 0; col < n_cols; ++col)
          dc += left.col(col).dot(mid * right.col(col));
        if (gate) dc *= 0.5;
        out.gradient(j, ch) += 2.0 * std::real(std::conj(c) * dc);
      }
      // pull the costates back through slice j
      Vec phases(n);
      for (int k = 0; k < n; ++k) phases[k] = std::polar(1.0, evals[j][k] * dt);
      cost = evecs[j] * (phases.asDiagonal() * (evecs[j].adjoint() * cost));
    }
  }

  const double inv = 1.0 / problem.members.size();
  out.fidelity *= inv;
  out.gradient *= inv;
  return out;
}

struct IterationRecord {
  double fidelity = 0.0;
  double gradient_norm = 0.0;
  double step = 0.0;
};

struct OptimizationTrace {
  std::vector<IterationRecord> iterations;
  std::vector<double> member_fidelities;
  double final_fidelity = 0.0;
  std::string stop_reason;
};

struct OptimizeOptions {
  int max_iters = 500;
  double grad_tol = 1e-7;
  double plateau_tol = 1e-8;
  double initial_step = 0.0; // 0: auto from bounds
  std::uint64_t seed = 1;
  double seed_scale = 0.1;   // fraction of the bounds for the noise seed
  //! Keep the force channel displacement-neutral (zero net impulse and zero
  //! net displacement) so the exported theta needs no ramp correction.
  bool project_force_moments = true;
  //! Remove force content below this many harmonics of 1/T (AC-coupled
  //! drive). Slow force components integrate into large lattice excursions
  //! that the fixed-quasi-momentum model cannot see; keeping the channel
  //! high-passed keeps the model faithful to the full dynamics.
  int force_highpass_harmonics = 2;
};

namespace detail {

//! Orthonormal basis of the "forbidden" force subspace: the two endpoint
//! moments (net impulse, net displacement) plus Fourier modes up to
//! `harmonics` of the pulse period.
inline Eigen::MatrixXd force_constraint_basis(int n, int harmonics) {
  std::vector<Eigen::VectorXd> raw;
  raw.push_back(Eigen::VectorXd::Ones(n));
  Eigen::VectorXd ramp(n);
  for (int j = 0; j < n; ++j) ramp[j] = j + 0.5;
  raw.push_back(ramp);
  for (int h = 1; h <= harmonics; ++h) {
    Eigen::VectorXd c(n), s(n);
    for (int j = 0; j < n; ++j) {
      c[j] = std::cos(two_pi * h * (j + 0.5) / n);
      s[j] = std::sin(two_pi * h * (j + 0.5) / n);
    }
    raw.push_back(c);
    raw.push_back(s);
  }
  Eigen::MatrixXd basis(n, raw.size());
  int cols = 0;
  for (auto& v : raw) {
    for (int k = 0; k < cols; ++k) v -= basis.col(k).dot(v) * basis.col(k);
    const double norm = v.norm();
    if (norm > 1e-12) basis.col(cols++) = v / norm;
  }
  return basis.leftCols(cols);
}

//! Remove the forbidden-subspace components of the force column.
inline void project_force_column(Eigen::Ref<Eigen::VectorXd> f, const Eigen::MatrixXd& basis) {
  f -= basis * (basis.transpose() * f);
}

inline void clip_controls(Eigen::MatrixXd& u, const ControlProblem& p) {
  const double eta_lo = std::max(-0.9, -p.eta_bound);
  for (int j = 0; j < u.rows(); ++j) {
    u(j, 0) = std::clamp(u(j, 0), eta_lo, p.eta_bound);
    u(j, 1) = std::clamp(u(j, 1), -p.force_bound, p.force_bound);
  }
}

} // namespace detail

//! Band-limited random seed: up to three harmonics of 1/T per channel,
//! scaled to a fraction of the control bounds.
inline Eigen::MatrixXd seed_controls(const ControlProblem& problem, std::uint64_t seed,
                                     double scale = 0.1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> amp(-1.0, 1.0);
  const int ns = problem.n_slices;
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(ns, 2);
  for (int ch = 0; ch < 2; ++ch) {
    const double bound = ch == 0 ? problem.eta_bound : problem.force_bound;
    for (int h = 1; h <= 3; ++h) {
      const double a = amp(rng), b = amp(rng);
      for (int j = 0; j < ns; ++j) {
        const double t = (j + 0.5) / ns;
        u(j, ch) += a * std::sin(two_pi * h * t) + b * std::cos(two_pi * h * t);
      }
    }
    const double peak = u.col(ch).cwiseAbs().maxCoeff();
    if (peak > 0.0) u.col(ch) *= scale * bound / peak;
  }
  return u;
}

//! Projected gradient ascent with a backtracking line search; accepted
//! iterations never decrease the fidelity.
inline std::pair<Eigen::MatrixXd, OptimizationTrace> optimize(const ControlProblem& problem,
                                                              Eigen::MatrixXd controls,
                                                              const OptimizeOptions& opts = {}) {
  problem.validate();
  if (controls.size() == 0) controls = seed_controls(problem, opts.seed, opts.seed_scale);
  if (controls.rows() != problem.n_slices || controls.cols() != 2)
    throw std::invalid_argument("optimize: controls must be n_slices x 2");

  const Eigen::MatrixXd forbidden =
      opts.project_force_moments
          ? detail::force_constraint_basis(problem.n_slices, opts.force_highpass_harmonics)
          : Eigen::MatrixXd();
  auto sanitize = [&](Eigen::MatrixXd& u) {
    if (opts.project_force_moments) detail::project_force_column(u.col(1), forbidden);
    detail::clip_controls(u, problem);
  };
  sanitize(controls);

  OptimizationTrace trace;
  FidelityGradient fg = fidelity_and_gradient(problem, controls);
  double step = opts.initial_step;

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    Eigen::MatrixXd g = fg.gradient;
    if (opts.project_force_moments) detail::project_force_column(g.col(1), forbidden);
    const double gnorm = g.norm();
    if (iter == 0 && gnorm < 1e-14)
      throw DegenerateSeedError("optimize: zero gradient at the seed; perturb the initial controls");
    const double gmax = g.cwiseAbs().maxCoeff();
    const double auto_step =
        gmax > 0.0 ? 0.05 * std::min(problem.eta_bound, problem.force_bound) / gmax : 1.0;
    // each search starts no smaller than the auto step, so a "plateau" means
    // no step of any useful size improves the fidelity (and a restart from
    // converged controls stops right away)
    step = std::max(step, auto_step);
    trace.iterations.push_back({fg.fidelity, gnorm, step});
    if (gnorm < opts.grad_tol) {
      trace.stop_reason = "gradient below tolerance";
      break;
    }

    bool accepted = false;
    for (int attempt = 0; attempt < 25; ++attempt) {
      Eigen::MatrixXd candidate = controls + step * g;
      sanitize(candidate);
      FidelityGradient cand = fidelity_and_gradient(problem, candidate);
      if (cand.fidelity > fg.fidelity + opts.plateau_tol) {
        controls = std::move(candidate);
        fg = std::move(cand);
        step *= 1.4;
        accepted = true;
        break;
      }
      step *= 0.35;
    }
    if (!accepted) {
      trace.stop_reason = "fidelity plateau";
      break;
    }
  }
  if (trace.stop_reason.empty()) trace.stop_reason = "max iterations";
  trace.final_fidelity = fg.fidelity;
  trace.member_fidelities = fg.member_fidelities;
  return {controls, trace};
}

//! Turn converged controls into a sampled waveform: eta is taken directly,
//! the force channel is integrated twice into theta with a cubic endpoint
//! correction pinning theta and theta-dot to zero at both ends.
inline Waveform export_waveform(const ControlProblem& problem, const Eigen::MatrixXd& controls,
                                const LatticeConfig& cfg, double dt_wave = 1e-6) {
  problem.validate();
  if (controls.rows() != problem.n_slices || controls.cols() != 2)
    throw std::invalid_argument("export_waveform: controls must be n_slices x 2");
  const double wr = natural_units(cfg).recoil_angular_frequency;
  const double accel_scale = -2.0 * wr * wr / (pi * pi); // f (E_r/d) -> theta-ddot (d/s^2)

  PulseSpec pc;
  pc.variant = PulseVariant::PiecewiseConstant;
  pc.slice_duration = problem.dt();
  pc.slice_eta.resize(problem.n_slices);
  pc.slice_accel.resize(problem.n_slices);
  for (int j = 0; j < problem.n_slices; ++j) {
    pc.slice_eta[j] = controls(j, 0);
    pc.slice_accel[j] = accel_scale * controls(j, 1);
  }
  Waveform wf = synthesize(pc, dt_wave);

  // cubic endpoint correction p(t): p(0)=p'(0)=0, p(T)=theta(T), p'(T)=theta-dot(T)
  const std::size_t n = wf.size();
  const double T = wf.duration();
  const double d_theta = wf.theta.back();
  double d_rate = 0.0;
  for (int j = 0; j < problem.n_slices; ++j)
    d_rate += pc.slice_accel[j] * pc.slice_duration;

  double peak = 0.0;
  for (double th : wf.theta) peak = std::max(peak, std::abs(th));
  const double a2 = (3.0 * d_theta - T * d_rate) / (T * T);
  const double a3 = (T * d_rate - 2.0 * d_theta) / (T * T * T);
  double peak_corr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = i * wf.dt;
    const double p = a2 * t * t + a3 * t * t * t;
    peak_corr = std::max(peak_corr, std::abs(p));
    wf.theta[i] -= p;
    wf.accel[i] -= 2.0 * a2 + 6.0 * a3 * t;
  }
  if (peak > 0.0 && peak_corr > 0.1 * peak)
    throw ExportError("export_waveform: endpoint correction exceeds 10% of the peak "
                      "displacement; the design is not displacement-neutral");
  wf.theta.back() = 0.0;
  wf.endpoint_compliant = true;
  wf.validate();
  return wf;
}

inline void export_controls_csv(const Eigen::MatrixXd& controls, const std::string& path) {
  CsvTable t;
  t.header = {"slice", "eta", "force"};
  t.columns.assign(3, {});
  for (int j = 0; j < controls.rows(); ++j) {
    t.columns[0].push_back(j);
    t.columns[1].push_back(controls(j, 0));
    t.columns[2].push_back(controls(j, 1));
  }
  write_csv(path, t);
}

inline Eigen::MatrixXd import_controls_csv(const std::string& path) {
  CsvTable t = read_csv(path);
  const auto& eta = t.column("eta");
  const auto& force = t.column("force");
  Eigen::MatrixXd u(eta.size(), 2);
  for (std::size_t j = 0; j < eta.size(); ++j) {
    u(j, 0) = eta[j];
    u(j, 1) = force[j];
  }
  return u;
}

} // namespace lattice
