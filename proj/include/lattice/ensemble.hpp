#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "lattice/band_structure.hpp"
#include "lattice/fitting.hpp"
#include "lattice/parallel.hpp"
#include "lattice/propagate.hpp"
#include "lattice/pulse.hpp"

namespace lattice {

//! Sampled probability density over lattice depth, rho(U) on a strictly
//! increasing grid, trapezoid-normalized to 1.
struct DepthDistribution {
  std::vector<double> depths;  // E_r
  std::vector<double> weights; // density, 1/E_r

  void validate() const {
    if (depths.size() != weights.size() || depths.size() < 1)
      throw std::invalid_argument("DepthDistribution: size mismatch");
    for (std::size_t i = 1; i < depths.size(); ++i)
      if (!(depths[i] > depths[i - 1]))
        throw std::invalid_argument("DepthDistribution: depths must be strictly increasing");
    for (double w : weights)
      if (w < 0.0) throw std::invalid_argument("DepthDistribution: negative weight");
    if (depths.size() > 1 && std::abs(integral() - 1.0) > 1e-9)
      throw std::invalid_argument("DepthDistribution: not normalized");
  }

  double integral() const {
    if (depths.size() < 2) return weights.empty() ? 0.0 : 1.0;
    double s = 0.0;
    for (std::size_t i = 1; i < depths.size(); ++i)
      s += 0.5 * (weights[i] + weights[i - 1]) * (depths[i] - depths[i - 1]);
    return s;
  }

  void normalize() {
    if (depths.size() < 2) return;
    const double s = integral();
    if (!(s > 0.0)) throw std::invalid_argument("DepthDistribution: zero mass");
    for (double& w : weights) w /= s;
  }

  //! Normalized quadrature weights (trapezoid rule folded in).
  std::vector<double> quadrature_weights() const {
    std::vector<double> w(depths.size(), 0.0);
    if (depths.size() == 1) {
      w[0] = 1.0;
      return w;
    }
    for (std::size_t i = 0; i < depths.size(); ++i) {
      double dx = 0.0;
      if (i > 0) dx += 0.5 * (depths[i] - depths[i - 1]);
      if (i + 1 < depths.size()) dx += 0.5 * (depths[i + 1] - depths[i]);
      w[i] = weights[i] * dx;
    }
    double s = 0.0;
    for (double v : w) s += v;
    for (double& v : w) v /= s;
    return w;
  }

  double mean() const {
    auto w = quadrature_weights();
    double m = 0.0;
    for (std::size_t i = 0; i < depths.size(); ++i) m += w[i] * depths[i];
    return m;
  }

  double stddev() const {
    auto w = quadrature_weights();
    const double m = mean();
    double v = 0.0;
    for (std::size_t i = 0; i < depths.size(); ++i)
      v += w[i] * (depths[i] - m) * (depths[i] - m);
    return std::sqrt(v);
  }

  static DepthDistribution delta(double depth) {
    DepthDistribution d;
    d.depths = {depth};
    d.weights = {1.0};
    return d;
  }

  static DepthDistribution gaussian(double mean, double sigma, int n_samples = 21,
                                    double span_sigmas = 3.0) {
    if (!(sigma > 0.0) || n_samples < 3)
      throw std::invalid_argument("DepthDistribution::gaussian: bad parameters");
    DepthDistribution d;
    d.depths.resize(n_samples);
    d.weights.resize(n_samples);
    for (int i = 0; i < n_samples; ++i) {
      const double u = mean + sigma * span_sigmas * (2.0 * i / (n_samples - 1) - 1.0);
      d.depths[i] = u;
      d.weights[i] = std::exp(-0.5 * (u - mean) * (u - mean) / (sigma * sigma));
    }
    if (d.depths.front() <= 0.0)
      throw std::invalid_argument("DepthDistribution::gaussian: support reaches U <= 0");
    d.normalize();
    return d;
  }
};

inline void export_distribution_csv(const DepthDistribution& d, const std::string& path) {
  CsvTable t;
  t.header = {"U_Er", "rho"};
  t.columns = {d.depths, d.weights};
  write_csv(path, t);
}

inline DepthDistribution import_distribution_csv(const std::string& path) {
  CsvTable t = read_csv(path);
  DepthDistribution d;
  d.depths = t.column("U_Er");
  d.weights = t.column("rho");
  d.normalize();
  d.validate();
  return d;
}

struct RamseySignal {
  std::vector<double> delays;
  std::vector<double> p0_values;
  double displacement_used = 0.0;
};

inline void export_ramsey_csv(const RamseySignal& s, const std::string& path) {
  CsvTable t;
  t.header = {"t", "P0"};
  t.columns = {s.delays, s.p0_values};
  write_csv(path, t);
}

struct EnsembleOptions {
  SpatialGrid grid;
  PropagateOptions propagate;
  unsigned threads = 0;
  //! Measure in the lattice displaced by theta(t_final); needed for pulses
  //! that end with the lattice away from its reference position.
  bool displaced_final_projection = false;
};

//! Ramsey interference averaged over the depth distribution: per depth, one
//! propagation in the displaced lattice with the ground-band population
//! recorded against the reference lattice at every delay (the snap-back
//! leaves the state untouched, so this equals displace-wait-displace-measure
//! at each delay).
inline RamseySignal simulate_ramsey(const DepthDistribution& dist, double displacement,
                                    const std::vector<double>& delays,
                                    const LatticeConfig& base,
                                    const EnsembleOptions& opts = {}) {
  dist.validate();
  if (std::abs(displacement) >= 0.5)
    throw std::domain_error("simulate_ramsey: |displacement| must be < d/2");
  if (delays.size() < 2 || delays.front() != 0.0)
    throw std::invalid_argument("simulate_ramsey: delays must start at 0");
  const double spacing = delays[1] - delays[0];
  for (std::size_t i = 1; i < delays.size(); ++i)
    if (std::abs(delays[i] - delays[i - 1] - spacing) > 1e-9 * spacing)
      throw std::invalid_argument("simulate_ramsey: delays must be uniform");

  const auto qw = dist.quadrature_weights();
  std::vector<std::vector<double>> member_p0(dist.depths.size());

  parallel_for_indexed(dist.depths.size(), opts.threads, [&](std::size_t i) {
    LatticeConfig cfg = base;
    cfg.depth_Er = dist.depths[i];
    try {
      BandOptions bo;
      bo.check_convergence = false;
      const BlochSpectrum spec = compute_band_structure(cfg, 3, 1, bo);
      const SpatialGrid grid = opts.grid;
      BandProjector projector(spec, grid, 2);
      WannierBasis basis = wannier_states(compute_band_structure(cfg, 3, grid.n_wells, bo), grid);
      WaveFunction psi0 = init_state(grid, basis, 0);

      Waveform hold;
      const std::size_t n = delays.size();
      hold.dt = spacing;
      hold.theta.assign(n, displacement);
      hold.eta.assign(n, 0.0);
      hold.step_like = true;

      PropagateOptions po = opts.propagate;
      po.substeps = std::max(po.substeps, static_cast<int>(std::ceil(spacing / 2.5e-7)));
      auto result = propagate(psi0, hold, cfg, Frame::Lab, 1, po, &projector);
      member_p0[i].reserve(n);
      for (const auto& pops : result.populations) member_p0[i].push_back(pops.p0);
    } catch (const std::exception& e) {
      throw std::runtime_error("simulate_ramsey: depth " + std::to_string(cfg.depth_Er) +
                               " E_r: " + e.what());
    }
  });

  RamseySignal signal;
  signal.delays = delays;
  signal.displacement_used = displacement;
  signal.p0_values.assign(delays.size(), 0.0);
  for (std::size_t i = 0; i < dist.depths.size(); ++i)
    for (std::size_t k = 0; k < delays.size(); ++k)
      signal.p0_values[k] += qw[i] * member_p0[i][k];
  return signal;
}

struct RamseyFit {
  double amplitude = 0.0;
  double decay_rate = 0.0; // gamma2, 1/s
  double omega = 0.0;      // rad/s
  double phase = 0.0;
  double offset = 0.0;
  double rms_residual = 0.0;
  Eigen::VectorXd parameter_errors;
  bool omega_unidentifiable = false;
};

namespace detail {

//! Magnitude spectrum of the detrended signal on a fine angular-frequency
//! grid: Hann-tapered cosine transform (the underlying ensemble signal is
//! even in the delay).
inline void cosine_spectrum(const std::vector<double>& t, const std::vector<double>& y,
                            double offset, int pad_factor,
                            std::vector<double>& omega_out, std::vector<double>& mag_out) {
  const std::size_t n = t.size();
  const double T = t.back();
  const double d_omega = pi / (T * pad_factor);
  const std::size_t n_bins = n * pad_factor;
  omega_out.resize(n_bins);
  mag_out.resize(n_bins);
  std::vector<double> windowed(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = 0.5 * (1.0 + std::cos(pi * t[i] / T));
    windowed[i] = w * (y[i] - offset) * (i == 0 ? 0.5 : 1.0); // half weight at tau = 0
  }
  for (std::size_t k = 0; k < n_bins; ++k) {
    const double w = k * d_omega;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += windowed[i] * std::cos(w * t[i]);
    omega_out[k] = w;
    mag_out[k] = std::abs(s);
  }
}

} // namespace detail

//! Five-parameter fit of a Ramsey fringe, initialized from the spectral peak
//! (omega), the record mean (offset) and a decaying-envelope guess.
inline RamseyFit fit_ramsey(const RamseySignal& signal, int max_restarts = 4) {
  const std::size_t n = signal.delays.size();
  if (n < 16) throw std::invalid_argument("fit_ramsey: too few samples");
  for (double v : signal.p0_values)
    if (v < -1e-9 || v > 1.0 + 1e-9)
      throw std::invalid_argument("fit_ramsey: populations outside [0,1]");

  double mean = 0.0;
  for (double v : signal.p0_values) mean += v;
  mean /= n;

  // phase-agnostic frequency seed: complex spectrum of the detrended record
  std::vector<double> omegas(4 * n), mags(4 * n);
  {
    const double d_omega = pi / (signal.delays.back() * 4.0);
    for (std::size_t k = 0; k < omegas.size(); ++k) {
      const double w = k * d_omega;
      std::complex<double> z(0.0, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        z += (signal.p0_values[i] - mean) * std::polar(1.0, -w * signal.delays[i]);
      omegas[k] = w;
      mags[k] = std::abs(z);
    }
  }
  std::size_t peak = 1;
  for (std::size_t k = 2; k + 1 < mags.size(); ++k)
    if (mags[k] > mags[peak]) peak = k;
  double omega0 = omegas[peak];
  if (peak > 0 && peak + 1 < mags.size()) {
    const double denom = mags[peak - 1] - 2.0 * mags[peak] + mags[peak + 1];
    if (std::abs(denom) > 1e-30)
      omega0 += 0.5 * (mags[peak - 1] - mags[peak + 1]) / denom * (omegas[1] - omegas[0]);
  }

  double amp0 = 0.0;
  for (double v : signal.p0_values) amp0 = std::max(amp0, std::abs(v - mean));

  const double T = signal.delays.back();
  const double sampling_rate = 1.0 / (signal.delays[1] - signal.delays[0]);
  const bool degenerate = amp0 < 1e-6;
  if (!degenerate) {
    if (T * omega0 / two_pi < 5.0)
      throw std::invalid_argument("fit_ramsey: need >= 5 oscillation periods in the record");
    if (sampling_rate < 8.0 * omega0 / two_pi)
      throw std::invalid_argument("fit_ramsey: need >= 8 samples per period");
  }

  // phase seed from the complex spectral amplitude at the peak frequency
  double phase0 = 0.0;
  {
    std::complex<double> z(0.0, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      z += (signal.p0_values[i] - mean) *
           std::polar(1.0, -omega0 * signal.delays[i]);
    if (std::abs(z) > 0.0) phase0 = std::arg(z);
  }

  // envelope log-fit: local maxima of |s - B| follow ln p = ln A - (gamma t)^2/2
  double gamma0 = 1.0 / T, amp_env = amp0;
  {
    std::vector<double> tt, lp;
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const double a = std::abs(signal.p0_values[i] - mean);
      if (a > std::abs(signal.p0_values[i - 1] - mean) &&
          a >= std::abs(signal.p0_values[i + 1] - mean) && a > 0.05 * amp0) {
        tt.push_back(signal.delays[i] * signal.delays[i]);
        lp.push_back(std::log(a));
      }
    }
    if (tt.size() >= 4) {
      double sx = 0, sy = 0, sxx = 0, sxy = 0;
      for (std::size_t k = 0; k < tt.size(); ++k) {
        sx += tt[k];
        sy += lp[k];
        sxx += tt[k] * tt[k];
        sxy += tt[k] * lp[k];
      }
      const double m = tt.size();
      const double slope = (m * sxy - sx * sy) / std::max(m * sxx - sx * sx, 1e-30);
      if (slope < 0.0) gamma0 = std::sqrt(-2.0 * slope);
      amp_env = std::exp((sy - slope * sx) / m);
    }
  }

  DampedCosineFit best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int attempt = 0; attempt <= max_restarts; ++attempt) {
    DampedCosineParams init;
    init.amplitude = amp_env;
    init.offset = mean;
    init.omega = omega0;
    init.phase = attempt % 2 == 0 ? phase0 : phase0 + pi / 2.0;
    init.decay_rate = attempt < 2 ? gamma0 : (attempt - 1) * 1.0 / T;
    DampedCosineFit fit = fit_damped_cosine(signal.delays, signal.p0_values, init);
    const double cost = fit.rms_residual;
    if (cost < best_cost) {
      best_cost = cost;
      best = fit;
    }
    if (best_cost < 0.02 * std::max(amp0, 1e-12)) break;
  }
  if (best_cost > 0.1 * std::max(amp0, 1e-12))
    throw FitError("fit_ramsey: no convergent fit (best rms residual " +
                   std::to_string(best_cost) + ")");

  RamseyFit out;
  out.amplitude = best.params.amplitude;
  out.decay_rate = best.params.decay_rate;
  out.omega = best.params.omega;
  out.phase = best.params.phase;
  out.offset = best.params.offset;
  out.rms_residual = best.rms_residual;
  out.parameter_errors = best.parameter_errors;
  out.omega_unidentifiable = degenerate;
  return out;
}

struct RecoverOptions {
  int pad_factor = 4;
  double floor_fraction = 0.02; // spectral floor cut before the change of variables
};

//! Invert a Ramsey fringe into a depth distribution: detrend, Hann-tapered
//! cosine transform, then the change of variables rho(U) = rho(omega01) *
//! d(omega01)/dU through the tabulated resonance curve.
inline DepthDistribution recover_depth_distribution(const RamseySignal& signal,
                                                    const Omega01Curve& curve,
                                                    const RecoverOptions& opts = {}) {
  RamseyFit fit = fit_ramsey(signal);
  std::vector<double> omegas, mags;
  detail::cosine_spectrum(signal.delays, signal.p0_values, fit.offset, opts.pad_factor,
                          omegas, mags);

  std::size_t peak = 1;
  for (std::size_t k = 2; k + 1 < mags.size(); ++k)
    if (mags[k] > mags[peak]) peak = k;
  if (omegas[peak] < curve.min_omega() || omegas[peak] > curve.max_omega())
    throw std::out_of_range(
        "recover_depth_distribution: spectral peak outside the tabulated resonance curve");

  const double floor = opts.floor_fraction * mags[peak];
  DepthDistribution dist;
  const auto& us = curve.depths();
  dist.depths = us;
  dist.weights.assign(us.size(), 0.0);
  for (std::size_t i = 0; i < us.size(); ++i) {
    const double w01 = curve.omega_at(us[i]);
    if (w01 <= omegas.front() || w01 >= omegas.back()) continue;
    const std::size_t k =
        std::min(static_cast<std::size_t>((w01 - omegas.front()) / (omegas[1] - omegas[0])),
                 omegas.size() - 2);
    const double f = (w01 - omegas[k]) / (omegas[k + 1] - omegas[k]);
    const double rho_w = mags[k] + f * (mags[k + 1] - mags[k]);
    if (rho_w <= floor) continue;
    dist.weights[i] = (rho_w - floor) * curve.derivative_at(us[i]);
  }
  dist.normalize();
  dist.validate();
  return dist;
}

//! Average a pulse's outcome over the depth distribution with imperfect
//! state preparation: both |0> and |1> initial states are propagated per
//! depth and mixed with the initial weights.
inline Populations ensemble_average(const Waveform& waveform, const DepthDistribution& dist,
                                    double initial_p0, double initial_p1,
                                    const LatticeConfig& base, Frame frame,
                                    const EnsembleOptions& opts = {}) {
  dist.validate();
  if (initial_p0 < 0.0 || initial_p1 < 0.0 || std::abs(initial_p0 + initial_p1 - 1.0) > 1e-9)
    throw std::invalid_argument("ensemble_average: initial weights must sum to 1");

  const auto qw = dist.quadrature_weights();
  struct Task {
    std::size_t depth_index;
    int band;
    double weight;
  };
  std::vector<Task> tasks;
  for (std::size_t i = 0; i < dist.depths.size(); ++i) {
    if (initial_p0 > 0.0) tasks.push_back({i, 0, qw[i] * initial_p0});
    if (initial_p1 > 0.0) tasks.push_back({i, 1, qw[i] * initial_p1});
  }

  std::vector<Populations> partial(tasks.size());
  parallel_for_indexed(tasks.size(), opts.threads, [&](std::size_t k) {
    const Task& task = tasks[k];
    LatticeConfig cfg = base;
    cfg.depth_Er = dist.depths[task.depth_index];
    try {
      BandOptions bo;
      bo.check_convergence = false;
      const SpatialGrid grid = opts.grid;
      const BlochSpectrum spec = compute_band_structure(cfg, 3, 1, bo);
      BandProjector projector(spec, grid, 2);
      WannierBasis basis =
          wannier_states(compute_band_structure(cfg, 3, grid.n_wells, bo), grid);
      WaveFunction psi0 = init_state(grid, basis, task.band);
      auto result = propagate(psi0, waveform, cfg, frame, 0, opts.propagate, &projector);
      partial[k] = opts.displaced_final_projection
                       ? projector.project_displaced(result.final_state.amplitudes,
                                                     waveform.theta_end())
                       : result.final_populations();
    } catch (const std::exception& e) {
      throw std::runtime_error("ensemble_average: depth " + std::to_string(cfg.depth_Er) +
                               " E_r, band " + std::to_string(task.band) + ": " + e.what());
    }
  });

  Populations avg;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    avg.p0 += tasks[k].weight * partial[k].p0;
    avg.p1 += tasks[k].weight * partial[k].p1;
    avg.p_leak += tasks[k].weight * partial[k].p_leak;
  }
  return avg;
}

} // namespace lattice
