#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "lattice/constants.hpp"
#include "lattice/csv.hpp"

namespace lattice {

struct SamplingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class PulseVariant { Step, Square, Gaussian, SinePM, SineAM, AmVsPm, ChirpPM, PiecewiseConstant };

inline const char* to_string(PulseVariant v) {
  switch (v) {
    case PulseVariant::Step: return "step";
    case PulseVariant::Square: return "square";
    case PulseVariant::Gaussian: return "gaussian";
    case PulseVariant::SinePM: return "sine-pm";
    case PulseVariant::SineAM: return "sine-am";
    case PulseVariant::AmVsPm: return "am-vs-pm";
    case PulseVariant::ChirpPM: return "chirp-pm";
    case PulseVariant::PiecewiseConstant: return "piecewise-constant";
  }
  return "?";
}

struct ChirpParams {
  double omega_start = 0.0; // rad/s at t = 0
  double rate = 0.0;        // signed beta, rad/s^2 (instantaneous omega = omega_start + rate*t)
};

struct PulseSpec {
  PulseVariant variant = PulseVariant::SinePM;
  double amplitude_pm = 0.0;   // a_PM, units of d
  double amplitude_am = 0.0;   // eta peak
  double duration = 0.0;       // t_p, seconds (Gaussian: FWHM of theta)
  double frequency = 0.0;      // omega, rad/s
  ChirpParams chirp;
  double relative_phase = 0.0; // AM relative to PM (AmVsPm), radians

  // PiecewiseConstant only: per-slice depth modulation and lattice
  // acceleration (theta-double-dot in d/s^2), each slice slice_duration long.
  std::vector<double> slice_eta;
  std::vector<double> slice_accel;
  double slice_duration = 0.0;
};

//! |beta| = 2*pi*delta_f / t_p for a sweep covering delta_f (Hz) in t_p (s).
inline double chirp_rate(double t_p, double delta_f) {
  if (!(t_p > 0.0) || !(delta_f > 0.0))
    throw std::domain_error("chirp_rate: arguments must be positive");
  return two_pi * delta_f / t_p;
}

//! Uniformly sampled control pair (theta(t), eta(t)); theta in units of the
//! lattice constant. `accel` carries theta-double-dot (d/s^2) when a finite
//! acceleration exists; step-like pulses leave it empty.
struct Waveform {
  double dt = 0.0;
  std::vector<double> theta;
  std::vector<double> eta;
  std::vector<double> accel;
  bool endpoint_compliant = false; // theta and theta-dot vanish at both ends
  bool step_like = false;          // theta has jumps; accel is distribution-valued
  bool smooth = false;             // analytic samples; safe to interpolate cubically

  std::size_t size() const { return theta.size(); }
  double duration() const { return theta.empty() ? 0.0 : dt * (theta.size() - 1); }
  bool has_accel() const { return accel.size() == theta.size(); }

  double theta_end() const { return theta.empty() ? 0.0 : theta.back(); }

  //! Sample a control track between stored samples: Catmull-Rom for smooth
  //! analytic waveforms (error O(dt^4)), linear otherwise.
  double interp(const std::vector<double>& v, double t) const {
    if (v.empty()) return 0.0;
    const double s = std::clamp(t / dt, 0.0, static_cast<double>(v.size() - 1));
    const std::size_t i = std::min(static_cast<std::size_t>(s), v.size() - 2);
    const double f = s - i;
    if (!smooth) return v[i] + f * (v[i + 1] - v[i]);
    const double v1 = v[i], v2 = v[i + 1];
    const double v0 = i > 0 ? v[i - 1] : 2.0 * v1 - v2;
    const double v3 = i + 2 < v.size() ? v[i + 2] : 2.0 * v2 - v1;
    return v1 + 0.5 * f *
                    (v2 - v0 +
                     f * (2.0 * v0 - 5.0 * v1 + 4.0 * v2 - v3 +
                          f * (3.0 * (v1 - v2) + v3 - v0)));
  }
  double theta_at(double t) const { return interp(theta, t); }
  double eta_at(double t) const { return interp(eta, t); }
  double accel_at(double t) const { return interp(accel, t); }

  void validate() const {
    if (theta.size() < 2 || eta.size() != theta.size())
      throw std::invalid_argument("Waveform: theta/eta must have equal length >= 2");
    if (!(dt > 0.0)) throw std::invalid_argument("Waveform: dt must be positive");
    for (double e : eta)
      if (!(e > -1.0)) throw std::invalid_argument("Waveform: eta must stay above -1");
  }
};

namespace detail {

inline constexpr double endpoint_tol_theta = 1e-9; // units of d
inline constexpr double endpoint_tol_rate = 1e-9;  // d per second

inline bool compliant(double th0, double thd0, double th1, double thd1) {
  return std::abs(th0) < endpoint_tol_theta && std::abs(th1) < endpoint_tol_theta &&
         std::abs(thd0) < endpoint_tol_rate && std::abs(thd1) < endpoint_tol_rate;
}

inline void require_sampling(double dt, double omega_max, const char* what) {
  if (omega_max > 0.0 && dt > two_pi / omega_max / 40.0)
    throw SamplingError(std::string("synthesize: dt too coarse for ") + what +
                        " (need <= 1/40 of the fastest period)");
}

} // namespace detail

inline Waveform synthesize(const PulseSpec& spec, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("synthesize: dt must be positive");

  Waveform wf;
  wf.dt = dt;
  auto sample_count = [&](double total) {
    if (!(total > 0.0)) throw std::invalid_argument("synthesize: duration must be positive");
    return static_cast<std::size_t>(std::llround(total / dt)) + 1;
  };

  switch (spec.variant) {
    case PulseVariant::Step: {
      const std::size_t n = sample_count(spec.duration);
      wf.theta.assign(n, spec.amplitude_pm);
      wf.theta.front() = 0.0; // jump happens right after t = 0
      wf.eta.assign(n, 0.0);
      wf.step_like = true;
      wf.endpoint_compliant = false;
      break;
    }
    case PulseVariant::Square: {
      const std::size_t n = sample_count(spec.duration);
      wf.theta.assign(n, spec.amplitude_pm);
      wf.theta.front() = 0.0;
      wf.theta.back() = 0.0;
      wf.eta.assign(n, 0.0);
      wf.step_like = true;
      wf.endpoint_compliant = false;
      break;
    }
    case PulseVariant::Gaussian: {
      // FWHM = duration; window wide enough that the tails meet the
      // endpoint tolerance (8 sigma each side).
      const double sigma = spec.duration / (2.0 * std::sqrt(2.0 * std::log(2.0)));
      const double total = 16.0 * sigma;
      detail::require_sampling(dt, 8.0 / sigma, "gaussian");
      const std::size_t n = sample_count(total);
      wf.theta.resize(n);
      wf.eta.assign(n, 0.0);
      wf.accel.resize(n);
      const double tc = total / 2.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double u = (i * dt - tc) / sigma;
        wf.theta[i] = spec.amplitude_pm * std::exp(-0.5 * u * u);
        wf.accel[i] = spec.amplitude_pm * (u * u - 1.0) / (sigma * sigma) * std::exp(-0.5 * u * u);
      }
      const double ue = tc / sigma;
      const double edge = spec.amplitude_pm * std::exp(-0.5 * ue * ue);
      wf.endpoint_compliant = detail::compliant(edge, edge * ue / sigma, edge, edge * ue / sigma);
      wf.smooth = true;
      break;
    }
    case PulseVariant::SinePM:
    case PulseVariant::AmVsPm: {
      const double w = spec.frequency;
      detail::require_sampling(dt, spec.variant == PulseVariant::AmVsPm ? 2.0 * w : w, "sine");
      const std::size_t n = sample_count(spec.duration);
      wf.theta.resize(n);
      wf.eta.assign(n, 0.0);
      wf.accel.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = i * dt;
        wf.theta[i] = spec.amplitude_pm * (1.0 - std::cos(w * t));
        wf.accel[i] = spec.amplitude_pm * w * w * std::cos(w * t);
        if (spec.variant == PulseVariant::AmVsPm)
          wf.eta[i] = spec.amplitude_am * std::sin(2.0 * w * t + spec.relative_phase);
      }
      const double T = (n - 1) * dt;
      wf.endpoint_compliant = detail::compliant(
          0.0, 0.0, spec.amplitude_pm * (1.0 - std::cos(w * T)),
          spec.amplitude_pm * w * std::sin(w * T));
      wf.smooth = true;
      break;
    }
    case PulseVariant::SineAM: {
      detail::require_sampling(dt, spec.frequency, "sine");
      const std::size_t n = sample_count(spec.duration);
      wf.theta.assign(n, 0.0);
      wf.accel.assign(n, 0.0);
      wf.eta.resize(n);
      for (std::size_t i = 0; i < n; ++i)
        wf.eta[i] = spec.amplitude_am * std::sin(spec.frequency * i * dt);
      wf.endpoint_compliant = true;
      wf.smooth = true;
      break;
    }
    case PulseVariant::ChirpPM: {
      if (spec.chirp.rate == 0.0)
        throw std::invalid_argument("synthesize: chirp rate must be nonzero");
      const double T = spec.duration;
      const double w0 = spec.chirp.omega_start;
      const double w1 = w0 + spec.chirp.rate * T;
      detail::require_sampling(dt, std::max(std::abs(w0), std::abs(w1)), "chirp");
      const std::size_t n = sample_count(T);
      wf.theta.resize(n);
      wf.eta.assign(n, 0.0);
      wf.accel.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = i * dt;
        const double phase = w0 * t + 0.5 * spec.chirp.rate * t * t;
        const double w = w0 + spec.chirp.rate * t;
        wf.theta[i] = spec.amplitude_pm * (1.0 - std::cos(phase));
        wf.accel[i] = spec.amplitude_pm *
                      (w * w * std::cos(phase) + spec.chirp.rate * std::sin(phase));
      }
      const double phase_T = w0 * T + 0.5 * spec.chirp.rate * T * T;
      wf.endpoint_compliant = detail::compliant(
          0.0, 0.0, spec.amplitude_pm * (1.0 - std::cos(phase_T)),
          spec.amplitude_pm * w1 * std::sin(phase_T));
      wf.smooth = true;
      break;
    }
    case PulseVariant::PiecewiseConstant: {
      const std::size_t n_slices = spec.slice_eta.size();
      if (n_slices == 0 || spec.slice_accel.size() != n_slices || !(spec.slice_duration > 0.0))
        throw std::invalid_argument("synthesize: piecewise-constant needs matching slice tables");
      const std::size_t per_slice =
          std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(spec.slice_duration / dt)));
      const double dts = spec.slice_duration / per_slice;
      wf.dt = dts;
      const std::size_t n = n_slices * per_slice + 1;
      wf.theta.resize(n);
      wf.eta.resize(n);
      wf.accel.resize(n);
      double th = 0.0, thd = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t slice = std::min(i / per_slice, n_slices - 1);
        wf.theta[i] = th;
        wf.eta[i] = spec.slice_eta[slice];
        wf.accel[i] = spec.slice_accel[slice];
        th += thd * dts + 0.5 * spec.slice_accel[slice] * dts * dts;
        thd += spec.slice_accel[slice] * dts;
      }
      // th/thd now hold the end-of-record values one step past the last sample;
      // recompute the true endpoint rates for the compliance flag.
      const double theta_T = wf.theta.back();
      double rate_T = 0.0;
      {
        double d = 0.0;
        for (std::size_t s = 0; s < n_slices; ++s) d += spec.slice_accel[s] * spec.slice_duration;
        rate_T = d;
      }
      wf.endpoint_compliant = detail::compliant(0.0, 0.0, theta_T, rate_T);
      break;
    }
  }
  wf.validate();
  return wf;
}

//! theta-double-dot by second-order finite differences (one-sided at the
//! ends), stored back into the waveform. Refused for step-like pulses where
//! the acceleration is distribution-valued.
inline void acceleration_profile(Waveform& wf) {
  wf.validate();
  if (wf.step_like)
    throw std::invalid_argument(
        "acceleration_profile: step-like displacement has no finite acceleration; "
        "propagate such pulses in the lab frame");
  if (wf.size() < 3)
    throw std::invalid_argument("acceleration_profile: need >= 3 samples");
  const std::size_t n = wf.size();
  const double inv = 1.0 / (wf.dt * wf.dt);
  wf.accel.assign(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i)
    wf.accel[i] = (wf.theta[i + 1] - 2.0 * wf.theta[i] + wf.theta[i - 1]) * inv;
  wf.accel[0] = (2.0 * wf.theta[0] - 5.0 * wf.theta[1] + 4.0 * wf.theta[2] - wf.theta[3]) * inv;
  wf.accel[n - 1] =
      (2.0 * wf.theta[n - 1] - 5.0 * wf.theta[n - 2] + 4.0 * wf.theta[n - 3] - wf.theta[n - 4]) * inv;
}

inline void export_waveform_csv(const Waveform& wf, const std::string& path) {
  CsvTable t;
  t.header = {"t", "theta", "eta"};
  t.columns.assign(3, {});
  for (std::size_t i = 0; i < wf.size(); ++i) {
    t.columns[0].push_back(i * wf.dt);
    t.columns[1].push_back(wf.theta[i]);
    t.columns[2].push_back(wf.eta[i]);
  }
  write_csv(path, t);
}

//! Read a (t, theta, eta) table. Endpoint compliance for imported data is
//! judged with finite differences, so the rate tolerance is necessarily
//! looser than for synthesized pulses.
inline Waveform import_waveform_csv(const std::string& path) {
  CsvTable t = read_csv(path);
  const auto& time = t.column("t");
  Waveform wf;
  if (time.size() < 3) throw std::invalid_argument("import_waveform_csv: too few samples");
  wf.dt = time[1] - time[0];
  for (std::size_t i = 1; i < time.size(); ++i)
    if (std::abs(time[i] - time[i - 1] - wf.dt) > 1e-9 * wf.dt + 1e-15)
      throw std::invalid_argument("import_waveform_csv: time samples must be uniform");
  wf.theta = t.column("theta");
  wf.eta = t.column("eta");
  wf.validate();
  const std::size_t n = wf.size();
  const double thd0 = (-3.0 * wf.theta[0] + 4.0 * wf.theta[1] - wf.theta[2]) / (2.0 * wf.dt);
  const double thd1 = (3.0 * wf.theta[n - 1] - 4.0 * wf.theta[n - 2] + wf.theta[n - 3]) / (2.0 * wf.dt);
  double peak_rate = 0.0;
  for (std::size_t i = 1; i < n; ++i)
    peak_rate = std::max(peak_rate, std::abs(wf.theta[i] - wf.theta[i - 1]) / wf.dt);
  const double rate_tol = std::max(detail::endpoint_tol_rate, 1e-5 * peak_rate);
  wf.endpoint_compliant = std::abs(wf.theta.front()) < detail::endpoint_tol_theta &&
                          std::abs(wf.theta.back()) < detail::endpoint_tol_theta &&
                          std::abs(thd0) < rate_tol && std::abs(thd1) < rate_tol;
  return wf;
}

} // namespace lattice
