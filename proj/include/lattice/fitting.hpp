#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "lattice/constants.hpp"

namespace lattice {

struct FitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

//! Parameters of A exp(-(gamma t)^2/2) cos(w t + phi) + B.
struct DampedCosineParams {
  double amplitude = 0.0;
  double decay_rate = 0.0; // gamma, 1/s
  double omega = 0.0;      // rad/s
  double phase = 0.0;
  double offset = 0.0;
};

inline double damped_cosine(const DampedCosineParams& p, double t) {
  const double g = p.decay_rate * t;
  return p.amplitude * std::exp(-0.5 * g * g) * std::cos(p.omega * t + p.phase) + p.offset;
}

namespace detail {

inline void damped_cosine_jacobian(const DampedCosineParams& p, double t, double* row) {
  const double g = p.decay_rate * t;
  const double env = std::exp(-0.5 * g * g);
  const double c = std::cos(p.omega * t + p.phase);
  const double s = std::sin(p.omega * t + p.phase);
  row[0] = env * c;                                   // dA
  row[1] = -p.amplitude * p.decay_rate * t * t * env * c; // dgamma
  row[2] = -p.amplitude * env * s * t;                // domega
  row[3] = -p.amplitude * env * s;                    // dphi
  row[4] = 1.0;                                       // dB
}

} // namespace detail

struct DampedCosineFit {
  DampedCosineParams params;
  double rms_residual = 0.0;
  Eigen::VectorXd parameter_errors; // sqrt of covariance diagonal
  int iterations = 0;
  bool converged = false;
};

//! Levenberg-Marquardt fit of the five-parameter damped cosine with an
//! analytic Jacobian. `init` must carry a reasonable omega; the caller is
//! expected to seed it from the spectrum (see fit_ramsey).
inline DampedCosineFit fit_damped_cosine(const std::vector<double>& t,
                                         const std::vector<double>& y,
                                         DampedCosineParams init, int max_iters = 200) {
  if (t.size() != y.size() || t.size() < 6)
    throw std::invalid_argument("fit_damped_cosine: need >= 6 samples");
  const int n = static_cast<int>(t.size());

  DampedCosineParams p = init;
  auto chi2 = [&](const DampedCosineParams& q) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      const double r = damped_cosine(q, t[i]) - y[i];
      s += r * r;
    }
    return s;
  };

  double lambda = 1e-3;
  double cost = chi2(p);
  Eigen::MatrixXd jac(n, 5);
  Eigen::VectorXd res(n);
  DampedCosineFit fit;

  for (int iter = 0; iter < max_iters; ++iter) {
    ++fit.iterations;
    for (int i = 0; i < n; ++i) {
      double row[5];
      detail::damped_cosine_jacobian(p, t[i], row);
      for (int k = 0; k < 5; ++k) jac(i, k) = row[k];
      res[i] = damped_cosine(p, t[i]) - y[i];
    }
    Eigen::MatrixXd jtj = jac.transpose() * jac;
    Eigen::VectorXd jtr = jac.transpose() * res;
    if (jtr.norm() < 1e-14 * std::max(1.0, cost)) {
      fit.converged = true;
      break;
    }
    bool stepped = false;
    for (int attempt = 0; attempt < 30; ++attempt) {
      Eigen::MatrixXd damped = jtj;
      damped.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
      Eigen::VectorXd delta = damped.ldlt().solve(-jtr);
      DampedCosineParams trial = p;
      trial.amplitude += delta[0];
      trial.decay_rate += delta[1];
      trial.omega += delta[2];
      trial.phase += delta[3];
      trial.offset += delta[4];
      trial.decay_rate = std::abs(trial.decay_rate);
      const double trial_cost = chi2(trial);
      if (trial_cost < cost) {
        const double improvement = cost - trial_cost;
        p = trial;
        cost = trial_cost;
        lambda = std::max(lambda * 0.3, 1e-12);
        stepped = true;
        if (improvement < 1e-15 * (cost + 1e-30) || delta.norm() < 1e-14) fit.converged = true;
        break;
      }
      lambda *= 4.0;
    }
    if (!stepped || fit.converged) {
      fit.converged = fit.converged || !stepped;
      break;
    }
  }

  // canonicalize: positive frequency and amplitude, phase in (-pi, pi]
  if (p.omega < 0.0) {
    p.omega = -p.omega;
    p.phase = -p.phase;
  }
  if (p.amplitude < 0.0) {
    p.amplitude = -p.amplitude;
    p.phase += pi;
  }
  p.phase = std::remainder(p.phase, two_pi);
  fit.params = p;
  fit.rms_residual = std::sqrt(cost / n);

  for (int i = 0; i < n; ++i) {
    double row[5];
    detail::damped_cosine_jacobian(p, t[i], row);
    for (int k = 0; k < 5; ++k) jac(i, k) = row[k];
  }
  Eigen::MatrixXd jtj = jac.transpose() * jac;
  const double sigma2 = cost / std::max(1, n - 5);
  Eigen::MatrixXd cov = jtj.ldlt().solve(Eigen::MatrixXd::Identity(5, 5)) * sigma2;
  fit.parameter_errors = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return fit;
}

} // namespace lattice
