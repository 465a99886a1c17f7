#pragma once

#include <complex>
#include <cstddef>
#include <mutex>
#include <stdexcept>

#include <fftw3.h>

namespace lattice {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

//! In-place 1D complex FFT pair with its own aligned buffer. Plans are
//! created with FFTW_ESTIMATE so planning is deterministic and results are
//! reproducible run to run; the planner lock makes construction thread-safe.
//! Transforms are unnormalized (forward then backward multiplies by n).
class Fft1d {
 public:
  explicit Fft1d(std::size_t n) : n_(n) {
    if (n == 0) throw std::invalid_argument("Fft1d: zero length");
    buf_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
    if (!buf_) throw std::bad_alloc();
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fwd_ = fftw_plan_dft_1d(static_cast<int>(n), buf_, buf_, FFTW_FORWARD, FFTW_ESTIMATE);
    bwd_ = fftw_plan_dft_1d(static_cast<int>(n), buf_, buf_, FFTW_BACKWARD, FFTW_ESTIMATE);
    if (!fwd_ || !bwd_) {
      fftw_free(buf_);
      throw std::runtime_error("Fft1d: plan creation failed");
    }
  }

  Fft1d(const Fft1d&) = delete;
  Fft1d& operator=(const Fft1d&) = delete;

  ~Fft1d() {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(bwd_);
    fftw_free(buf_);
  }

  std::size_t size() const { return n_; }
  std::complex<double>* data() { return reinterpret_cast<std::complex<double>*>(buf_); }
  const std::complex<double>* data() const {
    return reinterpret_cast<const std::complex<double>*>(buf_);
  }

  void forward() { fftw_execute(fwd_); }
  void backward() { fftw_execute(bwd_); }

 private:
  std::size_t n_;
  fftw_complex* buf_;
  fftw_plan fwd_;
  fftw_plan bwd_;
};

} // namespace lattice
