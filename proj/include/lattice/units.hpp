#pragma once

#include <cmath>
#include <stdexcept>

#include "lattice/constants.hpp"

namespace lattice {

//! Static lattice parameters. Everything downstream derives its natural
//! units (recoil energy, recoil frequency) from this.
struct LatticeConfig {
  double depth_Er = 18.0;            // lattice depth U in recoil energies
  double lattice_constant = 0.926e-6; // d, meters
  double atom_mass = rb85_mass;      // kg
  bool gravity_enabled = false;
  double gravity_accel = standard_gravity; // m/s^2

  void validate() const {
    if (!(depth_Er > 0.0))
      throw std::domain_error("LatticeConfig: depth_Er must be positive");
    if (!(lattice_constant > 0.0))
      throw std::domain_error("LatticeConfig: lattice_constant must be positive");
    if (!(atom_mass > 0.0))
      throw std::domain_error("LatticeConfig: atom_mass must be positive");
  }
};

//! Build a config whose lattice constant reproduces a given recoil
//! frequency nu_r (Hz). Convenient when an experiment quotes nu_r
//! rather than the beam geometry.
inline LatticeConfig config_from_recoil_frequency(double recoil_hz,
                                                  double depth_Er,
                                                  double atom_mass = rb85_mass) {
  if (!(recoil_hz > 0.0) || !(atom_mass > 0.0))
    throw std::domain_error("config_from_recoil_frequency: inputs must be positive");
  LatticeConfig cfg;
  cfg.depth_Er = depth_Er;
  cfg.atom_mass = atom_mass;
  cfg.lattice_constant = std::sqrt(planck / (8.0 * atom_mass * recoil_hz));
  cfg.validate();
  return cfg;
}

//! omega_r = 2*pi * h / (8 m d^2), in rad/s.
inline double recoil_angular_frequency(double lattice_constant, double atom_mass) {
  if (!(lattice_constant > 0.0) || !(atom_mass > 0.0))
    throw std::domain_error("recoil_angular_frequency: inputs must be positive");
  return two_pi * planck / (8.0 * atom_mass * lattice_constant * lattice_constant);
}

struct NaturalUnits {
  double recoil_energy;            // E_r, joules
  double recoil_angular_frequency; // omega_r, rad/s
  double harmonic_length;          // sqrt(hbar/(m*omega_ho)) at the configured depth, meters
};

inline NaturalUnits natural_units(const LatticeConfig& cfg) {
  cfg.validate();
  NaturalUnits nu;
  nu.recoil_angular_frequency =
      recoil_angular_frequency(cfg.lattice_constant, cfg.atom_mass);
  nu.recoil_energy = hbar * nu.recoil_angular_frequency;
  const double omega_ho = 2.0 * std::sqrt(cfg.depth_Er) * nu.recoil_angular_frequency;
  nu.harmonic_length = std::sqrt(hbar / (cfg.atom_mass * omega_ho));
  return nu;
}

//! m*g*d / E_r: gravitational energy drop per lattice site, in units of E_r.
//! Zero when gravity is disabled.
inline double gravity_tilt_per_site(const LatticeConfig& cfg) {
  cfg.validate();
  if (!cfg.gravity_enabled) return 0.0;
  const double er = natural_units(cfg).recoil_energy;
  return cfg.atom_mass * cfg.gravity_accel * cfg.lattice_constant / er;
}

//! Harmonic oscillator length in units of d for the well frequency
//! omega_ho = 2*sqrt(U/E_r)*omega_r.
inline double harmonic_length_over_d(const LatticeConfig& cfg) {
  const NaturalUnits nu = natural_units(cfg);
  return nu.harmonic_length / cfg.lattice_constant;
}

} // namespace lattice
