#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lattice/band_structure.hpp"
#include "lattice/ensemble.hpp"
#include "lattice/grape.hpp"
#include "lattice/observables.hpp"
#include "lattice/propagate.hpp"
#include "lattice/pulse.hpp"
#include "lattice/svg.hpp"
#include "lattice/three_level.hpp"
#include "lattice/units.hpp"
#include "lattice/wannier.hpp"

namespace lattice {

using json = nlohmann::ordered_json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

//! Merge user values over defaults, rejecting unknown keys so typos fail loudly.
inline json merge_config(const json& defaults, const json& user, const std::string& path) {
  json out = defaults;
  if (!user.is_object()) throw ConfigError("config: expected object at " + path);
  for (auto it = user.begin(); it != user.end(); ++it) {
    if (!defaults.contains(it.key()))
      throw ConfigError("config: unknown key '" + path + it.key() + "'");
    if (defaults[it.key()].is_object() && !defaults[it.key()].empty())
      out[it.key()] = merge_config(defaults[it.key()], it.value(), path + it.key() + ".");
    else
      out[it.key()] = it.value();
  }
  return out;
}

} // namespace detail

//! Output collector: files written under one directory, each hashed into the
//! summary manifest.
class ScenarioSink {
 public:
  explicit ScenarioSink(const std::string& out_dir) : dir_(out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir);
  }

  const std::filesystem::path& dir() const { return dir_; }

  std::string path_of(const std::string& name) const { return (dir_ / name).string(); }

  void note_file(const std::string& name) {
    const std::string p = path_of(name);
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("expected output file missing: " + p);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    json entry;
    entry["path"] = name;
    entry["bytes"] = bytes.size();
    entry["fnv1a64"] = detail::hex64(detail::fnv1a64(bytes));
    manifest_.push_back(entry);
  }

  json manifest() const { return manifest_; }

 private:
  std::filesystem::path dir_;
  json manifest_ = json::array();
};

// ---------------------------------------------------------------------------
// config resolution

inline json scenario_defaults() {
  json d;
  d["scenario"] = "";
  d["label"] = "";
  d["lattice"] = {{"depth_Er", 18.0},
                  {"recoil_frequency_hz", 0.0}, // > 0: derive d from nu_r
                  {"lattice_constant_um", 0.926},
                  {"atom_mass_u", rb85_mass_u},
                  {"gravity", false}};
  d["pulse"] = {{"variant", "sine-pm"},
                {"amplitude_pm_d", 0.0},
                {"amplitude_am", 0.0},
                {"duration_ms", 1.0},
                {"frequency_hz", 5000.0},
                {"chirp_span_khz", 6.0},
                {"chirp_direction", "up"},
                {"relative_phase_deg", 0.0},
                {"waveform_csv", ""}};
  d["distribution"] = {{"mean_Er", 0.0}, // 0: delta at lattice.depth_Er
                       {"sigma_Er", 0.0},
                       {"n_samples", 21},
                       {"span_sigmas", 3.0},
                       {"csv", ""}};
  d["initial"] = {{"p0", 1.0}, {"p1", 0.0}};
  d["solver"] = {{"waveform_dt_us", 1.0},
                 {"substeps", 4},
                 {"n_wells", 64},
                 {"points_per_well", 32},
                 {"record_stride", 25},
                 {"boundary_tol", 0.0}}; // 0: per-scenario default
  d["sweep"] = {{"t_p_ms", json::array({0.4, 0.6, 0.8, 1.0, 2.0, 3.0, 4.0, 5.0})},
                {"delta_f_khz", json::array({3.6, 4.8, 6.0, 7.2, 9.0})},
                {"a_pm_d", json::array()},
                {"depth_Er", json::array()}};
  d["grape"] = {{"T_ms", 1.0},
                {"n_slices", 100},
                {"n_levels", 8},
                {"n_q", 17},
                {"eta_bound", 0.2},
                {"force_bound_Er_d", 8.0},
                {"max_iters", 1500},
                {"grad_tol", 1e-7},
                {"objective", "transfer"},
                {"controls_csv", ""}};
  d["ramsey"] = {{"displacement_d", 0.05},
                 {"delay_max_ms", 8.0},
                 {"delay_step_us", 10.0},
                 {"curve_min_Er", 8.0},
                 {"curve_max_Er", 32.0},
                 {"curve_step_Er", 0.25}};
  d["three_level"] = {{"a_pm_d", 0.0138888888888889}, // d/72
                      {"beta_rad_s2", json::array()},
                      {"span_rad_s", 0.0},
                      {"scan_points", 241}};
  d["compare_inputs"] = json::array();
  d["out_dir"] = ".";
  d["seed"] = 1;
  d["threads"] = 0;
  return d;
}

inline LatticeConfig lattice_from_json(const json& j) {
  LatticeConfig cfg;
  cfg.depth_Er = j.at("depth_Er").get<double>();
  cfg.atom_mass = j.at("atom_mass_u").get<double>() * atomic_mass_unit;
  const double nu_r = j.at("recoil_frequency_hz").get<double>();
  if (nu_r > 0.0)
    cfg.lattice_constant = std::sqrt(planck / (8.0 * cfg.atom_mass * nu_r));
  else
    cfg.lattice_constant = j.at("lattice_constant_um").get<double>() * 1e-6;
  cfg.gravity_enabled = j.at("gravity").get<bool>();
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config.lattice: ") + e.what());
  }
  return cfg;
}

//! Boundary-guard tolerance: explicit positive value wins; otherwise the
//! scenario default applies. Chirped sweeps and Ramsey holds intentionally
//! let leaked population stream out (it falls out of the lattice in the
//! experiment), so their defaults admit it through the guard zone.
inline double boundary_tol_from_json(const json& solver, double scenario_default) {
  const double v = solver.at("boundary_tol").get<double>();
  return v > 0.0 ? v : scenario_default;
}

inline SpatialGrid grid_from_json(const json& solver) {
  SpatialGrid grid;
  grid.n_wells = solver.at("n_wells").get<int>();
  grid.points_per_well = solver.at("points_per_well").get<int>();
  try {
    grid.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config.solver: ") + e.what());
  }
  return grid;
}

inline PulseSpec pulse_from_json(const json& p, const json& full) {
  PulseSpec spec;
  const std::string variant = p.at("variant").get<std::string>();
  if (variant == "step") spec.variant = PulseVariant::Step;
  else if (variant == "square") spec.variant = PulseVariant::Square;
  else if (variant == "gaussian") spec.variant = PulseVariant::Gaussian;
  else if (variant == "sine-pm") spec.variant = PulseVariant::SinePM;
  else if (variant == "sine-am") spec.variant = PulseVariant::SineAM;
  else if (variant == "am-vs-pm") spec.variant = PulseVariant::AmVsPm;
  else if (variant == "chirp-pm") spec.variant = PulseVariant::ChirpPM;
  else throw ConfigError("config.pulse: unknown variant '" + variant + "'");
  spec.amplitude_pm = p.at("amplitude_pm_d").get<double>();
  spec.amplitude_am = p.at("amplitude_am").get<double>();
  spec.duration = p.at("duration_ms").get<double>() * 1e-3;
  spec.frequency = two_pi * p.at("frequency_hz").get<double>();
  spec.relative_phase = p.at("relative_phase_deg").get<double>() * pi / 180.0;
  if (spec.variant == PulseVariant::ChirpPM) {
    const double span = two_pi * p.at("chirp_span_khz").get<double>() * 1e3;
    const std::string dir = p.at("chirp_direction").get<std::string>();
    const double sign = dir == "up" ? 1.0 : dir == "down" ? -1.0 : 0.0;
    if (sign == 0.0) throw ConfigError("config.pulse: chirp_direction must be up or down");
    spec.chirp.omega_start = spec.frequency - sign * 0.5 * span;
    spec.chirp.rate = sign * span / spec.duration;
  }
  (void)full;
  return spec;
}

inline DepthDistribution distribution_from_json(const json& d, double fallback_depth) {
  const std::string csv = d.at("csv").get<std::string>();
  if (!csv.empty()) {
    if (!std::filesystem::exists(csv))
      throw ConfigError("config.distribution: file not found: " + csv);
    return import_distribution_csv(csv);
  }
  const double sigma = d.at("sigma_Er").get<double>();
  const double mean = d.at("mean_Er").get<double>() > 0.0 ? d.at("mean_Er").get<double>()
                                                          : fallback_depth;
  if (sigma <= 0.0) return DepthDistribution::delta(mean);
  return DepthDistribution::gaussian(mean, sigma, d.at("n_samples").get<int>(),
                                     d.at("span_sigmas").get<double>());
}

// ---------------------------------------------------------------------------
// scenario bodies

namespace scenario_impl {

inline json run_bands(const json& cfg, ScenarioSink& sink) {
  const LatticeConfig lattice = lattice_from_json(cfg.at("lattice"));
  const NaturalUnits nu = natural_units(lattice);
  BlochSpectrum spec = compute_band_structure(lattice, 6, 64);
  export_bands_csv(spec, sink.path_of("bands.csv"));
  sink.note_file("bands.csv");

  std::vector<double> depths;
  const double lo = std::max(2.0, lattice.depth_Er - 12.0);
  for (double u = lo; u <= lattice.depth_Er + 12.0 + 1e-9; u += 0.5) depths.push_back(u);
  Omega01Curve curve = omega01_of_depth(lattice, depths);
  export_curve_csv(curve, sink.path_of("omega01_curve.csv"));
  sink.note_file("omega01_curve.csv");

  {
    SvgPlot plot("Bloch bands", "q (hbar k)", "E (E_r)");
    for (int n = 0; n < spec.n_bands; ++n) {
      std::vector<double> e(spec.quasi_momenta.size());
      for (int i = 0; i < spec.n_q(); ++i) e[i] = spec.band_energies(n, i);
      plot.add_line(spec.quasi_momenta, e, "band " + std::to_string(n));
    }
    plot.write(sink.path_of("bands.svg"));
    sink.note_file("bands.svg");
  }
  {
    SvgPlot plot("Resonance curve", "U (E_r)", "omega01/2pi (Hz)");
    std::vector<double> hz(curve.omegas().size());
    for (std::size_t i = 0; i < hz.size(); ++i) hz[i] = curve.omegas()[i] / two_pi;
    plot.add_line(curve.depths(), hz, "omega01");
    plot.write(sink.path_of("omega01_curve.svg"));
    sink.note_file("omega01_curve.svg");
  }

  json out;
  out["recoil_frequency_hz"] = nu.recoil_angular_frequency / two_pi;
  out["recoil_energy_J"] = nu.recoil_energy;
  out["gravity_tilt_Er_per_site"] = gravity_tilt_per_site(lattice);
  out["omega01_rad_s"] = spec.omega01(lattice);
  out["omega01_hz"] = spec.omega01(lattice) / two_pi;
  out["band_average_energies_Er"] = json::array();
  for (int n = 0; n < spec.n_bands; ++n)
    out["band_average_energies_Er"].push_back(spec.band_average_energy(n));
  return out;
}

inline json run_ramsey(const json& cfg, ScenarioSink& sink, unsigned threads) {
  const LatticeConfig lattice = lattice_from_json(cfg.at("lattice"));
  const json& rj = cfg.at("ramsey");
  DepthDistribution dist =
      distribution_from_json(cfg.at("distribution"), lattice.depth_Er);

  const double step = rj.at("delay_step_us").get<double>() * 1e-6;
  const double t_max = rj.at("delay_max_ms").get<double>() * 1e-3;
  std::vector<double> delays;
  for (double t = 0.0; t <= t_max + 1e-12; t += step) delays.push_back(t);

  EnsembleOptions opts;
  opts.grid = grid_from_json(cfg.at("solver"));
  opts.propagate.substeps = cfg.at("solver").at("substeps").get<int>();
  opts.propagate.boundary_tol = boundary_tol_from_json(cfg.at("solver"), 1e-3);
  opts.threads = threads;
  RamseySignal signal =
      simulate_ramsey(dist, rj.at("displacement_d").get<double>(), delays, lattice, opts);
  export_ramsey_csv(signal, sink.path_of("ramsey_signal.csv"));
  sink.note_file("ramsey_signal.csv");

  RamseyFit fit = fit_ramsey(signal);

  std::vector<double> curve_depths;
  for (double u = rj.at("curve_min_Er").get<double>();
       u <= rj.at("curve_max_Er").get<double>() + 1e-9;
       u += rj.at("curve_step_Er").get<double>())
    curve_depths.push_back(u);
  Omega01Curve curve = omega01_of_depth(lattice, curve_depths);
  DepthDistribution recovered = recover_depth_distribution(signal, curve);
  export_distribution_csv(recovered, sink.path_of("recovered_distribution.csv"));
  sink.note_file("recovered_distribution.csv");

  {
    SvgPlot plot("Ramsey fringe", "delay (ms)", "P0");
    std::vector<double> ms(signal.delays.size()), model(signal.delays.size());
    DampedCosineParams p{fit.amplitude, fit.decay_rate, fit.omega, fit.phase, fit.offset};
    for (std::size_t i = 0; i < ms.size(); ++i) {
      ms[i] = signal.delays[i] * 1e3;
      model[i] = damped_cosine(p, signal.delays[i]);
    }
    plot.add_line(ms, signal.p0_values, "simulated");
    plot.add_line(ms, model, "fit");
    plot.write(sink.path_of("ramsey_signal.svg"));
    sink.note_file("ramsey_signal.svg");
  }
  {
    SvgPlot plot("Depth distribution", "U (E_r)", "rho(U)");
    plot.add_line(recovered.depths, recovered.weights, "recovered");
    if (dist.depths.size() > 1) plot.add_line(dist.depths, dist.weights, "input");
    plot.write(sink.path_of("distribution.svg"));
    sink.note_file("distribution.svg");
  }

  json out;
  out["fit"] = {{"amplitude", fit.amplitude},
                {"decay_rate_per_s", fit.decay_rate},
                {"omega_rad_s", fit.omega},
                {"omega_hz", fit.omega / two_pi},
                {"phase_rad", fit.phase},
                {"offset", fit.offset},
                {"rms_residual", fit.rms_residual}};
  out["recovered"] = {{"mean_Er", recovered.mean()}, {"sigma_Er", recovered.stddev()}};
  out["input_distribution"] = {{"mean_Er", dist.mean()}, {"sigma_Er", dist.stddev()}};
  out["depth_from_fit_Er"] = curve.depth_at(fit.omega);
  return out;
}

inline json run_arp_sweep(const json& cfg, ScenarioSink& sink, unsigned threads) {
  const LatticeConfig lattice = lattice_from_json(cfg.at("lattice"));
  const json& sweep = cfg.at("sweep");
  const json& pulse = cfg.at("pulse");
  const double p0i = cfg.at("initial").at("p0").get<double>();
  const double p1i = cfg.at("initial").at("p1").get<double>();
  DepthDistribution dist =
      distribution_from_json(cfg.at("distribution"), lattice.depth_Er);

  std::vector<double> a_list;
  for (const auto& v : sweep.at("a_pm_d")) a_list.push_back(v.get<double>());
  if (a_list.empty()) a_list.push_back(pulse.at("amplitude_pm_d").get<double>());

  EnsembleOptions opts;
  opts.grid = grid_from_json(cfg.at("solver"));
  opts.propagate.substeps = cfg.at("solver").at("substeps").get<int>();
  opts.propagate.boundary_tol = boundary_tol_from_json(cfg.at("solver"), 1.0);
  opts.threads = threads;
  opts.displaced_final_projection = true;

  const double dt_wave = cfg.at("solver").at("waveform_dt_us").get<double>() * 1e-6;
  const double omega_c = two_pi * pulse.at("frequency_hz").get<double>();

  CsvTable table;
  table.header = {"a_pm_d", "t_p_ms",   "delta_f_khz", "direction", "inv_beta_s2",
                  "P0",     "P1",       "PL",          "P1_tilde",  "P0_tilde",
                  "PL_tilde"};
  table.columns.assign(table.header.size(), {});

  double best_up = 0.0, best_down = 0.0, max_dp0 = 0.0;
  std::vector<double> up_x, up_y, down_x, down_y;

  for (double a_pm : a_list) {
    for (const auto& tpj : sweep.at("t_p_ms")) {
      for (const auto& dfj : sweep.at("delta_f_khz")) {
        const double t_p = tpj.get<double>() * 1e-3;
        const double delta_f = dfj.get<double>() * 1e3;
        Populations up_down[2];
        for (int dir = 0; dir < 2; ++dir) {
          const double sign = dir == 0 ? 1.0 : -1.0;
          PulseSpec spec;
          spec.variant = PulseVariant::ChirpPM;
          spec.amplitude_pm = a_pm;
          spec.duration = t_p;
          spec.chirp.omega_start = omega_c - sign * pi * delta_f;
          spec.chirp.rate = sign * two_pi * delta_f / t_p;
          Waveform wf = synthesize(spec, dt_wave);
          up_down[dir] = ensemble_average(wf, dist, p0i, p1i, lattice, Frame::Lab, opts);

          const auto renorm = renormalize(up_down[dir], p0i, p1i);
          const double inv_beta = t_p / (two_pi * delta_f);
          table.columns[0].push_back(a_pm);
          table.columns[1].push_back(t_p * 1e3);
          table.columns[2].push_back(delta_f * 1e-3);
          table.columns[3].push_back(sign);
          table.columns[4].push_back(inv_beta);
          table.columns[5].push_back(up_down[dir].p0);
          table.columns[6].push_back(up_down[dir].p1);
          table.columns[7].push_back(up_down[dir].p_leak);
          table.columns[8].push_back(renorm.p1_tilde);
          table.columns[9].push_back(renorm.p0_tilde);
          table.columns[10].push_back(renorm.p_leak_tilde);
          if (dir == 0) {
            best_up = std::max(best_up, up_down[dir].p1);
            up_x.push_back(inv_beta);
            up_y.push_back(up_down[dir].p1);
          } else {
            best_down = std::max(best_down, up_down[dir].p1);
            down_x.push_back(inv_beta);
            down_y.push_back(up_down[dir].p1);
          }
        }
        max_dp0 = std::max(max_dp0, std::abs(up_down[0].p0 - up_down[1].p0));
      }
    }
  }
  write_csv(sink.path_of("arp_sweep.csv"), table);
  sink.note_file("arp_sweep.csv");

  SvgPlot plot("Chirped transfer", "1/|beta| (s^2)", "P1");
  plot.set_log_x(true);
  plot.add_scatter(up_x, up_y, "up chirp");
  plot.add_scatter(down_x, down_y, "down chirp");
  plot.write(sink.path_of("arp_sweep.svg"));
  sink.note_file("arp_sweep.svg");

  json out;
  out["best_up_P1"] = best_up;
  out["best_down_P1"] = best_down;
  out["max_abs_dP0"] = max_dp0;
  out["distribution"] = {{"mean_Er", dist.mean()}, {"sigma_Er", dist.stddev()}};
  return out;
}

inline json run_arp_3level(const json& cfg, ScenarioSink& sink) {
  const LatticeConfig lattice = lattice_from_json(cfg.at("lattice"));
  const json& tl = cfg.at("three_level");
  const double a_pm = tl.at("a_pm_d").get<double>();

  SpatialGrid grid = grid_from_json(cfg.at("solver"));
  BlochSpectrum spec = compute_band_structure(lattice, 4, grid.n_wells);
  WannierBasis basis = wannier_states(spec, grid);
  TransitionData transition = coupling_matrix_elements(basis, lattice);
  ThreeLevelSystem sys =
      reduce_to_three_level(lattice, transition, a_pm, transition.omega01);
  CrossingGaps gaps = extract_gaps(sys);

  const double center = sys.omega_two_photon();
  double span = tl.at("span_rad_s").get<double>();
  if (span <= 0.0) span = 3.0 * (sys.omega01() - sys.omega12());
  const int n_scan = tl.at("scan_points").get<int>();
  std::vector<double> omegas(n_scan);
  for (int i = 0; i < n_scan; ++i)
    omegas[i] = center - 0.5 * span + span * i / (n_scan - 1);
  FloquetScan scan = floquet_spectrum(sys, omegas);
  export_floquet_csv(scan, sink.path_of("quasi_energies.csv"));
  sink.note_file("quasi_energies.csv");

  CsvTable transfer;
  transfer.header = {"beta_rad_s2", "direction", "P0", "P1", "P2"};
  transfer.columns.assign(5, {});
  for (const auto& bj : tl.at("beta_rad_s2")) {
    const double beta = bj.get<double>();
    for (double sign : {1.0, -1.0}) {
      auto r = chirped_transfer(sys, sign * beta, span, 0);
      transfer.columns[0].push_back(beta);
      transfer.columns[1].push_back(sign);
      transfer.columns[2].push_back(r.populations[0]);
      transfer.columns[3].push_back(r.populations[1]);
      transfer.columns[4].push_back(r.populations[2]);
    }
  }
  if (!transfer.columns[0].empty()) {
    write_csv(sink.path_of("chirped_transfer.csv"), transfer);
    sink.note_file("chirped_transfer.csv");
  }

  json out;
  out["rabi01_rad_s"] = sys.rabi01;
  out["rabi12_rad_s"] = sys.rabi12;
  out["omega01_rad_s"] = sys.omega01();
  out["omega12_rad_s"] = sys.omega12();
  out["gaps_rad_s"] = {{"omega_a", gaps.omega_a},
                       {"omega_b", gaps.omega_b},
                       {"omega_c", gaps.omega_c}};
  out["crossing_frequencies_rad_s"] = {gaps.crossing_frequencies[0],
                                       gaps.crossing_frequencies[1],
                                       gaps.crossing_frequencies[2]};
  return out;
}

inline json run_grape_design(const json& cfg, ScenarioSink& sink) {
  const LatticeConfig lattice = lattice_from_json(cfg.at("lattice"));
  const json& gj = cfg.at("grape");
  const int n_levels = gj.at("n_levels").get<int>();
  const int n_q = gj.at("n_q").get<int>();
  const double T = gj.at("T_ms").get<double>() * 1e-3;
  const int n_slices = gj.at("n_slices").get<int>();

  BlochSpectrum spec = compute_band_structure(lattice, std::max(n_levels + 2, 8), 64);
  BuildProblemOptions bopts;
  bopts.eta_bound = gj.at("eta_bound").get<double>();
  bopts.force_bound = gj.at("force_bound_Er_d").get<double>();
  bopts.objective = gj.at("objective").get<std::string>() == "gate"
                        ? GrapeObjective::Gate
                        : GrapeObjective::StateTransfer;
  ControlProblem problem = build_problem(lattice, spec, n_levels, n_q, T, n_slices, bopts);

  OptimizeOptions oopts;
  oopts.max_iters = gj.at("max_iters").get<int>();
  oopts.grad_tol = gj.at("grad_tol").get<double>();
  oopts.seed = cfg.at("seed").get<std::uint64_t>();

  Eigen::MatrixXd init;
  const std::string controls_csv = gj.at("controls_csv").get<std::string>();
  if (!controls_csv.empty()) {
    if (!std::filesystem::exists(controls_csv))
      throw ConfigError("config.grape: file not found: " + controls_csv);
    init = import_controls_csv(controls_csv);
  }
  auto [controls, trace] = optimize(problem, init, oopts);

  export_controls_csv(controls, sink.path_of("controls.csv"));
  sink.note_file("controls.csv");
  const double dt_wave = cfg.at("solver").at("waveform_dt_us").get<double>() * 1e-6;
  Waveform wf = export_waveform(problem, controls, lattice, dt_wave);
  export_waveform_csv(wf, sink.path_of("grape_waveform.csv"));
  sink.note_file("grape_waveform.csv");

  {
    json tj;
    tj["iterations"] = json::array();
    for (const auto& it : trace.iterations)
      tj["iterations"].push_back(
          {{"fidelity", it.fidelity}, {"grad_norm", it.gradient_norm}, {"step", it.step}});
    tj["final_fidelity"] = trace.final_fidelity;
    tj["stop_reason"] = trace.stop_reason;
    tj["member_fidelities"] = trace.member_fidelities;
    std::ofstream out(sink.path_of("trace.json"));
    if (!out) throw IoError("cannot write trace.json");
    out << tj.dump(2) << "\n";
  }
  sink.note_file("trace.json");

  // full-grid validation of the exported pulse at the design depth
  SpatialGrid grid = grid_from_json(cfg.at("solver"));
  BandOptions bo;
  bo.check_convergence = false;
  BandProjector projector(compute_band_structure(lattice, 3, 1, bo), grid, 2);
  WannierBasis basis =
      wannier_states(compute_band_structure(lattice, 3, grid.n_wells, bo), grid);
  WaveFunction psi0 = init_state(grid, basis, 0);
  PropagateOptions popts;
  popts.substeps = cfg.at("solver").at("substeps").get<int>();
  auto result = propagate(psi0, wf, lattice, Frame::Lattice,
                          cfg.at("solver").at("record_stride").get<int>(), popts, &projector);

  {
    SvgPlot plot("Engineered pulse", "t (ms)", "control");
    std::vector<double> ms(wf.size()), th(wf.size());
    for (std::size_t i = 0; i < wf.size(); ++i) {
      ms[i] = i * wf.dt * 1e3;
      th[i] = wf.theta[i];
    }
    plot.add_line(ms, th, "theta (d)");
    plot.add_line(ms, wf.eta, "eta");
    plot.write(sink.path_of("grape_waveform.svg"));
    sink.note_file("grape_waveform.svg");
  }
  {
    SvgPlot plot("Pulse simulation", "t (ms)", "population");
    std::vector<double> ms, p0, p1, pl;
    for (std::size_t i = 0; i < result.times.size(); ++i) {
      ms.push_back(result.times[i] * 1e3);
      p0.push_back(result.populations[i].p0);
      p1.push_back(result.populations[i].p1);
      pl.push_back(result.populations[i].p_leak);
    }
    plot.add_line(ms, p0, "P0");
    plot.add_line(ms, p1, "P1");
    plot.add_line(ms, pl, "PL");
    plot.write(sink.path_of("grape_simulation.svg"));
    sink.note_file("grape_simulation.svg");
  }

  json out;
  out["model_fidelity"] = trace.final_fidelity;
  out["iterations"] = trace.iterations.size();
  out["stop_reason"] = trace.stop_reason;
  out["member_fidelities"] = trace.member_fidelities;
  out["grid_final"] = {{"P0", result.final_populations().p0},
                       {"P1", result.final_populations().p1},
                       {"PL", result.final_populations().p_leak}};
  return out;
}

inline Waveform waveform_from_config(const json& cfg) {
  const json& pulse = cfg.at("pulse");
  const std::string csv = pulse.at("waveform_csv").get<std::string>();
  const double dt_wave = cfg.at("solver").at("waveform_dt_us").get<double>() * 1e-6;
  if (!csv.empty()) {
    if (!std::filesystem::exists(csv))
      throw ConfigError("config.pulse: file not found: " + csv);
    Waveform wf = import_waveform_csv(csv);
    if (!wf.step_like) acceleration_profile(wf);
    return wf;
  }
  PulseSpec spec = pulse_from_json(pulse, cfg);
  return synthesize(spec, dt_wave);
}

inline json run_simulate_pulse(const json& cfg, ScenarioSink& sink, unsigned threads) {
  const LatticeConfig lattice = lattice_from_json(cfg.at("lattice"));
  const double p0i = cfg.at("initial").at("p0").get<double>();
  const double p1i = cfg.at("initial").at("p1").get<double>();
  Waveform wf = waveform_from_config(cfg);
  export_waveform_csv(wf, sink.path_of("waveform.csv"));
  sink.note_file("waveform.csv");

  const json& dj = cfg.at("distribution");
  const bool ensemble = !dj.at("csv").get<std::string>().empty() ||
                        dj.at("sigma_Er").get<double>() > 0.0;
  const bool displaced_end = !wf.endpoint_compliant && std::abs(wf.theta_end()) > 1e-9;

  json out;
  Populations final_pops;
  if (ensemble) {
    DepthDistribution dist = distribution_from_json(dj, lattice.depth_Er);
    EnsembleOptions opts;
    opts.grid = grid_from_json(cfg.at("solver"));
    opts.propagate.substeps = cfg.at("solver").at("substeps").get<int>();
    opts.threads = threads;
    opts.displaced_final_projection = displaced_end;
    final_pops = ensemble_average(wf, dist, p0i, p1i, lattice, Frame::Lab, opts);
    out["distribution"] = {{"mean_Er", dist.mean()}, {"sigma_Er", dist.stddev()}};
  } else {
    SpatialGrid grid = grid_from_json(cfg.at("solver"));
    BandOptions bo;
    bo.check_convergence = false;
    BandProjector projector(compute_band_structure(lattice, 3, 1, bo), grid, 2);
    WannierBasis basis =
        wannier_states(compute_band_structure(lattice, 3, grid.n_wells, bo), grid);
    PropagateOptions popts;
    popts.substeps = cfg.at("solver").at("substeps").get<int>();
    const int stride = cfg.at("solver").at("record_stride").get<int>();

    std::vector<PropagationResult> results;
    std::vector<double> weights;
    if (p0i > 0.0) {
      results.push_back(propagate(init_state(grid, basis, 0), wf, lattice, Frame::Lab,
                                  stride, popts, &projector));
      weights.push_back(p0i);
    }
    if (p1i > 0.0) {
      results.push_back(propagate(init_state(grid, basis, 1), wf, lattice, Frame::Lab,
                                  stride, popts, &projector));
      weights.push_back(p1i);
    }

    CsvTable t;
    t.header = {"t", "P0", "P1", "PL"};
    t.columns.assign(4, {});
    for (std::size_t i = 0; i < results[0].times.size(); ++i) {
      Populations p;
      for (std::size_t r = 0; r < results.size(); ++r) {
        p.p0 += weights[r] * results[r].populations[i].p0;
        p.p1 += weights[r] * results[r].populations[i].p1;
        p.p_leak += weights[r] * results[r].populations[i].p_leak;
      }
      t.columns[0].push_back(results[0].times[i]);
      t.columns[1].push_back(p.p0);
      t.columns[2].push_back(p.p1);
      t.columns[3].push_back(p.p_leak);
    }
    write_csv(sink.path_of("populations.csv"), t);
    sink.note_file("populations.csv");

    SvgPlot plot("Band populations", "t (ms)", "population");
    std::vector<double> ms(t.columns[0].size());
    for (std::size_t i = 0; i < ms.size(); ++i) ms[i] = t.columns[0][i] * 1e3;
    plot.add_line(ms, t.columns[1], "P0");
    plot.add_line(ms, t.columns[2], "P1");
    plot.add_line(ms, t.columns[3], "PL");
    plot.write(sink.path_of("populations.svg"));
    sink.note_file("populations.svg");

    for (std::size_t r = 0; r < results.size(); ++r) {
      const Populations p = displaced_end
                                ? projector.project_displaced(
                                      results[r].final_state.amplitudes, wf.theta_end())
                                : results[r].final_populations();
      final_pops.p0 += weights[r] * p.p0;
      final_pops.p1 += weights[r] * p.p1;
      final_pops.p_leak += weights[r] * p.p_leak;
    }
  }

  const RenormalizedPopulations renorm = renormalize(final_pops, p0i, p1i);
  const MeritReport merit = merit_report(renorm, final_pops);
  out["final"] = {{"P0", final_pops.p0}, {"P1", final_pops.p1}, {"PL", final_pops.p_leak}};
  out["renormalized"] = {{"P0_tilde", renorm.p0_tilde},
                         {"P1_tilde", renorm.p1_tilde},
                         {"PL_tilde", renorm.p_leak_tilde}};
  out["merit"] = {{"inversion", merit.inversion},
                  {"branching_ratio_finite", std::isfinite(merit.branching_ratio)},
                  {"branching_ratio",
                   std::isfinite(merit.branching_ratio) ? merit.branching_ratio : 0.0}};
  out["endpoint_compliant"] = wf.endpoint_compliant;
  out["displaced_final_projection"] = displaced_end;
  return out;
}

inline json run_depth_scan(const json& cfg, ScenarioSink& sink, unsigned threads) {
  const LatticeConfig lattice = lattice_from_json(cfg.at("lattice"));
  const double p0i = cfg.at("initial").at("p0").get<double>();
  const double p1i = cfg.at("initial").at("p1").get<double>();
  Waveform wf = waveform_from_config(cfg);
  const bool displaced_end = !wf.endpoint_compliant && std::abs(wf.theta_end()) > 1e-9;

  std::vector<double> depths;
  for (const auto& v : cfg.at("sweep").at("depth_Er")) depths.push_back(v.get<double>());
  if (depths.empty()) throw ConfigError("depth-scan: sweep.depth_Er must be non-empty");

  EnsembleOptions opts;
  opts.grid = grid_from_json(cfg.at("solver"));
  opts.propagate.substeps = cfg.at("solver").at("substeps").get<int>();
  opts.threads = threads;
  opts.displaced_final_projection = displaced_end;

  std::vector<Populations> pops(depths.size());
  parallel_for_indexed(depths.size(), threads, [&](std::size_t i) {
    LatticeConfig c = lattice;
    c.depth_Er = depths[i];
    EnsembleOptions single = opts;
    single.threads = 1;
    pops[i] = ensemble_average(wf, DepthDistribution::delta(depths[i]), p0i, p1i, c,
                               Frame::Lab, single);
  });

  CsvTable t;
  t.header = {"U_Er", "P0", "P1", "PL"};
  t.columns.assign(4, {});
  for (std::size_t i = 0; i < depths.size(); ++i) {
    t.columns[0].push_back(depths[i]);
    t.columns[1].push_back(pops[i].p0);
    t.columns[2].push_back(pops[i].p1);
    t.columns[3].push_back(pops[i].p_leak);
  }
  write_csv(sink.path_of("depth_scan.csv"), t);
  sink.note_file("depth_scan.csv");

  SvgPlot plot("Depth sensitivity", "U (E_r)", "population");
  plot.add_line(t.columns[0], t.columns[1], "P0");
  plot.add_line(t.columns[0], t.columns[2], "P1");
  plot.add_line(t.columns[0], t.columns[3], "PL");
  plot.write(sink.path_of("depth_scan.svg"));
  sink.note_file("depth_scan.svg");

  json out;
  double best_p1 = 0.0, best_u = depths.front();
  for (std::size_t i = 0; i < depths.size(); ++i)
    if (pops[i].p1 > best_p1) {
      best_p1 = pops[i].p1;
      best_u = depths[i];
    }
  out["best_P1"] = best_p1;
  out["best_depth_Er"] = best_u;
  return out;
}

inline json run_compare(const json& cfg, ScenarioSink& sink) {
  const json& inputs = cfg.at("compare_inputs");
  if (inputs.size() < 2) throw ConfigError("compare: need >= 2 input summaries");

  struct Row {
    std::string label;
    double p0_t, p1_t, pl_t, inversion;
  };
  std::vector<Row> rows;
  json warnings = json::array();
  for (const auto& pj : inputs) {
    const std::string path = pj.get<std::string>();
    if (!std::filesystem::exists(path)) throw ConfigError("compare: file not found: " + path);
    std::ifstream in(path);
    json summary;
    try {
      in >> summary;
    } catch (const std::exception& e) {
      throw ConfigError("compare: cannot parse " + path + ": " + e.what());
    }
    std::string label = summary.value("scenario", std::string("?"));
    if (summary.contains("config") && summary["config"].contains("label") &&
        !summary["config"]["label"].get<std::string>().empty())
      label = summary["config"]["label"].get<std::string>();
    if (!summary.contains("outputs") || !summary["outputs"].contains("renormalized")) {
      warnings.push_back("excluded " + path + ": no renormalized populations");
      continue;
    }
    const json& r = summary["outputs"]["renormalized"];
    Row row;
    row.label = label;
    row.p0_t = r.at("P0_tilde").get<double>();
    row.p1_t = r.at("P1_tilde").get<double>();
    row.pl_t = r.at("PL_tilde").get<double>();
    row.inversion = (row.p1_t - row.p0_t) / (row.p1_t + row.p0_t);
    rows.push_back(row);
  }
  if (rows.size() < 2) throw ConfigError("compare: fewer than 2 usable summaries");

  std::vector<std::size_t> rank(rows.size());
  for (std::size_t i = 0; i < rank.size(); ++i) rank[i] = i;
  std::stable_sort(rank.begin(), rank.end(),
                   [&](std::size_t a, std::size_t b) { return rows[a].p1_t > rows[b].p1_t; });

  CsvTable t;
  t.header = {"rank", "P1_tilde", "P0_tilde", "PL_tilde", "inversion"};
  t.columns.assign(5, {});
  json ranking = json::array();
  for (std::size_t k = 0; k < rank.size(); ++k) {
    const Row& row = rows[rank[k]];
    t.columns[0].push_back(k + 1);
    t.columns[1].push_back(row.p1_t);
    t.columns[2].push_back(row.p0_t);
    t.columns[3].push_back(row.pl_t);
    t.columns[4].push_back(row.inversion);
    ranking.push_back({{"rank", k + 1},
                       {"label", row.label},
                       {"P1_tilde", row.p1_t},
                       {"PL_tilde", row.pl_t},
                       {"inversion", row.inversion}});
  }
  write_csv(sink.path_of("comparison.csv"), t);
  sink.note_file("comparison.csv");

  {
    SvgPlot plot("Leakage vs transfer", "P1_tilde", "PL_tilde");
    for (const Row& row : rows)
      plot.add_scatter({row.p1_t}, {row.pl_t}, row.label);
    plot.write(sink.path_of("leak_vs_transfer.svg"));
    sink.note_file("leak_vs_transfer.svg");
  }
  {
    SvgPlot plot("Leakage vs inversion", "inversion", "PL_tilde");
    for (const Row& row : rows)
      plot.add_scatter({row.inversion}, {row.pl_t}, row.label);
    plot.write(sink.path_of("leak_vs_inversion.svg"));
    sink.note_file("leak_vs_inversion.svg");
  }

  json out;
  out["ranking"] = ranking;
  out["warnings"] = warnings;
  return out;
}

} // namespace scenario_impl

//! Resolve defaults, run the scenario, write data/plots plus a summary JSON
//! (echoing the resolved config, with a file manifest and hashes). Returns
//! the summary.
inline json run_scenario(const json& user_config, const std::string& out_dir_override = "",
                         int threads_override = -1, std::int64_t seed_override = -1) {
  const auto t_start = std::chrono::steady_clock::now();
  const std::string started = detail::utc_timestamp();

  json cfg;
  try {
    cfg = detail::merge_config(scenario_defaults(), user_config, "");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!out_dir_override.empty()) cfg["out_dir"] = out_dir_override;
  if (threads_override >= 0) cfg["threads"] = threads_override;
  if (seed_override >= 0) cfg["seed"] = seed_override;

  const std::string scenario = cfg.at("scenario").get<std::string>();
  const unsigned threads = cfg.at("threads").get<unsigned>();

  ScenarioSink sink(cfg.at("out_dir").get<std::string>());
  json outputs;
  if (scenario == "bands") outputs = scenario_impl::run_bands(cfg, sink);
  else if (scenario == "ramsey") outputs = scenario_impl::run_ramsey(cfg, sink, threads);
  else if (scenario == "arp-sweep") outputs = scenario_impl::run_arp_sweep(cfg, sink, threads);
  else if (scenario == "arp-3level") outputs = scenario_impl::run_arp_3level(cfg, sink);
  else if (scenario == "grape-design") outputs = scenario_impl::run_grape_design(cfg, sink);
  else if (scenario == "simulate-pulse") outputs = scenario_impl::run_simulate_pulse(cfg, sink, threads);
  else if (scenario == "depth-scan") outputs = scenario_impl::run_depth_scan(cfg, sink, threads);
  else if (scenario == "compare") outputs = scenario_impl::run_compare(cfg, sink);
  else throw ConfigError("config: unknown scenario '" + scenario + "'");

  json summary;
  summary["schema_version"] = "1";
  summary["scenario"] = scenario;
  summary["config"] = cfg;
  summary["outputs"] = outputs;
  summary["files"] = sink.manifest();
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  summary["timing"] = {{"started_utc", started}, {"wall_seconds", wall}};

  std::ofstream out(sink.path_of("summary.json"));
  if (!out) throw IoError("cannot write summary.json");
  out << summary.dump(2) << "\n";
  if (!out) throw IoError("write failed for summary.json");
  return summary;
}

} // namespace lattice
