#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "lattice/scenario.hpp"

using namespace lattice;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::path("scenario-tests") / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

json paper_lattice(double depth, bool gravity = false) {
  json j;
  j["depth_Er"] = depth;
  j["recoil_frequency_hz"] = 685.0;
  j["gravity"] = gravity;
  return j;
}

} // namespace

TEST_SUITE_BEGIN("scenarios");

TEST_CASE("bands scenario reports the measured resonance and writes its files") {
  TempDir dir("bands");
  json cfg;
  cfg["scenario"] = "bands";
  cfg["lattice"] = paper_lattice(18.0);
  cfg["out_dir"] = dir.str();
  json summary = run_scenario(cfg);

  CHECK(summary["outputs"]["omega01_hz"].get<double>() ==
        doctest::Approx(5007.0).epsilon(0.03));
  CHECK(summary["outputs"]["recoil_frequency_hz"].get<double>() ==
        doctest::Approx(685.0).epsilon(1e-6));

  // manifest lists each file with its content hash
  REQUIRE(summary["files"].size() >= 4);
  for (const auto& f : summary["files"]) {
    const fs::path p = dir.path / f["path"].get<std::string>();
    CHECK(fs::exists(p));
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(f["fnv1a64"].get<std::string>() ==
          detail::hex64(detail::fnv1a64(ss.str())));
  }
  CHECK(fs::exists(dir.path / "summary.json"));
}

TEST_CASE("summaries are byte-identical for the same config and seed") {
  TempDir dir("determinism");
  json cfg;
  cfg["scenario"] = "arp-3level";
  cfg["lattice"] = paper_lattice(18.0);
  cfg["three_level"] = {{"a_pm_d", 1.0 / 72.0}, {"scan_points", 41}};
  cfg["out_dir"] = dir.str();
  cfg["seed"] = 7;

  json a = run_scenario(cfg);
  json b = run_scenario(cfg);
  a.erase("timing");
  b.erase("timing");
  CHECK(a.dump() == b.dump());
}

TEST_CASE("arp-3level scenario extracts the three gaps") {
  TempDir dir("threelevel");
  json cfg;
  cfg["scenario"] = "arp-3level";
  cfg["lattice"] = paper_lattice(18.0);
  cfg["three_level"] = {{"a_pm_d", 1.0 / 72.0}, {"scan_points", 41}};
  cfg["out_dir"] = dir.str();
  json summary = run_scenario(cfg);
  const auto& gaps = summary["outputs"]["gaps_rad_s"];
  CHECK(gaps["omega_a"].get<double>() > 0.0);
  CHECK(gaps["omega_a"].get<double>() < gaps["omega_c"].get<double>());
  CHECK(gaps["omega_a"].get<double>() < gaps["omega_b"].get<double>());
  CHECK(fs::exists(dir.path / "quasi_energies.csv"));
}

TEST_CASE("simulate-pulse with a null drive leaves the initial mixture unchanged") {
  TempDir dir("nullpulse");
  json cfg;
  cfg["scenario"] = "simulate-pulse";
  cfg["lattice"] = paper_lattice(18.0);
  cfg["pulse"] = {{"variant", "sine-pm"},
                  {"amplitude_pm_d", 0.0},
                  {"duration_ms", 0.2},
                  {"frequency_hz", 5000.0}};
  cfg["initial"] = {{"p0", 0.925}, {"p1", 0.075}};
  cfg["out_dir"] = dir.str();
  json summary = run_scenario(cfg);
  CHECK(summary["outputs"]["final"]["P0"].get<double>() ==
        doctest::Approx(0.925).epsilon(1e-3));
  CHECK(summary["outputs"]["final"]["P1"].get<double>() ==
        doctest::Approx(0.075).epsilon(1e-3));
  CHECK(fs::exists(dir.path / "populations.csv"));
  CHECK(fs::exists(dir.path / "populations.svg"));
}

TEST_CASE("compare ranks the published transfer numbers and flags bad rows") {
  TempDir dir("compare");
  auto write_summary = [&](const std::string& name, const std::string& label, double p0t,
                           double p1t, double plt, bool with_renorm = true) {
    json s;
    s["schema_version"] = "1";
    s["scenario"] = "simulate-pulse";
    s["config"] = {{"label", label}};
    s["outputs"] = json::object();
    if (with_renorm)
      s["outputs"]["renormalized"] = {{"P0_tilde", p0t}, {"P1_tilde", p1t}, {"PL_tilde", plt}};
    std::ofstream out(dir.path / name);
    out << s.dump(2);
    return (dir.path / name).string();
  };

  // renormalized transfers as published: the chirped drive and the
  // engineered pulse beat the step/square/gaussian legacy pulses
  std::vector<std::string> inputs;
  inputs.push_back(write_summary("arp.json", "arp", 0.424, 0.389, 0.187));
  inputs.push_back(write_summary("grape.json", "grape", 0.599, 0.401, 0.035));
  inputs.push_back(write_summary("square.json", "square", 0.40, 0.295, 0.32));
  inputs.push_back(write_summary("gauss.json", "gaussian", 0.45, 0.27, 0.28));
  inputs.push_back(write_summary("step.json", "single-step", 0.55, 0.22, 0.23));
  inputs.push_back(write_summary("broken.json", "broken", 0, 0, 0, false));

  json cfg;
  cfg["scenario"] = "compare";
  cfg["compare_inputs"] = inputs;
  cfg["out_dir"] = (dir.path / "out").string();
  json summary = run_scenario(cfg);

  const auto& ranking = summary["outputs"]["ranking"];
  REQUIRE(ranking.size() == 5);
  CHECK(ranking[0]["label"].get<std::string>() == "grape");
  CHECK(ranking[1]["label"].get<std::string>() == "arp");
  CHECK(summary["outputs"]["warnings"].size() == 1);

  // determinism of ties: identical inputs keep their order
  json tie;
  tie["scenario"] = "compare";
  tie["compare_inputs"] = {inputs[0], inputs[0]};
  tie["out_dir"] = (dir.path / "tie").string();
  json tie_summary = run_scenario(tie);
  CHECK(tie_summary["outputs"]["ranking"][0]["label"] ==
        tie_summary["outputs"]["ranking"][1]["label"]);
}

TEST_CASE("summaries do not depend on the worker thread count") {
  TempDir dir("threads");
  json cfg;
  cfg["scenario"] = "ramsey";
  cfg["lattice"] = paper_lattice(18.0);
  cfg["distribution"] = {{"sigma_Er", 1.0}, {"n_samples", 5}};
  cfg["ramsey"] = {{"delay_max_ms", 1.5}, {"curve_min_Er", 13.0}, {"curve_max_Er", 23.0}};
  cfg["out_dir"] = dir.str();
  json a = run_scenario(cfg, "", 1);
  json b = run_scenario(cfg, "", 2);
  a.erase("timing");
  b.erase("timing");
  a["config"].erase("threads");
  b["config"].erase("threads");
  CHECK(a.dump() == b.dump());
}

TEST_CASE("an exported waveform replays through simulate-pulse") {
  TempDir dir("replay");
  PulseSpec spec;
  spec.variant = PulseVariant::SinePM;
  spec.amplitude_pm = 1.0 / 72.0;
  spec.frequency = two_pi * 5000.0;
  spec.duration = 10.0 * two_pi / spec.frequency;
  Waveform wf = synthesize(spec, 1e-6);
  const std::string path = (dir.path / "drive.csv").string();
  export_waveform_csv(wf, path);

  json cfg;
  cfg["scenario"] = "simulate-pulse";
  cfg["lattice"] = paper_lattice(18.0);
  cfg["pulse"] = {{"waveform_csv", path}};
  cfg["out_dir"] = (dir.path / "out").string();
  json summary = run_scenario(cfg);
  const double sum = summary["outputs"]["final"]["P0"].get<double>() +
                     summary["outputs"]["final"]["P1"].get<double>() +
                     summary["outputs"]["final"]["PL"].get<double>();
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(summary["outputs"]["final"]["P1"].get<double>() > 0.01); // resonant drive moved population
}

TEST_CASE("config validation failures") {
  json cfg;
  cfg["scenario"] = "no-such-scenario";
  CHECK_THROWS_AS(run_scenario(cfg, "scenario-tests/err"), ConfigError);

  json typo;
  typo["scenario"] = "bands";
  typo["lattice"] = {{"depth_er", 18.0}}; // wrong case
  CHECK_THROWS_AS(run_scenario(typo, "scenario-tests/err"), ConfigError);

  json missing;
  missing["scenario"] = "simulate-pulse";
  missing["pulse"] = {{"waveform_csv", "does-not-exist.csv"}};
  CHECK_THROWS_AS(run_scenario(missing, "scenario-tests/err"), ConfigError);
  std::filesystem::remove_all("scenario-tests");
}

TEST_CASE("small grape-design scenario writes controls, waveform, and trace") {
  TempDir dir("grape");
  json cfg;
  cfg["scenario"] = "grape-design";
  cfg["lattice"] = paper_lattice(25.0);
  cfg["grape"] = {{"T_ms", 0.6}, {"n_slices", 40}, {"n_q", 1}, {"max_iters", 60}};
  cfg["solver"] = {{"record_stride", 100}};
  cfg["out_dir"] = dir.str();
  cfg["seed"] = 3;
  json summary = run_scenario(cfg);
  CHECK(summary["outputs"]["model_fidelity"].get<double>() > 0.1);
  CHECK(fs::exists(dir.path / "controls.csv"));
  CHECK(fs::exists(dir.path / "grape_waveform.csv"));
  CHECK(fs::exists(dir.path / "trace.json"));
  const auto grid_final = summary["outputs"]["grid_final"];
  const double sum = grid_final["P0"].get<double>() + grid_final["P1"].get<double>() +
                     grid_final["PL"].get<double>();
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_SUITE_END();
