// cryomux command-line front end. Every failure ends with one JSON record on
// stderr and an exit code: 0 success, 1 validation, 2 runtime, 3 a fit did
// not converge (and nothing else failed).

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "commands.hpp"
#include "cryomux/errors.hpp"

namespace {

int report_error(const char* kind, const std::string& message, int code, int line = 0) {
  nlohmann::json j{{"error", kind}, {"message", message}, {"exit_code", code}};
  if (line > 0) j["line"] = line;
  std::cerr << j.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace cryomux::cli;
  CLI::App app{"Simulator and analysis tools for a row/column multiplexed quantum-dot readout chip"};
  app.require_subcommand(1);
  app.set_version_flag("--version", CRYOMUX_VERSION);

  Common common;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "Chip configuration (YAML); built-in default when absent")
        ->envname("CRYOMUX_CONFIG");
    sub->add_option("--seed", seed, "Override the configured noise seed");
    sub->add_option("--out", common.out, "Output directory")->capture_default_str();
  };

  SpectrumOptions spec;
  auto* spectrum = app.add_subcommand("spectrum", "|S11| sweeps with the access transistors on and off");
  add_common(spectrum);
  spectrum->add_option("--row", spec.row, "One-based row; 0 sweeps every row")->capture_default_str();
  spectrum->add_option("--f-start", spec.f_start, "Hz")->capture_default_str();
  spectrum->add_option("--f-stop", spec.f_stop, "Hz")->capture_default_str();
  spectrum->add_option("--points", spec.points)->capture_default_str();

  SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "Run a readout preset or a program file");
  add_common(simulate);
  simulate->add_option("--preset", sim.preset)
      ->check(CLI::IsMember({"static-sweep", "diamonds", "time-mux", "freq-mux", "combined", "retention"}));
  simulate->add_option("--program", sim.program, "Program file (YAML); takes precedence over --preset");
  simulate->add_option("--cell", sim.cell, "Cell for static-sweep, diamonds and retention")->capture_default_str();
  simulate->add_option("--row", sim.row, "One-based row for time-mux")->capture_default_str();
  simulate->add_option("--sigma-v", sim.sigma_v, "Override the configured noise sigma (V)");

  AnalyzeOptions ana;
  auto* analyze = app.add_subcommand("analyze", "Fit simulated or recorded data files");
  add_common(analyze);
  analyze->add_option("--pipeline", ana.pipeline)
      ->required()
      ->check(CLI::IsMember({"background+peaks", "snr", "retention", "resonance", "diamonds"}));
  analyze->add_option("inputs", ana.inputs, "Trace, map or spectrum files")->required();
  analyze->add_option("--alpha", ana.alpha, "Gate lever arm used for tunnel rates")->capture_default_str();
  analyze->add_option("--t-int", ana.t_int, "Integration time behind each trace (s)")->capture_default_str();
  analyze->add_option("--retention-points", ana.retention_points, "Pulses used by the retention fit")
      ->capture_default_str();
  analyze->add_option("--report", ana.report, "Report file name inside --out")->capture_default_str();

  SweepOptions sw;
  auto* sweep = app.add_subcommand("sweep", "Static stability map of one device");
  add_common(sweep);
  sweep->add_option("--cell", sw.cell)->capture_default_str();
  sweep->add_option("--sigma-v", sw.sigma_v, "Override the configured noise sigma (V)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kValidation;
  }
  for (auto* sub : {spectrum, simulate, analyze, sweep}) {
    if (sub->parsed() && sub->count("--seed") > 0) common.seed = seed;
  }

  try {
    if (*spectrum) return run_spectrum(common, spec);
    if (*simulate) {
      if (sim.preset.empty() && sim.program.empty()) throw cryomux::ValidationError("simulate: give --preset or --program");
      return run_simulate(common, sim);
    }
    if (*analyze) return run_analyze(common, ana);
    return run_sweep(common, sw);
  } catch (const cryomux::ValidationError& e) {
    return report_error("validation", e.what(), kValidation, e.line());
  } catch (const cryomux::ConvergenceError& e) {
    return report_error("non-convergence", e.what(), kNonConvergence);
  } catch (const std::exception& e) {
    return report_error("runtime", e.what(), kRuntime);
  }
}
