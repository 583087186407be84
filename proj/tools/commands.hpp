#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cryomux::cli {

// Exit codes shared by every subcommand.
inline constexpr int kOk = 0;
inline constexpr int kValidation = 1;
inline constexpr int kRuntime = 2;
inline constexpr int kNonConvergence = 3;

struct Common {
  std::string config;  ///< empty: built-in default chip
  std::optional<std::uint64_t> seed;
  std::string out = "out";
};

struct SpectrumOptions {
  int row = 0;  ///< one-based; 0 sweeps every row
  double f_start = 6e9;
  double f_stop = 8.5e9;
  int points = 2001;
};

struct SimulateOptions {
  std::string preset;
  std::string program;  ///< program file; overrides the preset
  std::string cell = "Q11";
  int row = 1;
  double sigma_v = -1.0;  ///< negative keeps the config value
};

struct AnalyzeOptions {
  std::string pipeline;
  std::vector<std::string> inputs;
  double alpha = 0.8;
  double t_int = 0.4;
  std::size_t retention_points = 4;
  std::string report = "report.jsonl";
};

struct SweepOptions {
  std::string cell = "Q11";
  double sigma_v = -1.0;
};

int run_spectrum(const Common& common, const SpectrumOptions& opt);
int run_simulate(const Common& common, const SimulateOptions& opt);
int run_analyze(const Common& common, const AnalyzeOptions& opt);
int run_sweep(const Common& common, const SweepOptions& opt);

}  // namespace cryomux::cli
