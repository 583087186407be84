#pragma once

// JSON-lines fit reports and the benchmark table.

#include <string>
#include <vector>

#include <json.hpp>

#include "cryomux/analysis.hpp"

namespace cryomux::io {

nlohmann::json to_json(const PeakFit& fit);
nlohmann::json to_json(const RetentionFit& fit);
nlohmann::json to_json(const ResonanceFit& fit);
nlohmann::json to_json(const DiamondExtraction& result);

/// One row of the readout benchmark: peak amplitude, width, noise, SNR,
/// integration and minimum integration time, lever arm, tunnel rate and R^2.
struct BenchmarkRow {
  std::string device;
  double amplitude = 0.0;  ///< V
  double fwhm = 0.0;       ///< V
  double sigma = 0.0;      ///< V
  double snr = 0.0;
  double t_int = 0.0;      ///< s
  double t_min = 0.0;      ///< s
  double alpha = 0.0;
  double gamma = 0.0;      ///< Hz
  double r_squared = 0.0;
};

/// CSV with a header row; infinities are written as "inf".
std::string format_benchmark(const std::vector<BenchmarkRow>& rows);

/// Compact one-line JSON (no trailing newline) with non-finite numbers
/// written as null.
std::string json_line(const nlohmann::json& record);

}  // namespace cryomux::io
