#pragma once

// Delimited-text data files. Each file opens with '#'-prefixed JSON lines
// (a header record, then one record per segment for traces) followed by a
// CSV block. Doubles are written with 17 significant digits so files
// round-trip exactly and identical runs give identical bytes.

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cryomux/mux_controller.hpp"

namespace cryomux::io {

/// A trace with the data-line ramp of its row in each segment, so that
/// analysis can map time to V_DL without the program.
struct TraceRecord {
  Trace trace;
  double v_s = 0.0;
  std::vector<std::pair<double, double>> dl_ramps;  ///< (start, end) per segment
};

/// Ramps of the trace's row taken from `program`.
TraceRecord make_record(const Trace& trace, const WaveformProgram& program, double v_s);

std::string format_trace(const TraceRecord& record);
TraceRecord parse_trace(const std::string& text);

std::string format_map(const StabilityMap& map);
StabilityMap parse_map(const std::string& text);

struct Spectrum {
  Eigen::VectorXd frequency;  ///< Hz
  Eigen::VectorXd s11_mag;    ///< linear |S11|
  nlohmann::json meta;
};

/// Two columns, frequency_hz and s11_db.
std::string format_spectrum(const Spectrum& spectrum);
Spectrum parse_spectrum(const std::string& text);

/// Leading '#' JSON line of any data file.
nlohmann::json read_header(const std::string& text);

std::string read_file(const std::string& path);

}  // namespace cryomux::io
