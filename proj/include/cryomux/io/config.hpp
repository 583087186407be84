#pragma once

// YAML chip configuration. A config names the matrix size, default cell
// parameters, per-cell overrides, resonators (explicit or calibration
// targets), the noise model and the protocol defaults used by the presets.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cryomux/cell_matrix.hpp"
#include "cryomux/mux_controller.hpp"
#include "cryomux/rf_chain.hpp"

namespace cryomux::io {

struct CalibrationTargets {
  std::vector<double> frequencies;  ///< one per row (Hz)
  double q = 50.0;
  double loss_fraction = 0.5;
  /// Optional per-row frequencies the calibrated dips are moved to by a c_p
  /// shift (for instance a warm-chip characterisation).
  std::vector<double> shift_to;

  bool operator==(const CalibrationTargets&) const = default;
};

struct SweepAxis {
  double start = -0.01;
  double stop = 0.01;
  int points = 21;

  Eigen::VectorXd values() const;
  bool operator==(const SweepAxis&) const = default;
};

struct ChipConfig {
  std::size_t rows = 3;
  std::size_t cols = 3;
  std::vector<CellState> cells;              ///< fully resolved, row-major
  std::vector<ResonatorSpec> resonators;     ///< empty until calibrated
  std::optional<CalibrationTargets> calibration;
  NoiseModel noise;
  std::uint64_t seed = 0;
  MuxLevels levels;
  Timing timing;
  DataRamp ramp;
  SweepAxis v_s_sweep;
  double carrier_amplitude = 1.0;

  bool operator==(const ChipConfig&) const;
};

/// Built-in configuration: a 3x3 chip of six-transition devices whose first
/// transition is offset by 2.5 mV per cell, rows calibrated to 6.872, 7.420
/// and 7.951 GHz at Q = 50.
ChipConfig default_config();

/// Parses YAML text. Unknown keys, wrong types and invalid values throw
/// ValidationError carrying the offending line. Resonators given as
/// calibration targets are calibrated here, so the result is complete.
ChipConfig parse_config(const std::string& yaml_text);
ChipConfig load_config(const std::string& path);

/// Canonical YAML with every cell and resonator explicit; parse_config()
/// of the output reproduces the structure exactly.
std::string serialize_config(const ChipConfig& config);

/// Matrix with all line levels at zero and every cell at its stored v_g.
MatrixConfig build_matrix(const ChipConfig& config);

/// Calibrates every row resonator against the row load with column 1 selected
/// at the ramp start level.
std::vector<ResonatorSpec> calibrate_rows(const ChipConfig& config, const CalibrationTargets& targets);

}  // namespace cryomux::io
