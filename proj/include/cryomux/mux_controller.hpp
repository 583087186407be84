#pragma once

// Addressing protocols for the row/column matrix: waveform programs for
// random-access, time-multiplexed, frequency-multiplexed and combined
// readout, their execution against a simulated chip, and demultiplexing of
// the resulting traces into per-device stability maps.

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cryomux/cell_matrix.hpp"
#include "cryomux/rf_chain.hpp"

namespace cryomux {

enum class LineKind { WordLine, DataLine, Source };

/// A control line. Word-lines index columns, data-lines index rows and
/// source lines index cells; all indices are zero-based.
struct LineId {
  LineKind kind = LineKind::WordLine;
  std::size_t row = 0;
  std::size_t col = 0;

  static LineId word_line(std::size_t col) { return {LineKind::WordLine, 0, col}; }
  static LineId data_line(std::size_t row) { return {LineKind::DataLine, row, 0}; }
  static LineId source(std::size_t row, std::size_t col) { return {LineKind::Source, row, col}; }

  /// "WL2", "DL1", "S13" (one-based, as printed on the chip).
  std::string name() const;
  /// Inverse of name(); throws ValidationError on malformed names.
  static LineId parse(const std::string& name);

  auto operator<=>(const LineId&) const = default;
};

/// Level of a line over one segment: constant when start == end, otherwise a
/// linear ramp from start to end across the segment.
struct LineDrive {
  double start = 0.0;
  double end = 0.0;

  static LineDrive constant(double v) { return {v, v}; }
  static LineDrive ramp(double from, double to) { return {from, to}; }
  bool is_ramp() const { return start != end; }
  /// Level at fractional position `frac` in [0, 1] of the segment.
  double at(double frac) const { return start + (end - start) * frac; }

  bool operator==(const LineDrive&) const = default;
};

struct Segment {
  double duration = 0.0;
  std::map<LineId, LineDrive> levels;  ///< lines not listed sit at the idle level
  std::vector<CellIndex> active;       ///< cells being read in this segment

  bool operator==(const Segment&) const = default;
};

struct IdleLevels {
  double wl = 0.5;
  double dl = 0.0;
  double s = 0.0;

  bool operator==(const IdleLevels&) const = default;
};

struct WaveformProgram {
  std::vector<Segment> segments;
  IdleLevels idle;
  CarrierSet carriers;
  double sample_rate = 1e5;      ///< Hz
  double settle_fraction = 0.01; ///< leading fraction of each segment dropped by demux
  std::vector<CellIndex> dc_probes;  ///< cells whose source current is recorded

  double total_duration() const;
  /// Level of `line` at fractional position `frac` of segment `seg`.
  double level(const LineId& line, std::size_t seg, double frac) const;
  /// Number of samples in segment `seg` (floor(duration * sample_rate)).
  std::size_t samples_in(std::size_t seg) const;

  bool operator==(const WaveformProgram&) const = default;
};

/// Structural checks: positive durations, ramp/sample-rate consistency,
/// sample_rate * min(duration) >= 10, distinct carriers.
void validate(const WaveformProgram& program);
/// validate() plus every referenced line, cell and carrier row exists on `chip`.
void validate_against(const WaveformProgram& program, const MatrixConfig& chip);

enum class TraceKind { Rf, Dc };

struct SegmentAnnotation {
  double t_start = 0.0;
  double t_end = 0.0;
  std::size_t first_sample = 0;
  std::size_t n_samples = 0;
  std::vector<CellIndex> active;  ///< active cells visible on this channel
};

struct Trace {
  TraceKind kind = TraceKind::Rf;
  std::size_t carrier = 0;   ///< index into the program's carriers (RF)
  std::size_t row = 0;       ///< row read by the carrier, or probe row (DC)
  double frequency = 0.0;    ///< carrier frequency (RF)
  CellIndex probe;           ///< probed cell (DC)
  std::uint64_t seed = 0;
  Eigen::VectorXd t;         ///< sample times (s), strictly increasing
  Eigen::VectorXd v;         ///< V_mw (V) for RF, source current (A) for DC
  std::vector<SegmentAnnotation> segments;

  std::string channel() const;
};

struct StabilityMap {
  CellIndex device;
  TraceKind kind = TraceKind::Rf;
  Eigen::VectorXd v_dl;    ///< columns
  Eigen::VectorXd v_s;     ///< rows
  Eigen::MatrixXd values;  ///< v_s.size() x v_dl.size()
  int occurrences = 1;     ///< segments averaged into each row

  std::string label() const { return device.label(); }
};

struct MuxLevels {
  double v_wl_high = 1.5;
  double v_wl_low = 0.5;

  bool operator==(const MuxLevels&) const = default;
};

struct DataRamp {
  double start = 0.39;
  double end = 0.56;
  double duration = 8.33e-3;

  bool operator==(const DataRamp&) const = default;
};

struct Timing {
  double sample_rate = 1e5;
  double settle_fraction = 0.01;

  bool operator==(const Timing&) const = default;
};

/// Carrier frequency per row (normally the calibrated resonances) and a
/// common probe amplitude.
struct CarrierPlan {
  std::vector<double> frequencies;
  double amplitude = 1.0;
  Carrier for_row(std::size_t row) const;
};

/// Load of `row` with only column `col` selected: its word-line at
/// v_wl_high, the others at v_wl_low, the data-line at v_dl, sources at 0 V
/// and every gate node settled to equilibrium.
Complex selected_row_load(const MatrixConfig& chip, std::size_t row, std::size_t col, const MuxLevels& levels,
                          double v_dl, double f_probe);

/// Load of `row` with every word-line at v_wl_low.
Complex deselected_row_load(const MatrixConfig& chip, std::size_t row, const MuxLevels& levels, double v_dl,
                            double f_probe);

/// Reflection minimum of each row resonator under its column-0 selected load,
/// located by a logarithmic scan over [f_lo, f_hi] and a local refinement.
CarrierPlan carrier_plan(const MatrixConfig& chip, const MuxLevels& levels = {}, double v_dl = 0.39,
                         double amplitude = 1.0, double f_lo = 1e9, double f_hi = 20e9);

/// One segment per listed cell (repeats allowed, any order): that cell's
/// word-line high, every other word-line low, the shared data-line ramping.
/// Exactly one carrier, at the row's frequency. Throws ValidationError for an
/// empty list, cells on more than one row, or v_wl_high <= v_wl_low.
WaveformProgram build_time_mux(std::span<const CellIndex> cells, const MuxLevels& levels,
                               const DataRamp& ramp, double v_s, const CarrierPlan& plan,
                               const Timing& timing = {});

struct FreqMuxRow {
  std::size_t row = 0;
  std::size_t col = 0;
  DataRamp ramp;
};

/// A single segment reading one cell per row in parallel, one carrier per
/// row. Ramps must share one duration. Throws on duplicate rows.
WaveformProgram build_freq_mux(std::span<const FreqMuxRow> rows, const MuxLevels& levels, double v_s,
                               const CarrierPlan& plan, const Timing& timing = {});

/// Two rows x two columns: the word-lines of the two columns alternate
/// (c1, c2, c1, c2, ... `periods` times) while both rows ramp and both
/// carriers stay on. `block[r][c]` must span exactly two rows and two columns.
/// Every segment lasts `dwell`; only the start/end levels of `ramps` are used.
WaveformProgram build_combined(const std::array<std::array<CellIndex, 2>, 2>& block, double dwell,
                               const std::array<DataRamp, 2>& ramps, const MuxLevels& levels, double v_s,
                               const CarrierPlan& plan, int periods = 2, const Timing& timing = {});

/// Charge-then-hold protocol for measuring a cell's retention time: the
/// word-line is held at `v_wl_charge` for `charge` seconds, then dropped to
/// `v_wl_hold` for `hold` seconds while the data-line stays at `v_dl`. The
/// cell's source current is probed throughout; no carriers are used.
struct RetentionProtocol {
  double v_wl_charge = 1.49;
  double v_wl_hold = 0.5;
  double v_dl = 0.8;
  double v_s = 1e-3;
  double charge = 0.2;
  double hold = 0.8;
  double sample_rate = 1e5;

  bool operator==(const RetentionProtocol&) const = default;
};

WaveformProgram build_retention(CellIndex cell, const RetentionProtocol& protocol = {});

/// Projection of a program onto one row: other rows' data/source lines,
/// active cells and carriers are dropped.
WaveformProgram restrict_to_row(const WaveformProgram& program, std::size_t row);

/// Copy of `program` whose source lines all sit at v_s.
WaveformProgram with_source_voltage(const WaveformProgram& program, double v_s);

/// Result of one execution of a program: one RF trace per carrier followed by
/// one DC trace per probe.
struct RunResult {
  std::vector<Trace> traces;
};

/// Executes `program` on `chip`. Every cell is stepped at the program's
/// sample cadence with line levels evaluated mid-sample; row loads are
/// demodulated per carrier. The chip keeps its final state. Deterministic
/// for a given noise seed. Validation failures throw before any stepping.
RunResult run_experiment(const WaveformProgram& program, MatrixConfig& chip, const NoiseModel& noise);

/// Repeats `program` once per source voltage in `v_s_axis`, continuing the
/// chip state between repetitions. Repetition i uses seed derive_seed(seed, i).
std::vector<RunResult> run_sweep(const WaveformProgram& program, MatrixConfig& chip, const NoiseModel& noise,
                                 const Eigen::VectorXd& v_s_axis);

/// Slices each trace by segment (dropping the settling window), maps sample
/// time to the data-line level through the segment's ramp, and stacks the
/// repetitions into one map per (device, trace kind). Repeated visits of the
/// same device inside a program are averaged. Throws ValidationError when
/// runs and annotations disagree.
std::vector<StabilityMap> demux(const std::vector<RunResult>& runs, const WaveformProgram& program,
                                const Eigen::VectorXd& v_s_axis);

}  // namespace cryomux
