#include "cryomux/mux_controller.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <optional>
#include <set>

#include "cryomux/errors.hpp"

namespace cryomux {

namespace {

std::size_t parse_index(const std::string& digits, const std::string& name) {
  if (digits.empty() || !std::all_of(digits.begin(), digits.end(), [](unsigned char c) { return std::isdigit(c); })) {
    throw ValidationError("malformed line name '" + name + "'");
  }
  const auto v = std::stoul(digits);
  if (v == 0) throw ValidationError("line indices are one-based in '" + name + "'");
  return v - 1;
}

bool contains(const std::vector<CellIndex>& cells, CellIndex c) {
  return std::find(cells.begin(), cells.end(), c) != cells.end();
}

}  // namespace

std::string LineId::name() const {
  switch (kind) {
    case LineKind::WordLine:
      return "WL" + std::to_string(col + 1);
    case LineKind::DataLine:
      return "DL" + std::to_string(row + 1);
    case LineKind::Source:
      if (row < 9 && col < 9) return "S" + std::to_string(row + 1) + std::to_string(col + 1);
      return "S" + std::to_string(row + 1) + "_" + std::to_string(col + 1);
  }
  return {};
}

LineId LineId::parse(const std::string& name) {
  if (name.rfind("WL", 0) == 0) return word_line(parse_index(name.substr(2), name));
  if (name.rfind("DL", 0) == 0) return data_line(parse_index(name.substr(2), name));
  if (name.rfind("S", 0) == 0) {
    const std::string rest = name.substr(1);
    const auto sep = rest.find('_');
    if (sep != std::string::npos) {
      return source(parse_index(rest.substr(0, sep), name), parse_index(rest.substr(sep + 1), name));
    }
    if (rest.size() != 2) throw ValidationError("malformed source line name '" + name + "'");
    return source(parse_index(rest.substr(0, 1), name), parse_index(rest.substr(1, 1), name));
  }
  throw ValidationError("unknown line '" + name + "'");
}

double WaveformProgram::total_duration() const {
  double total = 0.0;
  for (const auto& s : segments) total += s.duration;
  return total;
}

double WaveformProgram::level(const LineId& line, std::size_t seg, double frac) const {
  const auto& levels = segments.at(seg).levels;
  if (auto it = levels.find(line); it != levels.end()) return it->second.at(frac);
  switch (line.kind) {
    case LineKind::WordLine:
      return idle.wl;
    case LineKind::DataLine:
      return idle.dl;
    case LineKind::Source:
      return idle.s;
  }
  return 0.0;
}

std::size_t WaveformProgram::samples_in(std::size_t seg) const {
  return static_cast<std::size_t>(std::floor(segments.at(seg).duration * sample_rate + 1e-6));
}

void validate(const WaveformProgram& program) {
  if (program.segments.empty()) throw ValidationError("program: no segments");
  if (!(program.sample_rate > 0.0) || !std::isfinite(program.sample_rate)) {
    throw ValidationError("program: sample_rate must be positive");
  }
  if (!(program.settle_fraction >= 0.0 && program.settle_fraction < 1.0)) {
    throw ValidationError("program: settle_fraction must lie in [0, 1)");
  }
  for (std::size_t i = 0; i < program.segments.size(); ++i) {
    const auto& seg = program.segments[i];
    if (!(seg.duration > 0.0) || !std::isfinite(seg.duration)) {
      throw ValidationError("program: segment " + std::to_string(i + 1) + " has non-positive duration");
    }
    if (seg.duration * program.sample_rate < 10.0 - 1e-9) {
      throw ValidationError("program: segment " + std::to_string(i + 1) + " holds fewer than 10 samples");
    }
    for (const auto& [line, drive] : seg.levels) {
      if (!std::isfinite(drive.start) || !std::isfinite(drive.end)) {
        throw ValidationError("program: non-finite level on " + line.name());
      }
    }
  }
  validate(program.carriers);
}

void validate_against(const WaveformProgram& program, const MatrixConfig& chip) {
  validate(program);
  auto check_cell = [&](CellIndex c, const char* what) {
    if (c.row >= chip.n_rows || c.col >= chip.n_cols) {
      throw ValidationError(std::string("program: ") + what + " " + c.label() + " is outside the " +
                            std::to_string(chip.n_rows) + "x" + std::to_string(chip.n_cols) + " matrix");
    }
  };
  for (const auto& seg : program.segments) {
    for (const auto& [line, drive] : seg.levels) {
      const bool ok = (line.kind == LineKind::WordLine && line.col < chip.n_cols) ||
                      (line.kind == LineKind::DataLine && line.row < chip.n_rows) ||
                      (line.kind == LineKind::Source && line.row < chip.n_rows && line.col < chip.n_cols);
      if (!ok) throw ValidationError("program: line " + line.name() + " does not exist on the chip");
    }
    for (const auto& c : seg.active) check_cell(c, "active cell");
  }
  for (const auto& c : program.dc_probes) check_cell(c, "probe");
  for (const auto& c : program.carriers) {
    if (c.row >= chip.n_rows) throw ValidationError("program: carrier targets missing row " + std::to_string(c.row + 1));
  }
}

std::string Trace::channel() const {
  if (kind == TraceKind::Dc) return "I_S " + probe.label();
  return "carrier " + std::to_string(carrier + 1) + " row " + std::to_string(row + 1);
}

Carrier CarrierPlan::for_row(std::size_t row) const {
  if (row >= frequencies.size()) throw ValidationError("carrier plan has no frequency for row " + std::to_string(row + 1));
  return Carrier{frequencies[row], amplitude, row};
}

namespace {

Complex row_load_with(MatrixConfig work, std::size_t row, std::optional<std::size_t> col, const MuxLevels& levels,
                      double v_dl, double f_probe) {
  if (row >= work.n_rows) throw ValidationError("row out of range");
  work.v_wl.setConstant(levels.v_wl_low);
  if (col) work.v_wl(static_cast<Eigen::Index>(*col)) = levels.v_wl_high;
  work.v_dl.setConstant(v_dl);
  work.v_s.setZero();
  for (std::size_t c = 0; c < work.n_cols; ++c) {
    auto& cell = work.cell(row, c);
    cell.v_g = equilibrium_gate_voltage(cell, v_dl, work.v_wl(static_cast<Eigen::Index>(c)));
  }
  return matrix_gate_load(work, row, f_probe);
}

}  // namespace

Complex selected_row_load(const MatrixConfig& chip, std::size_t row, std::size_t col, const MuxLevels& levels,
                          double v_dl, double f_probe) {
  if (col >= chip.n_cols) throw ValidationError("column out of range");
  return row_load_with(chip, row, col, levels, v_dl, f_probe);
}

Complex deselected_row_load(const MatrixConfig& chip, std::size_t row, const MuxLevels& levels, double v_dl,
                            double f_probe) {
  return row_load_with(chip, row, std::nullopt, levels, v_dl, f_probe);
}

CarrierPlan carrier_plan(const MatrixConfig& chip, const MuxLevels& levels, double v_dl, double amplitude,
                         double f_lo, double f_hi) {
  if (!(f_lo > 0.0 && f_hi > f_lo)) throw ValidationError("carrier_plan: bad scan range");
  CarrierPlan plan;
  plan.amplitude = amplitude;
  constexpr int n_scan = 2000;
  const double ratio = std::pow(f_hi / f_lo, 1.0 / (n_scan - 1));
  for (std::size_t row = 0; row < chip.n_rows; ++row) {
    const auto& spec = chip.row_resonators[row];
    double best_f = f_lo;
    double best = std::numeric_limits<double>::infinity();
    double f = f_lo;
    for (int i = 0; i < n_scan; ++i, f *= ratio) {
      const double g = std::abs(reflection_coefficient(spec, selected_row_load(chip, row, 0, levels, v_dl, f), f));
      if (g < best) {
        best = g;
        best_f = f;
      }
    }
    const double span = best_f * (ratio - 1.0) * 2.0;
    double f_res = dip_frequency(spec, selected_row_load(chip, row, 0, levels, v_dl, best_f), best_f, span);
    f_res = dip_frequency(spec, selected_row_load(chip, row, 0, levels, v_dl, f_res), f_res, span);
    plan.frequencies.push_back(f_res);
  }
  return plan;
}

WaveformProgram build_time_mux(std::span<const CellIndex> cells, const MuxLevels& levels, const DataRamp& ramp,
                               double v_s, const CarrierPlan& plan, const Timing& timing) {
  if (cells.empty()) throw ValidationError("build_time_mux: empty cell list");
  const std::size_t row = cells.front().row;
  for (const auto& c : cells) {
    if (c.row != row) throw ValidationError("build_time_mux: cells span more than one row");
  }
  if (!(levels.v_wl_high > levels.v_wl_low)) throw ValidationError("build_time_mux: v_wl_high must exceed v_wl_low");
  if (!(ramp.duration > 0.0)) throw ValidationError("build_time_mux: ramp duration must be positive");

  WaveformProgram p;
  p.idle = IdleLevels{levels.v_wl_low, 0.0, v_s};
  p.sample_rate = timing.sample_rate;
  p.settle_fraction = timing.settle_fraction;
  p.carriers = {plan.for_row(row)};
  for (const auto& c : cells) {
    Segment seg;
    seg.duration = ramp.duration;
    seg.levels[LineId::word_line(c.col)] = LineDrive::constant(levels.v_wl_high);
    seg.levels[LineId::data_line(row)] = LineDrive::ramp(ramp.start, ramp.end);
    seg.active = {c};
    p.segments.push_back(std::move(seg));
  }
  validate(p);
  return p;
}

WaveformProgram build_freq_mux(std::span<const FreqMuxRow> rows, const MuxLevels& levels, double v_s,
                               const CarrierPlan& plan, const Timing& timing) {
  if (rows.empty()) throw ValidationError("build_freq_mux: no rows");
  if (!(levels.v_wl_high > levels.v_wl_low)) throw ValidationError("build_freq_mux: v_wl_high must exceed v_wl_low");
  std::set<std::size_t> seen;
  for (const auto& r : rows) {
    if (!seen.insert(r.row).second) throw ValidationError("build_freq_mux: duplicate row " + std::to_string(r.row + 1));
    if (r.ramp.duration != rows.front().ramp.duration) {
      throw ValidationError("build_freq_mux: ramps must share one duration");
    }
  }
  if (!(rows.front().ramp.duration > 0.0)) throw ValidationError("build_freq_mux: ramp duration must be positive");

  WaveformProgram p;
  p.idle = IdleLevels{levels.v_wl_low, 0.0, v_s};
  p.sample_rate = timing.sample_rate;
  p.settle_fraction = timing.settle_fraction;
  Segment seg;
  seg.duration = rows.front().ramp.duration;
  for (const auto& r : rows) {
    seg.levels[LineId::word_line(r.col)] = LineDrive::constant(levels.v_wl_high);
    seg.levels[LineId::data_line(r.row)] = LineDrive::ramp(r.ramp.start, r.ramp.end);
    seg.active.push_back({r.row, r.col});
    p.carriers.push_back(plan.for_row(r.row));
  }
  p.segments.push_back(std::move(seg));
  validate(p);
  return p;
}

WaveformProgram build_combined(const std::array<std::array<CellIndex, 2>, 2>& block, double dwell,
                               const std::array<DataRamp, 2>& ramps, const MuxLevels& levels, double v_s,
                               const CarrierPlan& plan, int periods, const Timing& timing) {
  const std::size_t r1 = block[0][0].row;
  const std::size_t r2 = block[1][0].row;
  const std::size_t c1 = block[0][0].col;
  const std::size_t c2 = block[0][1].col;
  const bool well_formed = r1 != r2 && c1 != c2 && block[0][1].row == r1 && block[1][1].row == r2 &&
                           block[1][0].col == c1 && block[1][1].col == c2;
  if (!well_formed) throw ValidationError("build_combined: block must span exactly two rows and two columns");
  if (!(dwell > 0.0)) throw ValidationError("build_combined: dwell must be positive");
  if (periods < 1) throw ValidationError("build_combined: need at least one period");
  if (!(levels.v_wl_high > levels.v_wl_low)) throw ValidationError("build_combined: v_wl_high must exceed v_wl_low");

  WaveformProgram p;
  p.idle = IdleLevels{levels.v_wl_low, 0.0, v_s};
  p.sample_rate = timing.sample_rate;
  p.settle_fraction = timing.settle_fraction;
  p.carriers = {plan.for_row(r1), plan.for_row(r2)};
  for (int k = 0; k < periods; ++k) {
    for (std::size_t j = 0; j < 2; ++j) {
      Segment seg;
      seg.duration = dwell;
      seg.levels[LineId::word_line(block[0][j].col)] = LineDrive::constant(levels.v_wl_high);
      seg.levels[LineId::data_line(r1)] = LineDrive::ramp(ramps[0].start, ramps[0].end);
      seg.levels[LineId::data_line(r2)] = LineDrive::ramp(ramps[1].start, ramps[1].end);
      seg.active = {block[0][j], block[1][j]};
      p.segments.push_back(std::move(seg));
    }
  }
  validate(p);
  return p;
}

WaveformProgram build_retention(CellIndex cell, const RetentionProtocol& protocol) {
  if (!(protocol.charge > 0.0 && protocol.hold > 0.0)) throw ValidationError("build_retention: durations must be positive");
  WaveformProgram p;
  p.sample_rate = protocol.sample_rate;
  p.settle_fraction = 0.0;
  p.idle = {protocol.v_wl_hold, 0.0, 0.0};
  p.dc_probes = {cell};
  for (const auto& [duration, wl] : {std::pair{protocol.charge, protocol.v_wl_charge}, std::pair{protocol.hold, protocol.v_wl_hold}}) {
    Segment seg;
    seg.duration = duration;
    seg.levels[LineId::word_line(cell.col)] = LineDrive::constant(wl);
    seg.levels[LineId::data_line(cell.row)] = LineDrive::constant(protocol.v_dl);
    seg.levels[LineId::source(cell.row, cell.col)] = LineDrive::constant(protocol.v_s);
    seg.active = {cell};
    p.segments.push_back(std::move(seg));
  }
  validate(p);
  return p;
}

WaveformProgram restrict_to_row(const WaveformProgram& program, std::size_t row) {
  WaveformProgram out = program;
  for (auto& seg : out.segments) {
    std::erase_if(seg.levels, [row](const auto& kv) { return kv.first.kind != LineKind::WordLine && kv.first.row != row; });
    std::erase_if(seg.active, [row](const CellIndex& c) { return c.row != row; });
  }
  std::erase_if(out.carriers, [row](const Carrier& c) { return c.row != row; });
  std::erase_if(out.dc_probes, [row](const CellIndex& c) { return c.row != row; });
  return out;
}

WaveformProgram with_source_voltage(const WaveformProgram& program, double v_s) {
  WaveformProgram out = program;
  out.idle.s = v_s;
  for (auto& seg : out.segments) {
    for (auto& [line, drive] : seg.levels) {
      if (line.kind == LineKind::Source) drive = LineDrive::constant(v_s);
    }
  }
  return out;
}

RunResult run_experiment(const WaveformProgram& program, MatrixConfig& chip, const NoiseModel& noise) {
  validate(chip);
  validate_against(program, chip);
  validate(noise);

  const std::size_t n_seg = program.segments.size();
  std::vector<std::size_t> first(n_seg + 1, 0);
  for (std::size_t s = 0; s < n_seg; ++s) first[s + 1] = first[s] + program.samples_in(s);
  const auto n = static_cast<Eigen::Index>(first.back());

  // Each row is loaded at the frequency of the first carrier reading it.
  std::vector<double> row_freq(chip.n_rows, 0.0);
  std::vector<bool> row_read(chip.n_rows, false);
  for (const auto& c : program.carriers) {
    if (!row_read[c.row]) {
      row_read[c.row] = true;
      row_freq[c.row] = c.frequency;
    }
  }
  std::vector<Eigen::VectorXcd> loads(chip.n_rows);
  for (std::size_t r = 0; r < chip.n_rows; ++r) {
    if (row_read[r]) loads[r].resize(n);
  }
  std::vector<Eigen::VectorXd> dc(program.dc_probes.size(), Eigen::VectorXd(n));
  Eigen::VectorXd times(n);

  MatrixConfig work = chip;
  const auto rows = static_cast<Eigen::Index>(chip.n_rows);
  const auto cols = static_cast<Eigen::Index>(chip.n_cols);
  std::vector<LineDrive> wl(chip.n_cols), dl(chip.n_rows), src(chip.n_rows * chip.n_cols);
  double seg_start = 0.0;
  double t_prev = 0.0;
  for (std::size_t s = 0; s < n_seg; ++s) {
    const auto& seg = program.segments[s];
    for (Eigen::Index c = 0; c < cols; ++c) {
      auto it = seg.levels.find(LineId::word_line(static_cast<std::size_t>(c)));
      wl[static_cast<std::size_t>(c)] = it != seg.levels.end() ? it->second : LineDrive::constant(program.idle.wl);
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto id = LineId::data_line(static_cast<std::size_t>(r));
      auto it = seg.levels.find(id);
      dl[static_cast<std::size_t>(r)] = it != seg.levels.end() ? it->second : LineDrive::constant(program.idle.dl);
      for (Eigen::Index c = 0; c < cols; ++c) {
        const auto sid = LineId::source(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
        auto jt = seg.levels.find(sid);
        src[static_cast<std::size_t>(r * cols + c)] =
            jt != seg.levels.end() ? jt->second : LineDrive::constant(program.idle.s);
      }
    }

    const double span = seg.duration * program.sample_rate;
    for (std::size_t k = 0; k < program.samples_in(s); ++k) {
      const Eigen::Index i = static_cast<Eigen::Index>(first[s] + k);
      const double frac = (static_cast<double>(k) + 0.5) / span;
      const double t = seg_start + (static_cast<double>(k) + 0.5) / program.sample_rate;
      times(i) = t;
      for (Eigen::Index c = 0; c < cols; ++c) work.v_wl(c) = wl[static_cast<std::size_t>(c)].at(frac);
      for (Eigen::Index r = 0; r < rows; ++r) {
        work.v_dl(r) = dl[static_cast<std::size_t>(r)].at(frac);
        for (Eigen::Index c = 0; c < cols; ++c) work.v_s(r, c) = src[static_cast<std::size_t>(r * cols + c)].at(frac);
      }
      step_matrix(work, t - t_prev);
      t_prev = t;
      for (std::size_t r = 0; r < chip.n_rows; ++r) {
        if (row_read[r]) loads[r](i) = matrix_gate_load(work, r, row_freq[r]);
      }
      for (std::size_t p = 0; p < program.dc_probes.size(); ++p) dc[p](i) = cell_current(work, program.dc_probes[p]);
    }
    seg_start += seg.duration;
  }

  const auto streams = demodulate(program.carriers, work.row_resonators, loads, times, noise);

  RunResult result;
  seg_start = 0.0;
  std::vector<SegmentAnnotation> base(n_seg);
  for (std::size_t s = 0; s < n_seg; ++s) {
    base[s].t_start = seg_start;
    seg_start += program.segments[s].duration;
    base[s].t_end = seg_start;
    base[s].first_sample = first[s];
    base[s].n_samples = first[s + 1] - first[s];
  }
  for (std::size_t k = 0; k < program.carriers.size(); ++k) {
    Trace tr;
    tr.kind = TraceKind::Rf;
    tr.carrier = k;
    tr.row = program.carriers[k].row;
    tr.frequency = program.carriers[k].frequency;
    tr.seed = noise.seed;
    tr.t = times;
    tr.v = streams[k];
    tr.segments = base;
    for (std::size_t s = 0; s < n_seg; ++s) {
      for (const auto& c : program.segments[s].active) {
        if (c.row == tr.row) tr.segments[s].active.push_back(c);
      }
    }
    result.traces.push_back(std::move(tr));
  }
  for (std::size_t p = 0; p < program.dc_probes.size(); ++p) {
    Trace tr;
    tr.kind = TraceKind::Dc;
    tr.row = program.dc_probes[p].row;
    tr.probe = program.dc_probes[p];
    tr.seed = noise.seed;
    tr.t = times;
    tr.v = std::move(dc[p]);
    tr.segments = base;
    for (std::size_t s = 0; s < n_seg; ++s) {
      if (contains(program.segments[s].active, tr.probe)) tr.segments[s].active.push_back(tr.probe);
    }
    result.traces.push_back(std::move(tr));
  }
  chip = std::move(work);
  return result;
}

std::vector<RunResult> run_sweep(const WaveformProgram& program, MatrixConfig& chip, const NoiseModel& noise,
                                 const Eigen::VectorXd& v_s_axis) {
  if (v_s_axis.size() == 0) throw ValidationError("run_sweep: empty source-voltage axis");
  validate_against(program, chip);
  std::vector<RunResult> runs;
  runs.reserve(static_cast<std::size_t>(v_s_axis.size()));
  for (Eigen::Index i = 0; i < v_s_axis.size(); ++i) {
    NoiseModel rep = noise;
    rep.seed = derive_seed(noise.seed, static_cast<std::uint64_t>(i));
    runs.push_back(run_experiment(with_source_voltage(program, v_s_axis(i)), chip, rep));
  }
  return runs;
}

namespace {

bool strictly_monotone(const Eigen::VectorXd& x) {
  if (x.size() < 2) return true;
  const double sign = x(1) > x(0) ? 1.0 : -1.0;
  for (Eigen::Index i = 1; i < x.size(); ++i) {
    if (!(sign * (x(i) - x(i - 1)) > 0.0)) return false;
  }
  return true;
}

}  // namespace

std::vector<StabilityMap> demux(const std::vector<RunResult>& runs, const WaveformProgram& program,
                                const Eigen::VectorXd& v_s_axis) {
  if (runs.empty()) throw ValidationError("demux: no runs");
  if (static_cast<Eigen::Index>(runs.size()) != v_s_axis.size()) {
    throw ValidationError("demux: " + std::to_string(runs.size()) + " runs for " + std::to_string(v_s_axis.size()) +
                          " source voltages");
  }
  if (!strictly_monotone(v_s_axis)) throw ValidationError("demux: source-voltage axis must be strictly monotone");
  const auto& ref = runs.front().traces;
  for (const auto& run : runs) {
    if (run.traces.size() != ref.size()) throw ValidationError("demux: runs carry different trace sets");
    for (std::size_t k = 0; k < ref.size(); ++k) {
      const auto& a = run.traces[k];
      const auto& b = ref[k];
      if (a.kind != b.kind || a.row != b.row || a.segments.size() != b.segments.size() || a.v.size() != b.v.size()) {
        throw ValidationError("demux: trace " + std::to_string(k + 1) + " differs between runs");
      }
    }
  }

  std::vector<StabilityMap> acc;
  auto find = [&](CellIndex c, TraceKind kind) -> StabilityMap* {
    for (auto& a : acc) {
      if (a.device == c && a.kind == kind) return &a;
    }
    return nullptr;
  };

  const auto n_rep = v_s_axis.size();
  for (std::size_t k = 0; k < ref.size(); ++k) {
    const auto& trace = ref[k];
    if (trace.segments.size() != program.segments.size()) {
      throw ValidationError("demux: trace annotations do not match the program");
    }
    for (std::size_t s = 0; s < trace.segments.size(); ++s) {
      const auto& ann = trace.segments[s];
      if (ann.n_samples != program.samples_in(s) || ann.first_sample + ann.n_samples > static_cast<std::size_t>(trace.v.size())) {
        throw ValidationError("demux: segment " + std::to_string(s + 1) + " annotation does not match the trace");
      }
      const auto& seg = program.segments[s];
      const double span = seg.duration * program.sample_rate;
      std::size_t skip = 0;
      while (skip < ann.n_samples && (static_cast<double>(skip) + 0.5) / span < program.settle_fraction) ++skip;
      const auto kept = static_cast<Eigen::Index>(ann.n_samples - skip);
      for (const auto& cell : ann.active) {
        auto it = seg.levels.find(LineId::data_line(cell.row));
        if (it == seg.levels.end() || !it->second.is_ramp()) {
          throw ValidationError("demux: segment " + std::to_string(s + 1) + " has no data-line ramp for " + cell.label());
        }
        if (kept < 2) throw ValidationError("demux: segment " + std::to_string(s + 1) + " keeps fewer than 2 samples");
        Eigen::VectorXd v_dl(kept);
        for (Eigen::Index j = 0; j < kept; ++j) {
          v_dl(j) = it->second.at((static_cast<double>(skip) + static_cast<double>(j) + 0.5) / span);
        }
        Eigen::MatrixXd values(n_rep, kept);
        for (Eigen::Index r = 0; r < n_rep; ++r) {
          const auto& tr = runs[static_cast<std::size_t>(r)].traces[k];
          values.row(r) = tr.v.segment(static_cast<Eigen::Index>(ann.first_sample + skip), kept).transpose();
        }
        if (auto* a = find(cell, trace.kind)) {
          if (a->v_dl.size() != kept || (a->v_dl - v_dl).cwiseAbs().maxCoeff() > 1e-12) {
            throw ValidationError("demux: " + cell.label() + " revisited with a different ramp");
          }
          a->values += values;
          ++a->occurrences;
        } else {
          StabilityMap fresh;
          fresh.device = cell;
          fresh.kind = trace.kind;
          fresh.v_dl = std::move(v_dl);
          fresh.v_s = v_s_axis;
          fresh.values = std::move(values);
          acc.push_back(std::move(fresh));
        }
      }
    }
  }

  for (auto& a : acc) {
    if (a.occurrences > 1) a.values /= static_cast<double>(a.occurrences);
  }
  return acc;
}

}  // namespace cryomux
