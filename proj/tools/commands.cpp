#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <limits>

#include <fmt/core.h>

#include "cryomux/analysis.hpp"
#include "cryomux/errors.hpp"
#include "cryomux/io/config.hpp"
#include "cryomux/io/manifest.hpp"
#include "cryomux/io/program_io.hpp"
#include "cryomux/io/report.hpp"
#include "cryomux/io/trace_io.hpp"
#include "cryomux/mux_controller.hpp"

namespace cryomux::cli {
namespace fs = std::filesystem;

namespace {

struct Context {
  io::ChipConfig cfg;
  std::string config_sha256;
  MatrixConfig chip;
};

Context load(const Common& common) {
  Context ctx;
  ctx.cfg = common.config.empty() ? io::default_config() : io::load_config(common.config);
  if (common.seed) {
    ctx.cfg.seed = *common.seed;
    ctx.cfg.noise.seed = *common.seed;
  }
  ctx.config_sha256 = io::sha256_hex(io::serialize_config(ctx.cfg));
  ctx.chip = io::build_matrix(ctx.cfg);
  return ctx;
}

CellIndex parse_cell(const Context& ctx, const std::string& label) {
  const CellIndex c = CellIndex::parse(label);
  if (c.row >= ctx.cfg.rows || c.col >= ctx.cfg.cols) throw ValidationError("cell " + label + " is outside the matrix");
  return c;
}

/// Collects everything a command writes so the manifest lists each file once.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  void write(const std::string& name, const std::string& content) {
    const fs::path p = dir_ / name;
    fs::create_directories(p.parent_path());
    io::write_atomic(p, content);
    files_.push_back(name);
  }

  void finish(io::RunManifest manifest, std::chrono::steady_clock::time_point started) {
    manifest.version = CRYOMUX_VERSION;
    manifest.outputs = files_;
    manifest.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    io::write_atomic(dir_ / "manifest.json", io::to_json(manifest));
  }

 private:
  fs::path dir_;
  std::vector<std::string> files_;
};

std::string trace_tag(const Trace& tr) {
  if (tr.kind == TraceKind::Dc) return "dc_" + tr.probe.label();
  return fmt::format("rf{}_row{}", tr.carrier + 1, tr.row + 1);
}

const char* kind_tag(TraceKind k) { return k == TraceKind::Dc ? "dc" : "rf"; }

bool has_dl_ramp(const WaveformProgram& p) {
  for (const auto& seg : p.segments) {
    for (const auto& [line, drive] : seg.levels) {
      if (line.kind == LineKind::DataLine && drive.is_ramp()) return true;
    }
  }
  return false;
}

/// Runs `program` once per source voltage and writes traces, maps and the
/// program itself.
void execute(const WaveformProgram& program, Context& ctx, const NoiseModel& noise, const Eigen::VectorXd& v_s,
             Outputs& out) {
  out.write("program.yaml", io::serialize_program(program));
  const auto runs = cryomux::run_sweep(program, ctx.chip, noise, v_s);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const WaveformProgram rep = with_source_voltage(program, v_s(static_cast<Eigen::Index>(i)));
    for (const auto& tr : runs[i].traces) {
      out.write(fmt::format("traces/rep{:03}_{}.csv", i, trace_tag(tr)),
                io::format_trace(io::make_record(tr, rep, v_s(static_cast<Eigen::Index>(i)))));
    }
  }
  if (!has_dl_ramp(program)) return;
  for (const auto& map : demux(runs, program, v_s)) {
    out.write(fmt::format("maps/{}_{}.csv", map.label(), kind_tag(map.kind)), io::format_map(map));
  }
}

CarrierPlan plan_for(const Context& ctx) {
  return carrier_plan(ctx.chip, ctx.cfg.levels, ctx.cfg.ramp.start, ctx.cfg.carrier_amplitude);
}

WaveformProgram static_program(const Context& ctx, CellIndex cell) {
  const CellIndex cells[] = {cell};
  WaveformProgram p = build_time_mux(cells, ctx.cfg.levels, ctx.cfg.ramp, 0.0, plan_for(ctx), ctx.cfg.timing);
  p.dc_probes = {cell};
  return p;
}

NoiseModel noise_for(const Context& ctx, double sigma_override) {
  NoiseModel n = ctx.cfg.noise;
  if (sigma_override >= 0.0) n.sigma_v = sigma_override;
  return n;
}

}  // namespace

int run_spectrum(const Common& common, const SpectrumOptions& opt) {
  const auto started = std::chrono::steady_clock::now();
  Context ctx = load(common);
  if (opt.points < 100) throw ValidationError("spectrum: --points must be at least 100");
  if (!(opt.f_start > 0.0 && opt.f_stop > opt.f_start)) throw ValidationError("spectrum: bad frequency range");
  if (opt.row < 0 || static_cast<std::size_t>(opt.row) > ctx.cfg.rows) {
    throw ValidationError("spectrum: row " + std::to_string(opt.row) + " does not exist");
  }
  Outputs out(common.out);
  const Eigen::VectorXd f = Eigen::VectorXd::LinSpaced(opt.points, opt.f_start, opt.f_stop);
  const std::size_t first = opt.row == 0 ? 0 : static_cast<std::size_t>(opt.row - 1);
  const std::size_t last = opt.row == 0 ? ctx.cfg.rows : first + 1;
  for (std::size_t r = first; r < last; ++r) {
    for (const bool on : {true, false}) {
      io::Spectrum s;
      s.frequency = f;
      s.s11_mag.resize(f.size());
      for (Eigen::Index k = 0; k < f.size(); ++k) {
        const Complex z = on ? selected_row_load(ctx.chip, r, 0, ctx.cfg.levels, ctx.cfg.ramp.start, f(k))
                             : deselected_row_load(ctx.chip, r, ctx.cfg.levels, ctx.cfg.ramp.start, f(k));
        s.s11_mag(k) = std::abs(reflection_coefficient(ctx.chip.row_resonators[r], z, f(k)));
      }
      s.meta = {{"row", r + 1}, {"state", on ? "on" : "off"}, {"config_sha256", ctx.config_sha256}};
      out.write(fmt::format("spectrum_row{}_{}.csv", r + 1, on ? "on" : "off"), io::format_spectrum(s));
    }
  }
  out.finish({"spectrum", ctx.config_sha256, "", ctx.cfg.seed, "", {}, 0.0}, started);
  return kOk;
}

int run_simulate(const Common& common, const SimulateOptions& opt) {
  const auto started = std::chrono::steady_clock::now();
  Context ctx = load(common);
  const NoiseModel noise = noise_for(ctx, opt.sigma_v);
  const Eigen::VectorXd sweep = ctx.cfg.v_s_sweep.values();
  const std::size_t rows = ctx.cfg.rows;
  const std::size_t cols = ctx.cfg.cols;

  WaveformProgram program;
  Eigen::VectorXd v_s = sweep;
  std::string what = opt.preset;
  if (!opt.program.empty()) {
    program = io::load_program(opt.program);
    what = opt.program;
  } else if (opt.preset == "static-sweep") {
    program = static_program(ctx, parse_cell(ctx, opt.cell));
  } else if (opt.preset == "diamonds") {
    program = static_program(ctx, parse_cell(ctx, opt.cell));
    v_s = io::SweepAxis{-0.03, 0.03, 121}.values();
  } else if (opt.preset == "time-mux") {
    if (opt.row < 1 || static_cast<std::size_t>(opt.row) > rows) throw ValidationError("simulate: --row out of range");
    // Visit the columns in the order 2, 3, ..., N, 1.
    std::vector<CellIndex> cells;
    for (std::size_t c = 1; c <= cols; ++c) cells.push_back({static_cast<std::size_t>(opt.row - 1), c % cols});
    program = build_time_mux(cells, ctx.cfg.levels, ctx.cfg.ramp, 0.0, plan_for(ctx), ctx.cfg.timing);
  } else if (opt.preset == "freq-mux") {
    if (rows < 2) throw ValidationError("simulate: freq-mux needs two rows");
    const std::size_t col = cols > 1 ? 1 : 0;
    const FreqMuxRow rs[] = {{0, col, ctx.cfg.ramp}, {1, col, ctx.cfg.ramp}};
    program = build_freq_mux(rs, ctx.cfg.levels, 0.0, plan_for(ctx), ctx.cfg.timing);
  } else if (opt.preset == "combined") {
    if (rows < 2 || cols < 2) throw ValidationError("simulate: combined needs a 2x2 block");
    const std::size_t c0 = cols > 2 ? 1 : 0;
    const std::array<std::array<CellIndex, 2>, 2> block{{{{{0, c0}, {0, c0 + 1}}}, {{{1, c0}, {1, c0 + 1}}}}};
    program = build_combined(block, ctx.cfg.ramp.duration, {ctx.cfg.ramp, ctx.cfg.ramp}, ctx.cfg.levels, 0.0,
                             plan_for(ctx), 2, ctx.cfg.timing);
  } else if (opt.preset == "retention") {
    program = build_retention(parse_cell(ctx, opt.cell));
    v_s = Eigen::VectorXd::Constant(1, RetentionProtocol{}.v_s);
  } else {
    throw ValidationError("simulate: unknown preset '" + opt.preset + "'");
  }

  Outputs out(common.out);
  execute(program, ctx, noise, v_s, out);
  out.finish({"simulate", ctx.config_sha256, what, noise.seed, "", {}, 0.0}, started);
  return kOk;
}

int run_sweep(const Common& common, const SweepOptions& opt) {
  const auto started = std::chrono::steady_clock::now();
  Context ctx = load(common);
  const WaveformProgram program = static_program(ctx, parse_cell(ctx, opt.cell));
  const NoiseModel noise = noise_for(ctx, opt.sigma_v);
  Outputs out(common.out);
  execute(program, ctx, noise, ctx.cfg.v_s_sweep.values(), out);
  out.finish({"sweep", ctx.config_sha256, "sweep " + opt.cell, noise.seed, "", {}, 0.0}, started);
  return kOk;
}

namespace {

/// Worst outcome over all records: a hard error beats a flagged fit.
struct Status {
  int code = kOk;
  void fail(int c) {
    if (code == kOk || code == kNonConvergence) code = c;
  }
  void flag() {
    if (code == kOk) code = kNonConvergence;
  }
};

nlohmann::json error_record(const std::string& input, const std::exception& e, Status& status) {
  if (dynamic_cast<const ConvergenceError*>(&e)) {
    status.flag();
  } else {
    status.fail(dynamic_cast<const ValidationError*>(&e) ? kValidation : kRuntime);
  }
  return {{"input", input}, {"ok", false}, {"error", e.what()}};
}

double robust_sigma(const Eigen::VectorXd& r) {
  std::vector<double> v(r.data(), r.data() + r.size());
  auto median = [](std::vector<double> x) {
    std::nth_element(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(x.size() / 2), x.end());
    return x[x.size() / 2];
  };
  const double m = median(v);
  for (double& x : v) x = std::abs(x - m);
  return 1.4826 * median(v);
}

/// Background-subtracted samples of one segment over the data-line axis.
struct SegmentData {
  std::string device;
  Eigen::VectorXd t, v_dl, residual;
};

std::vector<SegmentData> segment_residuals(const io::TraceRecord& rec, double settle) {
  const Trace sub = subtract_background(rec.trace);
  std::vector<SegmentData> out;
  for (std::size_t s = 0; s < sub.segments.size(); ++s) {
    const auto& a = sub.segments[s];
    if (a.active.empty() || s >= rec.dl_ramps.size()) continue;
    const auto [v0, v1] = rec.dl_ramps[s];
    if (v0 == v1) continue;
    const auto skip = static_cast<std::size_t>(std::ceil(settle * static_cast<double>(a.n_samples)));
    const auto n = static_cast<Eigen::Index>(a.n_samples - std::min(skip, a.n_samples));
    SegmentData d;
    d.device = a.active.front().label();
    d.t = sub.t.segment(static_cast<Eigen::Index>(a.first_sample + skip), n);
    d.residual = sub.v.segment(static_cast<Eigen::Index>(a.first_sample + skip), n);
    d.v_dl = v0 + (v1 - v0) * ((d.t.array() - a.t_start) / (a.t_end - a.t_start));
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<double> conducting_peaks(const CellState& cell) {
  std::vector<double> v;
  for (const auto& tr : cell.device.transitions) {
    if (tr.conducts()) v.push_back(tr.v_peak);
  }
  return v;
}

}  // namespace

int run_analyze(const Common& common, const AnalyzeOptions& opt) {
  const auto started = std::chrono::steady_clock::now();
  const std::string& pipe = opt.pipeline;
  if (pipe != "background+peaks" && pipe != "snr" && pipe != "retention" && pipe != "resonance" && pipe != "diamonds") {
    throw ValidationError("analyze: unknown pipeline '" + pipe + "'");
  }
  if (opt.inputs.empty()) throw ValidationError("analyze: no input files");
  if (!(opt.alpha > 0.0 && opt.alpha <= 1.0)) throw ValidationError("analyze: --alpha must lie in (0, 1]");

  std::optional<Context> ctx;
  if (pipe == "retention") ctx = load(common);

  Outputs out(common.out);
  Status status;
  std::string report;
  std::vector<io::BenchmarkRow> bench;
  for (const auto& input : opt.inputs) {
    const std::string stem = fs::path(input).stem().string();
    try {
      const std::string text = io::read_file(input);
      if (pipe == "background+peaks" || pipe == "snr") {
        const io::TraceRecord rec = io::parse_trace(text);
        if (rec.trace.kind != TraceKind::Rf) throw ValidationError("expected an RF trace");
        std::string plot = "t_s,v_dl_v,residual_v\n";
        std::size_t seg = 0;
        for (const auto& d : segment_residuals(rec, 0.01)) {
          ++seg;
          for (Eigen::Index i = 0; i < d.t.size(); ++i) {
            plot += fmt::format("{:.17g},{:.17g},{:.17g}\n", d.t(i), d.v_dl(i), d.residual(i));
          }
          nlohmann::json rec_json{{"input", input}, {"segment", seg}, {"device", d.device}};
          const double floor = std::max(5.0 * robust_sigma(d.residual), 0.2 * d.residual.maxCoeff());
          nlohmann::json peaks = nlohmann::json::array();
          for (const auto& p : find_peaks(d.v_dl, d.residual, floor)) peaks.push_back({{"v_dl", p.x}, {"height", p.height}});
          rec_json["peaks"] = peaks;
          const PeakFit fit = fit_lorentzian(d.v_dl, d.residual, opt.alpha);
          rec_json["fit"] = io::to_json(fit);
          rec_json["ok"] = fit.converged;
          if (!fit.converged) status.flag();
          if (pipe == "snr") {
            const SnrEstimate s = snr(fit, off_peak_residuals(d.v_dl, d.residual, fit));
            const double t_min = s.noiseless ? 0.0 : min_integration_time(s.value, opt.t_int);
            rec_json["snr"] = {{"value", s.value}, {"sigma", s.sigma}, {"noiseless", s.noiseless}, {"t_min_s", t_min}};
            bench.push_back({d.device, fit.amplitude, fit.fwhm, s.sigma, s.value, opt.t_int, t_min, opt.alpha, fit.gamma,
                             fit.r_squared});
          }
          report += io::json_line(rec_json) + "\n";
        }
        out.write("plots/" + stem + "_residual.csv", plot);
      } else if (pipe == "retention") {
        const io::TraceRecord rec = io::parse_trace(text);
        const Trace& tr = rec.trace;
        if (tr.kind != TraceKind::Dc) throw ValidationError("expected a source-current trace");
        if (tr.probe.row >= ctx->cfg.rows || tr.probe.col >= ctx->cfg.cols) {
          throw ValidationError("probe " + tr.probe.label() + " is not on the configured chip");
        }
        // The hold starts with the last segment.
        const double t_hold = tr.segments.back().t_start;
        const auto pts = retention_points(tr.t, tr.v, t_hold, conducting_peaks(ctx->chip.cell(tr.probe)),
                                          opt.retention_points);
        const RetentionFit fit = fit_retention(pts.t, pts.v);
        if (!fit.converged) status.flag();
        nlohmann::json points = nlohmann::json::array();
        for (Eigen::Index i = 0; i < pts.t.size(); ++i) points.push_back({{"t_s", pts.t(i)}, {"v_g", pts.v(i)}});
        report += io::json_line({{"input", input}, {"device", tr.probe.label()}, {"points", points},
                                 {"fit", io::to_json(fit)}, {"ok", fit.converged}}) +
                  "\n";
      } else if (pipe == "resonance") {
        const io::Spectrum s = io::parse_spectrum(text);
        const ResonanceFit fit = fit_resonance(s.frequency, s.s11_mag);
        if (!fit.converged) status.flag();
        report += io::json_line({{"input", input}, {"meta", s.meta}, {"fit", io::to_json(fit)}, {"ok", fit.converged}}) + "\n";
      } else {
        const StabilityMap map = io::parse_map(text);
        // Blockade edges are read off current; an RF map carries the resonator background instead.
        if (map.kind != TraceKind::Dc) throw ValidationError("diamond extraction needs a source-current map");
        const DiamondExtraction d = extract_charging_energy(map);
        report += io::json_line({{"input", input}, {"device", map.label()}, {"fit", io::to_json(d)}, {"ok", true}}) + "\n";
      }
    } catch (const Error& e) {
      report += io::json_line(error_record(input, e, status)) + "\n";
    } catch (const std::exception& e) {
      report += io::json_line(error_record(input, e, status)) + "\n";
    }
  }
  out.write(opt.report, report);
  if (pipe == "snr") out.write("benchmark.csv", io::format_benchmark(bench));
  const std::uint64_t seed = ctx ? ctx->cfg.seed : 0;
  out.finish({"analyze " + pipe, ctx ? ctx->config_sha256 : "", "", seed, "", {}, 0.0}, started);
  return status.code;
}

}  // namespace cryomux::cli
