#include "cryomux/io/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "cryomux/constants.hpp"
#include "cryomux/errors.hpp"

namespace cryomux::io {

namespace {

constexpr double kMeV = 1e-3 * constants::elementary_charge;

int line_of(const YAML::Node& n) { return n.Mark().is_null() ? 0 : n.Mark().line + 1; }

[[noreturn]] void fail(const YAML::Node& n, const std::string& what) { throw ValidationError(what, line_of(n)); }

void require_map(const YAML::Node& n, const std::string& where) {
  if (!n.IsMap()) fail(n, where + ": expected a mapping");
}

void check_keys(const YAML::Node& n, const std::set<std::string>& allowed, const std::string& where) {
  require_map(n, where);
  for (const auto& kv : n) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) fail(kv.first, where + ": unknown key '" + key + "'");
  }
}

template <class T>
T as(const YAML::Node& n, const std::string& where) {
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    fail(n, where + ": value has the wrong type");
  }
}

template <class T>
void read(const YAML::Node& parent, const char* key, T& out, const std::string& where) {
  if (const auto n = parent[key]) out = as<T>(n, where + "." + key);
}

// Re-throws validation failures from the domain layer with the section's line.
template <class F>
void with_line(const YAML::Node& n, F&& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    if (e.line() != 0) throw;
    fail(n, e.what());
  }
}

struct DeviceDefaults {
  DeviceParams device;
  std::optional<LadderSpec> ladder;
  double cell_offset = 0.0;  ///< ladder v_first step per row-major cell index
};

void parse_device(const YAML::Node& n, DeviceDefaults& d, const std::string& where) {
  check_keys(n, {"e_c_mev", "alpha_s", "g_max", "temperature", "rf_cutoff_ratio", "blockade_regime", "blockade_margin",
                 "ladder", "transitions"},
             where);
  auto& dev = d.device;
  if (const auto e = n["e_c_mev"]) dev.e_c = as<double>(e, where + ".e_c_mev") * kMeV;
  read(n, "alpha_s", dev.alpha_s, where);
  read(n, "g_max", dev.g_max, where);
  read(n, "temperature", dev.temperature, where);
  read(n, "rf_cutoff_ratio", dev.rf_cutoff_ratio, where);
  read(n, "blockade_regime", dev.blockade_regime, where);
  read(n, "blockade_margin", dev.blockade_margin, where);
  if (n["ladder"] && n["transitions"]) fail(n, where + ": give either 'ladder' or 'transitions', not both");
  if (const auto l = n["ladder"]) {
    const std::string w = where + ".ladder";
    check_keys(l, {"v_first", "count", "alpha", "gamma_s", "gamma_d", "source_only", "cell_offset"}, w);
    LadderSpec spec = d.ladder.value_or(LadderSpec{});
    read(l, "v_first", spec.v_first, w);
    read(l, "count", spec.count, w);
    read(l, "alpha", spec.alpha, w);
    read(l, "gamma_s", spec.gamma_s, w);
    read(l, "gamma_d", spec.gamma_d, w);
    read(l, "source_only", spec.source_only, w);
    read(l, "cell_offset", d.cell_offset, w);
    d.ladder = spec;
  }
  if (const auto ts = n["transitions"]) {
    const std::string w = where + ".transitions";
    if (!ts.IsSequence()) fail(ts, w + ": expected a list");
    dev.transitions.clear();
    for (const auto& t : ts) {
      check_keys(t, {"v_peak", "alpha", "gamma_s", "gamma_d", "c_q_max"}, w);
      ChargeTransition tr;
      read(t, "v_peak", tr.v_peak, w);
      read(t, "alpha", tr.alpha, w);
      read(t, "gamma_s", tr.gamma_s, w);
      read(t, "gamma_d", tr.gamma_d, w);
      if (t["c_q_max"]) {
        read(t, "c_q_max", tr.c_q_max, w);
      } else {
        tr.c_q_max = lifetime_capacitance_scale(tr.alpha, tr.gamma());
      }
      dev.transitions.push_back(tr);
    }
    d.ladder.reset();
  }
}

void parse_access(const YAML::Node& n, AccessTransistorParams& a, const std::string& where) {
  check_keys(n, {"v_th", "r_threshold", "r_on", "r_off", "subthreshold_swing", "c_dep_max", "v_forbidden_lo",
                 "v_forbidden_hi"},
             where);
  read(n, "v_th", a.v_th, where);
  read(n, "r_threshold", a.r_threshold, where);
  read(n, "r_on", a.r_on, where);
  read(n, "r_off", a.r_off, where);
  read(n, "subthreshold_swing", a.subthreshold_swing, where);
  read(n, "c_dep_max", a.c_dep_max, where);
  read(n, "v_forbidden_lo", a.v_forbidden_lo, where);
  read(n, "v_forbidden_hi", a.v_forbidden_hi, where);
}

void parse_cell(const YAML::Node& n, CellState& c, const std::string& where) {
  check_keys(n, {"v_g", "c_storage", "c_gate", "r_g"}, where);
  read(n, "v_g", c.v_g, where);
  read(n, "c_storage", c.c_storage, where);
  read(n, "c_gate", c.c_gate, where);
  read(n, "r_g", c.r_g, where);
}

DeviceParams resolve_device(const DeviceDefaults& d, std::size_t flat_index) {
  if (!d.ladder) return d.device;
  LadderSpec spec = *d.ladder;
  spec.v_first += d.cell_offset * static_cast<double>(flat_index);
  DeviceParams dev = make_ladder_device(spec, d.device.e_c, d.device.alpha_s);
  dev.g_max = d.device.g_max;
  dev.temperature = d.device.temperature;
  dev.rf_cutoff_ratio = d.device.rf_cutoff_ratio;
  dev.blockade_regime = d.device.blockade_regime;
  dev.blockade_margin = d.device.blockade_margin;
  return dev;
}

std::vector<double> read_list(const YAML::Node& n, const std::string& where) {
  if (!n.IsSequence()) fail(n, where + ": expected a list");
  std::vector<double> out;
  for (const auto& x : n) out.push_back(as<double>(x, where));
  return out;
}

DeviceDefaults reference_device_defaults() {
  DeviceDefaults d;
  d.ladder = LadderSpec{};
  d.ladder->source_only = 2;
  d.cell_offset = 2.5e-3;
  return d;
}

ChipConfig finish(ChipConfig cfg) {
  if (cfg.resonators.empty()) {
    if (!cfg.calibration) throw ValidationError("resonators: give explicit rows or calibration targets");
    cfg.resonators = calibrate_rows(cfg, *cfg.calibration);
  }
  validate(build_matrix(cfg));
  validate(cfg.noise);
  return cfg;
}

}  // namespace

Eigen::VectorXd SweepAxis::values() const {
  if (points < 1) throw ValidationError("sweep: need at least one point");
  if (points == 1) return Eigen::VectorXd::Constant(1, start);
  return Eigen::VectorXd::LinSpaced(points, start, stop);
}

bool ChipConfig::operator==(const ChipConfig& o) const {
  return rows == o.rows && cols == o.cols && cells == o.cells && resonators == o.resonators &&
         calibration == o.calibration && noise == o.noise && seed == o.seed && levels == o.levels &&
         timing == o.timing && ramp == o.ramp && v_s_sweep == o.v_s_sweep && carrier_amplitude == o.carrier_amplitude;
}

std::vector<ResonatorSpec> calibrate_rows(const ChipConfig& config, const CalibrationTargets& targets) {
  if (targets.frequencies.size() != config.rows) {
    throw ValidationError("calibration: need one target frequency per row (" + std::to_string(config.rows) + ")");
  }
  if (!targets.shift_to.empty() && targets.shift_to.size() != config.rows) {
    throw ValidationError("calibration: shift_to needs one frequency per row");
  }
  ChipConfig probe = config;
  probe.resonators.assign(config.rows, ResonatorSpec{});
  const MatrixConfig m = build_matrix(probe);
  CalibrationOptions opt;
  opt.loss_fraction = targets.loss_fraction;
  std::vector<ResonatorSpec> out;
  for (std::size_t r = 0; r < config.rows; ++r) {
    const double f = targets.frequencies[r];
    const Complex z_on = selected_row_load(m, r, 0, config.levels, config.ramp.start, f);
    ResonatorSpec spec = calibrate_resonator(f, targets.q, z_on, opt);
    if (!targets.shift_to.empty()) {
      spec = with_cp_shift(spec, solve_cp_shift(spec, z_on, f, targets.shift_to[r]));
    }
    out.push_back(spec);
  }
  return out;
}

MatrixConfig build_matrix(const ChipConfig& config) {
  if (config.rows == 0 || config.cols == 0) throw ValidationError("matrix: rows and cols must be positive");
  if (config.cells.size() != config.rows * config.cols) throw ValidationError("matrix: cell list does not match size");
  MatrixConfig m(config.rows, config.cols, config.cells.front());
  m.cells = config.cells;
  m.row_resonators = config.resonators;
  return m;
}

ChipConfig default_config() {
  ChipConfig cfg;
  const DeviceDefaults d = reference_device_defaults();
  CellState proto;
  for (std::size_t i = 0; i < cfg.rows * cfg.cols; ++i) {
    CellState c = proto;
    c.device = resolve_device(d, i);
    cfg.cells.push_back(c);
  }
  cfg.noise.sigma_v = 0.0;
  cfg.calibration = CalibrationTargets{{6.872e9, 7.420e9, 7.951e9}, 50.0, 0.5, {}};
  return finish(std::move(cfg));
}

ChipConfig parse_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::ParserException& e) {
    throw ValidationError("config: " + e.msg, e.mark.line + 1);
  }
  if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  check_keys(root, {"matrix", "seed", "device", "access", "cell", "cells", "resonators", "noise", "levels", "timing",
                    "ramp", "sweep", "carrier_amplitude"},
             "config");

  ChipConfig cfg;
  if (const auto m = root["matrix"]) {
    check_keys(m, {"rows", "cols"}, "matrix");
    read(m, "rows", cfg.rows, "matrix");
    read(m, "cols", cfg.cols, "matrix");
    if (cfg.rows == 0 || cfg.cols == 0) fail(m, "matrix: rows and cols must be positive");
  }
  read(root, "seed", cfg.seed, "config");
  read(root, "carrier_amplitude", cfg.carrier_amplitude, "config");

  DeviceDefaults dev = reference_device_defaults();
  if (const auto n = root["device"]) parse_device(n, dev, "device");
  AccessTransistorParams access;
  if (const auto n = root["access"]) parse_access(n, access, "access");
  CellState proto;
  proto.access = access;
  if (const auto n = root["cell"]) parse_cell(n, proto, "cell");

  cfg.cells.clear();
  for (std::size_t i = 0; i < cfg.rows * cfg.cols; ++i) {
    CellState c = proto;
    const YAML::Node where = root["device"] ? root["device"] : root;
    with_line(where, [&] { c.device = resolve_device(dev, i); });
    cfg.cells.push_back(c);
  }

  if (const auto list = root["cells"]) {
    if (!list.IsSequence()) fail(list, "cells: expected a list");
    for (const auto& entry : list) {
      check_keys(entry, {"id", "device", "access", "cell"}, "cells");
      if (!entry["id"]) fail(entry, "cells: entry without 'id'");
      CellIndex idx;
      with_line(entry["id"], [&] { idx = CellIndex::parse(as<std::string>(entry["id"], "cells.id")); });
      if (idx.row >= cfg.rows || idx.col >= cfg.cols) fail(entry["id"], "cells: " + idx.label() + " is outside the matrix");
      const std::string w = "cells." + idx.label();
      CellState& c = cfg.cells[idx.row * cfg.cols + idx.col];
      if (const auto n = entry["device"]) {
        DeviceDefaults local = dev;
        local.device = c.device;
        if (!n["transitions"] && !n["ladder"]) local.ladder.reset();
        parse_device(n, local, w + ".device");
        with_line(n, [&] { c.device = resolve_device(local, idx.row * cfg.cols + idx.col); });
      }
      if (const auto n = entry["access"]) parse_access(n, c.access, w + ".access");
      if (const auto n = entry["cell"]) parse_cell(n, c, w + ".cell");
      with_line(entry, [&] { validate(c); });
    }
  }
  for (std::size_t i = 0; i < cfg.cells.size(); ++i) {
    with_line(root["cells"] ? root["cells"] : root, [&] { validate(cfg.cells[i]); });
  }

  if (const auto r = root["resonators"]) {
    check_keys(r, {"calibration", "rows"}, "resonators");
    if (const auto c = r["calibration"]) {
      check_keys(c, {"frequencies", "q", "loss_fraction", "shift_to"}, "resonators.calibration");
      CalibrationTargets t;
      if (!c["frequencies"]) fail(c, "resonators.calibration: 'frequencies' is required");
      t.frequencies = read_list(c["frequencies"], "resonators.calibration.frequencies");
      read(c, "q", t.q, "resonators.calibration");
      read(c, "loss_fraction", t.loss_fraction, "resonators.calibration");
      if (c["shift_to"]) t.shift_to = read_list(c["shift_to"], "resonators.calibration.shift_to");
      if (t.frequencies.size() != cfg.rows) fail(c["frequencies"], "resonators.calibration: need one frequency per row");
      cfg.calibration = t;
    }
    if (const auto rows = r["rows"]) {
      if (!rows.IsSequence()) fail(rows, "resonators.rows: expected a list");
      for (const auto& s : rows) {
        check_keys(s, {"c_s", "l", "c_p", "r_loss", "z0"}, "resonators.rows");
        ResonatorSpec spec;
        read(s, "c_s", spec.c_s, "resonators.rows");
        read(s, "l", spec.l, "resonators.rows");
        read(s, "c_p", spec.c_p, "resonators.rows");
        read(s, "r_loss", spec.r_loss, "resonators.rows");
        read(s, "z0", spec.z0, "resonators.rows");
        with_line(s, [&] { validate(spec); });
        cfg.resonators.push_back(spec);
      }
      if (cfg.resonators.size() != cfg.rows) fail(rows, "resonators.rows: need one resonator per row");
    }
  } else {
    cfg.calibration = CalibrationTargets{};
    cfg.calibration->frequencies = {6.872e9, 7.420e9, 7.951e9};
    if (cfg.rows != 3) throw ValidationError("resonators: default targets cover 3 rows; give targets for " +
                                             std::to_string(cfg.rows));
  }

  if (const auto n = root["noise"]) {
    check_keys(n, {"sigma_v", "n_avg", "if_bandwidth"}, "noise");
    read(n, "sigma_v", cfg.noise.sigma_v, "noise");
    read(n, "n_avg", cfg.noise.n_avg, "noise");
    read(n, "if_bandwidth", cfg.noise.if_bandwidth, "noise");
    with_line(n, [&] { validate(cfg.noise); });
  }
  cfg.noise.seed = cfg.seed;
  if (const auto n = root["levels"]) {
    check_keys(n, {"v_wl_high", "v_wl_low"}, "levels");
    read(n, "v_wl_high", cfg.levels.v_wl_high, "levels");
    read(n, "v_wl_low", cfg.levels.v_wl_low, "levels");
    if (!(cfg.levels.v_wl_high > cfg.levels.v_wl_low)) fail(n, "levels: v_wl_high must exceed v_wl_low");
  }
  if (const auto n = root["timing"]) {
    check_keys(n, {"sample_rate", "settle_fraction"}, "timing");
    read(n, "sample_rate", cfg.timing.sample_rate, "timing");
    read(n, "settle_fraction", cfg.timing.settle_fraction, "timing");
    if (!(cfg.timing.sample_rate > 0.0)) fail(n, "timing: sample_rate must be positive");
    if (!(cfg.timing.settle_fraction >= 0.0 && cfg.timing.settle_fraction < 1.0)) {
      fail(n, "timing: settle_fraction must lie in [0, 1)");
    }
  }
  if (const auto n = root["ramp"]) {
    check_keys(n, {"start", "end", "duration"}, "ramp");
    read(n, "start", cfg.ramp.start, "ramp");
    read(n, "end", cfg.ramp.end, "ramp");
    read(n, "duration", cfg.ramp.duration, "ramp");
    if (!(cfg.ramp.duration > 0.0)) fail(n, "ramp: duration must be positive");
    if (cfg.ramp.start == cfg.ramp.end) fail(n, "ramp: start and end must differ");
  }
  if (const auto n = root["sweep"]) {
    check_keys(n, {"v_s"}, "sweep");
    if (const auto a = n["v_s"]) {
      check_keys(a, {"start", "stop", "points"}, "sweep.v_s");
      read(a, "start", cfg.v_s_sweep.start, "sweep.v_s");
      read(a, "stop", cfg.v_s_sweep.stop, "sweep.v_s");
      read(a, "points", cfg.v_s_sweep.points, "sweep.v_s");
      if (cfg.v_s_sweep.points < 1) fail(a, "sweep.v_s: need at least one point");
      if (cfg.v_s_sweep.points > 1 && cfg.v_s_sweep.start == cfg.v_s_sweep.stop) {
        fail(a, "sweep.v_s: start and stop must differ");
      }
    }
  }
  return finish(std::move(cfg));
}

ChipConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ChipConfig& cfg) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "matrix" << YAML::Value << YAML::Flow << YAML::BeginMap << YAML::Key << "rows" << YAML::Value
      << cfg.rows << YAML::Key << "cols" << YAML::Value << cfg.cols << YAML::EndMap;
  out << YAML::Key << "seed" << YAML::Value << cfg.seed;
  out << YAML::Key << "carrier_amplitude" << YAML::Value << cfg.carrier_amplitude;

  out << YAML::Key << "cells" << YAML::Value << YAML::BeginSeq;
  for (std::size_t i = 0; i < cfg.cells.size(); ++i) {
    const auto& c = cfg.cells[i];
    const auto& d = c.device;
    const auto& a = c.access;
    out << YAML::BeginMap;
    out << YAML::Key << "id" << YAML::Value << CellIndex{i / cfg.cols, i % cfg.cols}.label();
    out << YAML::Key << "device" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "e_c_mev" << YAML::Value << d.e_c / kMeV;
    out << YAML::Key << "alpha_s" << YAML::Value << d.alpha_s;
    out << YAML::Key << "g_max" << YAML::Value << d.g_max;
    out << YAML::Key << "temperature" << YAML::Value << d.temperature;
    out << YAML::Key << "rf_cutoff_ratio" << YAML::Value << d.rf_cutoff_ratio;
    out << YAML::Key << "blockade_regime" << YAML::Value << d.blockade_regime;
    out << YAML::Key << "blockade_margin" << YAML::Value << d.blockade_margin;
    out << YAML::Key << "transitions" << YAML::Value << YAML::BeginSeq;
    for (const auto& t : d.transitions) {
      out << YAML::Flow << YAML::BeginMap << YAML::Key << "v_peak" << YAML::Value << t.v_peak << YAML::Key << "alpha"
          << YAML::Value << t.alpha << YAML::Key << "gamma_s" << YAML::Value << t.gamma_s << YAML::Key << "gamma_d"
          << YAML::Value << t.gamma_d << YAML::Key << "c_q_max" << YAML::Value << t.c_q_max << YAML::EndMap;
    }
    out << YAML::EndSeq << YAML::EndMap;
    out << YAML::Key << "access" << YAML::Value << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "v_th" << YAML::Value << a.v_th << YAML::Key << "r_threshold" << YAML::Value << a.r_threshold;
    out << YAML::Key << "r_on" << YAML::Value << a.r_on << YAML::Key << "r_off" << YAML::Value << a.r_off;
    out << YAML::Key << "subthreshold_swing" << YAML::Value << a.subthreshold_swing;
    out << YAML::Key << "c_dep_max" << YAML::Value << a.c_dep_max;
    out << YAML::Key << "v_forbidden_lo" << YAML::Value << a.v_forbidden_lo;
    out << YAML::Key << "v_forbidden_hi" << YAML::Value << a.v_forbidden_hi << YAML::EndMap;
    out << YAML::Key << "cell" << YAML::Value << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "v_g" << YAML::Value << c.v_g << YAML::Key << "c_storage" << YAML::Value << c.c_storage;
    out << YAML::Key << "c_gate" << YAML::Value << c.c_gate << YAML::Key << "r_g" << YAML::Value << c.r_g;
    out << YAML::EndMap << YAML::EndMap;
  }
  out << YAML::EndSeq;

  out << YAML::Key << "resonators" << YAML::Value << YAML::BeginMap;
  if (cfg.calibration) {
    const auto& t = *cfg.calibration;
    out << YAML::Key << "calibration" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "frequencies" << YAML::Value << YAML::Flow << t.frequencies;
    out << YAML::Key << "q" << YAML::Value << t.q;
    out << YAML::Key << "loss_fraction" << YAML::Value << t.loss_fraction;
    if (!t.shift_to.empty()) out << YAML::Key << "shift_to" << YAML::Value << YAML::Flow << t.shift_to;
    out << YAML::EndMap;
  }
  out << YAML::Key << "rows" << YAML::Value << YAML::BeginSeq;
  for (const auto& r : cfg.resonators) {
    out << YAML::Flow << YAML::BeginMap << YAML::Key << "c_s" << YAML::Value << r.c_s << YAML::Key << "l" << YAML::Value
        << r.l << YAML::Key << "c_p" << YAML::Value << r.c_p << YAML::Key << "r_loss" << YAML::Value << r.r_loss
        << YAML::Key << "z0" << YAML::Value << r.z0 << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;

  out << YAML::Key << "noise" << YAML::Value << YAML::Flow << YAML::BeginMap << YAML::Key << "sigma_v" << YAML::Value
      << cfg.noise.sigma_v << YAML::Key << "n_avg" << YAML::Value << cfg.noise.n_avg << YAML::Key << "if_bandwidth"
      << YAML::Value << cfg.noise.if_bandwidth << YAML::EndMap;
  out << YAML::Key << "levels" << YAML::Value << YAML::Flow << YAML::BeginMap << YAML::Key << "v_wl_high" << YAML::Value
      << cfg.levels.v_wl_high << YAML::Key << "v_wl_low" << YAML::Value << cfg.levels.v_wl_low << YAML::EndMap;
  out << YAML::Key << "timing" << YAML::Value << YAML::Flow << YAML::BeginMap << YAML::Key << "sample_rate"
      << YAML::Value << cfg.timing.sample_rate << YAML::Key << "settle_fraction" << YAML::Value
      << cfg.timing.settle_fraction << YAML::EndMap;
  out << YAML::Key << "ramp" << YAML::Value << YAML::Flow << YAML::BeginMap << YAML::Key << "start" << YAML::Value
      << cfg.ramp.start << YAML::Key << "end" << YAML::Value << cfg.ramp.end << YAML::Key << "duration" << YAML::Value
      << cfg.ramp.duration << YAML::EndMap;
  out << YAML::Key << "sweep" << YAML::Value << YAML::BeginMap << YAML::Key << "v_s" << YAML::Value << YAML::Flow
      << YAML::BeginMap << YAML::Key << "start" << YAML::Value << cfg.v_s_sweep.start << YAML::Key << "stop"
      << YAML::Value << cfg.v_s_sweep.stop << YAML::Key << "points" << YAML::Value << cfg.v_s_sweep.points
      << YAML::EndMap << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace cryomux::io
