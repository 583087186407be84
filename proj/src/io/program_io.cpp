#include "cryomux/io/program_io.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "cryomux/errors.hpp"

namespace cryomux::io {

namespace {

int line_of(const YAML::Node& n) { return n.Mark().is_null() ? 0 : n.Mark().line + 1; }

[[noreturn]] void fail(const YAML::Node& n, const std::string& what) { throw ValidationError(what, line_of(n)); }

void check_keys(const YAML::Node& n, const std::set<std::string>& allowed, const std::string& where) {
  if (!n.IsMap()) fail(n, where + ": expected a mapping");
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
T required(const YAML::Node& parent, const char* key, const std::string& where) {
  const auto n = parent[key];
  if (!n) fail(parent, where + ": '" + key + "' is required");
  return as<T>(n, where + "." + key);
}

CellIndex cell_at(const YAML::Node& n, const std::string& where) {
  try {
    return CellIndex::parse(as<std::string>(n, where));
  } catch (const ValidationError& e) {
    fail(n, where + ": " + e.what());
  }
}

}  // namespace

std::string serialize_program(const WaveformProgram& p) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "sample_rate" << YAML::Value << p.sample_rate;
  out << YAML::Key << "settle_fraction" << YAML::Value << p.settle_fraction;
  out << YAML::Key << "idle" << YAML::Value << YAML::Flow << YAML::BeginMap << YAML::Key << "wl" << YAML::Value
      << p.idle.wl << YAML::Key << "dl" << YAML::Value << p.idle.dl << YAML::Key << "s" << YAML::Value << p.idle.s
      << YAML::EndMap;
  out << YAML::Key << "carriers" << YAML::Value << YAML::BeginSeq;
  for (const auto& c : p.carriers) {
    out << YAML::Flow << YAML::BeginMap << YAML::Key << "frequency" << YAML::Value << c.frequency << YAML::Key
        << "amplitude" << YAML::Value << c.amplitude << YAML::Key << "row" << YAML::Value << c.row + 1 << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "dc_probes" << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (const auto& c : p.dc_probes) out << c.label();
  out << YAML::EndSeq;
  out << YAML::Key << "segments" << YAML::Value << YAML::BeginSeq;
  for (const auto& s : p.segments) {
    out << YAML::BeginMap;
    out << YAML::Key << "duration" << YAML::Value << s.duration;
    out << YAML::Key << "active" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (const auto& c : s.active) out << c.label();
    out << YAML::EndSeq;
    out << YAML::Key << "levels" << YAML::Value << YAML::Flow << YAML::BeginMap;
    for (const auto& [line, drive] : s.levels) {
      out << YAML::Key << line.name() << YAML::Value;
      if (drive.is_ramp()) {
        out << YAML::Flow << YAML::BeginSeq << drive.start << drive.end << YAML::EndSeq;
      } else {
        out << drive.start;
      }
    }
    out << YAML::EndMap << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

WaveformProgram parse_program(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::ParserException& e) {
    throw ValidationError("program: " + e.msg, e.mark.line + 1);
  }
  check_keys(root, {"sample_rate", "settle_fraction", "idle", "carriers", "dc_probes", "segments"}, "program");
  WaveformProgram p;
  if (root["sample_rate"]) p.sample_rate = as<double>(root["sample_rate"], "program.sample_rate");
  if (root["settle_fraction"]) p.settle_fraction = as<double>(root["settle_fraction"], "program.settle_fraction");
  if (const auto idle = root["idle"]) {
    check_keys(idle, {"wl", "dl", "s"}, "idle");
    if (idle["wl"]) p.idle.wl = as<double>(idle["wl"], "idle.wl");
    if (idle["dl"]) p.idle.dl = as<double>(idle["dl"], "idle.dl");
    if (idle["s"]) p.idle.s = as<double>(idle["s"], "idle.s");
  }
  if (const auto cs = root["carriers"]) {
    if (!cs.IsSequence()) fail(cs, "carriers: expected a list");
    for (const auto& c : cs) {
      check_keys(c, {"frequency", "amplitude", "row"}, "carriers");
      Carrier carrier;
      carrier.frequency = required<double>(c, "frequency", "carriers");
      if (c["amplitude"]) carrier.amplitude = as<double>(c["amplitude"], "carriers.amplitude");
      const auto row = required<std::size_t>(c, "row", "carriers");
      if (row == 0) fail(c["row"], "carriers: rows are one-based");
      carrier.row = row - 1;
      p.carriers.push_back(carrier);
    }
  }
  if (const auto probes = root["dc_probes"]) {
    if (!probes.IsSequence()) fail(probes, "dc_probes: expected a list");
    for (const auto& c : probes) p.dc_probes.push_back(cell_at(c, "dc_probes"));
  }
  const auto segs = root["segments"];
  if (!segs || !segs.IsSequence()) fail(root, "program: 'segments' list is required");
  for (const auto& s : segs) {
    check_keys(s, {"duration", "active", "levels"}, "segment");
    Segment seg;
    seg.duration = required<double>(s, "duration", "segment");
    if (const auto act = s["active"]) {
      if (!act.IsSequence()) fail(act, "segment.active: expected a list");
      for (const auto& c : act) seg.active.push_back(cell_at(c, "segment.active"));
    }
    if (const auto lv = s["levels"]) {
      if (!lv.IsMap()) fail(lv, "segment.levels: expected a mapping");
      for (const auto& kv : lv) {
        LineId id;
        try {
          id = LineId::parse(kv.first.as<std::string>());
        } catch (const ValidationError& e) {
          fail(kv.first, std::string("segment.levels: ") + e.what());
        }
        if (kv.second.IsSequence()) {
          if (kv.second.size() != 2) fail(kv.second, "segment.levels: a ramp is [start, end]");
          seg.levels[id] = LineDrive::ramp(as<double>(kv.second[0], "ramp start"), as<double>(kv.second[1], "ramp end"));
        } else {
          seg.levels[id] = LineDrive::constant(as<double>(kv.second, "segment.levels"));
        }
      }
    }
    p.segments.push_back(std::move(seg));
  }
  try {
    validate(p);
  } catch (const ValidationError& e) {
    fail(root, e.what());
  }
  return p;
}

WaveformProgram load_program(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read program file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_program(ss.str());
}

}  // namespace cryomux::io
