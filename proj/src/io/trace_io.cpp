#include "cryomux/io/trace_io.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "cryomux/errors.hpp"

namespace cryomux::io {

using nlohmann::json;

namespace {

std::string g17(double v) { return fmt::format("{:.17g}", v); }

const char* kind_name(TraceKind k) { return k == TraceKind::Rf ? "rf" : "dc"; }

TraceKind kind_from(const std::string& s, int line) {
  if (s == "rf") return TraceKind::Rf;
  if (s == "dc") return TraceKind::Dc;
  throw ValidationError("unknown trace kind '" + s + "'", line);
}

struct Sections {
  std::vector<json> headers;
  std::vector<std::vector<double>> rows;
  int first_data_line = 0;
};

// '#' JSON lines, one column-name line, then numeric CSV rows (blank lines skipped).
Sections split(const std::string& text, std::size_t columns) {
  Sections out;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  bool names_seen = false;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      try {
        out.headers.push_back(json::parse(line.substr(1)));
      } catch (const json::exception& e) {
        throw ValidationError(std::string("bad header record: ") + e.what(), n);
      }
      continue;
    }
    if (!names_seen) {
      names_seen = true;
      out.first_data_line = n + 1;
      continue;
    }
    std::vector<double> row;
    const char* p = line.c_str();
    for (std::size_t c = 0; c < columns; ++c) {
      char* end = nullptr;
      const double v = std::strtod(p, &end);
      if (end == p) throw ValidationError("expected " + std::to_string(columns) + " numeric columns", n);
      row.push_back(v);
      p = end;
      if (c + 1 < columns) {
        if (*p != ',') throw ValidationError("expected " + std::to_string(columns) + " numeric columns", n);
        ++p;
      }
    }
    if (*p != '\0') throw ValidationError("trailing characters after data", n);
    out.rows.push_back(std::move(row));
  }
  if (out.headers.empty()) throw ValidationError("missing '#' header record", 1);
  return out;
}

template <class T>
T field(const json& j, const char* key, int line = 1) {
  if (!j.contains(key)) throw ValidationError(std::string("header lacks '") + key + "'", line);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("header field '") + key + "' has the wrong type", line);
  }
}

}  // namespace

TraceRecord make_record(const Trace& trace, const WaveformProgram& program, double v_s) {
  TraceRecord rec;
  rec.trace = trace;
  rec.v_s = v_s;
  for (std::size_t s = 0; s < program.segments.size(); ++s) {
    const auto line = LineId::data_line(trace.row);
    rec.dl_ramps.emplace_back(program.level(line, s, 0.0), program.level(line, s, 1.0));
  }
  return rec;
}

std::string format_trace(const TraceRecord& rec) {
  const Trace& tr = rec.trace;
  nlohmann::ordered_json head;
  head["format"] = "cryomux-trace";
  head["version"] = 1;
  head["kind"] = kind_name(tr.kind);
  head["channel"] = tr.channel();
  head["carrier"] = tr.carrier + 1;
  head["row"] = tr.row + 1;
  head["frequency_hz"] = tr.frequency;
  head["probe"] = tr.probe.label();
  head["seed"] = tr.seed;
  head["v_s"] = rec.v_s;
  head["samples"] = tr.t.size();
  head["segments"] = tr.segments.size();
  std::string out = "# " + head.dump() + "\n";
  for (std::size_t s = 0; s < tr.segments.size(); ++s) {
    const auto& a = tr.segments[s];
    nlohmann::ordered_json seg;
    seg["segment"] = s + 1;
    seg["t_start"] = a.t_start;
    seg["t_end"] = a.t_end;
    seg["first_sample"] = a.first_sample;
    seg["n_samples"] = a.n_samples;
    std::vector<std::string> active;
    for (const auto& c : a.active) active.push_back(c.label());
    seg["active"] = active;
    if (s < rec.dl_ramps.size()) {
      seg["dl_start"] = rec.dl_ramps[s].first;
      seg["dl_end"] = rec.dl_ramps[s].second;
    }
    out += "# " + seg.dump() + "\n";
  }
  out += tr.kind == TraceKind::Rf ? "t_s,v_mw_v\n" : "t_s,i_s_a\n";
  for (Eigen::Index i = 0; i < tr.t.size(); ++i) out += g17(tr.t(i)) + "," + g17(tr.v(i)) + "\n";
  return out;
}

TraceRecord parse_trace(const std::string& text) {
  const Sections sec = split(text, 2);
  const json& h = sec.headers.front();
  if (field<std::string>(h, "format") != "cryomux-trace") throw ValidationError("not a trace file", 1);
  TraceRecord rec;
  Trace& tr = rec.trace;
  tr.kind = kind_from(field<std::string>(h, "kind"), 1);
  tr.carrier = field<std::size_t>(h, "carrier") - 1;
  tr.row = field<std::size_t>(h, "row") - 1;
  tr.frequency = field<double>(h, "frequency_hz");
  tr.probe = CellIndex::parse(field<std::string>(h, "probe"));
  tr.seed = field<std::uint64_t>(h, "seed");
  rec.v_s = field<double>(h, "v_s");
  const auto n_seg = field<std::size_t>(h, "segments");
  if (sec.headers.size() != n_seg + 1) throw ValidationError("segment records do not match the header count", 1);
  for (std::size_t s = 0; s < n_seg; ++s) {
    const json& j = sec.headers[s + 1];
    const int line = static_cast<int>(s) + 2;
    SegmentAnnotation a;
    a.t_start = field<double>(j, "t_start", line);
    a.t_end = field<double>(j, "t_end", line);
    a.first_sample = field<std::size_t>(j, "first_sample", line);
    a.n_samples = field<std::size_t>(j, "n_samples", line);
    for (const auto& c : field<std::vector<std::string>>(j, "active", line)) a.active.push_back(CellIndex::parse(c));
    if (j.contains("dl_start")) rec.dl_ramps.emplace_back(field<double>(j, "dl_start", line), field<double>(j, "dl_end", line));
    tr.segments.push_back(std::move(a));
  }
  const auto n = static_cast<Eigen::Index>(sec.rows.size());
  if (n != field<Eigen::Index>(h, "samples")) throw ValidationError("sample count differs from the header", 1);
  tr.t.resize(n);
  tr.v.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    tr.t(i) = sec.rows[static_cast<std::size_t>(i)][0];
    tr.v(i) = sec.rows[static_cast<std::size_t>(i)][1];
    if (i > 0 && !(tr.t(i) > tr.t(i - 1))) {
      throw ValidationError("timestamps must increase strictly", sec.first_data_line + static_cast<int>(i));
    }
  }
  for (const auto& a : tr.segments) {
    if (a.first_sample + a.n_samples > static_cast<std::size_t>(n)) throw ValidationError("segment exceeds the data", 1);
  }
  return rec;
}

std::string format_map(const StabilityMap& map) {
  nlohmann::ordered_json head;
  head["format"] = "cryomux-map";
  head["version"] = 1;
  head["device"] = map.label();
  head["kind"] = kind_name(map.kind);
  head["v_s_points"] = map.v_s.size();
  head["v_dl_points"] = map.v_dl.size();
  head["occurrences"] = map.occurrences;
  std::string out = "# " + head.dump() + "\n";
  out += map.kind == TraceKind::Rf ? "v_s_v,v_dl_v,v_mw_v\n" : "v_s_v,v_dl_v,i_s_a\n";
  for (Eigen::Index i = 0; i < map.v_s.size(); ++i) {
    for (Eigen::Index j = 0; j < map.v_dl.size(); ++j) {
      out += g17(map.v_s(i)) + "," + g17(map.v_dl(j)) + "," + g17(map.values(i, j)) + "\n";
    }
    out += "\n";
  }
  return out;
}

StabilityMap parse_map(const std::string& text) {
  const Sections sec = split(text, 3);
  const json& h = sec.headers.front();
  if (field<std::string>(h, "format") != "cryomux-map") throw ValidationError("not a map file", 1);
  StabilityMap m;
  m.device = CellIndex::parse(field<std::string>(h, "device"));
  m.kind = kind_from(field<std::string>(h, "kind"), 1);
  m.occurrences = field<int>(h, "occurrences");
  const auto ns = field<Eigen::Index>(h, "v_s_points");
  const auto ng = field<Eigen::Index>(h, "v_dl_points");
  if (static_cast<Eigen::Index>(sec.rows.size()) != ns * ng) throw ValidationError("map size differs from the header", 1);
  m.v_s.resize(ns);
  m.v_dl.resize(ng);
  m.values.resize(ns, ng);
  for (Eigen::Index i = 0; i < ns; ++i) {
    for (Eigen::Index j = 0; j < ng; ++j) {
      const auto& r = sec.rows[static_cast<std::size_t>(i * ng + j)];
      m.v_s(i) = r[0];
      if (i == 0) m.v_dl(j) = r[1];
      m.values(i, j) = r[2];
    }
  }
  return m;
}

std::string format_spectrum(const Spectrum& s) {
  json head = s.meta.is_object() ? s.meta : json::object();
  head["format"] = "cryomux-spectrum";
  std::string out = "# " + head.dump() + "\nfrequency_hz,s11_db\n";
  for (Eigen::Index i = 0; i < s.frequency.size(); ++i) {
    out += g17(s.frequency(i)) + "," + g17(20.0 * std::log10(s.s11_mag(i))) + "\n";
  }
  return out;
}

Spectrum parse_spectrum(const std::string& text) {
  const Sections sec = split(text, 2);
  Spectrum s;
  s.meta = sec.headers.front();
  if (!s.meta.contains("format") || s.meta["format"] != "cryomux-spectrum") throw ValidationError("not a spectrum file", 1);
  const auto n = static_cast<Eigen::Index>(sec.rows.size());
  s.frequency.resize(n);
  s.s11_mag.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    s.frequency(i) = sec.rows[static_cast<std::size_t>(i)][0];
    s.s11_mag(i) = std::pow(10.0, sec.rows[static_cast<std::size_t>(i)][1] / 20.0);
  }
  return s;
}

json read_header(const std::string& text) {
  const auto end = text.find('\n');
  const std::string first = text.substr(0, end);
  if (first.empty() || first[0] != '#') throw ValidationError("missing '#' header record", 1);
  try {
    return json::parse(first.substr(1));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad header record: ") + e.what(), 1);
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace cryomux::io
