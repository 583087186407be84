#include <catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "cryomux/errors.hpp"
#include "cryomux/io/config.hpp"
#include "cryomux/mux_controller.hpp"
#include "generators.hpp"

using namespace cryomux;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

struct Chip {
  io::ChipConfig cfg = io::default_config();
  MatrixConfig m = io::build_matrix(cfg);
  CarrierPlan plan = carrier_plan(m, cfg.levels, cfg.ramp.start);
};

const Chip& chip() {
  static const Chip c;
  return c;
}

WaveformProgram time_mux(std::vector<CellIndex> cells, double v_s = 0.0) {
  const auto& c = chip();
  return build_time_mux(cells, c.cfg.levels, c.cfg.ramp, v_s, c.plan, c.cfg.timing);
}

// Word-lines at v_wl_high at fractional position `frac` of segment `s`.
int high_word_lines(const WaveformProgram& p, std::size_t s, std::size_t n_cols, double high) {
  int n = 0;
  for (std::size_t c = 0; c < n_cols; ++c) n += p.level(LineId::word_line(c), s, 0.5) == high;
  return n;
}

}  // namespace

TEST_CASE("line names round-trip") {
  CHECK(LineId::word_line(1).name() == "WL2");
  CHECK(LineId::data_line(0).name() == "DL1");
  CHECK(LineId::source(0, 2).name() == "S13");
  CHECK(LineId::source(9, 10).name() == "S10_11");
  for (const auto& id : {LineId::word_line(4), LineId::data_line(11), LineId::source(2, 1), LineId::source(10, 0)}) {
    CHECK(LineId::parse(id.name()) == id);
  }
  CHECK_THROWS_AS(LineId::parse("WL0"), ValidationError);
  CHECK_THROWS_AS(LineId::parse("XL1"), ValidationError);
}

TEST_CASE("the carrier plan lands on the calibrated resonances") {
  const auto& p = chip().plan;
  REQUIRE(p.frequencies.size() == 3);
  CHECK_THAT(p.frequencies[0], WithinAbs(6.872e9, 5e6));
  CHECK_THAT(p.frequencies[1], WithinAbs(7.420e9, 5e6));
  CHECK_THAT(p.frequencies[2], WithinAbs(7.951e9, 5e6));
}

TEST_CASE("time multiplexing three cells of one row") {
  const auto p = time_mux({{0, 1}, {0, 2}, {0, 0}});
  REQUIRE(p.segments.size() == 3);
  CHECK_THAT(p.total_duration(), WithinAbs(25e-3, 0.02e-3));
  REQUIRE(p.carriers.size() == 1);
  CHECK(p.carriers[0].row == 0);
  CHECK(p.level(LineId::word_line(1), 0, 0.5) == 1.5);
  CHECK(p.level(LineId::word_line(0), 0, 0.5) == 0.5);
  CHECK(p.level(LineId::data_line(0), 2, 0.0) == chip().cfg.ramp.start);
  CHECK_THROWS_AS(time_mux({}), ValidationError);
  CHECK_THROWS_AS(time_mux({{0, 1}, {1, 1}}), ValidationError);
}

TEST_CASE("at most one word-line is high at any instant") {
  test::Gen g(301);
  const auto& c = chip();
  for (int i = 0; i < 200; ++i) {
    std::vector<CellIndex> cells;
    const auto row = static_cast<std::size_t>(g.integer(0, 2));
    for (int k = g.integer(1, 8); k > 0; --k) cells.push_back({row, static_cast<std::size_t>(g.integer(0, 2))});
    const auto p = time_mux(cells);
    for (std::size_t s = 0; s < p.segments.size(); ++s) CHECK(high_word_lines(p, s, 3, 1.5) == 1);
  }
  const std::array<std::array<CellIndex, 2>, 2> block{{{{{0, 1}, {0, 2}}}, {{{1, 1}, {1, 2}}}}};
  const auto comb = build_combined(block, 8.33e-3, {c.cfg.ramp, c.cfg.ramp}, c.cfg.levels, 0.0, c.plan, 3);
  for (std::size_t s = 0; s < comb.segments.size(); ++s) CHECK(high_word_lines(comb, s, 3, 1.5) == 1);
}

TEST_CASE("segments tile the trace exactly") {
  test::Gen g(303);
  const auto& c = chip();
  for (int i = 0; i < 20; ++i) {
    std::vector<CellIndex> cells;
    for (int k = g.integer(1, 4); k > 0; --k) cells.push_back({0, static_cast<std::size_t>(g.integer(0, 2))});
    DataRamp ramp = c.cfg.ramp;
    ramp.duration = g.uniform(1e-3, 5e-3);
    const auto p = build_time_mux(cells, c.cfg.levels, ramp, 0.0, c.plan, c.cfg.timing);
    MatrixConfig m = c.m;
    const auto res = run_experiment(p, m, {});
    const auto& tr = res.traces.at(0);
    double total = 0.0;
    std::size_t covered = 0;
    for (std::size_t s = 0; s < tr.segments.size(); ++s) {
      const auto& a = tr.segments[s];
      CHECK(a.first_sample == covered);
      covered += a.n_samples;
      total += a.t_end - a.t_start;
      for (std::size_t k = a.first_sample; k < a.first_sample + a.n_samples; ++k) {
        CHECK(tr.t(static_cast<Eigen::Index>(k)) > a.t_start);
        CHECK(tr.t(static_cast<Eigen::Index>(k)) < a.t_end);
      }
    }
    CHECK(covered == static_cast<std::size_t>(tr.t.size()));
    CHECK_THAT(total, WithinRel(p.total_duration(), 1e-12));
    for (Eigen::Index k = 1; k < tr.t.size(); ++k) CHECK(tr.t(k) > tr.t(k - 1));
  }
}

TEST_CASE("frequency multiplexing") {
  const auto& c = chip();
  const FreqMuxRow rows[] = {{0, 1, c.cfg.ramp}, {1, 1, c.cfg.ramp}};
  const auto p = build_freq_mux(rows, c.cfg.levels, 0.0, c.plan);
  REQUIRE(p.carriers.size() == 2);
  CHECK(p.carriers[0].row == 0);
  CHECK(p.carriers[1].row == 1);
  CHECK(p.segments.size() == 1);
  const FreqMuxRow dup[] = {{0, 1, c.cfg.ramp}, {0, 2, c.cfg.ramp}};
  CHECK_THROWS_AS(build_freq_mux(dup, c.cfg.levels, 0.0, c.plan), ValidationError);

  // A single row is the single-carrier sweep of that cell.
  const FreqMuxRow one[] = {{0, 1, c.cfg.ramp}};
  MatrixConfig m1 = c.m, m2 = c.m;
  const auto a = run_experiment(build_freq_mux(one, c.cfg.levels, 0.0, c.plan, c.cfg.timing), m1, {});
  const auto b = run_experiment(time_mux({{0, 1}}), m2, {});
  CHECK(a.traces.at(0).v == b.traces.at(0).v);

  MatrixConfig m = c.m;
  const auto run = run_experiment(p, m, {});
  CHECK(run.traces.size() == 2);
  CHECK(run.traces[0].segments[0].active == std::vector<CellIndex>{{0, 1}});
  CHECK(run.traces[1].segments[0].active == std::vector<CellIndex>{{1, 1}});
}

TEST_CASE("a combined program projected on one row is the time-mux schedule") {
  const auto& c = chip();
  const std::array<std::array<CellIndex, 2>, 2> block{{{{{0, 1}, {0, 2}}}, {{{1, 1}, {1, 2}}}}};
  const auto comb = build_combined(block, c.cfg.ramp.duration, {c.cfg.ramp, c.cfg.ramp}, c.cfg.levels, 0.0, c.plan, 2,
                                   c.cfg.timing);
  CHECK(comb.segments.size() == 4);
  for (std::size_t s = 0; s < comb.segments.size(); ++s) CHECK_THAT(comb.segments[s].duration, WithinRel(8.33e-3, 1e-12));
  const auto tm = time_mux({{0, 1}, {0, 2}, {0, 1}, {0, 2}});
  CHECK(restrict_to_row(comb, 0) == tm);

  const std::array<std::array<CellIndex, 2>, 2> bad{{{{{0, 1}, {1, 2}}}, {{{1, 1}, {1, 2}}}}};
  CHECK_THROWS_AS(build_combined(bad, 8.33e-3, {c.cfg.ramp, c.cfg.ramp}, c.cfg.levels, 0.0, c.plan), ValidationError);
}

TEST_CASE("nothing addressed shows only the access background") {
  const auto& c = chip();
  auto p = time_mux({{0, 0}});
  p.idle.wl = 0.0;
  p.segments[0].levels[LineId::word_line(0)] = LineDrive::constant(0.0);
  MatrixConfig with = c.m, without = c.m;
  for (auto& cell : without.cells) cell.device.transitions.clear();
  const auto a = run_experiment(p, with, {});
  const auto b = run_experiment(p, without, {});
  CHECK(a.traces[0].v == b.traces[0].v);
}

TEST_CASE("a long low word-line hold lets the stored voltage drift") {
  const auto& c = chip();
  auto p = time_mux({{0, 0}});
  const double v_hold = c.cfg.ramp.end;
  Segment hold;
  hold.duration = 0.3;
  hold.levels[LineId::data_line(0)] = LineDrive::constant(v_hold);
  p.segments.push_back(hold);
  MatrixConfig m = c.m;
  const auto run = run_experiment(p, m, {});

  // The last ramp sample sits half a sample before the segment edge, so the
  // hold lasts exactly its own sample count from there.
  CellState ref = c.m.cell(0, 0);
  const double frac_end = (static_cast<double>(p.samples_in(0)) - 0.5) / (p.segments[0].duration * p.sample_rate);
  const double v_start = c.cfg.ramp.start + (c.cfg.ramp.end - c.cfg.ramp.start) * frac_end;
  ref.v_g = equilibrium_gate_voltage(ref, v_start, 1.5);
  const double v_eq = equilibrium_gate_voltage(ref, v_hold, 0.5);
  const double tau = retention_time(ref, 0.5, v_hold);
  const double elapsed = static_cast<double>(p.samples_in(1)) / p.sample_rate;
  const double expect = v_eq + (ref.v_g - v_eq) * std::exp(-elapsed / tau);
  CHECK_THAT(m.cell(0, 0).v_g, WithinRel(expect, 1e-9));
  CHECK(tau > 0.19);
  CHECK(m.cell(0, 0).v_g < 0.3 * v_start);
}

TEST_CASE("demux slices segments into per-device maps") {
  const auto& c = chip();
  const auto p = time_mux({{0, 1}, {0, 2}, {0, 0}});
  const Eigen::VectorXd v_s = Eigen::VectorXd::LinSpaced(3, -1e-3, 1e-3);
  MatrixConfig m = c.m;
  const auto runs = run_sweep(p, m, {}, v_s);
  const auto maps = demux(runs, p, v_s);
  REQUIRE(maps.size() == 3);
  CHECK(maps[0].device == CellIndex{0, 1});
  CHECK(maps[1].device == CellIndex{0, 2});
  CHECK(maps[2].device == CellIndex{0, 0});
  for (const auto& map : maps) {
    CHECK(map.values.rows() == 3);
    CHECK(map.values.cols() == map.v_dl.size());
    for (Eigen::Index k = 1; k < map.v_dl.size(); ++k) CHECK(map.v_dl(k) > map.v_dl(k - 1));
  }

  // One segment: the map is the trace reshaped past the settling window.
  const auto single = time_mux({{0, 1}});
  MatrixConfig m1 = c.m;
  const auto r1 = run_sweep(single, m1, {}, v_s);
  const auto map = demux(r1, single, v_s).at(0);
  // Samples whose midpoint lies inside the settling window are dropped.
  const auto skip = static_cast<Eigen::Index>(
      std::ceil(single.settle_fraction * static_cast<double>(single.samples_in(0)) - 0.5));
  for (Eigen::Index i = 0; i < 3; ++i) {
    const auto& v = r1[static_cast<std::size_t>(i)].traces[0].v;
    CHECK(map.values.row(i).transpose() == v.tail(v.size() - skip));
  }
  CHECK_THROWS_AS(demux(r1, single, Eigen::VectorXd::LinSpaced(2, 0, 1)), ValidationError);
}

TEST_CASE("programs are validated against the chip before anything runs") {
  const auto& c = chip();
  MatrixConfig m = c.m;
  auto p = time_mux({{0, 1}});
  p.segments[0].levels[LineId::word_line(5)] = LineDrive::constant(1.5);
  CHECK_THROWS_AS(run_experiment(p, m, {}), ValidationError);
  p = time_mux({{0, 1}});
  p.segments[0].duration = 5e-5;
  CHECK_THROWS_AS(validate(p), ValidationError);
  p = time_mux({{0, 1}});
  p.carriers[0].row = 7;
  m.cell(0, 1).v_g = 0.123;
  CHECK_THROWS_AS(run_experiment(p, m, {}), ValidationError);
  CHECK(m.cell(0, 1).v_g == 0.123);
}

TEST_CASE("every cell of the 3x3 chip is reachable with 6 lines and 3 carriers") {
  const auto& c = chip();
  std::set<LineId> lines;
  std::set<double> carriers;
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t col = 0; col < 3; ++col) {
      const auto p = time_mux({{r, col}});
      for (const auto& [line, drive] : p.segments[0].levels) lines.insert(line);
      for (const auto& cr : p.carriers) carriers.insert(cr.frequency);
      MatrixConfig m = c.m;
      run_experiment(p, m, {});
      // The addressed gate follows its data-line; the rest of the row is decoupled.
      CHECK_THAT(m.cell(r, col).v_g, WithinAbs(c.cfg.ramp.end, 1e-3));
      for (std::size_t k = 0; k < 3; ++k) {
        if (k != col) CHECK(std::abs(m.cell(r, k).v_g - c.m.cell(r, k).v_g) < 1e-3);
      }
    }
  }
  CHECK(lines.size() == 6);
  CHECK(carriers.size() == 3);
}

TEST_CASE("seeded runs repeat exactly") {
  const auto& c = chip();
  const auto p = time_mux({{0, 1}, {0, 2}});
  NoiseModel n{1e-5, 1234, 1, 1e6};
  MatrixConfig m1 = c.m, m2 = c.m;
  const auto a = run_experiment(p, m1, n);
  const auto b = run_experiment(p, m2, n);
  CHECK(a.traces[0].v == b.traces[0].v);
  n.seed = 1235;
  MatrixConfig m3 = c.m;
  CHECK(run_experiment(p, m3, n).traces[0].v != a.traces[0].v);
}

TEST_CASE("retention protocol program") {
  const auto p = build_retention({1, 2});
  REQUIRE(p.segments.size() == 2);
  CHECK(p.carriers.empty());
  CHECK(p.dc_probes == std::vector<CellIndex>{{1, 2}});
  CHECK(p.level(LineId::word_line(2), 0, 0.5) == 1.49);
  CHECK(p.level(LineId::word_line(2), 1, 0.5) == 0.5);
  CHECK(p.level(LineId::data_line(1), 1, 0.5) == 0.8);
  CHECK(with_source_voltage(p, 2e-3).level(LineId::source(1, 2), 1, 0.5) == 2e-3);
}
