#include <catch_amalgamated.hpp>

#include <cmath>

#include "cryomux/cell_matrix.hpp"
#include "cryomux/constants.hpp"
#include "cryomux/errors.hpp"
#include "generators.hpp"

using namespace cryomux;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

CellState reference_cell() {
  CellState c;
  c.device = make_ladder_device({}, 21.42e-3 * constants::elementary_charge);
  return c;
}

}  // namespace

TEST_CASE("equilibrium divider limits") {
  const CellState c = reference_cell();
  CHECK_THAT(equilibrium_gate_voltage(c, 0.45, 1.5), WithinRel(0.45, 1e-9));
  // At the decoupling onset R_acc equals R_G.
  CHECK_THAT(equilibrium_gate_voltage(c, 0.4, 0.4 + 0.277), WithinRel(0.2, 1e-9));
  CHECK_THAT(equilibrium_gate_voltage(c, 0.8, 0.5), WithinAbs(0.0, 1e-5));
}

TEST_CASE("retention time anchors") {
  CellState c = reference_cell();
  const double tau = retention_time(c, 0.5, 0.8);
  CHECK(tau > 0.19);
  CHECK(tau < 0.215);
  CHECK_THAT(retention_time(c, 0.4 + 0.277, 0.4), WithinRel(c.c_cell() * c.r_g / 2, 1e-9));
  CHECK(retention_time(c, 5.0, 0.0) < 1e-9);
}

TEST_CASE("discharge follows the closed-form decay pointwise") {
  CellState c = reference_cell();
  const double v_dl = 0.8, v_wl = 0.5;
  c.v_g = v_dl;  // fully charged
  const double r_acc = access_resistance(c.access, v_wl - v_dl);
  const double v0 = v_dl * c.r_g / (r_acc + c.r_g);
  const double tau = retention_time(c, v_wl, v_dl);
  double t = 0.0;
  for (int i = 0; i < 1000; ++i) {
    c = step_cell(c, v_dl, v_wl, 1e-3);
    t += 1e-3;
    const double expect = v0 * (1.0 + (r_acc / c.r_g) * std::exp(-t / tau));
    CHECK_THAT(c.v_g, WithinAbs(expect, 1e-9));
  }
}

TEST_CASE("step composition is exact") {
  test::Gen g(101);
  for (int i = 0; i < 2000; ++i) {
    CellState c = reference_cell();
    c.v_g = g.uniform(-1, 1);
    const double v_dl = g.uniform(0.0, 0.9);
    const double v_wl = g.uniform(0.0, 1.6);
    const double tau = retention_time(c, v_wl, v_dl);
    const double dt1 = tau * g.log_uniform(1e-4, 3.0);
    const double dt2 = tau * g.log_uniform(1e-4, 3.0);
    const CellState two = step_cell(step_cell(c, v_dl, v_wl, dt1), v_dl, v_wl, dt2);
    const CellState one = step_cell(c, v_dl, v_wl, dt1 + dt2);
    CAPTURE(i, c.v_g, v_dl, v_wl, dt1, dt2);
    CHECK(std::abs(two.v_g - one.v_g) <= 1e-12 * std::max(std::abs(one.v_g), std::abs(c.v_g)) + 1e-300);
  }
}

TEST_CASE("relaxation stays between the initial voltage, the data-line and ground") {
  test::Gen g(103);
  for (int i = 0; i < 2000; ++i) {
    CellState c = reference_cell();
    c.v_g = g.uniform(-1, 1);
    const double v0 = c.v_g;
    const double v_dl = g.uniform(-0.9, 0.9);
    const double v_wl = g.uniform(0.0, 1.6);
    const double lo = std::min({v0, v_dl, 0.0}), hi = std::max({v0, v_dl, 0.0});
    for (int k = 0; k < 20; ++k) {
      c = step_cell(c, v_dl, v_wl, g.log_uniform(1e-6, 1.0));
      CHECK(c.v_g >= lo);
      CHECK(c.v_g <= hi);
    }
  }
  CHECK_THROWS_AS(step_cell(reference_cell(), 0.1, 1.0, 0.0), ValidationError);
}

TEST_CASE("long holds settle on the equilibrium") {
  CellState c = reference_cell();
  c.v_g = 0.3;
  const double tau = retention_time(c, 1.5, 0.45);
  c = step_cell(c, 0.45, 1.5, 100 * tau);
  CHECK_THAT(c.v_g, WithinRel(equilibrium_gate_voltage(c, 0.45, 1.5), 1e-12));
}

TEST_CASE("lines_required") {
  CHECK(lines_required(1) == std::pair<std::size_t, std::size_t>{2, 1});
  CHECK(lines_required(9) == std::pair<std::size_t, std::size_t>{6, 3});
  CHECK(lines_required(1024) == std::pair<std::size_t, std::size_t>{64, 32});
  CHECK_THROWS_AS(lines_required(0), ValidationError);
  CHECK_THROWS_AS(lines_required(8), ValidationError);
  CHECK_THROWS_AS(lines_required(1025), ValidationError);
  // Integer square root oracle over a range, and the shrinking overhead.
  double prev_ratio = 3.0;
  for (std::size_t r = 1; r <= 200; ++r) {
    const auto [lines, res] = lines_required(r * r);
    CHECK(lines == 2 * r);
    CHECK(res == r);
    const double ratio = static_cast<double>(lines) / static_cast<double>(r * r);
    if (r > 1) CHECK(ratio < prev_ratio);
    prev_ratio = ratio;
  }
}

TEST_CASE("cell labels round-trip") {
  CHECK(CellIndex{0, 1}.label() == "Q12");
  CHECK(CellIndex{9, 10}.label() == "Q10_11");
  for (std::size_t r = 0; r < 12; ++r) {
    for (std::size_t c = 0; c < 12; ++c) CHECK(CellIndex::parse(CellIndex{r, c}.label()) == CellIndex{r, c});
  }
  CHECK_THROWS_AS(CellIndex::parse("Q1"), ValidationError);
  CHECK_THROWS_AS(CellIndex::parse("X12"), ValidationError);
  CHECK_THROWS_AS(CellIndex::parse("Q02"), ValidationError);
}

TEST_CASE("single branch against hand-built arithmetic") {
  CellState c = reference_cell();
  c.v_g = c.device.transitions[2].v_peak;
  const double f = 7e9, v_wl = 1.5, v_dl = 0.45;
  const double w = 2 * constants::pi * f;
  const double r_acc = access_resistance(c.access, v_wl - v_dl);
  const double c_acc = access_capacitance(c.access, v_wl - v_dl);
  const double c_q = dispersive_capacitance(c.device, c.v_g, f);
  REQUIRE(c_q > 0.0);
  const Complex z_acc = 1.0 / (1.0 / r_acc + Complex(0, w * c_acc));
  const Complex z_gate = 1.0 / (1.0 / c.r_g + Complex(0, w * (c.c_storage + c.c_gate + c_q)));
  const Complex z = cell_branch_impedance(c, v_wl, v_dl, 0.0, f);
  CHECK_THAT(std::abs(z - (z_acc + z_gate)), WithinAbs(0.0, 1e-12 * std::abs(z)));

  // The dispersive term shifts the branch away from the bare-cell value.
  CellState bare = c;
  bare.device.transitions.clear();
  CHECK(std::abs(cell_branch_impedance(bare, v_wl, v_dl, 0.0, f) - z) > 0.0);
}

TEST_CASE("row load is the parallel combination of its branches") {
  MatrixConfig m(2, 3, reference_cell());
  m.v_dl << 0.45, 0.3;
  m.v_wl << 1.5, 1.5, 0.5;
  const double f = 7.4e9;
  const Complex z0 = cell_branch_impedance(m.cell(0, 0), 1.5, 0.45, 0.0, f);
  const Complex z1 = cell_branch_impedance(m.cell(0, 1), 1.5, 0.45, 0.0, f);
  const Complex z2 = cell_branch_impedance(m.cell(0, 2), 0.5, 0.45, 0.0, f);
  const Complex expect = 1.0 / (1.0 / z0 + 1.0 / z1 + 1.0 / z2);
  CHECK(std::abs(matrix_gate_load(m, 0, f) - expect) <= 1e-12 * std::abs(expect));
  CHECK_THROWS_AS(matrix_gate_load(m, 2, f), ValidationError);

  // All access transistors deep off: the row looks open.
  m.v_wl.setZero();
  CHECK(std::abs(matrix_gate_load(m, 0, f)) > 1e14);
}

TEST_CASE("stepping the matrix steps every cell") {
  MatrixConfig m(2, 2, reference_cell());
  m.v_dl << 0.45, 0.3;
  m.v_wl << 1.5, 0.5;
  const MatrixConfig before = m;
  step_matrix(m, 1e-3);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 2; ++c) {
      const auto ri = static_cast<Eigen::Index>(r), ci = static_cast<Eigen::Index>(c);
      CHECK(m.cell(r, c).v_g == step_cell(before.cell(r, c), m.v_dl(ri), m.v_wl(ci), 1e-3).v_g);
    }
  }
  m.cell(0, 0).v_g = m.cell(0, 0).device.transitions[3].v_peak;
  m.v_s(0, 0) = 1e-3;
  CHECK(cell_current(m, {0, 0}) > 0.0);
}
