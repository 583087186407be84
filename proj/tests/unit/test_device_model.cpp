#include <catch_amalgamated.hpp>

#include <cmath>

#include "cryomux/constants.hpp"
#include "cryomux/device_model.hpp"
#include "cryomux/errors.hpp"
#include "generators.hpp"
#include "oracles.hpp"

using namespace cryomux;
using Catch::Matchers::WithinRel;
using Catch::Matchers::WithinAbs;

namespace {

constexpr double kE = constants::elementary_charge;
constexpr double kH = constants::planck;
const double kEc = 21.42e-3 * kE;

DeviceParams ladder(std::size_t count = 3, std::size_t source_only = 0) {
  LadderSpec s;
  s.count = count;
  s.source_only = source_only;
  return make_ladder_device(s, kEc);
}

}  // namespace

TEST_CASE("current flows at a degeneracy point") {
  const auto dev = ladder();
  const double v = dev.transitions[1].v_peak;
  CHECK(coulomb_current(dev, v, 1e-3) > 0.0);
  CHECK(coulomb_current(dev, v, -1e-3) < 0.0);
}

TEST_CASE("midway between peaks the dot is blockaded below e_c / e") {
  const auto dev = ladder();
  const double mid = 0.5 * (dev.transitions[0].v_peak + dev.transitions[1].v_peak);
  for (double v_s : {-21.0e-3, -10e-3, -1e-3, 0.0, 1e-3, 10e-3, 21.0e-3}) {
    CHECK(coulomb_current(dev, mid, v_s) == 0.0);
  }
  // The apex of the diamond sits at exactly e_c.
  CHECK(coulomb_current(dev, mid, 21.6e-3) != 0.0);
}

TEST_CASE("ladder spacing closes diamonds at e_c") {
  CHECK_THAT(ladder_spacing(kEc, 0.8), WithinRel(21.42e-3 / 0.8, 1e-12));
  const auto dev = ladder(4);
  for (std::size_t k = 1; k < dev.transitions.size(); ++k) {
    CHECK_THAT(dev.transitions[k].v_peak - dev.transitions[k - 1].v_peak, WithinRel(21.42e-3 / 0.8, 1e-9));
  }
}

TEST_CASE("source-only transitions carry no current but stay RF visible") {
  const auto dev = ladder(3, 1);
  const auto& t0 = dev.transitions[0];
  REQUIRE(t0.gamma_d == 0.0);
  test::Gen g(11);
  for (int i = 0; i < 2000; ++i) {
    const double v = t0.v_peak + g.uniform(-4e-3, 4e-3);
    CHECK(coulomb_current(dev, v, g.uniform(-5e-3, 5e-3)) == 0.0);
  }
  CHECK_THAT(dispersive_capacitance(dev, t0.v_peak, 7e9), WithinRel(t0.c_q_max, 1e-3));
}

TEST_CASE("dispersive capacitance follows the lifetime-broadened line") {
  const auto dev = ladder(1);
  const auto& t = dev.transitions[0];
  const double f = 7e9;
  CHECK_THAT(dispersive_capacitance(dev, t.v_peak, f), WithinRel(t.c_q_max, 1e-12));
  const double dv = kH * t.gamma() / (kE * t.alpha);
  CHECK_THAT(dispersive_capacitance(dev, t.v_peak + dv, f), WithinRel(t.c_q_max / 2, 1e-9));
  CHECK_THAT(t.c_q_max, WithinRel(lifetime_capacitance_scale(t.alpha, t.gamma()), 1e-12));

  // Dense scan of the half-maximum crossings.
  const double w_expected = 2.0 * kH * t.gamma() / (kE * t.alpha);
  const int n = 400001;
  const double span = 4 * w_expected;
  double left = 0, right = 0;
  for (int i = 1; i < n; ++i) {
    const double x0 = t.v_peak - span + 2 * span * (i - 1) / (n - 1);
    const double x1 = t.v_peak - span + 2 * span * i / (n - 1);
    const double y0 = dispersive_capacitance(dev, x0, f) - t.c_q_max / 2;
    const double y1 = dispersive_capacitance(dev, x1, f) - t.c_q_max / 2;
    if (y0 < 0 && y1 >= 0) left = x0 - y0 * (x1 - x0) / (y1 - y0);
    if (y0 >= 0 && y1 < 0) right = x0 - y0 * (x1 - x0) / (y1 - y0);
  }
  CHECK_THAT(right - left, WithinRel(w_expected, 1e-5));
}

TEST_CASE("lineshape area equals pi c_q_max h gamma / (e alpha)") {
  const auto dev = ladder(1);
  const auto& t = dev.transitions[0];
  const double hw = kH * t.gamma() / (kE * t.alpha);
  // Substituting x = hw tan(theta) makes the integrand smooth on (-pi/2, pi/2).
  const int n = 20000;
  double area = 0.0;
  for (int i = 0; i < n; ++i) {
    const double th = -constants::pi / 2 + constants::pi * (i + 0.5) / n;
    const double x = hw * std::tan(th);
    area += dispersive_capacitance(dev, t.v_peak + x, 7e9) * hw / std::pow(std::cos(th), 2) * (constants::pi / n);
  }
  CHECK_THAT(area, WithinRel(constants::pi * t.c_q_max * hw, 1e-3));
}

TEST_CASE("slow transitions drop out of the dispersive response") {
  LadderSpec s;
  s.count = 1;
  s.gamma_s = 1e8;
  s.gamma_d = 0.0;
  const auto dev = make_ladder_device(s, kEc);
  CHECK(dispersive_capacitance(dev, dev.transitions[0].v_peak, 7e9) == 0.0);
}

TEST_CASE("diamond boundaries are symmetric in the bias sign") {
  const auto dev = ladder(4);
  test::Gen g(21);
  for (int i = 0; i < 20000; ++i) {
    const double v = g.uniform(0.38, 0.50);
    const double v_s = g.uniform(0.0, 0.03);
    CAPTURE(i, v, v_s);
    CHECK((coulomb_current(dev, v, v_s) != 0.0) == (coulomb_current(dev, v, -v_s) != 0.0));
  }
}

TEST_CASE("diamond mask agrees with the rate equation") {
  const auto dev = ladder(3);
  std::vector<double> gs, gd;
  for (const auto& t : dev.transitions) {
    gs.push_back(t.gamma_s);
    gd.push_back(t.gamma_d);
  }
  const double kt = constants::boltzmann * dev.temperature / kE;
  int disagree = 0, total = 0;
  for (int i = 0; i < 60; ++i) {
    for (int j = 0; j < 60; ++j) {
      const double v = 0.37 + 0.12 * i / 59.0;
      const double v_s = -0.03 + 0.06 * j / 59.0;
      std::vector<double> mu;
      for (const auto& t : dev.transitions) mu.push_back(-t.alpha * (v - t.v_peak) - dev.alpha_s * v_s);
      const double ref = test::master_equation_current(mu, gs, gd, v_s, kt);
      const bool on_ref = std::abs(ref) > 1e7;
      const bool on = coulomb_current(dev, v, v_s) != 0.0;
      disagree += on != on_ref;
      ++total;
    }
  }
  CHECK(disagree <= total / 100);
}

TEST_CASE("access resistance anchors and monotonicity") {
  const AccessTransistorParams p;
  CHECK_THAT(access_resistance(p, 0.277), WithinRel(1e12, 1e-9));
  CHECK_THAT(access_resistance(p, 5.0), WithinRel(p.r_on, 1e-6));
  CHECK_THAT(access_resistance(p, -5.0), WithinRel(p.r_off, 1e-6));
  test::Gen g(31);
  for (int i = 0; i < 5000; ++i) {
    const double a = g.uniform(-2, 3);
    const double b = a + g.log_uniform(1e-9, 1.0);
    CAPTURE(a, b);
    CHECK(access_resistance(p, b) <= access_resistance(p, a));
  }
}

TEST_CASE("region classification and the depletion bump") {
  const AccessTransistorParams p;
  CHECK(classify_region(p, 0.786 - 0.340 - 1e-9) == AccessRegion::Off);
  CHECK(classify_region(p, 0.786 - 0.340 + 1e-9) == AccessRegion::Forbidden);
  CHECK(classify_region(p, 1.278 - 0.340 - 1e-9) == AccessRegion::Forbidden);
  CHECK(classify_region(p, 1.278 - 0.340 + 1e-9) == AccessRegion::On);
  CHECK(access_capacitance(p, 0.0) == 0.0);
  CHECK(access_capacitance(p, 2.0) == 0.0);
  const double centre = 0.5 * (p.v_forbidden_lo + p.v_forbidden_hi);
  CHECK_THAT(access_capacitance(p, centre), WithinRel(p.c_dep_max, 1e-12));

  // Unimodal: rising up to the centre, falling after it.
  double prev = 0.0;
  bool falling = false;
  for (int i = 0; i <= 2000; ++i) {
    const double v = -0.5 + 2.0 * i / 2000.0;
    const double c = access_capacitance(p, v);
    if (c < prev) falling = true;
    if (falling) CHECK(c <= prev);
    prev = c;
  }

  // A (V_WL, V_DL) grid splits into contiguous Off / Forbidden / On bands
  // along the overdrive, matching a direct threshold comparison.
  for (int i = 0; i < 50; ++i) {
    for (int j = 0; j < 50; ++j) {
      const double wl = 3.0 * i / 49.0;
      const double dl = 1.5 * j / 49.0;
      const double ov = wl - dl;
      const auto expect = ov < p.v_forbidden_lo   ? AccessRegion::Off
                          : ov <= p.v_forbidden_hi ? AccessRegion::Forbidden
                                                   : AccessRegion::On;
      CHECK(classify_region(p, ov) == expect);
    }
  }
}

TEST_CASE("parameter validation") {
  auto dev = ladder();
  CHECK_NOTHROW(validate(dev));
  auto bad = dev;
  std::swap(bad.transitions[0], bad.transitions[1]);
  CHECK_THROWS_AS(validate(bad), ValidationError);
  bad = dev;
  bad.transitions[0].alpha = 1.5;
  CHECK_THROWS_AS(validate(bad), ValidationError);
  bad = dev;
  bad.e_c = 0.0;
  CHECK_THROWS_AS(validate(bad), ValidationError);
  bad = dev;
  bad.temperature = 30.0;  // k_B T within a factor of ten of e_c
  CHECK_THROWS_AS(validate(bad), ValidationError);

  AccessTransistorParams a;
  a.r_on = a.r_off * 2;
  CHECK_THROWS_AS(validate(a), ValidationError);
  a = {};
  a.v_forbidden_lo = a.v_forbidden_hi;
  CHECK_THROWS_AS(validate(a), ValidationError);
}
