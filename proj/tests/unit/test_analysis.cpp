#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "cryomux/analysis.hpp"
#include "cryomux/constants.hpp"
#include "cryomux/device_model.hpp"
#include "cryomux/errors.hpp"
#include "cryomux/rf_chain.hpp"
#include "generators.hpp"

using namespace cryomux;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

constexpr double kAlpha = 0.8;
const double kFwhm = fwhm_from_gamma(48.3e9, kAlpha);

Eigen::VectorXd axis(Eigen::Index n, double lo, double hi) { return Eigen::VectorXd::LinSpaced(n, lo, hi); }

Eigen::VectorXd peak(const Eigen::VectorXd& x, double a, double c, double w, double off = 0.0) {
  return lorentzian(x.array(), a, c, w, off).matrix();
}

Eigen::VectorXd gaussian(Eigen::Index n, double sigma, std::uint64_t seed) {
  GaussianStream g(seed);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = sigma * g.next();
  return v;
}

StabilityMap diamond_map(double e_c_mev, Eigen::Index n_dl, Eigen::Index n_s, double v_s_max) {
  LadderSpec s;
  s.count = 6;
  const auto dev = make_ladder_device(s, e_c_mev * 1e-3 * constants::elementary_charge);
  StabilityMap m;
  m.kind = TraceKind::Dc;
  m.v_dl = axis(n_dl, 0.39, 0.56);
  m.v_s = axis(n_s, -v_s_max, v_s_max);
  m.values.resize(n_s, n_dl);
  for (Eigen::Index i = 0; i < n_s; ++i) {
    for (Eigen::Index j = 0; j < n_dl; ++j) m.values(i, j) = coulomb_current(dev, m.v_dl(j), m.v_s(i));
  }
  return m;
}

}  // namespace

TEST_CASE("a pure polynomial leaves no residual") {
  const Eigen::VectorXd x = axis(500, 0.39, 0.56);
  const Eigen::ArrayXd u = x.array() - 0.47;
  const Eigen::VectorXd y = (0.01 + 0.3 * u - 2.0 * u.square() + 40.0 * u.cube() + 100 * u.pow(4) - 3000 * u.pow(5)).matrix();
  CHECK((y - fit_background(x, y)).cwiseAbs().maxCoeff() < 1e-9);
  CHECK_THROWS_AS(fit_background(axis(6, 0, 1), axis(6, 0, 1)), ValidationError);
}

TEST_CASE("background removal keeps injected peaks in place") {
  const Eigen::VectorXd x = axis(833, 0.39, 0.56);
  const double step = x(1) - x(0);
  const double centers[] = {0.4025, 0.4293, 0.4560};
  Eigen::VectorXd y = (0.02 * (x.array() - 0.39) + 0.5 * (x.array() - 0.47).square()).matrix();
  for (double c : centers) y += peak(x, 3e-4, c, kFwhm);
  const Eigen::VectorXd r = y - fit_background(x, y);
  const auto peaks = find_peaks(x, r, 1e-4);
  REQUIRE(peaks.size() >= 3);
  for (double c : centers) {
    double best = 1.0;
    for (const auto& p : peaks) best = std::min(best, std::abs(p.x - c));
    CHECK(best <= step);
  }
}

TEST_CASE("background subtraction then fit recovers the amplitude") {
  test::Gen g(401);
  for (int i = 0; i < 50; ++i) {
    const Eigen::VectorXd x = axis(833, 0.39, 0.56);
    const double a = 1e-3;
    const double c = g.uniform(0.43, 0.52);
    // Background range up to 10x the peak amplitude.
    const double range = g.uniform(1.0, 10.0) * a;
    const Eigen::ArrayXd u = (x.array() - 0.39) / 0.17;
    const Eigen::VectorXd bg = (range * (g.uniform(0.2, 1.0) * u + (1 - g.uniform(0.2, 1.0)) * u.square())).matrix();
    const Eigen::VectorXd y = bg + peak(x, a, c, 4 * kFwhm);
    const Eigen::VectorXd r = y - fit_background(x, y);
    const auto fit = fit_lorentzian(x, r, kAlpha);
    CAPTURE(i, c, range);
    CHECK(fit.converged);
    CHECK_THAT(fit.amplitude, WithinRel(a, 0.03));
  }
}

TEST_CASE("noiseless peak fit recovers the tunnel rate") {
  const Eigen::VectorXd x = axis(801, 0.40, 0.42);
  const auto fit = fit_lorentzian(x, peak(x, 2e-3, 0.41037, kFwhm, 1e-4), kAlpha);
  REQUIRE(fit.converged);
  CHECK_THAT(fit.gamma, WithinRel(48.3e9, 0.005));
  CHECK_THAT(fit.center, WithinAbs(0.41037, 1e-7));
  CHECK_THAT(fit.amplitude, WithinRel(2e-3, 1e-4));
  CHECK_THAT(fit.r_squared, WithinAbs(1.0, 1e-9));
  CHECK(fit.message.empty());
  CHECK_THROWS_AS(fit_lorentzian(x, peak(x, 1, 0.41, kFwhm), 0.0), ValidationError);
}

TEST_CASE("a symmetric peak is centred on the argmax") {
  const Eigen::VectorXd x = axis(401, 0.40, 0.42);
  const double c = x(200);
  const auto fit = fit_lorentzian(x, peak(x, 1.0, c, kFwhm), kAlpha);
  CHECK(std::abs(fit.center - c) <= 0.5 * (x(1) - x(0)));
}

TEST_CASE("refitting a fit's own curve is idempotent") {
  test::Gen g(403);
  for (int i = 0; i < 30; ++i) {
    const Eigen::VectorXd x = axis(601, 0.40, 0.43);
    const Eigen::VectorXd y = peak(x, g.log_uniform(1e-5, 1e-2), g.uniform(0.41, 0.42), kFwhm * g.uniform(0.5, 4.0)) +
                              gaussian(601, 1e-6, static_cast<std::uint64_t>(i));
    const auto f1 = fit_lorentzian(x, y, kAlpha);
    const auto f2 = fit_lorentzian(x, peak(x, f1.amplitude, f1.center, f1.fwhm, f1.offset), kAlpha);
    CAPTURE(i);
    CHECK_THAT(f2.amplitude, WithinRel(f1.amplitude, 1e-6));
    CHECK_THAT(f2.center, WithinRel(f1.center, 1e-6));
    CHECK_THAT(f2.fwhm, WithinRel(f1.fwhm, 1e-6));
  }
}

TEST_CASE("two peaks: the dominant one or a flag, never a blend") {
  const Eigen::VectorXd x = axis(801, 0.40, 0.42);
  for (double sep : {1.0, 2.0, 4.0, 8.0}) {
    const double c1 = 0.408, c2 = c1 + sep * kFwhm;
    const Eigen::VectorXd y = peak(x, 1.0, c1, kFwhm) + peak(x, 0.6, c2, kFwhm);
    const auto fit = fit_lorentzian(x, y, kAlpha);
    CAPTURE(sep, fit.center, fit.message);
    const bool dominant = std::abs(fit.center - c1) < 0.1 * kFwhm;
    CHECK((dominant || !fit.converged || !fit.message.empty()));
  }
}

TEST_CASE("snr is amplitude over the noise spread") {
  PeakFit fit;
  fit.amplitude = 28.7e-4;
  const Eigen::VectorXd noise = gaussian(100000, 1e-4, 5);
  CHECK_THAT(snr(fit, noise).value, WithinRel(28.7, 0.02));
  const auto flat = snr(fit, Eigen::VectorXd::Zero(40));
  CHECK(std::isinf(flat.value));
  CHECK(flat.noiseless);
  CHECK_THROWS_AS(snr(fit, Eigen::VectorXd::Zero(29)), ValidationError);
}

TEST_CASE("minimum integration time") {
  CHECK(min_integration_time(1.0, 0.4) == 0.4);
  CHECK_THAT(min_integration_time(28.7, 0.4), WithinRel(0.4 / (28.7 * 28.7), 1e-12));
  CHECK_THAT(min_integration_time(28.7, 0.4), WithinRel(0.486e-3, 0.01));
}

TEST_CASE("averaging raises the SNR as sqrt(N)") {
  // Each averaged sample is the mean of N unit-variance draws.
  const double a = 1.0;
  const Eigen::Index m = 20000;
  std::mt19937_64 eng(17);
  std::normal_distribution<double> nd;
  for (int n : {1, 4, 16, 64}) {
    Eigen::VectorXd v(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      double s = 0;
      for (int k = 0; k < n; ++k) s += nd(eng);
      v(i) = s / n;
    }
    PeakFit fit;
    fit.amplitude = a;
    CAPTURE(n);
    CHECK_THAT(snr(fit, v).value, WithinRel(std::sqrt(static_cast<double>(n)), 0.1));
    // t_min = t_int / snr^2 does not depend on how long we average.
    CHECK_THAT(min_integration_time(snr(fit, v).value, 0.1 * n), WithinRel(0.1, 0.1));
  }
}

TEST_CASE("retention fit on exact points") {
  const double tau = 0.207, v0 = 0.01, ratio = 60.0;
  Eigen::VectorXd t(4), v(4);
  t << 0.05, 0.09, 0.13, 0.18;
  for (Eigen::Index i = 0; i < 4; ++i) v(i) = v0 * (1 + ratio * std::exp(-t(i) / tau));
  const auto fit = fit_retention(t, v);
  REQUIRE(fit.converged);
  CHECK_THAT(fit.tau, WithinRel(tau, 0.02));
  CHECK_THAT(fit.v0, WithinRel(v0, 0.02));
  CHECK_THAT(fit.ratio, WithinRel(ratio, 0.02));

  const auto flat = fit_retention(t, Eigen::VectorXd::Constant(4, 0.3));
  CHECK_FALSE(flat.converged);
  CHECK_FALSE(flat.message.empty());
  CHECK_THROWS_AS(fit_retention(t.head(2), v.head(2)), ValidationError);
}

TEST_CASE("retention points pair pulses with levels") {
  const Eigen::VectorXd t = axis(10000, 0.0, 1.0);
  Eigen::VectorXd i_s = Eigen::VectorXd::Zero(10000);
  for (double c : {0.31, 0.42, 0.55, 0.71, 0.9}) {
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      if (std::abs(t(k) - c) < 0.004) i_s(k) = 1e-9;
    }
  }
  const auto pts = retention_points(t, i_s, 0.2, {0.40, 0.43, 0.46, 0.49}, 4);
  REQUIRE(pts.t.size() == 4);
  CHECK_THAT(pts.t(0), WithinAbs(0.11, 2e-4));
  CHECK(pts.v(0) == 0.49);
  CHECK(pts.v(3) == 0.40);
  CHECK_THROWS_AS(retention_points(t, Eigen::VectorXd::Zero(10000), 0.2, {0.4, 0.5, 0.6}), ValidationError);
}

TEST_CASE("resonance fit on a synthesized dip") {
  const Complex load{100.0, -115.7};
  const auto spec = with_cp_shift(calibrate_resonator(6.872e9, 50.0, load),
                                  solve_cp_shift(calibrate_resonator(6.872e9, 50.0, load), load, 6.872e9, 6.810e9));
  const Eigen::ArrayXd f = Eigen::ArrayXd::LinSpaced(3001, 6.4e9, 7.2e9);
  const Eigen::VectorXd s = reflection_magnitude(spec, load, f).matrix();
  const auto fit = fit_resonance(f.matrix(), s);
  REQUIRE(fit.converged);
  CHECK_THAT(fit.f_res, WithinRel(6.810e9, 1e-4));
  CHECK_THAT(fit.q, WithinRel(fit.f_res / fit.delta_f, 1e-9));

  // Half-depth crossings of the raw |S11|^2 samples.
  const Eigen::ArrayXd p = s.array().square();
  Eigen::Index imin = 0;
  p.minCoeff(&imin);
  const double half = 0.5 * (p(imin) + fit.baseline);
  auto cross = [&](Eigen::Index from, int dir) {
    Eigen::Index i = from;
    while (p(i + dir) < half) i += dir;
    const double x0 = f(i), x1 = f(i + dir), y0 = p(i), y1 = p(i + dir);
    return x0 + (half - y0) * (x1 - x0) / (y1 - y0);
  };
  const double q_raw = f(imin) / (cross(imin, 1) - cross(imin, -1));
  CHECK_THAT(fit.q, WithinRel(q_raw, 0.02));

  // Symmetric dip on an exact grid point.
  const Eigen::VectorXd ff = axis(2001, 6.0e9, 7.0e9);
  Eigen::VectorXd sym(2001);
  for (Eigen::Index i = 0; i < 2001; ++i) sym(i) = std::sqrt(1.0 - 0.9 / (1 + std::pow(2 * (ff(i) - ff(1000)) / 1.2e8, 2)));
  CHECK(std::abs(fit_resonance(ff, sym).f_res - ff(1000)) <= 0.5 * (ff(1) - ff(0)));

  CHECK_THROWS_AS(fit_resonance(ff, Eigen::VectorXd::Constant(2001, 0.9)), ValidationError);
}

TEST_CASE("charging energy from a noiseless diamond map") {
  const auto m = diamond_map(21.42, 200, 201, 0.05);
  const double step = (m.v_s(1) - m.v_s(0)) * 1e3;
  const auto d = extract_charging_energy(m);
  CHECK(d.diamonds >= 2);
  CHECK_THAT(d.e_c / constants::elementary_charge * 1e3, WithinAbs(21.42, step));

  const auto m2 = diamond_map(42.84, 200, 201, 0.05);
  const auto d2 = extract_charging_energy(m2);
  CHECK_THAT(d2.e_c / d.e_c, WithinRel(2.0, 0.03));

  StabilityMap open = m;
  open.values.setConstant(1e-9);
  CHECK_THROWS_AS(extract_charging_energy(open), ValidationError);
}

TEST_CASE("charging energy from a noisy diamond map") {
  const auto clean_map = diamond_map(21.42, 200, 201, 0.05);
  const double clean = extract_charging_energy(clean_map).e_c;
  // Signal: the current just outside the apex, at |v_s| = e_c / e.
  LadderSpec s;
  s.count = 6;
  const auto dev = make_ladder_device(s, 21.42e-3 * constants::elementary_charge);
  const double sigma = coulomb_current(dev, dev.transitions[1].v_peak, 21.42e-3) / 10.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto m = clean_map;
    GaussianStream g(seed);
    for (Eigen::Index i = 0; i < m.values.size(); ++i) m.values.data()[i] += sigma * g.next();
    CAPTURE(seed);
    CHECK_THAT(extract_charging_energy(m).e_c, WithinRel(clean, 0.05));
  }
}

TEST_CASE("peak and pulse finders") {
  const Eigen::VectorXd x = axis(1000, 0, 1);
  const Eigen::VectorXd y = peak(x, 1.0, 0.3, 0.01) + peak(x, 0.5, 0.7, 0.01);
  const auto peaks = find_peaks(x, y, 0.2);
  REQUIRE(peaks.size() == 2);
  CHECK(peaks[0].height > peaks[1].height);
  CHECK_THAT(peaks[0].x, WithinAbs(0.3, 1e-3));
  const auto centers = pulse_centers(x, y, 0.25);
  REQUIRE(centers.size() == 2);
  CHECK_THAT(centers[1], WithinAbs(0.7, 2e-3));
}
