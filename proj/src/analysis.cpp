#include "cryomux/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>

#include <boost/math/tools/minima.hpp>

#include "cryomux/errors.hpp"
#include "cryomux/optimize.hpp"

namespace cryomux {

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double m = *mid;
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), mid));
  return m;
}

// 1.4826 * MAD: the standard deviation of a normal sample.
double robust_sigma(const std::vector<double>& v) {
  const double m = median(v);
  std::vector<double> dev(v.size());
  std::transform(v.begin(), v.end(), dev.begin(), [m](double x) { return std::abs(x - m); });
  return 1.4826 * median(std::move(dev));
}

// Centred boxcar of odd `width`, truncated at the ends.
Eigen::VectorXd moving_average(const Eigen::VectorXd& y, Eigen::Index width) {
  if (width <= 1) return y;
  const Eigen::Index n = y.size(), h = width / 2;
  Eigen::VectorXd cum(n + 1);
  cum(0) = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) cum(i + 1) = cum(i) + y(i);
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, i - h), hi = std::min(n, i + h + 1);
    out(i) = (cum(hi) - cum(lo)) / static_cast<double>(hi - lo);
  }
  return out;
}

double r_squared(const Eigen::VectorXd& y, const Eigen::VectorXd& model) {
  const double ss_res = (y - model).squaredNorm();
  const double ss_tot = (y.array() - y.mean()).matrix().squaredNorm();
  if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
  return std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0);
}

}  // namespace

Eigen::VectorXd fit_background(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const BackgroundOptions& opt) {
  if (opt.degree < 0) throw ValidationError("background: degree must be non-negative");
  if (x.size() != y.size()) throw ValidationError("background: x and y differ in length");
  const Eigen::Index n = x.size();
  const Eigen::Index terms = opt.degree + 1;
  if (n < terms + 1) {
    throw ValidationError("background: " + std::to_string(n) + " samples cannot determine a degree-" +
                          std::to_string(opt.degree) + " fit");
  }
  const double lo = x.minCoeff();
  const double hi = x.maxCoeff();
  const Eigen::ArrayXd u = hi > lo ? Eigen::ArrayXd(2.0 * (x.array() - lo) / (hi - lo) - 1.0) : Eigen::ArrayXd::Zero(n);

  Eigen::MatrixXd vander(n, terms);
  vander.col(0).setOnes();
  for (Eigen::Index k = 1; k < terms; ++k) vander.col(k) = (vander.col(k - 1).array() * u).matrix();

  std::vector<bool> keep(static_cast<std::size_t>(n), true);
  auto solve = [&]() -> Eigen::VectorXd {
    Eigen::Index m = 0;
    for (bool b : keep) m += b ? 1 : 0;
    Eigen::MatrixXd a(m, terms);
    Eigen::VectorXd rhs(m);
    for (Eigen::Index i = 0, j = 0; i < n; ++i) {
      if (!keep[static_cast<std::size_t>(i)]) continue;
      a.row(j) = vander.row(i);
      rhs(j++) = y(i);
    }
    return vander * a.colPivHouseholderQr().solve(rhs);
  };

  Eigen::VectorXd bg = solve();
  const double floor = 1e-12 * std::max(1.0, y.cwiseAbs().maxCoeff());
  for (int it = 0; it < opt.iterations; ++it) {
    const Eigen::VectorXd r = y - bg;
    std::vector<double> kept;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (keep[static_cast<std::size_t>(i)]) kept.push_back(r(i));
    }
    const double limit = opt.mad_k * robust_sigma(kept) + floor;
    std::vector<bool> next(static_cast<std::size_t>(n));
    Eigen::Index count = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      next[static_cast<std::size_t>(i)] = r(i) <= limit;
      count += r(i) <= limit ? 1 : 0;
    }
    if (count < terms + 1 || next == keep) break;
    keep = std::move(next);
    bg = solve();
  }
  return bg;
}

Trace subtract_background(const Trace& trace, const BackgroundOptions& opt) {
  Trace out = trace;
  for (const auto& seg : trace.segments) {
    const auto first = static_cast<Eigen::Index>(seg.first_sample);
    const auto count = static_cast<Eigen::Index>(seg.n_samples);
    if (first + count > trace.v.size()) throw ValidationError("background: annotation exceeds trace length");
    const Eigen::VectorXd x = trace.t.segment(first, count);
    const Eigen::VectorXd y = trace.v.segment(first, count);
    out.v.segment(first, count) = y - fit_background(x, y, opt);
  }
  return out;
}

PeakFit fit_lorentzian(const Eigen::VectorXd& v_dl, const Eigen::VectorXd& v_mw, double alpha,
                       const PeakFitOptions& opt) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ValidationError("fit_lorentzian: alpha must lie in (0, 1]");
  if (v_dl.size() != v_mw.size()) throw ValidationError("fit_lorentzian: axis and data differ in length");
  const Eigen::Index n = v_dl.size();
  if (n < 5) throw ValidationError("fit_lorentzian: need at least 5 samples");

  PeakFit fit;
  const double base = median(std::vector<double>(v_mw.data(), v_mw.data() + n));
  std::vector<double> diffs(static_cast<std::size_t>(n - 1));
  for (Eigen::Index i = 1; i < n; ++i) diffs[static_cast<std::size_t>(i - 1)] = v_mw(i) - v_mw(i - 1);
  const double noise = robust_sigma(diffs) / std::sqrt(2.0);
  const double grid = std::abs(v_dl(n - 1) - v_dl(0)) / static_cast<double>(n - 1);

  // Start values come from the moving average in which the peak stands
  // out most against the averaged noise: a kernel narrower than the line
  // gains signal-to-noise, a wider one loses it. On the raw samples a noise
  // spike or dip next to the maximum would misplace the start width. The fit
  // itself uses the raw samples.
  Eigen::VectorXd sm;
  Eigen::Index i0 = 0;
  double a0 = 0.0, hw0 = 0.0, x_peak = 0.0;
  double best = -std::numeric_limits<double>::infinity();
  for (Eigen::Index width = 1; width == 1 || width <= n / 4; width = 2 * width + 1) {
    Eigen::VectorXd cand = moving_average(v_mw, width);
    Eigen::Index ic = 0;
    const double height = cand.maxCoeff(&ic) - base;
    const double cand_noise = noise / std::sqrt(static_cast<double>(width));
    const double score = cand_noise > 0.0 ? height / cand_noise : height;
    if (width > 1 && !(score > best)) break;
    best = score;
    sm = std::move(cand);
    i0 = ic;
    a0 = height;
    if (noise == 0.0) break;
  }
  x_peak = v_dl(i0);
  {
    const double half = base + 0.5 * a0;
    auto crossing = [&](Eigen::Index step) {
      Eigen::Index i = i0;
      while (i + step >= 0 && i + step < n && sm(i + step) > half) i += step;
      if (i + step < 0 || i + step >= n) return std::abs(v_dl(i) - x_peak);
      const double y1 = sm(i);
      const double y2 = sm(i + step);
      const double w = (y1 - half) / (y1 - y2);
      return std::abs(v_dl(i) + w * (v_dl(i + step) - v_dl(i)) - x_peak);
    };
    hw0 = std::max(0.5 * (crossing(-1) + crossing(1)), 0.5 * grid);
  }
  if (!(a0 > 0.0)) {
    fit.message = "no peak above the median level";
    return fit;
  }

  // Keep well clear of any secondary peak so that the fit cannot blend two
  // lines. Secondaries are searched on a copy smoothed over one half-width,
  // which keeps real lines and suppresses single-sample noise spikes.
  const Eigen::Index w_sec = std::min(2 * static_cast<Eigen::Index>(0.5 * hw0 / grid) + 1, std::max<Eigen::Index>(1, n / 4));
  const Eigen::VectorXd sec = moving_average(v_mw, w_sec);
  const double sec_noise = noise / std::sqrt(static_cast<double>(w_sec));
  const double secondary = std::max(opt.secondary_fraction * a0, opt.secondary_sigmas * sec_noise);
  double reach = opt.window_halfwidths * hw0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = std::abs(v_dl(i) - x_peak);
    if (d > 3.0 * hw0 && d < reach && sec(i) - base > secondary) {
      const bool local_max = (i == 0 || sec(i) >= sec(i - 1)) && (i == n - 1 || sec(i) >= sec(i + 1));
      if (!local_max) continue;
      // Only a separate line counts: the trace must dip well below the
      // candidate on the way back to the main peak, or it is a bump on the flank.
      const Eigen::Index lo = std::min(i, i0), hi = std::max(i, i0);
      const double dip = sec.segment(lo, hi - lo + 1).minCoeff();
      if (sec(i) - dip >= std::max(0.1 * a0, 3.0 * sec_noise)) reach = std::min(reach, 0.5 * d);
    }
  }
  if (reach < 2.0 * hw0) {
    fit.message = "second peak too close to separate";
    return fit;
  }

  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(v_dl(i) - x_peak) <= reach) idx.push_back(i);
  }
  if (idx.size() < 5) {
    fit.message = "fewer than 5 samples inside the fit window";
    return fit;
  }
  const auto m = static_cast<Eigen::Index>(idx.size());
  Eigen::ArrayXd xs(m);
  Eigen::VectorXd ys(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    xs(k) = (v_dl(idx[static_cast<std::size_t>(k)]) - x_peak) / hw0;
    ys(k) = (v_mw(idx[static_cast<std::size_t>(k)]) - base) / a0;
  }

  auto residuals = [&](const Eigen::VectorXd& p) -> Eigen::VectorXd {
    return lorentzian(xs, p(0), p(1), std::abs(p(2)), p(3)).matrix() - ys;
  };
  Eigen::VectorXd p0(4);
  p0 << 1.0, 0.0, 2.0, 0.0;
  Eigen::VectorXd step(4);
  step << 0.1, 0.2, 0.3, 0.05;
  const auto simplex = optimize::nelder_mead([&](const Eigen::VectorXd& p) { return residuals(p).squaredNorm(); }, p0,
                                             step, {4000, 1e-10});
  const auto lm = optimize::levenberg_marquardt(residuals, simplex.x);

  const Eigen::VectorXd& p = lm.x;
  fit.amplitude = p(0) * a0;
  fit.center = x_peak + p(1) * hw0;
  fit.fwhm = std::abs(p(2)) * hw0;
  fit.offset = base + p(3) * a0;
  fit.gamma = gamma_from_fwhm(fit.fwhm, alpha);
  fit.residual_norm = std::sqrt(lm.cost) * a0;
  fit.r_squared = r_squared(ys, ys + residuals(p));
  if (m > 4) {
    const double s2 = lm.cost / static_cast<double>(m - 4);
    const Eigen::MatrixXd cov = s2 * lm.jtj.completeOrthogonalDecomposition().pseudoInverse();
    fit.amplitude_err = std::sqrt(std::max(cov(0, 0), 0.0)) * a0;
    fit.center_err = std::sqrt(std::max(cov(1, 1), 0.0)) * hw0;
    fit.fwhm_err = std::sqrt(std::max(cov(2, 2), 0.0)) * hw0;
    fit.offset_err = std::sqrt(std::max(cov(3, 3), 0.0)) * a0;
  }
  fit.converged = lm.converged;
  if (!lm.converged) fit.message = "iteration limit reached";
  if (!(fit.amplitude > 0.0) || !(fit.fwhm > 0.0)) {
    fit.converged = false;
    fit.message = "fit left the physical parameter range";
  } else if (std::abs(p(1)) > reach / hw0) {
    fit.converged = false;
    fit.message = "center left the fit window";
  } else if (fit.fwhm > 2.0 * reach) {
    fit.converged = false;
    fit.message = "width exceeds the fit window";
  } else if (fit.message.empty()) {
    // An unresolved shoulder leaves structured residuals under the core
    // that the wings, which carry only noise, do not show.
    const Eigen::VectorXd r = residuals(p);
    double core = 0.0, wing = 0.0;
    Eigen::Index n_core = 0, n_wing = 0;
    for (Eigen::Index k = 0; k < m; ++k) {
      if (std::abs(xs(k) - p(1)) <= std::abs(p(2))) {
        core += r(k) * r(k);
        ++n_core;
      } else {
        wing += r(k) * r(k);
        ++n_wing;
      }
    }
    if (n_core >= 3 && n_wing >= 3) {
      const double rms_core = std::sqrt(core / static_cast<double>(n_core));
      const double rms_wing = std::sqrt(wing / static_cast<double>(n_wing));
      if (rms_core > std::max(opt.blend_ratio * rms_wing, opt.blend_floor)) {
        fit.message = "structured residual under the peak: possibly two unresolved lines";
      }
    }
  }
  return fit;
}

Eigen::VectorXd off_peak_residuals(const Eigen::VectorXd& v_dl, const Eigen::VectorXd& v_mw, const PeakFit& fit,
                                   double exclusion_fwhm) {
  if (v_dl.size() != v_mw.size()) throw ValidationError("off_peak_residuals: axis and data differ in length");
  std::vector<double> out;
  for (Eigen::Index i = 0; i < v_dl.size(); ++i) {
    if (std::abs(v_dl(i) - fit.center) <= exclusion_fwhm * fit.fwhm) continue;
    const double model = fit.offset + fit.amplitude / (1.0 + std::pow(2.0 * (v_dl(i) - fit.center) / fit.fwhm, 2));
    out.push_back(v_mw(i) - model);
  }
  return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

SnrEstimate snr(const PeakFit& fit, const Eigen::VectorXd& noise_samples) {
  const Eigen::Index n = noise_samples.size();
  if (n < 30) throw ValidationError("snr: need at least 30 noise samples, got " + std::to_string(n));
  SnrEstimate est;
  est.sigma = std::sqrt((noise_samples.array() - noise_samples.mean()).square().sum() / static_cast<double>(n - 1));
  if (est.sigma == 0.0) {
    est.noiseless = true;
    est.value = std::numeric_limits<double>::infinity();
  } else {
    est.value = fit.amplitude / est.sigma;
  }
  return est;
}

double min_integration_time(double snr_value, double t_int) {
  if (!(snr_value > 0.0) || !(t_int > 0.0)) {
    throw ValidationError("min_integration_time: snr and t_int must be positive");
  }
  return t_int / (snr_value * snr_value);
}

RetentionFit fit_retention(const Eigen::VectorXd& t, const Eigen::VectorXd& v) {
  if (t.size() != v.size()) throw ValidationError("fit_retention: times and levels differ in length");
  const Eigen::Index n = t.size();
  if (n < 3) throw ValidationError("fit_retention: need at least 3 points");
  const double t0 = t.minCoeff();
  const double span = t.maxCoeff() - t0;
  if (!(span > 0.0)) throw ValidationError("fit_retention: points must span a time interval");

  // For a fixed tau, v = a + b' exp(-(t - t0) / tau) is linear in (a, b').
  auto linear = [&](double tau, Eigen::Vector2d& coef) {
    Eigen::MatrixXd basis(n, 2);
    basis.col(0).setOnes();
    basis.col(1) = (-(t.array() - t0) / tau).exp().matrix();
    coef = basis.colPivHouseholderQr().solve(v);
    return (basis * coef - v).squaredNorm();
  };
  auto sse = [&](double log_tau) {
    Eigen::Vector2d c;
    return linear(std::exp(log_tau), c);
  };

  const double lo = std::log(span / 1000.0);
  const double hi = std::log(span * 1000.0);
  constexpr int grid = 400;
  int best = 0;
  double best_val = std::numeric_limits<double>::infinity();
  double worst_val = 0.0;
  for (int i = 0; i < grid; ++i) {
    const double val = sse(lo + (hi - lo) * i / (grid - 1));
    if (val < best_val) {
      best_val = val;
      best = i;
    }
    worst_val = std::max(worst_val, val);
  }
  const double a = lo + (hi - lo) * std::max(best - 1, 0) / (grid - 1);
  const double b = lo + (hi - lo) * std::min(best + 1, grid - 1) / (grid - 1);
  const auto [log_tau, sse_min] = boost::math::tools::brent_find_minima(sse, a, b, 52);

  RetentionFit fit;
  fit.tau = std::exp(log_tau);
  Eigen::Vector2d coef;
  fit.residual_norm = std::sqrt(linear(fit.tau, coef));
  const double scale = v.cwiseAbs().maxCoeff();
  fit.v0 = coef(0);
  const double excess = coef(1) * std::exp(t0 / fit.tau);
  fit.ratio = fit.v0 != 0.0 ? excess / fit.v0 : std::numeric_limits<double>::infinity();
  fit.converged = true;
  if (std::abs(coef(1)) <= 1e-9 * std::max(scale, std::numeric_limits<double>::min()) ||
      worst_val - sse_min <= 1e-12 * v.squaredNorm()) {
    fit.converged = false;
    fit.message = "no decay in the data: tau is unidentifiable";
  } else if (best == 0 || best == grid - 1) {
    fit.converged = false;
    fit.message = "tau reached the edge of the search range";
  } else if (fit.v0 == 0.0) {
    fit.converged = false;
    fit.message = "zero asymptote: ratio undefined";
  }
  return fit;
}

ResonanceFit fit_resonance(const Eigen::VectorXd& f, const Eigen::VectorXd& s11_mag) {
  if (f.size() != s11_mag.size()) throw ValidationError("fit_resonance: frequency and magnitude differ in length");
  const Eigen::Index n = f.size();
  if (n < 10) throw ValidationError("fit_resonance: need at least 10 samples");
  const Eigen::VectorXd p = s11_mag.array().square().matrix();
  Eigen::Index i0 = 0;
  p.minCoeff(&i0);
  if (i0 < 2 || i0 > n - 3) throw ValidationError("fit_resonance: no dip found inside the sweep");
  const Eigen::Index edge = std::max<Eigen::Index>(1, n / 20);
  const double b0 = 0.5 * (p.head(edge).mean() + p.tail(edge).mean());
  const double d0 = b0 - p(i0);
  if (!(d0 > 1e-6 * b0)) throw ValidationError("fit_resonance: no dip found inside the sweep");

  const double half = b0 - 0.5 * d0;
  auto crossing = [&](Eigen::Index step) {
    Eigen::Index i = i0;
    while (i + step >= 0 && i + step < n && p(i + step) < half) i += step;
    if (i + step < 0 || i + step >= n) return std::abs(f(i) - f(i0));
    const double w = (half - p(i)) / (p(i + step) - p(i));
    return std::abs(f(i) + w * (f(i + step) - f(i)) - f(i0));
  };
  const double grid = std::abs(f(n - 1) - f(0)) / static_cast<double>(n - 1);
  const double df0 = std::max(crossing(-1) + crossing(1), grid);

  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(f(i) - f(i0)) <= 4.0 * df0) idx.push_back(i);
  }
  if (idx.size() < 10) {
    idx.resize(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  }
  const auto m = static_cast<Eigen::Index>(idx.size());
  Eigen::ArrayXd u(m);
  Eigen::VectorXd mag(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    u(k) = (f(idx[static_cast<std::size_t>(k)]) - f(i0)) / df0;
    mag(k) = s11_mag(idx[static_cast<std::size_t>(k)]);
  }
  auto power = [&](const Eigen::VectorXd& q) -> Eigen::ArrayXd {
    return q(0) + q(1) * u - q(2) / (1.0 + (2.0 * (u - q(3)) / q(4)).square());
  };
  auto residuals = [&](const Eigen::VectorXd& q) -> Eigen::VectorXd {
    return (power(q).max(0.0).sqrt()).matrix() - mag;
  };
  Eigen::VectorXd q0(5);
  q0 << b0, 0.0, d0, 0.0, 1.0;
  const auto lm = optimize::levenberg_marquardt(residuals, q0);
  const Eigen::VectorXd& q = lm.x;

  ResonanceFit fit;
  fit.f_res = f(i0) + q(3) * df0;
  fit.delta_f = std::abs(q(4)) * df0;
  fit.q = fit.f_res / fit.delta_f;
  fit.baseline = q(0) + q(1) * q(3);
  fit.delta_s11_db = 10.0 * std::log10(std::max(fit.baseline - q(2), 1e-10));
  fit.r_squared = r_squared(mag, mag + residuals(q));
  fit.converged = lm.converged && fit.f_res > 0.0 && fit.delta_f > 0.0;
  if (!fit.converged) fit.message = lm.converged ? "fit left the physical parameter range" : "iteration limit reached";
  return fit;
}

namespace {

struct Line {
  double slope = 0.0;
  double intercept = 0.0;
};

std::optional<Line> fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() < 2) return std::nullopt;
  Eigen::MatrixXd a(static_cast<Eigen::Index>(x.size()), 2);
  Eigen::VectorXd b(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    a(static_cast<Eigen::Index>(i), 0) = 1.0;
    a(static_cast<Eigen::Index>(i), 1) = x[i];
    b(static_cast<Eigen::Index>(i)) = y[i];
  }
  const Eigen::Vector2d c = a.colPivHouseholderQr().solve(b);
  return Line{c(1), c(0)};
}

// Apex height of one diamond from its blockade edge profile gap(v_dl). The
// flanks are fitted on their upper half, where the edge current is largest.
double apex_height(const std::vector<double>& x, const std::vector<double>& gap) {
  const auto top = static_cast<std::size_t>(std::max_element(gap.begin(), gap.end()) - gap.begin());
  const double g_max = gap[top];
  std::vector<double> lx, ly, rx, ry;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (gap[i] < 0.5 * g_max || gap[i] > 0.9 * g_max) continue;
    if (i < top) {
      lx.push_back(x[i]);
      ly.push_back(gap[i]);
    } else if (i > top) {
      rx.push_back(x[i]);
      ry.push_back(gap[i]);
    }
  }
  const auto left = fit_line(lx, ly);
  const auto right = fit_line(rx, ry);
  if (!left || !right || !(left->slope > 0.0) || !(right->slope < 0.0)) return g_max;
  const double xa = (right->intercept - left->intercept) / (left->slope - right->slope);
  return left->intercept + left->slope * xa;
}

}  // namespace

DiamondExtraction extract_charging_energy(const StabilityMap& map, const DiamondOptions& opt) {
  const Eigen::Index ns = map.v_s.size();
  const Eigen::Index ng = map.v_dl.size();
  if (map.values.rows() != ns || map.values.cols() != ng) throw ValidationError("diamonds: map dimensions do not match axes");
  if (ns < 3 || ng < 3) throw ValidationError("diamonds: map too small");

  // Noise from adjacent differences along the gate axis, which vanish inside
  // both blockade and conduction plateaus.
  std::vector<double> diffs;
  diffs.reserve(static_cast<std::size_t>(ns * (ng - 1)));
  for (Eigen::Index i = 0; i < ns; ++i) {
    for (Eigen::Index j = 0; j + 1 < ng; ++j) diffs.push_back(map.values(i, j + 1) - map.values(i, j));
  }
  double sigma = robust_sigma(diffs) / std::sqrt(2.0);
  const double peak = map.values.cwiseAbs().maxCoeff();
  if (!(peak > 0.0)) throw ValidationError("diamonds: map carries no signal");

  const Eigen::MatrixXd mag = map.values.cwiseAbs();
  // On a noisy map an edge is the first of `run` consecutive samples above
  // the threshold. Smoothing across the gate axis would blur the slanted
  // edges inward, so each column is treated on its own.
  const bool noisy = sigma > 0.01 * peak;
  const std::size_t run = noisy ? static_cast<std::size_t>(opt.noisy_run) : 1;
  const double threshold = std::max(opt.threshold_fraction * peak, (noisy ? opt.noisy_sigmas : 4.0) * sigma);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(ns));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return map.v_s(a) < map.v_s(b); });
  double step_s = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < order.size(); ++k) step_s = std::min(step_s, map.v_s(order[k]) - map.v_s(order[k - 1]));

  const double inf = std::numeric_limits<double>::infinity();
  // Smallest |V_S| at which column j conducts on the given side.
  auto edge = [&](Eigen::Index j, int sign) {
    double last_blocked = 0.0;
    std::vector<Eigen::Index> side;
    for (auto i : order) {
      if (sign * map.v_s(i) > 0.0) side.push_back(i);
    }
    if (sign < 0) std::reverse(side.begin(), side.end());
    for (std::size_t k = 0; k < side.size(); ++k) {
      const double a = std::abs(map.v_s(side[k]));
      std::size_t above = 0;
      while (above < run && k + above < side.size() && mag(side[k + above], j) > threshold) ++above;
      if (above == run) return 0.5 * (last_blocked + a);
      last_blocked = a;
    }
    return inf;
  };

  DiamondExtraction out;
  std::vector<double> heights;
  for (int sign : {+1, -1}) {
    std::vector<double> gap(static_cast<std::size_t>(ng));
    bool any_side = false;
    for (Eigen::Index j = 0; j < ng; ++j) {
      gap[static_cast<std::size_t>(j)] = edge(j, sign);
    }
    for (auto i : order) any_side = any_side || sign * map.v_s(i) > 0.0;
    if (!any_side) continue;

    // Tips are where the gap nearly closes. Noise hides the weak current at
    // low bias, so the band also scales with the typical diamond height.
    std::vector<double> finite;
    for (double g : gap) {
      if (std::isfinite(g)) finite.push_back(g);
    }
    if (finite.empty()) continue;
    const auto q90 = finite.begin() + static_cast<std::ptrdiff_t>(0.9 * static_cast<double>(finite.size() - 1));
    std::nth_element(finite.begin(), q90, finite.end());
    const double tip = std::max(2.0 * step_s, opt.tip_fraction * *q90);
    std::vector<std::pair<Eigen::Index, Eigen::Index>> tips;  // contiguous runs of near-zero gap
    for (Eigen::Index j = 0; j < ng; ++j) {
      if (gap[static_cast<std::size_t>(j)] > tip) continue;
      if (!tips.empty() && tips.back().second == j - 1) {
        tips.back().second = j;
      } else {
        tips.emplace_back(j, j);
      }
    }
    for (std::size_t k = 0; k + 1 < tips.size(); ++k) {
      const Eigen::Index from = tips[k].second + 1;
      const Eigen::Index to = tips[k + 1].first;
      if (to - from < 3) continue;
      std::vector<double> x, g;
      bool closed = true;
      for (Eigen::Index j = from; j < to; ++j) {
        if (!std::isfinite(gap[static_cast<std::size_t>(j)])) closed = false;
        x.push_back(map.v_dl(j));
        g.push_back(gap[static_cast<std::size_t>(j)]);
      }
      if (!closed) continue;
      heights.push_back(apex_height(x, g));
      if (sign > 0) {
        const auto top = std::max_element(g.begin(), g.end()) - g.begin();
        out.apex_v_dl.push_back(x[static_cast<std::size_t>(top)]);
        ++out.diamonds;
      }
    }
  }
  if (heights.empty()) throw ValidationError("diamonds: no closed diamond inside the map");
  out.delta_v_s = std::accumulate(heights.begin(), heights.end(), 0.0) / static_cast<double>(heights.size());
  out.e_c = constants::elementary_charge * out.delta_v_s;
  return out;
}

std::vector<Peak> find_peaks(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double min_height,
                             Eigen::Index min_separation) {
  if (x.size() != y.size()) throw ValidationError("find_peaks: axis and data differ in length");
  std::vector<Peak> candidates;
  const Eigen::Index n = y.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (y(i) <= min_height) continue;
    const bool left = i == 0 || y(i) >= y(i - 1);
    const bool right = i == n - 1 || y(i) > y(i + 1);
    if (left && right) candidates.push_back({i, x(i), y(i)});
  }
  std::sort(candidates.begin(), candidates.end(), [](const Peak& a, const Peak& b) { return a.height > b.height; });
  std::vector<Peak> kept;
  for (const auto& c : candidates) {
    const bool clear = std::none_of(kept.begin(), kept.end(), [&](const Peak& k) {
      return std::abs(k.index - c.index) < min_separation;
    });
    if (clear) kept.push_back(c);
  }
  return kept;
}

std::vector<double> pulse_centers(const Eigen::VectorXd& t, const Eigen::VectorXd& y, double threshold) {
  if (t.size() != y.size()) throw ValidationError("pulse_centers: axis and data differ in length");
  std::vector<double> centers;
  Eigen::Index start = -1;
  for (Eigen::Index i = 0; i <= y.size(); ++i) {
    const bool on = i < y.size() && y(i) > threshold;
    if (on && start < 0) start = i;
    if (!on && start >= 0) {
      centers.push_back(0.5 * (t(start) + t(i - 1)));
      start = -1;
    }
  }
  return centers;
}

RetentionPoints retention_points(const Eigen::VectorXd& t, const Eigen::VectorXd& i_s, double t_start,
                                 const std::vector<double>& conducting_peaks, std::size_t max_points) {
  if (t.size() != i_s.size()) throw ValidationError("retention_points: axis and data differ in length");
  Eigen::Index from = 0;
  while (from < t.size() && t(from) < t_start) ++from;
  const Eigen::Index n = t.size() - from;
  if (n < 3) throw ValidationError("retention_points: no samples after the hold starts");
  const Eigen::VectorXd tt = t.tail(n);
  const Eigen::VectorXd ii = i_s.tail(n).cwiseAbs();
  const double peak = ii.maxCoeff();
  if (!(peak > 0.0)) throw ValidationError("retention_points: no current pulses during the hold");
  const auto centers = pulse_centers(tt, ii, 0.05 * peak);

  std::vector<double> levels = conducting_peaks;
  std::sort(levels.begin(), levels.end(), std::greater<>());
  const std::size_t m = std::min({centers.size(), levels.size(), max_points});
  if (m < 3) throw ValidationError("retention_points: fewer than three pulses to pair");
  RetentionPoints out{Eigen::VectorXd(static_cast<Eigen::Index>(m)), Eigen::VectorXd(static_cast<Eigen::Index>(m))};
  for (std::size_t k = 0; k < m; ++k) {
    out.t(static_cast<Eigen::Index>(k)) = centers[k] - t_start;
    out.v(static_cast<Eigen::Index>(k)) = levels[k];
  }
  return out;
}

}  // namespace cryomux
