#include "cryomux/rf_chain.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <string>

#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>

#include "cryomux/constants.hpp"
#include "cryomux/errors.hpp"

namespace cryomux {

using constants::pi;

void validate(const ResonatorSpec& spec) {
  if (!(spec.c_s > 0.0 && spec.l > 0.0 && spec.c_p > 0.0 && spec.r_loss > 0.0)) {
    throw ValidationError("resonator: component values must be positive");
  }
  if (!(spec.z0 > 0.0)) throw ValidationError("resonator: z0 must be positive");
}

Complex input_impedance(const ResonatorSpec& spec, Complex z_load, double f) {
  return input_impedance<double>(spec.c_s, spec.l, spec.c_p, spec.r_loss, z_load, f);
}

Complex reflection_from_impedance(Complex z_in, double z0) {
  if (!std::isfinite(std::abs(z_in))) return {1.0, 0.0};
  return (z_in - z0) / (z_in + z0);
}

Complex reflection_coefficient(const ResonatorSpec& spec, Complex z_load, double f) {
  return reflection_from_impedance(input_impedance(spec, z_load, f), spec.z0);
}

Eigen::ArrayXd reflection_magnitude(const ResonatorSpec& spec, Complex z_load,
                                    const Eigen::ArrayXd& frequencies) {
  return frequencies.unaryExpr(
      [&](double f) { return std::abs(reflection_coefficient(spec, z_load, f)); });
}

namespace {

double power_reflection(const ResonatorSpec& spec, Complex z_load, double f) {
  return std::norm(reflection_coefficient(spec, z_load, f));
}

// First frequency moving away from f_res (direction +1/-1) where |S11|^2
// reaches `level`.
double half_depth_crossing(const ResonatorSpec& spec, Complex z_load, double f_res, double level,
                           int direction) {
  double inner = f_res;
  double step = 1e-5 * f_res;
  double outer = f_res + direction * step;
  while (power_reflection(spec, z_load, outer) < level) {
    inner = outer;
    step *= 2.0;
    outer = f_res + direction * step;
    if (step > 0.9 * f_res) {
      throw ConvergenceError("loaded_q: no half-depth crossing", level);
    }
  }
  auto g = [&](double f) { return power_reflection(spec, z_load, f) - level; };
  boost::math::tools::eps_tolerance<double> tol(50);
  std::uintmax_t iters = 200;
  const double a = std::min(inner, outer);
  const double b = std::max(inner, outer);
  const auto [lo, hi] = boost::math::tools::bisect(g, a, b, tol, iters);
  return 0.5 * (lo + hi);
}

}  // namespace

double loaded_q(const ResonatorSpec& spec, Complex z_load, double f_res) {
  const double p0 = power_reflection(spec, z_load, f_res);
  const double level = 0.5 * (1.0 + p0);
  const double f_hi = half_depth_crossing(spec, z_load, f_res, level, +1);
  const double f_lo = half_depth_crossing(spec, z_load, f_res, level, -1);
  return f_res / (f_hi - f_lo);
}

double dip_frequency(const ResonatorSpec& spec, Complex z_load, double f_guess, double span) {
  auto p = [&](double f) { return power_reflection(spec, z_load, f); };
  // Coarse scan first so the local search starts in the right basin.
  constexpr int coarse = 400;
  double best_f = f_guess;
  double best_p = p(f_guess);
  for (int i = 0; i <= coarse; ++i) {
    const double f = f_guess - span + 2.0 * span * i / coarse;
    const double v = p(f);
    if (v < best_p) {
      best_p = v;
      best_f = f;
    }
  }
  const double h = 2.0 * span / coarse;
  std::uintmax_t iters = 200;
  const auto r = boost::math::tools::brent_find_minima(p, best_f - h, best_f + h, 52, iters);
  return r.first;
}

namespace {

struct MatchResult {
  ResonatorSpec spec;
  bool ok = false;
};

// Closed-form pi match for a chosen intermediate resistance r_m.
MatchResult match_for(double w, Complex y_load, double r_m, double loss_fraction, double z0) {
  MatchResult out;
  const double r = loss_fraction * r_m;
  const double r_p = r_m - r;
  const double g = y_load.real();
  const double b = y_load.imag();
  const double b2 = g / r_p - g * g;
  if (!(b2 > 0.0) || !(r_m < z0)) return out;
  const double bp = std::sqrt(b2);
  const double c_p = (bp - b) / w;
  if (!(c_p > 0.0)) return out;
  const double im_zp = -bp / (g * g + b2);
  const double x_m = std::sqrt(r_m * (z0 - r_m));
  out.spec.c_p = c_p;
  out.spec.l = (x_m - im_zp) / w;
  out.spec.c_s = x_m / (w * r_m * z0);
  out.spec.r_loss = r;
  out.spec.z0 = z0;
  out.ok = out.spec.l > 0.0 && out.spec.c_s > 0.0 && r > 0.0;
  return out;
}

}  // namespace

ResonatorSpec calibrate_resonator(double target_f, double target_q, Complex z_load_on,
                                  const CalibrationOptions& options, double z0) {
  if (!(target_f > 0.0)) throw ValidationError("calibrate: target frequency must be positive");
  if (!(target_q > 1.0 && target_q < 100.0)) throw ValidationError("calibrate: target Q outside (1, 100)");
  if (!(options.loss_fraction > 0.0 && options.loss_fraction < 1.0)) {
    throw ValidationError("calibrate: loss_fraction outside (0, 1)");
  }
  if (!std::isfinite(std::abs(z_load_on)) || std::abs(z_load_on) == 0.0) {
    throw ValidationError("calibrate: on-state load must be finite and non-zero");
  }
  const Complex y_load = 1.0 / z_load_on;
  if (!(y_load.real() > 0.0)) throw ValidationError("calibrate: on-state load has no resistive part");

  const double w = 2.0 * pi * target_f;
  const double r_load = z_load_on.real();
  // r_p < R_L keeps c_p positive for capacitive loads; r_m < z0 for the port side.
  double upper = std::min(z0, (y_load.imag() > 0.0 ? r_load : 1.0 / y_load.real()) /
                                  (1.0 - options.loss_fraction));
  upper *= 1.0 - 1e-9;

  auto q_at = [&](double log_rm) {
    const auto m = match_for(w, y_load, std::exp(log_rm), options.loss_fraction, z0);
    if (!m.ok) return -1.0;
    try {
      return loaded_q(m.spec, z_load_on, target_f);
    } catch (const ConvergenceError&) {
      return -1.0;  // dip too broad to resolve half-depth points
    }
  };

  double hi = std::log(upper);
  while (q_at(hi) < 0.0) {
    hi -= 1e-2;
    if (hi < std::log(upper) - 3.0) throw ConvergenceError("calibrate: no valid match near upper bound", upper);
  }
  if (q_at(hi) > target_q) {
    throw ConvergenceError("calibrate: target Q below the lowest reachable Q", q_at(hi) - target_q);
  }
  double lo = hi;
  double q_lo = q_at(lo);
  for (int i = 0; q_lo < target_q; ++i) {
    if (i > 80) throw ConvergenceError("calibrate: target Q not reachable", q_lo - target_q);
    lo -= std::log(2.0);
    q_lo = q_at(lo);
    if (q_lo < 0.0) throw ConvergenceError("calibrate: match lost while raising Q", target_q);
  }

  auto g = [&](double x) { return std::log(q_at(x) / target_q); };
  boost::math::tools::eps_tolerance<double> tol(40);
  std::uintmax_t iters = static_cast<std::uintmax_t>(options.max_iterations);
  const auto [a, b] = boost::math::tools::toms748_solve(g, lo, hi, tol, iters);
  const double x = 0.5 * (a + b);
  const auto m = match_for(w, y_load, std::exp(x), options.loss_fraction, z0);
  const double q = m.ok ? loaded_q(m.spec, z_load_on, target_f) : -1.0;
  if (!m.ok || std::abs(q / target_q - 1.0) > options.q_tolerance) {
    throw ConvergenceError("calibrate: Q root-finding did not converge", q - target_q);
  }
  return m.spec;
}

ResonatorSpec with_cp_shift(const ResonatorSpec& spec, double fraction) {
  ResonatorSpec out = spec;
  out.c_p *= 1.0 + fraction;
  return out;
}

double solve_cp_shift(const ResonatorSpec& spec, Complex z_load, double f_current, double f_target) {
  if (f_target == f_current) return 0.0;
  const double span = 0.25 * f_current;
  auto g = [&](double x) {
    return dip_frequency(with_cp_shift(spec, x), z_load, f_target, span) - f_target;
  };
  // Larger c_p pulls the resonance down.
  double a = 0.0;
  double b = f_target < f_current ? 0.05 : -0.05;
  for (int i = 0; (g(a) > 0.0) == (g(b) > 0.0); ++i) {
    if (i > 20) throw ConvergenceError("cp shift: target frequency not bracketed", f_target - f_current);
    b *= 1.6;
    if (b <= -0.95) b = -0.95;
  }
  boost::math::tools::eps_tolerance<double> tol(40);
  std::uintmax_t iters = 100;
  const auto [lo, hi] = boost::math::tools::toms748_solve(g, std::min(a, b), std::max(a, b), tol, iters);
  return 0.5 * (lo + hi);
}

void validate(const CarrierSet& carriers) {
  for (std::size_t i = 0; i < carriers.size(); ++i) {
    if (!(carriers[i].frequency > 0.0)) throw ValidationError("carrier " + std::to_string(i + 1) + ": frequency must be positive");
    if (!(carriers[i].amplitude > 0.0)) throw ValidationError("carrier " + std::to_string(i + 1) + ": amplitude must be positive");
    for (std::size_t j = 0; j < i; ++j) {
      if (carriers[i].frequency == carriers[j].frequency) {
        throw ValidationError("carriers " + std::to_string(j + 1) + " and " + std::to_string(i + 1) + " share a frequency");
      }
    }
  }
}

void validate(const NoiseModel& noise) {
  if (!(noise.sigma_v >= 0.0)) throw ValidationError("noise: sigma_v must be non-negative");
  if (noise.n_avg < 1) throw ValidationError("noise: n_avg must be at least 1");
  if (!(noise.if_bandwidth >= 0.0)) throw ValidationError("noise: if_bandwidth must be non-negative");
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double GaussianStream::next() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // 53-bit uniforms in (0, 1].
  auto uniform = [this] { return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53; };
  const double u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::vector<Eigen::VectorXd> demodulate(const CarrierSet& carriers,
                                        const std::vector<ResonatorSpec>& resonators,
                                        const std::vector<Eigen::VectorXcd>& row_loads,
                                        const Eigen::VectorXd& times, const NoiseModel& noise) {
  validate(carriers);
  validate(noise);
  const Eigen::Index n = times.size();
  for (const auto& c : carriers) {
    if (c.row >= resonators.size() || c.row >= row_loads.size()) {
      throw ValidationError("demodulate: carrier targets unknown row " + std::to_string(c.row + 1));
    }
    if (row_loads[c.row].size() != n) throw ValidationError("demodulate: load series and time base differ in length");
  }

  const std::size_t k_count = carriers.size();
  std::vector<Eigen::VectorXcd> baseband(k_count, Eigen::VectorXcd(n));
  for (std::size_t k = 0; k < k_count; ++k) {
    const auto& c = carriers[k];
    const auto& spec = resonators[c.row];
    for (Eigen::Index i = 0; i < n; ++i) {
      baseband[k](i) = c.amplitude * reflection_coefficient(spec, row_loads[c.row](i), c.frequency);
    }
  }

  const double bw = noise.if_bandwidth;
  std::vector<Eigen::VectorXd> out(k_count, Eigen::VectorXd(n));
  for (std::size_t k = 0; k < k_count; ++k) {
    Eigen::VectorXcd iq = baseband[k];
    if (bw > 0.0) {
      for (Eigen::Index i = 1; i < n; ++i) {
        const double beta = 1.0 - std::exp(-2.0 * pi * bw * (times(i) - times(i - 1)));
        iq(i) = beta * baseband[k](i) + (1.0 - beta) * iq(i - 1);
      }
      for (std::size_t j = 0; j < k_count; ++j) {
        if (j == k) continue;
        const double df = carriers[j].frequency - carriers[k].frequency;
        const Complex h = 1.0 / Complex(1.0, df / bw);
        for (Eigen::Index i = 0; i < n; ++i) {
          // A sample is the mixer output averaged over its own interval, so
          // the beat enters at its mid-interval phase with a sinc weight.
          const double dt = n > 1 ? (i > 0 ? times(i) - times(i - 1) : times(1) - times(0)) : 0.0;
          const double arg = pi * df * dt;
          const double dwell = arg == 0.0 ? 1.0 : std::sin(arg) / arg;
          iq(i) += baseband[j](i) * h * dwell * std::polar(1.0, 2.0 * pi * df * (times(i) - 0.5 * dt));
        }
      }
    }
    GaussianStream gauss(derive_seed(noise.seed, derive_seed(carriers[k].row,
                                                             std::bit_cast<std::uint64_t>(carriers[k].frequency))));
    for (Eigen::Index i = 0; i < n; ++i) {
      double v = std::abs(iq(i));
      if (noise.sigma_v > 0.0) {
        double acc = 0.0;
        for (int a = 0; a < noise.n_avg; ++a) acc += gauss.next();
        v += noise.sigma_v * acc / noise.n_avg;
      }
      out[k](i) = v;
    }
  }
  return out;
}

}  // namespace cryomux
