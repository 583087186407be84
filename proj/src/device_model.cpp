#include "cryomux/device_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cryomux/constants.hpp"
#include "cryomux/errors.hpp"

namespace cryomux {

using constants::boltzmann;
using constants::elementary_charge;
using constants::pi;
using constants::planck;

double lifetime_capacitance_scale(double alpha, double gamma) {
  if (gamma <= 0.0) return 0.0;
  const double ea = elementary_charge * alpha;
  return ea * ea / (2.0 * planck * gamma);
}

void validate(const DeviceParams& dev) {
  if (!(dev.e_c > 0.0)) throw ValidationError("device: e_c must be positive");
  if (!(dev.g_max >= 0.0)) throw ValidationError("device: g_max must be non-negative");
  if (!(dev.temperature >= 0.0)) throw ValidationError("device: temperature must be non-negative");
  if (!(dev.rf_cutoff_ratio > 0.0)) throw ValidationError("device: rf_cutoff_ratio must be positive");
  if (dev.blockade_regime && !(dev.e_c > dev.blockade_margin * boltzmann * dev.temperature)) {
    throw ValidationError("device: charging energy does not dominate k_B T");
  }
  for (std::size_t k = 0; k < dev.transitions.size(); ++k) {
    const auto& t = dev.transitions[k];
    const std::string where = "transition " + std::to_string(k + 1);
    if (!std::isfinite(t.v_peak)) throw ValidationError(where + ": v_peak not finite");
    if (!(t.alpha > 0.0 && t.alpha <= 1.0)) throw ValidationError(where + ": alpha outside (0, 1]");
    if (!(t.gamma_s >= 0.0 && t.gamma_d >= 0.0)) throw ValidationError(where + ": negative tunnel rate");
    if (!(t.c_q_max >= 0.0)) throw ValidationError(where + ": negative c_q_max");
    if (k > 0 && !(t.v_peak > dev.transitions[k - 1].v_peak)) {
      throw ValidationError(where + ": transitions must be strictly ascending in v_peak");
    }
  }
}

double ladder_spacing(double e_c, double alpha) { return e_c / (elementary_charge * alpha); }

DeviceParams make_ladder_device(const LadderSpec& ladder, double e_c, double alpha_s) {
  DeviceParams dev;
  dev.e_c = e_c;
  dev.alpha_s = alpha_s;
  const double spacing = ladder_spacing(e_c, ladder.alpha);
  dev.transitions.reserve(ladder.count);
  for (std::size_t k = 0; k < ladder.count; ++k) {
    ChargeTransition t;
    t.v_peak = ladder.v_first + static_cast<double>(k) * spacing;
    t.alpha = ladder.alpha;
    t.gamma_s = ladder.gamma_s;
    t.gamma_d = k < ladder.source_only ? 0.0 : ladder.gamma_d;
    t.c_q_max = lifetime_capacitance_scale(t.alpha, t.gamma());
    dev.transitions.push_back(t);
  }
  validate(dev);
  return dev;
}

double coulomb_current(const DeviceParams& dev, double v_g_eff, double v_s) {
  const double lo = std::min(0.0, -v_s);
  const double hi = std::max(0.0, -v_s);
  double current = 0.0;
  for (const auto& t : dev.transitions) {
    if (!t.conducts()) continue;
    const double mu = -t.alpha * (v_g_eff - t.v_peak) - dev.alpha_s * v_s;
    if (mu < lo || mu > hi) continue;
    const double sum = t.gamma_s + t.gamma_d;
    const double transmission = 4.0 * t.gamma_s * t.gamma_d / (sum * sum);
    current += dev.g_max * transmission * v_s;
  }
  return current;
}

double dispersive_capacitance(const DeviceParams& dev, double v_g_eff, double f_probe, double v_s) {
  const double cutoff = f_probe / dev.rf_cutoff_ratio;
  double c = 0.0;
  for (const auto& t : dev.transitions) {
    const double gamma = t.gamma();
    if (gamma <= 0.0 || gamma < cutoff) continue;
    // Detuning (V) of the level from the Fermi level of the faster reservoir.
    const double level = -t.alpha * (v_g_eff - t.v_peak) - dev.alpha_s * v_s;
    const double detuning = t.gamma_s >= t.gamma_d ? level + v_s : level;
    const double hg = planck * gamma;
    const double ed = elementary_charge * detuning;
    c += t.c_q_max * hg * hg / (hg * hg + ed * ed);
  }
  return c;
}

void validate(const AccessTransistorParams& p) {
  if (!(p.r_on > 0.0 && p.r_off > p.r_on)) throw ValidationError("access: need r_off > r_on > 0");
  if (!(p.r_threshold > p.r_on && p.r_threshold < p.r_off)) {
    throw ValidationError("access: r_threshold must lie strictly between r_on and r_off");
  }
  if (!(p.subthreshold_swing > 0.0)) throw ValidationError("access: subthreshold_swing must be positive");
  if (!(p.v_forbidden_lo < p.v_forbidden_hi)) throw ValidationError("access: v_forbidden_lo must be below v_forbidden_hi");
  if (!(p.c_dep_max >= 0.0)) throw ValidationError("access: c_dep_max must be non-negative");
}

const char* to_string(AccessRegion region) {
  switch (region) {
    case AccessRegion::Off: return "off";
    case AccessRegion::Forbidden: return "forbidden";
    case AccessRegion::On: return "on";
  }
  return "?";
}

AccessRegion classify_region(const AccessTransistorParams& p, double v_overdrive) {
  if (v_overdrive < p.v_forbidden_lo) return AccessRegion::Off;
  if (v_overdrive > p.v_forbidden_hi) return AccessRegion::On;
  return AccessRegion::Forbidden;
}

double access_resistance(const AccessTransistorParams& p, double v_overdrive) {
  const double span = p.r_off - p.r_on;
  // Scale of the exponential channel so that the blend hits r_threshold at v_th.
  const double k = span / (span / (p.r_threshold - p.r_on) - 1.0);
  const double decades = (v_overdrive - p.v_th) / p.subthreshold_swing;
  // span / r_ch = (span / k) * 10^decades; clamp the exponent to keep it finite.
  const double ratio = (span / k) * std::pow(10.0, std::clamp(decades, -300.0, 300.0));
  return p.r_on + span / (1.0 + ratio);
}

double access_capacitance(const AccessTransistorParams& p, double v_overdrive) {
  if (v_overdrive <= p.v_forbidden_lo || v_overdrive >= p.v_forbidden_hi) return 0.0;
  const double centre = 0.5 * (p.v_forbidden_lo + p.v_forbidden_hi);
  const double width = p.v_forbidden_hi - p.v_forbidden_lo;
  const double c = std::cos(pi * (v_overdrive - centre) / width);
  return p.c_dep_max * c * c;
}

}  // namespace cryomux
