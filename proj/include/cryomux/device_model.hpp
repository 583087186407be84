#pragma once

// Static physics of one quantum-dot transistor and its series access
// transistor. Everything here is a pure function of immutable parameters.

#include <cstddef>
#include <vector>

namespace cryomux {

/// One charge transition N <-> N+1 of the dot.
struct ChargeTransition {
  double v_peak = 0.0;   ///< effective gate voltage at source/gate Fermi alignment (V)
  double alpha = 0.8;    ///< gate lever arm
  double gamma_s = 0.0;  ///< source tunnel rate (Hz)
  double gamma_d = 0.0;  ///< drain tunnel rate (Hz)
  double c_q_max = 0.0;  ///< peak parametric capacitance (F)

  /// Rate that broadens the dispersive line: the faster reservoir.
  double gamma() const { return gamma_s > gamma_d ? gamma_s : gamma_d; }
  /// DC transport needs both reservoirs.
  bool conducts() const { return gamma_s > 0.0 && gamma_d > 0.0; }

  bool operator==(const ChargeTransition&) const = default;
};

/// Peak quantum capacitance of a lifetime-broadened transition, (e*alpha)^2 / (2 h gamma).
double lifetime_capacitance_scale(double alpha, double gamma);

struct DeviceParams {
  std::vector<ChargeTransition> transitions;  ///< strictly ascending in v_peak
  double e_c = 21.42e-3 * 1.602176634e-19;    ///< charging energy (J)
  double alpha_s = 0.5;                       ///< source lever arm (diamond slopes)
  double g_max = 1e-7;                        ///< peak conductance at alignment (S)
  double temperature = 0.05;                  ///< electron temperature (K)
  /// A transition is RF-visible when gamma >= f_probe / rf_cutoff_ratio.
  double rf_cutoff_ratio = 10.0;
  /// When set, validation requires e_c > blockade_margin * k_B * T.
  bool blockade_regime = true;
  double blockade_margin = 10.0;

  bool operator==(const DeviceParams&) const = default;
};

/// Throws ValidationError if an invariant of the device or one of its
/// transitions is violated.
void validate(const DeviceParams& dev);

/// Uniform ladder of `count` transitions starting at `v_first`, spaced by
/// e_c / (e * alpha) so that each closed diamond peaks at e_c.
/// `c_q_max` of each transition defaults to lifetime_capacitance_scale().
struct LadderSpec {
  double v_first = 0.40;
  std::size_t count = 6;
  double alpha = 0.8;
  double gamma_s = 48.3e9;
  double gamma_d = 20e9;
  /// Number of leading transitions coupled to the source only (gamma_d = 0).
  std::size_t source_only = 0;
};
DeviceParams make_ladder_device(const LadderSpec& ladder, double e_c, double alpha_s = 0.5);

/// Gate-voltage spacing between neighbouring ladder transitions.
double ladder_spacing(double e_c, double alpha);

/// Source-drain current (A) under the constant-interaction diamond model.
///
/// Transition k sits at electrochemical potential
/// mu_k / e = -alpha (v_g - v_peak) - alpha_s v_s, measured from the grounded
/// drain. A conducting transition carries g_max * T_k * v_s while mu_k lies
/// inside the bias window [min(0, -v_s), max(0, -v_s)], where
/// T_k = 4 gamma_s gamma_d / (gamma_s + gamma_d)^2. Outside every window the
/// dot is blockaded and the current is exactly zero.
double coulomb_current(const DeviceParams& dev, double v_g_eff, double v_s);

/// Parametric capacitance (F) seen at the gate, summed over RF-visible
/// transitions. Each contributes a lifetime-broadened Lorentzian in the
/// detuning of its level from the dominant reservoir's Fermi level; at
/// v_s = 0 the detuning is e*alpha*(v_g - v_peak).
double dispersive_capacitance(const DeviceParams& dev, double v_g_eff, double f_probe,
                              double v_s = 0.0);

struct AccessTransistorParams {
  double v_th = 0.277;         ///< overdrive where the channel equals r_threshold (V)
  double r_threshold = 1e12;   ///< resistance at v_th (ohm)
  double r_on = 100.0;         ///< fully-on channel resistance (ohm)
  double r_off = 1e18;         ///< deep-subthreshold ceiling (ohm)
  double subthreshold_swing = 0.06;  ///< V per decade
  double c_dep_max = 2e-15;    ///< peak depletion capacitance (F)
  double v_forbidden_lo = 0.786 - 0.340;
  double v_forbidden_hi = 1.278 - 0.340;

  bool operator==(const AccessTransistorParams&) const = default;
};

void validate(const AccessTransistorParams& p);

enum class AccessRegion { Off, Forbidden, On };

const char* to_string(AccessRegion region);

/// Classifies an overdrive V_WL - V_DL against the Forbidden band.
AccessRegion classify_region(const AccessTransistorParams& p, double v_overdrive);

/// Channel resistance versus overdrive. An exponential channel
/// r_ch = k * 10^(-(v - v_th) / swing) is blended between the r_on floor and
/// the r_off ceiling as r_on + (r_off - r_on) / (1 + (r_off - r_on) / r_ch);
/// k is chosen so the result equals r_threshold exactly at v_th.
double access_resistance(const AccessTransistorParams& p, double v_overdrive);

/// Depletion capacitance: a raised-cosine bump of height c_dep_max centred
/// in the Forbidden band and exactly zero outside it.
double access_capacitance(const AccessTransistorParams& p, double v_overdrive);

}  // namespace cryomux
