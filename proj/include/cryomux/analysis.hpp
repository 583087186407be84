#pragma once

// Post-processing of simulated or recorded readout data: per-segment
// polynomial backgrounds, lifetime-broadened peak fits, SNR and minimum
// integration time, retention decay fits, resonance-dip fits and
// charging-energy extraction from Coulomb diamonds.

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cryomux/constants.hpp"
#include "cryomux/mux_controller.hpp"

namespace cryomux {

/// y = offset + amplitude / (1 + (2 (x - center) / fwhm)^2), evaluated
/// coefficient-wise.
template <class Derived>
Eigen::ArrayXd lorentzian(const Eigen::ArrayBase<Derived>& x, double amplitude, double center, double fwhm,
                          double offset = 0.0) {
  const auto u = 2.0 * (x.derived().template cast<double>() - center) / fwhm;
  return offset + amplitude / (1.0 + u.square());
}

/// Full width at half maximum (V on the gate axis) of a peak with tunnel rate
/// gamma (Hz) at lever arm alpha: 2 h gamma / (e alpha).
inline double fwhm_from_gamma(double gamma, double alpha) {
  return 2.0 * constants::planck * gamma / (constants::elementary_charge * alpha);
}

inline double gamma_from_fwhm(double fwhm, double alpha) {
  return constants::elementary_charge * alpha * fwhm / (2.0 * constants::planck);
}

struct BackgroundOptions {
  int degree = 5;
  double mad_k = 3.0;   ///< mask samples more than k robust sigmas above the fit
  int iterations = 3;
};

/// Least-squares polynomial in x (mapped to [-1, 1]) with iterative one-sided
/// masking of samples above the fit. Returns the background evaluated at x.
/// Throws ValidationError with fewer than degree + 2 samples.
Eigen::VectorXd fit_background(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const BackgroundOptions& opt = {});

/// Residual y - background, per segment of the trace. Samples outside any
/// segment are left untouched.
Trace subtract_background(const Trace& trace, const BackgroundOptions& opt = {});

struct PeakFit {
  double amplitude = 0.0;  ///< V
  double center = 0.0;     ///< V
  double gamma = 0.0;      ///< Hz
  double fwhm = 0.0;       ///< V
  double offset = 0.0;     ///< V
  double r_squared = 0.0;
  /// One-sigma standard errors of amplitude, center, fwhm and offset.
  double amplitude_err = 0.0;
  double center_err = 0.0;
  double fwhm_err = 0.0;
  double offset_err = 0.0;
  double residual_norm = 0.0;
  bool converged = false;
  std::string message;  ///< empty on success, otherwise why the fit is flagged
};

struct PeakFitOptions {
  /// The fit uses samples within this many initial half-widths of the argmax.
  double window_halfwidths = 12.0;
  /// A second peak above this fraction of the main one inside the window
  /// flags the fit rather than letting it blend.
  double secondary_fraction = 0.25;
  /// ... and this many noise standard deviations above the median level.
  double secondary_sigmas = 5.0;
  /// Core residual rms above blend_ratio times the wing rms, and above
  /// blend_floor of the amplitude, flags an unresolved blend.
  double blend_ratio = 4.0;
  double blend_floor = 0.01;
};

/// Lifetime-broadened peak plus constant offset, fitted to samples over the
/// data-line axis. Simplex search from moment estimates, then LM refinement.
PeakFit fit_lorentzian(const Eigen::VectorXd& v_dl, const Eigen::VectorXd& v_mw, double alpha,
                       const PeakFitOptions& opt = {});

/// Data minus the fitted peak, restricted to samples farther than
/// `exclusion_fwhm` widths from the center.
Eigen::VectorXd off_peak_residuals(const Eigen::VectorXd& v_dl, const Eigen::VectorXd& v_mw, const PeakFit& fit,
                                   double exclusion_fwhm = 5.0);

struct SnrEstimate {
  double value = 0.0;   ///< +inf when the noise samples have zero spread
  double sigma = 0.0;
  bool noiseless = false;
};

/// amplitude / sample standard deviation of `noise_samples`. Throws
/// ValidationError with fewer than 30 samples.
SnrEstimate snr(const PeakFit& fit, const Eigen::VectorXd& noise_samples);

/// t_int / snr^2: the averaging time at which SNR falls to one.
double min_integration_time(double snr, double t_int);

struct RetentionFit {
  double tau = 0.0;    ///< s
  double v0 = 0.0;     ///< V, asymptote
  double ratio = 0.0;  ///< initial excess over v0, relative to v0
  double residual_norm = 0.0;
  bool converged = false;
  std::string message;
};

/// Fits v(t) = v0 (1 + ratio exp(-t / tau)). The linear parameters are
/// eliminated for each tau and log(tau) is searched over
/// [span / 1000, span * 1000]. Needs at least three points.
RetentionFit fit_retention(const Eigen::VectorXd& t, const Eigen::VectorXd& v);

/// Pairs the current pulses seen while a stored gate voltage decays with the
/// transitions they cross: pulse times ascending against conducting v_peak
/// descending. Only the first `max_points` pulses after `t_start` are kept.
/// Throws ValidationError when fewer than three pulses are found.
struct RetentionPoints {
  Eigen::VectorXd t;  ///< s, measured from t_start
  Eigen::VectorXd v;  ///< V
};
RetentionPoints retention_points(const Eigen::VectorXd& t, const Eigen::VectorXd& i_s, double t_start,
                                 const std::vector<double>& conducting_peaks, std::size_t max_points = 4);

struct ResonanceFit {
  double f_res = 0.0;         ///< Hz
  double delta_f = 0.0;       ///< Hz, FWHM of the |S11|^2 dip
  double q = 0.0;             ///< f_res / delta_f
  double delta_s11_db = 0.0;  ///< 10 log10 |S11(f_res)|^2
  double baseline = 0.0;      ///< off-resonance |S11|^2
  double r_squared = 0.0;
  bool converged = false;
  std::string message;
};

/// Squared-Lorentzian dip |S11|^2 = b + s (f - f_res) - d / (1 + (2 (f - f_res) / delta_f)^2)
/// fitted to linear |S11| samples. Throws ValidationError when no interior dip
/// is present.
ResonanceFit fit_resonance(const Eigen::VectorXd& f, const Eigen::VectorXd& s11_mag);

struct DiamondOptions {
  /// Conduction threshold as a fraction of the largest |value|; raised to
  /// 4 noise sigmas on clean maps.
  double threshold_fraction = 1e-3;
  /// Columns whose blockade gap is below this fraction of the typical
  /// diamond height (or two bias steps) count as diamond tips.
  double tip_fraction = 0.5;
  /// Noisy maps (gate-axis noise above 1% of the peak): conduction needs
  /// `noisy_run` consecutive samples above `noisy_sigmas` noise sigmas.
  int noisy_run = 3;
  double noisy_sigmas = 3.0;
};

struct DiamondExtraction {
  double e_c = 0.0;           ///< J
  double delta_v_s = 0.0;     ///< V, apex height averaged over closed diamonds and both signs
  int diamonds = 0;
  std::vector<double> apex_v_dl;
};

/// Blockade edges are located column by column along V_S; straight lines
/// through each diamond's flanks meet at the apex. Throws ValidationError
/// unless at least one diamond is closed inside the map.
DiamondExtraction extract_charging_energy(const StabilityMap& map, const DiamondOptions& opt = {});

struct Peak {
  Eigen::Index index = 0;
  double x = 0.0;
  double height = 0.0;
};

/// Local maxima above `min_height`, at least `min_separation` samples apart,
/// strongest first.
std::vector<Peak> find_peaks(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double min_height,
                             Eigen::Index min_separation = 3);

/// Times at which a thresholded current trace is on, taken as the midpoints
/// of contiguous runs above `threshold`.
std::vector<double> pulse_centers(const Eigen::VectorXd& t, const Eigen::VectorXd& y, double threshold);

}  // namespace cryomux
