#pragma once

// Pi-network (shunt C_s, series L + r_loss, shunt C_p) resonators, their
// reflection coefficient, calibration against an on-state gate load, and
// homodyne demodulation of several carriers into V_mw sample streams.

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace cryomux {

using Complex = std::complex<double>;

struct ResonatorSpec {
  double c_s = 0.0;     ///< port-side shunt capacitance (F)
  double l = 0.0;       ///< series inductance (H)
  double c_p = 0.0;     ///< load-side shunt capacitance (F)
  double r_loss = 0.0;  ///< series loss lumped with the inductor (ohm)
  double z0 = 50.0;     ///< reference impedance (ohm)

  bool operator==(const ResonatorSpec&) const = default;
};

void validate(const ResonatorSpec& spec);

/// An open load. input_impedance() treats any non-finite load as open.
inline Complex open_load() { return {std::numeric_limits<double>::infinity(), 0.0}; }

/// Ladder reduction Z_in = Z_cs || (r + jwL + (Z_cp || z_load)).
template <class Scalar>
std::complex<Scalar> input_impedance(Scalar c_s, Scalar l, Scalar c_p, Scalar r_loss,
                                     std::complex<Scalar> z_load, Scalar f) {
  using C = std::complex<Scalar>;
  const Scalar w = Scalar(2) * Scalar(3.14159265358979323846) * f;
  C y_load(0, 0);
  if (z_load == C(0, 0)) {
    // Shorted load collapses the load-side node.
    const C z_mid = C(r_loss, w * l);
    return Scalar(1) / (C(0, w * c_s) + Scalar(1) / z_mid);
  }
  if (std::isfinite(std::abs(z_load))) y_load = Scalar(1) / z_load;
  const C z_node = Scalar(1) / (C(0, w * c_p) + y_load);
  const C z_mid = C(r_loss, w * l) + z_node;
  return Scalar(1) / (C(0, w * c_s) + Scalar(1) / z_mid);
}

Complex input_impedance(const ResonatorSpec& spec, Complex z_load, double f);

/// Gamma = (Z - z0) / (Z + z0). An infinite Z maps to +1.
Complex reflection_from_impedance(Complex z_in, double z0);

Complex reflection_coefficient(const ResonatorSpec& spec, Complex z_load, double f);

/// |S11| over a frequency grid for a fixed load.
Eigen::ArrayXd reflection_magnitude(const ResonatorSpec& spec, Complex z_load,
                                    const Eigen::ArrayXd& frequencies);

/// Loaded Q = f_res / delta_f, delta_f being the full width of the power dip
/// |S11|^2 at half depth between |S11(f_res)|^2 and unity. Throws
/// ConvergenceError when a half-depth crossing cannot be bracketed.
double loaded_q(const ResonatorSpec& spec, Complex z_load, double f_res);

/// Frequency of the |S11| minimum near `f_guess`, found by golden-section
/// search within +/- `span` of the guess.
double dip_frequency(const ResonatorSpec& spec, Complex z_load, double f_guess, double span);

struct CalibrationOptions {
  /// Fraction of the matched real part R_m that is lumped into r_loss.
  double loss_fraction = 0.5;
  double q_tolerance = 1e-4;  ///< relative
  int max_iterations = 200;
};

/// Solves (c_s, l, c_p, r_loss) for a perfect match Z_in(target_f) = z0 under
/// `z_load_on` with loaded Q equal to `target_q`. The match is closed-form for
/// a given intermediate resistance R_m; R_m itself is root-found on Q.
/// Throws ValidationError on bad targets and ConvergenceError when Q is not
/// reachable.
ResonatorSpec calibrate_resonator(double target_f, double target_q, Complex z_load_on,
                                  const CalibrationOptions& options = {}, double z0 = 50.0);

/// Resonator with c_p scaled by (1 + fraction).
ResonatorSpec with_cp_shift(const ResonatorSpec& spec, double fraction);

/// Fractional c_p shift that moves the |S11| minimum to `f_target`.
double solve_cp_shift(const ResonatorSpec& spec, Complex z_load, double f_current, double f_target);

struct Carrier {
  double frequency = 0.0;  ///< Hz
  double amplitude = 1.0;  ///< V
  std::size_t row = 0;

  bool operator==(const Carrier&) const = default;
};
using CarrierSet = std::vector<Carrier>;

void validate(const CarrierSet& carriers);

struct NoiseModel {
  double sigma_v = 0.0;  ///< per-sample white noise (V)
  std::uint64_t seed = 0;
  int n_avg = 1;         ///< each sample is the mean of n_avg noise draws
  /// Single-pole IF bandwidth of the demodulation front end (Hz). Zero makes
  /// the mixers ideal: no smoothing and no leakage between tones.
  double if_bandwidth = 1e6;

  bool operator==(const NoiseModel&) const = default;
};

void validate(const NoiseModel& noise);

/// Mixes two 64-bit words into a well-distributed seed (splitmix64 finaliser).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt);

/// Portable standard-normal stream over std::mt19937_64 (Box-Muller), so that
/// seeded runs reproduce across standard libraries.
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed) : engine_(seed) {}
  double next();

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Demodulates every carrier against its row's resonator and load series.
///
/// Per carrier k and sample n the complex baseband is a_k Gamma_k(t_n),
/// smoothed by the single-pole IF filter. Other tones j reach mixer k as beats
/// a_j Gamma_j(t_n) H(f_j - f_k) averaged over the sample interval dt_n, that
/// is exp(2 pi i df (t_n - dt_n / 2)) sinc(pi df dt_n) with df = f_j - f_k
/// and H(df) = 1 / (1 + i df / B). The magnitude is reported and white noise of
/// sigma_v / sqrt(n_avg) (as a mean of n_avg draws) is added.
///
/// `row_loads[r]` holds the load of row r at each time in `times`.
std::vector<Eigen::VectorXd> demodulate(const CarrierSet& carriers,
                                        const std::vector<ResonatorSpec>& resonators,
                                        const std::vector<Eigen::VectorXcd>& row_loads,
                                        const Eigen::VectorXd& times, const NoiseModel& noise);

}  // namespace cryomux
