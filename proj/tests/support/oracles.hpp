#pragma once

// Reference models written independently of the library code paths they
// check: a sequential-tunnelling rate equation for transport through the dot
// and a two-node admittance solve of the pi network.

#include <cmath>
#include <complex>
#include <vector>

#include <Eigen/Dense>

namespace cryomux::test {

/// Steady-state current (units of the tunnel rates) through a dot whose
/// charge states N = 0..K are linked by K transitions. Transition k
/// (N = k <-> k+1) has level mu[k] (eV, measured from the grounded drain);
/// the source Fermi level sits at -v_s. Occupations solve the master equation
/// W p = 0 with sum(p) = 1; the current is the net flow into the drain.
inline double master_equation_current(const std::vector<double>& mu, const std::vector<double>& gamma_s,
                                      const std::vector<double>& gamma_d, double v_s, double kt_ev) {
  const auto k_count = static_cast<Eigen::Index>(mu.size());
  const Eigen::Index n = k_count + 1;
  auto fermi = [&](double e) { return 1.0 / (1.0 + std::exp(e / kt_ev)); };
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  std::vector<double> in_d(mu.size()), out_d(mu.size());
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const auto i = static_cast<std::size_t>(k);
    const double fs = fermi(mu[i] + v_s);
    const double fd = fermi(mu[i]);
    in_d[i] = gamma_d[i] * fd;
    out_d[i] = gamma_d[i] * (1.0 - fd);
    const double up = gamma_s[i] * fs + in_d[i];            // k -> k+1
    const double down = gamma_s[i] * (1.0 - fs) + out_d[i];  // k+1 -> k
    w(k + 1, k) += up;
    w(k, k) -= up;
    w(k, k + 1) += down;
    w(k + 1, k + 1) -= down;
  }
  // Replace one balance equation by the normalisation.
  Eigen::MatrixXd a = w;
  a.row(0).setOnes();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  b(0) = 1.0;
  const Eigen::VectorXd p = a.fullPivLu().solve(b);
  double current = 0.0;
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const auto i = static_cast<std::size_t>(k);
    current += p(k + 1) * out_d[i] - p(k) * in_d[i];
  }
  return current;
}

/// Input impedance of shunt c_s / series (r + jwL) / shunt c_p || z_load by
/// nodal analysis: a unit current injected at the port node, the port voltage
/// read back. A non-finite z_load is an open circuit.
inline std::complex<double> nodal_input_impedance(double c_s, double l, double c_p, double r, std::complex<double> z_load,
                                                  double f) {
  using C = std::complex<double>;
  const double w = 2.0 * 3.14159265358979323846 * f;
  const C y_series = 1.0 / C(r, w * l);
  // A shorted load grounds the second node.
  if (z_load == C(0.0, 0.0)) return 1.0 / (C(0.0, w * c_s) + y_series);
  const C y_load = std::isfinite(std::abs(z_load)) ? 1.0 / z_load : C(0.0, 0.0);
  Eigen::Matrix2cd y;
  y << C(0.0, w * c_s) + y_series, -y_series,
       -y_series, y_series + C(0.0, w * c_p) + y_load;
  const Eigen::Vector2cd v = y.fullPivLu().solve(Eigen::Vector2cd(C(1.0, 0.0), C(0.0, 0.0)));
  return v(0);
}

}  // namespace cryomux::test
