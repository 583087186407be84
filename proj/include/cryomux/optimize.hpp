#pragma once

// Small dense least-squares and simplex minimizers over Eigen vectors, used
// by the curve fits. Both take plain callables so the models stay free
// functions.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

namespace cryomux::optimize {

struct NelderMeadOptions {
  int max_iterations = 2000;
  double f_tolerance = 1e-12;  ///< relative spread of simplex values
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Downhill simplex with standard coefficients (1, 2, 0.5, 0.5). `step`
/// sets the initial simplex edge along each axis.
template <class Cost>
NelderMeadResult nelder_mead(Cost&& cost, const Eigen::VectorXd& x0, const Eigen::VectorXd& step,
                             const NelderMeadOptions& opt = {}) {
  const Eigen::Index n = x0.size();
  std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(n + 1), x0);
  std::vector<double> val(static_cast<std::size_t>(n + 1));
  for (Eigen::Index i = 0; i < n; ++i) pts[static_cast<std::size_t>(i + 1)](i) += step(i);
  for (std::size_t i = 0; i < pts.size(); ++i) val[i] = cost(pts[i]);

  std::vector<std::size_t> order(pts.size());
  NelderMeadResult res;
  for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return val[a] < val[b]; });
    const std::size_t best = order.front();
    const std::size_t worst = order.back();
    const std::size_t second = order[order.size() - 2];
    const double spread = std::abs(val[worst] - val[best]);
    if (spread <= opt.f_tolerance * (std::abs(val[best]) + std::abs(val[worst])) + 1e-300) {
      res.converged = true;
      break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i != worst) centroid += pts[i];
    }
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd xr = centroid + (centroid - pts[worst]);
    const double fr = cost(xr);
    if (fr < val[best]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = cost(xe);
      if (fe < fr) {
        pts[worst] = xe;
        val[worst] = fe;
      } else {
        pts[worst] = xr;
        val[worst] = fr;
      }
      continue;
    }
    if (fr < val[second]) {
      pts[worst] = xr;
      val[worst] = fr;
      continue;
    }
    const bool outside = fr < val[worst];
    const Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid))
                                       : Eigen::VectorXd(centroid + 0.5 * (pts[worst] - centroid));
    const double fc = cost(xc);
    if (fc < (outside ? fr : val[worst])) {
      pts[worst] = xc;
      val[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i == best) continue;
      pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
      val[i] = cost(pts[i]);
    }
  }
  const auto best = static_cast<std::size_t>(std::min_element(val.begin(), val.end()) - val.begin());
  res.x = pts[best];
  res.value = val[best];
  return res;
}

struct LevenbergMarquardtOptions {
  int max_iterations = 200;
  double x_tolerance = 1e-10;  ///< relative step size
  double f_tolerance = 1e-12;  ///< relative cost decrease
};

struct LevenbergMarquardtResult {
  Eigen::VectorXd x;
  double cost = 0.0;            ///< sum of squared residuals
  Eigen::MatrixXd jtj;          ///< J^T J at the solution
  int iterations = 0;
  bool converged = false;
};

/// Central-difference Jacobian of a residual function.
template <class Residuals>
Eigen::MatrixXd numeric_jacobian(Residuals&& f, const Eigen::VectorXd& x, const Eigen::VectorXd& r0) {
  Eigen::MatrixXd j(r0.size(), x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double h = 1e-6 * std::max(std::abs(x(k)), 1e-6);
    Eigen::VectorXd xp = x;
    Eigen::VectorXd xm = x;
    xp(k) += h;
    xm(k) -= h;
    j.col(k) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return j;
}

/// Levenberg-Marquardt with Marquardt diagonal scaling. `f(x)` returns the
/// residual vector.
template <class Residuals>
LevenbergMarquardtResult levenberg_marquardt(Residuals&& f, const Eigen::VectorXd& x0,
                                             const LevenbergMarquardtOptions& opt = {}) {
  LevenbergMarquardtResult res;
  Eigen::VectorXd x = x0;
  Eigen::VectorXd r = f(x);
  double cost = r.squaredNorm();
  double lambda = 1e-3;
  Eigen::MatrixXd j = numeric_jacobian(f, x, r);
  for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
    const Eigen::MatrixXd jtj = j.transpose() * j;
    const Eigen::VectorXd g = j.transpose() * r;
    bool improved = false;
    bool stalled = false;
    for (int tries = 0; tries < 30; ++tries) {
      Eigen::MatrixXd a = jtj;
      a.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-300);
      const Eigen::VectorXd dx = a.ldlt().solve(-g);
      if (!dx.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const Eigen::VectorXd xn = x + dx;
      const Eigen::VectorXd rn = f(xn);
      const double cn = rn.allFinite() ? rn.squaredNorm() : std::numeric_limits<double>::infinity();
      if (cn <= cost) {
        stalled = dx.norm() <= opt.x_tolerance * (x.norm() + opt.x_tolerance) ||
                  cost - cn <= opt.f_tolerance * cost;
        x = xn;
        r = rn;
        cost = cn;
        lambda = std::max(lambda * 0.3, 1e-12);
        improved = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!improved || stalled || cost == 0.0) {
      res.converged = true;
      break;
    }
    j = numeric_jacobian(f, x, r);
  }
  res.x = x;
  res.cost = cost;
  res.jtj = j.transpose() * j;
  return res;
}

}  // namespace cryomux::optimize
