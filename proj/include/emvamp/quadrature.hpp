#pragma once

// Thin adaptive-quadrature front end (Gauss-Kronrod 15 under the hood) with a
// hard tolerance check, plus the shared Gaussian log-density helper.

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace emvamp {

inline double log_normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

struct QuadResult {
  double value = 0.0;
  double error = 0.0;  // error estimate
  double l1 = 0.0;     // L1 norm of the integrand
};

template <class F>
QuadResult integrate_raw(F&& f, double a, double b, double rel_tol) {
  QuadResult q;
  q.value = boost::math::quadrature::gauss_kronrod<double, 15>::integrate(
      f, a, b, /*max_depth=*/15, rel_tol, &q.error, &q.l1);
  return q;
}

inline void check_quadrature(const QuadResult& q, double rel_tol, const char* what) {
  const double scale = std::max(q.l1, 1e-300);
  if (q.error > rel_tol * scale && q.error > 1e-300) {
    std::ostringstream msg;
    msg << "quadrature did not converge in " << what << ": achieved rel err "
        << (q.error / scale) << ", requested " << rel_tol;
    throw std::runtime_error(msg.str());
  }
}

// Integrates f over [a, b], throwing if the achieved relative error estimate
// (against the L1 norm) exceeds rel_tol. The adaptive rule is asked for two
// orders more than the contract so the verification has headroom.
template <class F>
double integrate(F&& f, double a, double b, double rel_tol, const char* what) {
  const QuadResult q = integrate_raw(f, a, b, 0.01 * rel_tol);
  check_quadrature(q, rel_tol, what);
  return q.value;
}

// Integrates over a partition. Breakpoints are sorted/deduplicated; useful when
// the integrand has several narrow features an adaptive rule could step over.
// The tolerance applies to the accumulated error against the accumulated L1
// norm, so segments where the integrand underflows do not poison the check.
template <class F>
double integrate_segments(F&& f, std::vector<double> knots, double rel_tol, const char* what) {
  std::sort(knots.begin(), knots.end());
  knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
  if (knots.size() < 2) throw std::invalid_argument("integrate_segments: need >= 2 knots");
  QuadResult total;
  for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
    const QuadResult q = integrate_raw(f, knots[i], knots[i + 1], 0.01 * rel_tol);
    total.value += q.value;
    total.error += q.error;
    total.l1 += q.l1;
  }
  check_quadrature(total, rel_tol, what);
  return total.value;
}

}  // namespace emvamp
