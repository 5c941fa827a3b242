#pragma once

// Separable Bernoulli-Gaussian denoising stage: per-coordinate posterior
// moments under a Gaussian pseudo-measurement, the EM M-step for the prior
// parameters, and the quadrature-based expected log-prior used by the EM
// oracle and the diagnostics layer.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "emvamp/problem.hpp"
#include "emvamp/quadrature.hpp"

namespace emvamp {

inline constexpr double kBetaMin = 1e-6;  // EM clamp: beta in [kBetaMin, 1]
inline constexpr double kTauMin = 1e-12;  // EM clamp: tau >= kTauMin

// Gaussian pseudo-measurement r of x with precision gamma per coordinate.
struct PseudoMeasurement {
  Eigen::VectorXd r;
  double gamma = 0.0;

  void validate() const {
    if (!(gamma >= 0.0) || !std::isfinite(gamma))
      throw std::invalid_argument("PseudoMeasurement: gamma must be finite and >= 0");
  }
};

// Per-coordinate posterior of x under prior BG(beta, mu, tau) tilted by
// N(r; x, 1/gamma): a point mass at zero with weight 1-pi plus
// pi * N(m_act, v_act).
struct CoordinatePosterior {
  double pi = 0.0;     // active probability
  double m_act = 0.0;  // active conditional mean
  double v_act = 0.0;  // active conditional variance
  double mean = 0.0;   // pi * m_act
  double var = 0.0;    // pi*v_act + pi*(1-pi)*m_act^2
};

struct DenoiserOutput {
  Eigen::VectorXd xhat;  // posterior means
  double eta = 0.0;      // N / sum(var_n)
  Eigen::VectorXd pi;    // posterior active probabilities (diagnostic)
  bool degenerate = false;  // all posterior variances were zero
};

namespace detail {
inline double sigmoid(double t) {
  if (t >= 0.0) {
    const double e = std::exp(-t);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(t);
  return e / (1.0 + e);
}
}  // namespace detail

inline CoordinatePosterior bg_coordinate_posterior(double r, double gamma, const BgParams& p) {
  p.validate();
  if (std::isinf(gamma)) throw std::invalid_argument("bg_coordinate_posterior: gamma = inf");
  if (!(gamma >= 0.0)) throw std::invalid_argument("bg_coordinate_posterior: gamma must be >= 0");

  CoordinatePosterior out;
  if (gamma == 0.0) {
    out.pi = p.beta;
    out.m_act = p.mu;
    out.v_act = p.tau;
  } else {
    const double gt = gamma * p.tau;
    out.v_act = p.tau / (1.0 + gt);
    out.m_act = (gt * r + p.mu) / (1.0 + gt);
    if (p.beta == 1.0) {
      out.pi = 1.0;
    } else {
      // Log-domain likelihood ratio of "active" vs "zero".
      const double llr = std::log(p.beta) - std::log1p(-p.beta) +
                         log_normal_pdf(r, p.mu, p.tau + 1.0 / gamma) -
                         log_normal_pdf(r, 0.0, 1.0 / gamma);
      out.pi = detail::sigmoid(llr);
    }
  }
  out.mean = out.pi * out.m_act;
  out.var = out.pi * out.v_act + out.pi * (1.0 - out.pi) * out.m_act * out.m_act;
  return out;
}

inline DenoiserOutput denoise(const PseudoMeasurement& pm, const BgParams& params) {
  pm.validate();
  const int n = static_cast<int>(pm.r.size());
  DenoiserOutput out;
  out.xhat.resize(n);
  out.pi.resize(n);
  double var_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const CoordinatePosterior c = bg_coordinate_posterior(pm.r(i), pm.gamma, params);
    out.xhat(i) = c.mean;
    out.pi(i) = c.pi;
    var_sum += c.var;
  }
  if (var_sum > 0.0) {
    out.eta = n / var_sum;
  } else {
    out.eta = std::numeric_limits<double>::infinity();
    out.degenerate = true;
  }
  return out;
}

struct Theta1Options {
  bool freeze_beta = false;
  bool freeze_mu = false;
  bool freeze_tau = false;
};

// One EM M-step for the prior parameters. Responsibilities and active
// conditional moments are evaluated under params_old, then each unfrozen
// parameter is set to its argmax:
//   beta  <- mean(pi_n)
//   mu    <- sum(pi_n m_n) / sum(pi_n)
//   tau   <- sum(pi_n (v_n + (m_n - mu)^2)) / sum(pi_n)
// If sum(pi_n) == 0 the parameters are returned unchanged (*degenerate set).
inline BgParams em_update_theta1(const PseudoMeasurement& pm, const BgParams& params_old,
                                 const Theta1Options& opts = {}, bool* degenerate = nullptr) {
  pm.validate();
  params_old.validate();
  if (degenerate) *degenerate = false;
  const int n = static_cast<int>(pm.r.size());
  if (n < 1) throw std::invalid_argument("em_update_theta1: empty pseudo-measurement");

  Eigen::VectorXd pi(n), m(n), v(n);
  for (int i = 0; i < n; ++i) {
    const CoordinatePosterior c = bg_coordinate_posterior(pm.r(i), pm.gamma, params_old);
    pi(i) = c.pi;
    m(i) = c.m_act;
    v(i) = c.v_act;
  }
  const double pi_sum = pi.sum();
  if (pi_sum == 0.0) {
    if (degenerate) *degenerate = true;
    return params_old;
  }

  BgParams out = params_old;
  if (!opts.freeze_beta) out.beta = std::clamp(pi_sum / n, kBetaMin, 1.0);
  const double mu_new = pi.dot(m) / pi_sum;
  if (!opts.freeze_mu) out.mu = mu_new;
  if (!opts.freeze_tau) {
    const double mu_used = opts.freeze_mu ? params_old.mu : mu_new;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const double d = m(i) - mu_used;
      acc += pi(i) * (v(i) + d * d);
    }
    out.tau = std::max(acc / pi_sum, kTauMin);
  }
  return out;
}

// E[ln p(x | params_eval)] under the per-coordinate belief built from
// (pm, params_belief). The zero atom contributes exactly; the continuous part
// is integrated adaptively (the closed-form route lives in em_update_theta1,
// this one is the independent check). Returns -inf when the evaluated prior
// puts zero mass where the belief has mass.
inline double expected_log_prior(const PseudoMeasurement& pm, const BgParams& params_eval,
                                 const BgParams& params_belief, double rel_tol = 1e-9) {
  pm.validate();
  params_belief.validate();
  if (!(params_eval.beta >= 0.0 && params_eval.beta <= 1.0) || !(params_eval.tau > 0.0))
    throw std::invalid_argument("expected_log_prior: invalid evaluation parameters");

  const int n = static_cast<int>(pm.r.size());
  const double log_beta =
      params_eval.beta > 0.0 ? std::log(params_eval.beta) : -std::numeric_limits<double>::infinity();
  const double log_one_minus_beta =
      params_eval.beta < 1.0 ? std::log1p(-params_eval.beta) : -std::numeric_limits<double>::infinity();

  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const CoordinatePosterior c = bg_coordinate_posterior(pm.r(i), pm.gamma, params_belief);
    if (c.pi < 1.0) {
      if (params_eval.beta >= 1.0) return -std::numeric_limits<double>::infinity();
      total += (1.0 - c.pi) * log_one_minus_beta;
    }
    if (c.pi > 0.0) {
      if (params_eval.beta <= 0.0) return -std::numeric_limits<double>::infinity();
      const double sd = std::sqrt(c.v_act);
      const double lo = c.m_act - 14.0 * sd, hi = c.m_act + 14.0 * sd;
      const double integral = integrate(
          [&](double x) {
            return std::exp(log_normal_pdf(x, c.m_act, c.v_act)) *
                   (log_beta + log_normal_pdf(x, params_eval.mu, params_eval.tau));
          },
          lo, hi, rel_tol, "expected_log_prior");
      total += c.pi * integral;
    }
  }
  return total;
}

}  // namespace emvamp
