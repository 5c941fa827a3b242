#pragma once

// Numerical certification layer: belief moments, the two KL terms and Gaussian
// entropy making up the energy J, moment-matching residuals, dual identities
// and parameter stationarity at (or near) fixed points.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "emvamp/denoiser.hpp"
#include "emvamp/engine.hpp"
#include "emvamp/lmmse.hpp"
#include "emvamp/quadrature.hpp"

namespace emvamp {

struct BeliefStats {
  Eigen::VectorXd mean;
  double avg_var = 0.0;  // (1/N) Tr Cov
  std::string source;    // "b1", "b2" or "q"

  double second_moment() const {  // E||x||^2
    return mean.squaredNorm() + mean.size() * avg_var;
  }
};

struct BeliefTriple {
  BeliefStats b1, b2, q;
};

// Recomputes the three belief summaries at the state's current (r, gamma,
// theta) values. q is the Gaussian with mean (g1 r1 + g2 r2)/(g1+g2) and
// precision g1+g2.
inline BeliefTriple belief_stats(const VampState& st, const LmmseWorkspace& ws) {
  BeliefTriple t;
  const DenoiserOutput d = denoise({st.r1, st.gamma1}, st.theta1);
  t.b1 = {d.xhat, 1.0 / d.eta, "b1"};
  const LmmseOutput l = lmmse_svd(ws, st.r2, st.gamma2, st.theta2);
  t.b2 = {l.xhat, 1.0 / l.eta, "b2"};
  const double eta = st.gamma1 + st.gamma2;
  t.q = {(st.gamma1 * st.r1 + st.gamma2 * st.r2) / eta, 1.0 / eta, "q"};
  return t;
}

// KL divergence of the denoiser belief from the prior, summed over
// coordinates. The zero atom is handled exactly; the continuous part is
// integrated adaptively. +inf when the belief puts mass where the prior has
// none.
inline double kl_b1(const VampState& st, double rel_tol = 1e-9) {
  const BgParams& p = st.theta1;
  p.validate();
  const int n = static_cast<int>(st.r1.size());
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const CoordinatePosterior c = bg_coordinate_posterior(st.r1(i), st.gamma1, p);
    if (c.pi < 1.0) {
      if (p.beta >= 1.0) return std::numeric_limits<double>::infinity();
      total += (1.0 - c.pi) * (std::log1p(-c.pi) - std::log1p(-p.beta));
    }
    if (c.pi > 1e-300) {
      const double log_pi_over_beta = std::log(c.pi) - std::log(p.beta);
      const double sd = std::sqrt(c.v_act);
      total += c.pi * integrate(
                          [&](double x) {
                            return std::exp(log_normal_pdf(x, c.m_act, c.v_act)) *
                                   (log_pi_over_beta + log_normal_pdf(x, c.m_act, c.v_act) -
                                    log_normal_pdf(x, p.mu, p.tau));
                          },
                          c.m_act - 14.0 * sd, c.m_act + 14.0 * sd, rel_tol, "kl_b1");
    }
  }
  return total;
}

struct KlB2Parts {
  double expected_f2 = 0.0;  // E[f2 | b2] = (theta2/2) E||y - Ax||^2
  double log_z2 = 0.0;       // (N/2) ln(2 pi / theta2)
  double entropy = 0.0;      // H(b2)
  double d2 = 0.0;           // expected_f2 + log_z2 - entropy
};

// Closed-form KL of the Gaussian LMMSE belief from the (unnormalized)
// likelihood reference, via the singular values.
inline KlB2Parts kl_b2_parts(const VampState& st, const LmmseWorkspace& ws) {
  const SvdMatrix& a = *ws.matrix;
  const int n = a.n, r = a.rank();
  const LmmseOutput out = lmmse_svd(ws, st.r2, st.gamma2, st.theta2);

  KlB2Parts parts;
  parts.expected_f2 = 0.5 * st.theta2 * out.resid_energy;
  parts.log_z2 = 0.5 * n * std::log(2.0 * std::numbers::pi / st.theta2);
  double log_det_q = 0.0;
  for (int i = 0; i < r; ++i) log_det_q += std::log(st.theta2 * ws.s_sq(i) + st.gamma2);
  if (n > r) log_det_q += (n - r) * std::log(st.gamma2);
  parts.entropy = 0.5 * n * std::log(2.0 * std::numbers::pi * std::numbers::e) - 0.5 * log_det_q;
  parts.d2 = parts.expected_f2 + parts.log_z2 - parts.entropy;
  return parts;
}

inline double kl_b2(const VampState& st, const LmmseWorkspace& ws) {
  return kl_b2_parts(st, ws).d2;
}

inline double gaussian_entropy_q(int n, double eta) {
  return 0.5 * n * std::log(2.0 * std::numbers::pi * std::numbers::e / eta);
}

struct StationarityOptions {
  bool check_theta1 = true;
  bool check_theta2 = true;
  Theta1Options freeze;  // should mirror the run's EM config
  double theta2_tol = 1e-13;
  int theta2_max_inner = 500;
  ResidualMode residual_mode = ResidualMode::PosteriorMean;
  NoiseNormalization noise_norm = NoiseNormalization::PerMeasurement;
  bool compute_energy = true;  // the D1 quadrature is the expensive part
};

struct EnergyReport {
  double d1 = 0.0;
  double d2 = 0.0;
  double h_q = 0.0;
  double j = 0.0;
  Eigen::VectorXd beta1, beta2;  // dual parameters gamma_i * r_i

  double eta_gap = 0.0;        // |eta1 - eta2| / max(eta1, eta2)
  double eta_sum_gap = 0.0;    // |mean(eta) - (gamma1+gamma2)| / (gamma1+gamma2)
  double xhat_gap = 0.0;       // ||x1 - x2|| / ||x1||
  double dual_gap = 0.0;       // max_i ||x_i - (b1+b2)/eta|| / ||(b1+b2)/eta||
  double first_moment_gap = 0.0;
  double second_moment_gap = 0.0;
  double theta1_stationarity = std::numeric_limits<double>::quiet_NaN();
  double theta2_stationarity = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {
inline double rel_vec_gap(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-300});
  return (a - b).norm() / scale;
}
inline double rel_scalar_gap(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / scale;
}
}  // namespace detail

// Evaluates every fixed-point identity at the given state and reports the raw
// residuals; nothing is asserted here.
inline EnergyReport stationarity_report(const VampState& st, const LmmseWorkspace& ws,
                                        const StationarityOptions& opts = {}) {
  EnergyReport rep;
  const BeliefTriple beliefs = belief_stats(st, ws);
  const double eta1 = 1.0 / beliefs.b1.avg_var;
  const double eta2 = 1.0 / beliefs.b2.avg_var;
  const double eta_sum = st.gamma1 + st.gamma2;

  rep.beta1 = st.gamma1 * st.r1;
  rep.beta2 = st.gamma2 * st.r2;
  rep.eta_gap = std::abs(eta1 - eta2) / std::max(eta1, eta2);
  rep.eta_sum_gap = std::abs(0.5 * (eta1 + eta2) - eta_sum) / eta_sum;
  rep.xhat_gap = detail::rel_vec_gap(beliefs.b1.mean, beliefs.b2.mean);

  const Eigen::VectorXd xhat_dual = (rep.beta1 + rep.beta2) / eta_sum;
  rep.dual_gap = std::max(detail::rel_vec_gap(beliefs.b1.mean, xhat_dual),
                          detail::rel_vec_gap(beliefs.b2.mean, xhat_dual));

  rep.first_moment_gap = std::max({detail::rel_vec_gap(beliefs.b1.mean, beliefs.b2.mean),
                                   detail::rel_vec_gap(beliefs.b1.mean, beliefs.q.mean),
                                   detail::rel_vec_gap(beliefs.b2.mean, beliefs.q.mean)});
  rep.second_moment_gap =
      std::max({detail::rel_scalar_gap(beliefs.b1.second_moment(), beliefs.b2.second_moment()),
                detail::rel_scalar_gap(beliefs.b1.second_moment(), beliefs.q.second_moment()),
                detail::rel_scalar_gap(beliefs.b2.second_moment(), beliefs.q.second_moment())});

  if (opts.check_theta1) {
    const BgParams next = em_update_theta1({st.r1, st.gamma1}, st.theta1, opts.freeze);
    const double mu_scale = std::max(std::abs(st.theta1.mu), std::sqrt(st.theta1.tau));
    rep.theta1_stationarity =
        std::max({std::abs(next.beta - st.theta1.beta) / st.theta1.beta,
                  std::abs(next.mu - st.theta1.mu) / mu_scale,
                  std::abs(next.tau - st.theta1.tau) / st.theta1.tau});
  }
  if (opts.check_theta2) {
    const Theta2Iteration it =
        iterate_theta2(ws, st.r2, st.gamma2, st.theta2, opts.theta2_tol, opts.theta2_max_inner,
                       opts.residual_mode, opts.noise_norm);
    rep.theta2_stationarity = std::abs(it.theta2 - st.theta2) / st.theta2;
  }

  if (opts.compute_energy) {
    rep.d1 = kl_b1(st);
    rep.d2 = kl_b2(st, ws);
    rep.h_q = gaussian_entropy_q(static_cast<int>(st.r1.size()), eta_sum);
    rep.j = rep.d1 + rep.d2 + rep.h_q;
  }
  return rep;
}

// Observer computing the energy J per iteration (opt-in; the D1 quadrature is
// not free).
inline RunObserver make_energy_observer() {
  return [](const VampState& st, const LmmseWorkspace& ws, RunRecord& rec) {
    const double d1 = kl_b1(st);
    const double d2 = kl_b2(st, ws);
    const double hq = gaussian_entropy_q(static_cast<int>(st.r1.size()), st.gamma1 + st.gamma2);
    rec.energy_j = d1 + d2 + hq;
  };
}

}  // namespace emvamp
