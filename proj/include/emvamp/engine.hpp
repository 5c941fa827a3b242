#pragma once

// Orchestrates the two half-iterations (denoising and LMMSE), the extrinsic
// message updates between them, the EM parameter toggles, stopping rules and
// per-iteration trace recording.

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "emvamp/denoiser.hpp"
#include "emvamp/lmmse.hpp"
#include "emvamp/problem.hpp"

namespace emvamp {

inline constexpr double kInitGamma1 = 1e-6;      // cold-start pseudo-precision
inline constexpr double kDivergenceNmse = 1e6;   // linear NMSE divergence cutoff

// Bits recorded in VampState::clamp_flags / RunRecord::clamp_flags.
inline constexpr unsigned kClampGamma2Low = 1u;
inline constexpr unsigned kClampGamma2High = 2u;
inline constexpr unsigned kClampGamma1Low = 4u;
inline constexpr unsigned kClampGamma1High = 8u;
inline constexpr unsigned kClampTheta2 = 16u;
inline constexpr unsigned kTheta1Degenerate = 32u;

struct EmTheta1Config {
  bool enabled = true;
  int inner_iters = 1;  // EM steps per half-iteration
  Theta1Options freeze;
};

struct EmTheta2Config {
  bool enabled = true;
  double tol = 1e-6;  // relative-change tolerance of the inner loop
  int max_inner = 100;
};

struct VampConfig {
  int max_iters = 50;
  double stop_tol = 1e-8;  // relative change of xhat1; 0 disables
  EmTheta1Config em_theta1;
  EmTheta2Config em_theta2;
  double gamma_min = 1e-11;
  double gamma_max = 1e11;
  double damping = 1.0;  // in (0,1]; 1 = off
  ResidualMode residual_mode = ResidualMode::PosteriorMean;
  NoiseNormalization noise_norm = NoiseNormalization::PerMeasurement;
  std::uint64_t seed = 0;      // provenance only; the run itself draws nothing
  bool record_energy = false;  // CLI wires an observer when set

  void validate() const {
    if (max_iters < 1) throw std::invalid_argument("VampConfig: max_iters must be >= 1");
    if (!(damping > 0.0 && damping <= 1.0))
      throw std::invalid_argument("VampConfig: damping must be in (0,1]");
    if (!(gamma_min > 0.0) || !(gamma_max > gamma_min))
      throw std::invalid_argument("VampConfig: need 0 < gamma_min < gamma_max");
    if (!(stop_tol >= 0.0)) throw std::invalid_argument("VampConfig: stop_tol must be >= 0");
    if (em_theta1.inner_iters < 1)
      throw std::invalid_argument("VampConfig: em_theta1.inner_iters must be >= 1");
    if (em_theta2.enabled && !(em_theta2.tol > 0.0))
      throw std::invalid_argument("VampConfig: em_theta2.tol must be > 0");
  }
};

struct VampState {
  Eigen::VectorXd r1, r2;
  double gamma1 = 0.0, gamma2 = 0.0;
  Eigen::VectorXd xhat1, xhat2;
  double eta1 = 0.0, eta2 = 0.0;
  BgParams theta1;
  double theta2 = 0.0;
  int k = 0;
  unsigned clamp_flags = 0;       // flags raised during the current iteration
  int theta2_inner_iters = 0;     // inner EM passes spent this iteration
};

struct RunRecord {
  int iter = 0;
  double nmse_db = 0.0;
  BgParams theta1;
  double theta2 = 0.0;
  double gamma1 = 0.0, gamma2 = 0.0;
  double eta1 = 0.0, eta2 = 0.0;
  double fp_eta_resid = 0.0;   // |eta1-eta2| / max(eta1, eta2)
  double fp_xhat_resid = 0.0;  // ||xhat1-xhat2|| / ||xhat1||
  unsigned clamp_flags = 0;
  int theta2_inner_iters = 0;
  double wall_ms = 0.0;
  double energy_j = std::numeric_limits<double>::quiet_NaN();
};

struct RunTrace {
  std::vector<RunRecord> records;
  bool diverged = false;
  bool stopped_by_tol = false;
};

struct RunResult {
  RunTrace trace;
  VampState state;
};

// Called after each full iteration, e.g. to fill RunRecord::energy_j.
using RunObserver = std::function<void(const VampState&, const LmmseWorkspace&, RunRecord&)>;

inline double nmse_linear(const Eigen::VectorXd& xhat, const Eigen::VectorXd& x_true) {
  const double denom = x_true.squaredNorm();
  if (denom == 0.0) return std::numeric_limits<double>::infinity();
  return (xhat - x_true).squaredNorm() / denom;
}

inline double nmse_db(const Eigen::VectorXd& xhat, const Eigen::VectorXd& x_true) {
  return 10.0 * std::log10(nmse_linear(xhat, x_true));
}

struct ExtrinsicUpdate {
  double gamma = 0.0;
  Eigen::VectorXd r;
  unsigned clamp = 0;  // 1 = low clamp fired, 2 = high clamp fired
};

// Lines "gamma_out = eta - gamma_in" and "r_out = (eta xhat - gamma_in r_in)/gamma_out",
// with gamma_out clamped into [gamma_min, gamma_max] before r_out is formed.
inline ExtrinsicUpdate extrinsic_update(double eta, const Eigen::VectorXd& xhat, double gamma_in,
                                        const Eigen::VectorXd& r_in, double gamma_min,
                                        double gamma_max) {
  ExtrinsicUpdate out;
  const double raw = eta - gamma_in;
  out.gamma = std::clamp(raw, gamma_min, gamma_max);
  if (raw < gamma_min) out.clamp = 1;
  if (raw > gamma_max) out.clamp = 2;
  out.r = (eta * xhat - gamma_in * r_in) / out.gamma;
  return out;
}

inline VampState init_state(const ProblemInstance& inst, const VampConfig& config) {
  config.validate();
  const int m = inst.matrix.m, n = inst.matrix.n;
  const double y_norm_sq = inst.y.squaredNorm();
  if (y_norm_sq == 0.0) throw std::invalid_argument("init_state: degenerate instance, ||y|| = 0");

  VampState st;
  st.r1 = Eigen::VectorXd::Zero(n);
  st.r2 = Eigen::VectorXd::Zero(n);
  st.xhat1 = Eigen::VectorXd::Zero(n);
  st.xhat2 = Eigen::VectorXd::Zero(n);
  st.gamma1 = kInitGamma1;
  st.gamma2 = 0.0;

  if (config.em_theta1.enabled) {
    st.theta1.beta = std::min((m / 2.0) / n, 1.0);
    st.theta1.mu = 0.0;
    st.theta1.tau = y_norm_sq / (inst.matrix.frob_sq() * st.theta1.beta);
  } else {
    st.theta1 = inst.theta1_true;
  }
  st.theta2 = config.em_theta2.enabled ? m / y_norm_sq : inst.theta2_true;
  return st;
}

// Input-denoising half: optional EM update of the prior parameters, posterior
// moments, then the extrinsic (r2, gamma2) message.
inline void half_step_denoise(VampState& st, const VampConfig& cfg) {
  if (cfg.em_theta1.enabled) {
    for (int i = 0; i < cfg.em_theta1.inner_iters; ++i) {
      bool degenerate = false;
      st.theta1 = em_update_theta1({st.r1, st.gamma1}, st.theta1, cfg.em_theta1.freeze, &degenerate);
      if (degenerate) st.clamp_flags |= kTheta1Degenerate;
    }
  }
  const DenoiserOutput d = denoise({st.r1, st.gamma1}, st.theta1);
  st.xhat1 = d.xhat;
  st.eta1 = d.eta;

  ExtrinsicUpdate ex = extrinsic_update(st.eta1, st.xhat1, st.gamma1, st.r1, cfg.gamma_min, cfg.gamma_max);
  if (ex.clamp & 1u) st.clamp_flags |= kClampGamma2Low;
  if (ex.clamp & 2u) st.clamp_flags |= kClampGamma2High;
  if (cfg.damping < 1.0 && st.gamma2 > 0.0) {
    st.gamma2 = cfg.damping * ex.gamma + (1.0 - cfg.damping) * st.gamma2;
    st.r2 = cfg.damping * ex.r + (1.0 - cfg.damping) * st.r2;
  } else {
    st.gamma2 = ex.gamma;
    st.r2 = std::move(ex.r);
  }
}

// LMMSE half: optional inner EM loop for the noise precision, the Gaussian
// belief moments, then the extrinsic (r1, gamma1) message.
inline void half_step_lmmse(VampState& st, const LmmseWorkspace& ws, const VampConfig& cfg) {
  if (cfg.em_theta2.enabled) {
    const Theta2Iteration it = iterate_theta2(ws, st.r2, st.gamma2, st.theta2, cfg.em_theta2.tol,
                                              cfg.em_theta2.max_inner, cfg.residual_mode,
                                              cfg.noise_norm);
    st.theta2 = it.theta2;
    st.theta2_inner_iters = it.iterations;
    if (it.clamped) st.clamp_flags |= kClampTheta2;
  }
  const LmmseOutput out = lmmse_svd(ws, st.r2, st.gamma2, st.theta2);
  st.xhat2 = out.xhat;
  st.eta2 = out.eta;

  ExtrinsicUpdate ex = extrinsic_update(st.eta2, st.xhat2, st.gamma2, st.r2, cfg.gamma_min, cfg.gamma_max);
  if (ex.clamp & 1u) st.clamp_flags |= kClampGamma1Low;
  if (ex.clamp & 2u) st.clamp_flags |= kClampGamma1High;
  if (cfg.damping < 1.0) {
    st.gamma1 = cfg.damping * ex.gamma + (1.0 - cfg.damping) * st.gamma1;
    st.r1 = cfg.damping * ex.r + (1.0 - cfg.damping) * st.r1;
  } else {
    st.gamma1 = ex.gamma;
    st.r1 = std::move(ex.r);
  }
}

inline RunResult run(const ProblemInstance& inst, const VampConfig& config,
                     const RunObserver& observer = {}) {
  config.validate();
  const LmmseWorkspace ws(inst.matrix, inst.y);
  RunResult res;
  res.state = init_state(inst, config);
  VampState& st = res.state;

  Eigen::VectorXd xhat_prev;
  for (int k = 0; k < config.max_iters; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    st.k = k;
    st.clamp_flags = 0;
    st.theta2_inner_iters = 0;
    const double gamma1_k = st.gamma1;

    half_step_denoise(st, config);
    if (!st.xhat1.allFinite() || !std::isfinite(st.eta1)) {
      res.trace.diverged = true;
      break;
    }
    half_step_lmmse(st, ws, config);
    if (!st.xhat2.allFinite() || !std::isfinite(st.eta2) || !st.r1.allFinite()) {
      res.trace.diverged = true;
      break;
    }

    RunRecord rec;
    rec.iter = k;
    const double nmse = nmse_linear(st.xhat1, inst.x_true);
    rec.nmse_db = 10.0 * std::log10(nmse);
    rec.theta1 = st.theta1;
    rec.theta2 = st.theta2;
    rec.gamma1 = gamma1_k;
    rec.gamma2 = st.gamma2;
    rec.eta1 = st.eta1;
    rec.eta2 = st.eta2;
    rec.fp_eta_resid = std::abs(st.eta1 - st.eta2) / std::max(st.eta1, st.eta2);
    const double x1n = st.xhat1.norm();
    rec.fp_xhat_resid = x1n > 0.0 ? (st.xhat1 - st.xhat2).norm() / x1n
                                  : (st.xhat1 - st.xhat2).norm();
    rec.clamp_flags = st.clamp_flags;
    rec.theta2_inner_iters = st.theta2_inner_iters;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (observer) observer(st, ws, rec);
    res.trace.records.push_back(std::move(rec));

    if (!std::isfinite(nmse) || nmse > kDivergenceNmse) {
      res.trace.diverged = true;
      break;
    }
    if (k >= 1 && config.stop_tol > 0.0) {
      const double change = (st.xhat1 - xhat_prev).norm();
      if (change < config.stop_tol * st.xhat1.norm()) {
        res.trace.stopped_by_tol = true;
        break;
      }
    }
    xhat_prev = st.xhat1;
  }
  return res;
}

}  // namespace emvamp
