#pragma once

// LMMSE stage under the Gaussian likelihood: dense reference solve, the
// SVD-diagonal fast path, and the EM noise-precision update with its inner
// fixed-point loop.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "emvamp/problem.hpp"

namespace emvamp {

inline constexpr double kTheta2Min = 1e-12;
inline constexpr double kTheta2Max = 1e18;

// Residual used inside the EM noise update: evaluated at the posterior mean
// xhat2 (default, the E-step expectation) or at the extrinsic input r2.
enum class ResidualMode { PosteriorMean, R2 };

// Denominator of the EM noise update: the measurement dimension M (default)
// or the signal dimension N. With M != N the choice scales the estimate by
// M/N; only the per-measurement form tracks the true precision on wide
// matrices.
enum class NoiseNormalization { PerMeasurement, PerSignalDim };

// Precomputation bound to one (matrix, y) pair: ytil = U^T y plus squared
// singular values. The matrix must outlive the workspace.
struct LmmseWorkspace {
  const SvdMatrix* matrix = nullptr;
  Eigen::VectorXd ytil;  // U^T y, length m
  double y_norm_sq = 0.0;
  Eigen::VectorXd s_sq;

  LmmseWorkspace() = default;
  LmmseWorkspace(const SvdMatrix& a, const Eigen::VectorXd& y)
      : matrix(&a),
        ytil(a.U.transpose() * y),
        y_norm_sq(y.squaredNorm()),
        s_sq(a.s.cwiseProduct(a.s)) {
    if (y.size() != a.m) throw std::invalid_argument("LmmseWorkspace: y has wrong length");
  }
};

struct LmmseOutput {
  Eigen::VectorXd xhat;       // posterior mean
  double eta = 0.0;           // N / Tr(Q^-1)
  double resid_energy = 0.0;  // E[||y - Ax||^2] under the belief
                              //   = ||y - A xhat||^2 + Tr(A Q^-1 A^T)
};

// Dense reference: Q = theta2 A^T A + gamma2 I, xhat = Q^-1 (theta2 A^T y + gamma2 r2).
inline LmmseOutput lmmse_direct(const Eigen::MatrixXd& a, const Eigen::VectorXd& y,
                                const Eigen::VectorXd& r2, double gamma2, double theta2) {
  const int n = static_cast<int>(a.cols());
  Eigen::MatrixXd q = theta2 * (a.transpose() * a);
  q.diagonal().array() += gamma2;

  Eigen::LDLT<Eigen::MatrixXd> ldlt(q);
  if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0) {
    const double min_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(q).eigenvalues().minCoeff();
    throw std::runtime_error("lmmse_direct: singular Q, min eigenvalue " + std::to_string(min_eig));
  }

  LmmseOutput out;
  out.xhat = ldlt.solve(theta2 * (a.transpose() * y) + gamma2 * r2);
  const Eigen::MatrixXd qinv = ldlt.solve(Eigen::MatrixXd::Identity(n, n));
  out.eta = n / qinv.trace();
  const double tr_aqa = (a * qinv).cwiseProduct(a).sum();
  out.resid_energy = (y - a * out.xhat).squaredNorm() + tr_aqa;
  return out;
}

namespace detail {

// Shared V-basis solve: coefficients of the posterior mean plus the scalar
// diagnostics that fall out of the diagonalized Q.
struct SvdSolve {
  Eigen::VectorXd coeffs;  // V^T xhat
  double tr_qinv = 0.0;
  double tr_aqa = 0.0;      // Tr(A Q^-1 A^T)
  double data_resid = 0.0;  // ||y - A xhat||^2
};

inline SvdSolve lmmse_svd_coeffs(const LmmseWorkspace& ws, const Eigen::VectorXd& r2,
                                 double gamma2, double theta2) {
  const SvdMatrix& a = *ws.matrix;
  const int n = a.n, r = a.rank(), m = a.m;
  if (gamma2 <= 0.0 && n > r)
    throw std::runtime_error("lmmse_svd: gamma2 <= 0 with a nontrivial nullspace makes Q singular");

  SvdSolve sol;
  const Eigen::VectorXd z = a.V.transpose() * r2;
  sol.coeffs.resize(n);
  for (int i = 0; i < r; ++i) {
    const double qi = theta2 * ws.s_sq(i) + gamma2;
    if (!(qi > 0.0)) throw std::runtime_error("lmmse_svd: nonpositive Q eigenvalue");
    const double di = 1.0 / qi;
    sol.coeffs(i) = di * (theta2 * a.s(i) * ws.ytil(i) + gamma2 * z(i));
    sol.tr_qinv += di;
    sol.tr_aqa += ws.s_sq(i) * di;
    const double e = ws.ytil(i) - a.s(i) * sol.coeffs(i);
    sol.data_resid += e * e;
  }
  for (int i = r; i < n; ++i) sol.coeffs(i) = z(i);  // nullspace coordinates keep r2
  if (n > r) sol.tr_qinv += (n - r) / gamma2;
  for (int i = r; i < m; ++i) sol.data_resid += ws.ytil(i) * ws.ytil(i);
  return sol;
}

}  // namespace detail

// SVD fast path; identical contract to lmmse_direct. In the V basis Q is
// diagonal with entries theta2 s_i^2 + gamma2 (s_i = 0 past the rank), so the
// solve, Tr(Q^-1) and the residual energy are all O(N^2) matvecs.
inline LmmseOutput lmmse_svd(const LmmseWorkspace& ws, const Eigen::VectorXd& r2, double gamma2,
                             double theta2) {
  const detail::SvdSolve sol = detail::lmmse_svd_coeffs(ws, r2, gamma2, theta2);
  LmmseOutput out;
  out.xhat = ws.matrix->V * sol.coeffs;
  out.eta = ws.matrix->n / sol.tr_qinv;
  out.resid_energy = sol.data_resid + sol.tr_aqa;
  return out;
}

struct Theta2Update {
  double theta2 = 0.0;
  bool clamped = false;
};

// One EM step for the noise precision:
//   theta2_new^-1 = (1/denom) [ ||y - A r||^2 + sum_i s_i^2 / (theta2_old s_i^2 + gamma2) ]
// with r = xhat2 (ResidualMode::PosteriorMean, the E-step form) or r = r2
// (the extrinsic input), and denom = M or N.
inline Theta2Update em_update_theta2(const LmmseWorkspace& ws, const Eigen::VectorXd& r2,
                                     double gamma2, double theta2_old,
                                     ResidualMode residual_mode = ResidualMode::PosteriorMean,
                                     NoiseNormalization norm = NoiseNormalization::PerMeasurement) {
  if (!(theta2_old > 0.0)) throw std::invalid_argument("em_update_theta2: theta2_old must be > 0");
  if (!(gamma2 > 0.0)) throw std::invalid_argument("em_update_theta2: gamma2 must be > 0");
  const SvdMatrix& a = *ws.matrix;
  const int n = a.n, r = a.rank(), m = a.m;

  Eigen::VectorXd point;
  if (residual_mode == ResidualMode::R2) {
    point = a.V.transpose() * r2;
  } else {
    point = detail::lmmse_svd_coeffs(ws, r2, gamma2, theta2_old).coeffs;
  }
  double resid = 0.0, trace = 0.0;
  for (int i = 0; i < r; ++i) {
    const double e = ws.ytil(i) - a.s(i) * point(i);
    resid += e * e;
    trace += ws.s_sq(i) / (theta2_old * ws.s_sq(i) + gamma2);
  }
  for (int i = r; i < m; ++i) resid += ws.ytil(i) * ws.ytil(i);

  const double denom = norm == NoiseNormalization::PerSignalDim ? n : m;
  const double inv_new = (resid + trace) / denom;
  Theta2Update out;
  if (inv_new <= 0.0) {
    out.theta2 = kTheta2Max;
    out.clamped = true;
    return out;
  }
  const double raw = 1.0 / inv_new;
  out.theta2 = std::clamp(raw, kTheta2Min, kTheta2Max);
  out.clamped = raw != out.theta2;
  return out;
}

struct Theta2Iteration {
  double theta2 = 0.0;
  int iterations = 0;
  bool converged = false;
  bool clamped = false;
  std::vector<double> trajectory;  // filled when requested
};

// Applies em_update_theta2 repeatedly, rebuilding Q with the latest estimate,
// until the relative change is <= tol or max_inner passes. If the loop runs
// out without converging, the iterate closest to stationarity seen so far is
// returned with converged = false.
inline Theta2Iteration iterate_theta2(const LmmseWorkspace& ws, const Eigen::VectorXd& r2,
                                      double gamma2, double theta2_init, double tol, int max_inner,
                                      ResidualMode residual_mode = ResidualMode::PosteriorMean,
                                      NoiseNormalization norm = NoiseNormalization::PerMeasurement,
                                      bool keep_trajectory = false) {
  if (!(tol > 0.0)) throw std::invalid_argument("iterate_theta2: tol must be > 0");
  if (max_inner < 1) throw std::invalid_argument("iterate_theta2: max_inner must be >= 1");

  Theta2Iteration out;
  double theta = theta2_init;
  double best_theta = theta2_init;
  double best_change = std::numeric_limits<double>::infinity();
  if (keep_trajectory) out.trajectory.push_back(theta);
  for (int k = 0; k < max_inner; ++k) {
    const Theta2Update step = em_update_theta2(ws, r2, gamma2, theta, residual_mode, norm);
    out.clamped = out.clamped || step.clamped;
    out.iterations = k + 1;
    const double change = std::abs(step.theta2 - theta) / step.theta2;
    if (keep_trajectory) out.trajectory.push_back(step.theta2);
    if (change < best_change) {
      best_change = change;
      best_theta = step.theta2;
    }
    theta = step.theta2;
    if (change <= tol) {
      out.converged = true;
      out.theta2 = theta;
      return out;
    }
  }
  out.theta2 = best_theta;
  return out;
}

}  // namespace emvamp
