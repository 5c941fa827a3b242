#pragma once

// Synthetic problem factory: Haar orthogonal factors, geometric singular-value
// spectra with a target condition number, Bernoulli-Gaussian signals and
// SNR-calibrated measurement noise.

#include <Eigen/Dense>
#include <Eigen/QR>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "emvamp/rng.hpp"

namespace emvamp {

// Bernoulli-Gaussian prior parameters: each coordinate is zero with
// probability 1-beta, otherwise Normal(mu, tau).
struct BgParams {
  double beta = 0.1;  // sparsity rate, in (0, 1]
  double mu = 0.0;    // active-component mean
  double tau = 1.0;   // active-component variance, > 0

  void validate() const {
    if (!(beta > 0.0 && beta <= 1.0))
      throw std::invalid_argument("BgParams: beta must be in (0,1], got " + std::to_string(beta));
    if (!(tau > 0.0) || !std::isfinite(tau))
      throw std::invalid_argument("BgParams: tau must be positive, got " + std::to_string(tau));
    if (!std::isfinite(mu)) throw std::invalid_argument("BgParams: mu must be finite");
  }

  // Second moment of a single coordinate, beta * (mu^2 + tau).
  double second_moment() const { return beta * (mu * mu + tau); }

  bool operator==(const BgParams&) const = default;
};

// Measurement matrix in factored form A = U diag(s) V^T. U, V are square
// orthogonal; s holds the R = min(m, n) singular values, nonincreasing.
struct SvdMatrix {
  Eigen::MatrixXd U;  // m x m
  Eigen::MatrixXd V;  // n x n
  Eigen::VectorXd s;  // length min(m, n), nonincreasing, all > 0
  int m = 0;
  int n = 0;

  int rank() const { return static_cast<int>(s.size()); }
  double frob_sq() const { return s.squaredNorm(); }
  double cond() const { return s(0) / s(rank() - 1); }

  // y = A x via the factors. All library code applies A this way, so
  // "y = A x + w exactly as computed" is reproducible from the instance.
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
    const int r = rank();
    Eigen::VectorXd t = s.cwiseProduct(V.leftCols(r).transpose() * x);
    return U.leftCols(r) * t;
  }

  Eigen::VectorXd apply_transpose(const Eigen::VectorXd& y) const {
    const int r = rank();
    Eigen::VectorXd t = s.cwiseProduct(U.leftCols(r).transpose() * y);
    return V.leftCols(r) * t;
  }

  // Dense assembly; reference/oracle paths only.
  Eigen::MatrixXd assemble() const {
    const int r = rank();
    return U.leftCols(r) * s.asDiagonal() * V.leftCols(r).transpose();
  }
};

struct MatrixSpec {
  int m = 0;
  int n = 0;
  double cond = 1.0;           // target condition number, >= 1
  double frob_sq_target = -1;  // target ||A||_F^2; <= 0 means "use n"
  std::uint64_t seed = 0;

  double frob_sq() const { return frob_sq_target > 0 ? frob_sq_target : static_cast<double>(n); }

  void validate() const {
    if (m < 1 || n < 1) throw std::invalid_argument("MatrixSpec: dimensions must be >= 1");
    if (!(cond >= 1.0)) throw std::invalid_argument("MatrixSpec: cond must be >= 1");
  }
};

struct ProblemInstance {
  SvdMatrix matrix;
  Eigen::VectorXd x_true;  // length n
  Eigen::VectorXd w;       // length m
  Eigen::VectorXd y;       // length m, y = A x_true + w
  BgParams theta1_true;
  double theta2_true = 0.0;  // noise precision
  double snr_db = 0.0;       // realized SNR of this draw
};

// Haar-distributed orthogonal matrix: QR of an i.i.d. standard-normal matrix
// with the columns of Q flipped so R has positive diagonal.
inline Eigen::MatrixXd haar_orthogonal(int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("haar_orthogonal: dimension must be >= 1");
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  for (int j = 0; j < n; ++j)
    if (qr.matrixQR()(j, j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

// Geometric singular-value series s_i = s_1 * alpha^(i-1) with
// alpha = cond^(-1/(R-1)), scaled so that sum s_i^2 = frob_sq.
inline Eigen::VectorXd geometric_spectrum(int rank, double cond, double frob_sq) {
  if (rank < 1) throw std::invalid_argument("geometric_spectrum: rank must be >= 1");
  if (!(cond >= 1.0)) throw std::invalid_argument("geometric_spectrum: cond must be >= 1");
  if (rank == 1 && cond != 1.0)
    throw std::invalid_argument("geometric_spectrum: rank 1 requires cond == 1");
  if (!(frob_sq > 0.0)) throw std::invalid_argument("geometric_spectrum: frob_sq must be > 0");

  Eigen::VectorXd s(rank);
  if (rank == 1) {
    s(0) = std::sqrt(frob_sq);
    return s;
  }
  const double alpha = std::pow(cond, -1.0 / (rank - 1));
  const double a2 = alpha * alpha;
  double sum = 0.0, p = 1.0;
  for (int i = 0; i < rank; ++i) {
    sum += p;
    p *= a2;
  }
  s(0) = std::sqrt(frob_sq / sum);
  for (int i = 1; i < rank; ++i) s(i) = s(i - 1) * alpha;
  return s;
}

inline SvdMatrix build_matrix(const MatrixSpec& spec) {
  spec.validate();
  SvdMatrix a;
  a.m = spec.m;
  a.n = spec.n;
  a.U = haar_orthogonal(spec.m, derive_seed(spec.seed, 0x55));
  a.V = haar_orthogonal(spec.n, derive_seed(spec.seed, 0x56));
  a.s = geometric_spectrum(std::min(spec.m, spec.n), spec.cond, spec.frob_sq());
  return a;
}

// i.i.d. Bernoulli-Gaussian draw: 0 w.p. 1-beta, else Normal(mu, tau).
inline Eigen::VectorXd draw_signal(const BgParams& params, int n, std::uint64_t seed) {
  params.validate();
  if (n < 1) throw std::invalid_argument("draw_signal: length must be >= 1");
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd = std::sqrt(params.tau);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i)
    if (unif(rng) < params.beta) x(i) = params.mu + sd * normal(rng);
  return x;
}

// Noise precision theta2 achieving the target SNR in expectation, with
// SNR := E||Ax||^2 / E||w||^2 and E||Ax||^2 = beta (mu^2 + tau) ||A||_F^2
// for i.i.d. coordinates. E||w||^2 = m / theta2.
inline double calibrate_noise(const SvdMatrix& matrix, const BgParams& params, double snr_db) {
  params.validate();
  if (!std::isfinite(snr_db)) throw std::invalid_argument("calibrate_noise: snr_db must be finite");
  const double signal_energy = params.second_moment() * matrix.frob_sq();
  if (!(signal_energy > 0.0))
    throw std::invalid_argument("calibrate_noise: zero-energy signal (beta*(mu^2+tau) == 0)");
  return std::pow(10.0, snr_db / 10.0) * static_cast<double>(matrix.m) / signal_energy;
}

inline ProblemInstance synthesize(const MatrixSpec& spec, const BgParams& params, double snr_db,
                                  std::uint64_t seed) {
  MatrixSpec mspec = spec;
  mspec.seed = derive_seed(seed, 1);
  ProblemInstance inst;
  inst.matrix = build_matrix(mspec);
  inst.x_true = draw_signal(params, spec.n, derive_seed(seed, 2));
  inst.theta1_true = params;
  inst.theta2_true = calibrate_noise(inst.matrix, params, snr_db);

  Rng rng = make_rng(derive_seed(seed, 3));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double noise_sd = 1.0 / std::sqrt(inst.theta2_true);
  inst.w.resize(spec.m);
  for (int i = 0; i < spec.m; ++i) inst.w(i) = noise_sd * normal(rng);

  const Eigen::VectorXd ax = inst.matrix.apply(inst.x_true);
  inst.y = ax + inst.w;
  const double wsq = inst.w.squaredNorm();
  inst.snr_db = wsq > 0.0 ? 10.0 * std::log10(ax.squaredNorm() / wsq)
                          : std::numeric_limits<double>::infinity();
  return inst;
}

}  // namespace emvamp
