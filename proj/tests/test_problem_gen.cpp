#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "emvamp/problem.hpp"
#include "emvamp/rng.hpp"

using namespace emvamp;
using Catch::Approx;

namespace {
double max_abs_dev_from_identity(const Eigen::MatrixXd& q) {
  const Eigen::MatrixXd g = q.transpose() * q - Eigen::MatrixXd::Identity(q.cols(), q.cols());
  return g.cwiseAbs().maxCoeff();
}
}  // namespace

TEST_CASE("haar_orthogonal 1x1 is a sign") {
  int plus = 0, minus = 0;
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    const Eigen::MatrixXd q = haar_orthogonal(1, seed);
    REQUIRE(std::abs(std::abs(q(0, 0)) - 1.0) < 1e-15);
    (q(0, 0) > 0 ? plus : minus)++;
  }
  REQUIRE(plus > 0);
  REQUIRE(minus > 0);
}

TEST_CASE("haar_orthogonal is orthogonal to 1e-10") {
  for (int n : {2, 3, 17, 64, 129}) {
    const Eigen::MatrixXd q = haar_orthogonal(n, 1000 + n);
    REQUIRE(max_abs_dev_from_identity(q) <= 1e-10);
  }
}

TEST_CASE("haar_orthogonal rejects empty dimension") {
  REQUIRE_THROWS_AS(haar_orthogonal(0, 1), std::invalid_argument);
}

TEST_CASE("haar_orthogonal first-entry moments match the uniform-sphere law") {
  // For n=3 the (1,1) entry is uniform on [-1,1]: mean 0 (var 1/3) and
  // second moment 1/3 (var of the square 4/45). 3-sigma Monte-Carlo bands.
  const int draws = 10000;
  double sum = 0.0, sum_sq = 0.0;
  for (int t = 0; t < draws; ++t) {
    const double q11 = haar_orthogonal(3, derive_seed(42, t))(0, 0);
    sum += q11;
    sum_sq += q11 * q11;
  }
  const double mean = sum / draws;
  const double mean_sq = sum_sq / draws;
  REQUIRE(std::abs(mean) <= 3.0 * std::sqrt(1.0 / 3.0 / draws));
  REQUIRE(std::abs(mean_sq - 1.0 / 3.0) <= 3.0 * std::sqrt(4.0 / 45.0 / draws));
}

TEST_CASE("geometric_spectrum closed form") {
  SECTION("R=4, cond=8, frob_sq=4") {
    const Eigen::VectorXd s = geometric_spectrum(4, 8.0, 4.0);
    const double sum_ratio = 1.0 + 0.25 + 0.0625 + 0.015625;  // sum alpha^{2(i-1)}, alpha=1/2
    const double s1 = std::sqrt(4.0 / sum_ratio);
    REQUIRE(s(0) == Approx(s1).epsilon(1e-12));
    for (int i = 1; i < 4; ++i) REQUIRE(s(i) / s(i - 1) == Approx(0.5).epsilon(1e-12));
    REQUIRE(s.squaredNorm() == Approx(4.0).epsilon(1e-12));
    REQUIRE(s(0) / s(3) == Approx(8.0).epsilon(1e-12));
  }
  SECTION("flat spectrum") {
    const Eigen::VectorXd s = geometric_spectrum(5, 1.0, 5.0);
    for (int i = 0; i < 5; ++i) REQUIRE(s(i) == Approx(1.0).epsilon(1e-14));
  }
  SECTION("R=2, cond=100, frob_sq=2") {
    const Eigen::VectorXd s = geometric_spectrum(2, 100.0, 2.0);
    REQUIRE(s(0) == Approx(std::sqrt(2.0 / 1.0001)).epsilon(1e-12));
    REQUIRE(s(1) == Approx(s(0) / 100.0).epsilon(1e-12));
  }
  SECTION("invalid specs") {
    REQUIRE_THROWS_AS(geometric_spectrum(4, 0.5, 1.0), std::invalid_argument);
    REQUIRE_THROWS_AS(geometric_spectrum(1, 2.0, 1.0), std::invalid_argument);
    REQUIRE_THROWS_AS(geometric_spectrum(0, 1.0, 1.0), std::invalid_argument);
  }
}

TEST_CASE("build_matrix meets its invariants at paper-scale condition numbers") {
  MatrixSpec spec;
  spec.m = 96;
  spec.n = 192;
  spec.cond = 3162.0;
  spec.seed = 7;
  const SvdMatrix a = build_matrix(spec);
  REQUIRE(max_abs_dev_from_identity(a.U) <= 1e-10);
  REQUIRE(max_abs_dev_from_identity(a.V) <= 1e-10);
  REQUIRE(std::abs(a.frob_sq() - 192.0) / 192.0 <= 1e-8);
  REQUIRE(std::abs(a.cond() - 3162.0) / 3162.0 <= 1e-6);
  // spectrum nonincreasing and positive
  for (int i = 1; i < a.rank(); ++i) REQUIRE(a.s(i) <= a.s(i - 1));
  REQUIRE(a.s(a.rank() - 1) > 0.0);
  // sum s_i^2 equals the squared Frobenius norm of the assembled matrix
  REQUIRE(a.assemble().squaredNorm() == Approx(a.frob_sq()).epsilon(1e-10));
}

TEST_CASE("build_matrix 1x1") {
  MatrixSpec spec;
  spec.m = spec.n = 1;
  spec.cond = 1.0;
  spec.frob_sq_target = 1.0;
  spec.seed = 11;
  const SvdMatrix a = build_matrix(spec);
  REQUIRE(std::abs(std::abs(a.assemble()(0, 0)) - 1.0) < 1e-14);
}

TEST_CASE("build_matrix is deterministic, bit for bit") {
  MatrixSpec spec;
  spec.m = 24;
  spec.n = 36;
  spec.cond = 50.0;
  spec.seed = 123;
  const SvdMatrix a = build_matrix(spec);
  const SvdMatrix b = build_matrix(spec);
  REQUIRE(std::memcmp(a.U.data(), b.U.data(), sizeof(double) * a.U.size()) == 0);
  REQUIRE(std::memcmp(a.V.data(), b.V.data(), sizeof(double) * a.V.size()) == 0);
  REQUIRE(std::memcmp(a.s.data(), b.s.data(), sizeof(double) * a.s.size()) == 0);

  MatrixSpec other = spec;
  other.seed = 124;
  REQUIRE(build_matrix(other).U(0, 0) != a.U(0, 0));
}

TEST_CASE("draw_signal moments") {
  SECTION("pure Gaussian case") {
    const int n = 100000;
    const Eigen::VectorXd x = draw_signal({1.0, 0.0, 1.0}, n, 5);
    const double var = x.squaredNorm() / n;
    // var estimate of N(0,1): sd of the estimator approx sqrt(2/n)
    REQUIRE(std::abs(var - 1.0) <= 3.0 * std::sqrt(2.0 / n));
  }
  SECTION("sparsity rate") {
    const int n = 100000;
    const Eigen::VectorXd x = draw_signal({0.1, 0.0, 1.0}, n, 6);
    const double frac = static_cast<double>((x.array() != 0.0).count()) / n;
    REQUIRE(std::abs(frac - 0.1) <= 3.0 * std::sqrt(0.1 * 0.9 / n));
  }
  SECTION("second moment beta*tau for mu=0") {
    const int n = 100000;
    const double beta = 0.1, tau = 2.5;
    const Eigen::VectorXd x = draw_signal({beta, 0.0, tau}, n, 7);
    const double m2 = x.squaredNorm() / n;
    // Var(x^2) = E[x^4] - (beta tau)^2 = 3 beta tau^2 - beta^2 tau^2
    const double var_x2 = 3.0 * beta * tau * tau - beta * beta * tau * tau;
    REQUIRE(std::abs(m2 - beta * tau) <= 3.0 * std::sqrt(var_x2 / n));
  }
}

TEST_CASE("calibrate_noise closed form") {
  SECTION("snr 0 dB with unit signal energy per measurement") {
    // beta=1, mu=0, tau=1, frob_sq = m  ->  E||Ax||^2 = m  ->  theta2 = 1
    MatrixSpec spec;
    spec.m = 16;
    spec.n = 16;
    spec.cond = 1.0;
    spec.frob_sq_target = 16.0;
    spec.seed = 2;
    const SvdMatrix a = build_matrix(spec);
    REQUIRE(calibrate_noise(a, {1.0, 0.0, 1.0}, 0.0) == Approx(1.0).epsilon(1e-12));
  }
  SECTION("40 dB at m=512-like shape") {
    // theta2 = 1e4 * m / (beta tau frob_sq), checked on a small matrix.
    MatrixSpec spec;
    spec.m = 8;
    spec.n = 16;
    spec.cond = 1.0;
    spec.frob_sq_target = 16.0;
    spec.seed = 3;
    const SvdMatrix a = build_matrix(spec);
    const double theta2 = calibrate_noise(a, {0.1, 0.0, 1.0}, 40.0);
    REQUIRE(theta2 == Approx(1e4 * 8.0 / (0.1 * 16.0)).epsilon(1e-12));
  }
  SECTION("doubling tau doubles the signal energy, so theta2 halves") {
    MatrixSpec spec;
    spec.m = 8;
    spec.n = 12;
    spec.cond = 2.0;
    spec.seed = 4;
    const SvdMatrix a = build_matrix(spec);
    const double t1 = calibrate_noise(a, {0.2, 0.0, 1.0}, 25.0);
    const double t2 = calibrate_noise(a, {0.2, 0.0, 2.0}, 25.0);
    REQUIRE(t2 == Approx(0.5 * t1).epsilon(1e-12));
  }
  SECTION("zero-energy signal rejected") {
    MatrixSpec spec;
    spec.m = 4;
    spec.n = 4;
    spec.seed = 5;
    const SvdMatrix a = build_matrix(spec);
    BgParams p{1e-300, 0.0, 1e-300};
    REQUIRE_THROWS_AS(calibrate_noise(a, p, 10.0), std::invalid_argument);
  }
}

TEST_CASE("calibrate_noise realizes the target SNR on average") {
  MatrixSpec spec;
  spec.m = 64;
  spec.n = 128;
  spec.cond = 10.0;
  spec.seed = 8;
  const BgParams p{0.1, 0.0, 1.0};
  const SvdMatrix a = build_matrix(spec);
  const double theta2 = calibrate_noise(a, p, 40.0);

  // Monte-Carlo estimate of E||Ax||^2 / E||w||^2 over fresh (x, w) draws.
  Rng rng = make_rng(99);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double noise_sd = 1.0 / std::sqrt(theta2);
  double ax_acc = 0.0, w_acc = 0.0;
  const int trials = 4000;
  for (int t = 0; t < trials; ++t) {
    ax_acc += a.apply(draw_signal(p, spec.n, derive_seed(99, t))).squaredNorm();
    double wsq = 0.0;
    for (int i = 0; i < spec.m; ++i) {
      const double wi = noise_sd * normal(rng);
      wsq += wi * wi;
    }
    w_acc += wsq;
  }
  const double realized_db = 10.0 * std::log10(ax_acc / w_acc);
  REQUIRE(std::abs(realized_db - 40.0) <= 0.2);
}

TEST_CASE("synthesize") {
  MatrixSpec spec;
  spec.m = 32;
  spec.n = 64;
  spec.cond = 32.0;
  const BgParams p{0.1, 0.0, 1.0};

  SECTION("matches the requested shape and stores truth") {
    const ProblemInstance inst = synthesize(spec, p, 40.0, 1);
    REQUIRE(inst.matrix.m == 32);
    REQUIRE(inst.matrix.n == 64);
    REQUIRE(inst.x_true.size() == 64);
    REQUIRE(inst.y.size() == 32);
    REQUIRE(inst.theta1_true == p);
    REQUIRE(inst.theta2_true > 0.0);
    // y = A x + w exactly as computed
    const Eigen::VectorXd recon = inst.matrix.apply(inst.x_true) + inst.w;
    REQUIRE((inst.y - recon).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("very high SNR makes y ~ A x") {
    const ProblemInstance inst = synthesize(spec, p, 260.0, 2);
    const Eigen::VectorXd ax = inst.matrix.apply(inst.x_true);
    REQUIRE((inst.y - ax).cwiseAbs().maxCoeff() <= 1e-9);
  }
  SECTION("different seeds give different signals") {
    const ProblemInstance a = synthesize(spec, p, 40.0, 3);
    const ProblemInstance b = synthesize(spec, p, 40.0, 4);
    REQUIRE((a.x_true - b.x_true).cwiseAbs().maxCoeff() > 0.0);
  }
  SECTION("identical seeds give identical bytes") {
    const ProblemInstance a = synthesize(spec, p, 40.0, 5);
    const ProblemInstance b = synthesize(spec, p, 40.0, 5);
    REQUIRE(std::memcmp(a.y.data(), b.y.data(), sizeof(double) * a.y.size()) == 0);
    REQUIRE(std::memcmp(a.x_true.data(), b.x_true.data(), sizeof(double) * a.x_true.size()) == 0);
    REQUIRE(a.theta2_true == b.theta2_true);
  }
}

TEST_CASE("synthesize at full experiment scale") {
  MatrixSpec spec;
  spec.m = 512;
  spec.n = 1024;
  spec.cond = 1.0;
  const ProblemInstance inst = synthesize(spec, {0.1, 0.0, 1.0}, 40.0, 12);
  // theta2 = 10^4 * 512 / (0.1 * 1024) exactly
  REQUIRE(inst.theta2_true == Approx(50000.0).epsilon(1e-12));
  // one realization; ~102 active coordinates put the 1-sigma band near 0.6 dB
  REQUIRE(std::abs(inst.snr_db - 40.0) <= 2.0);
  REQUIRE(inst.matrix.frob_sq() == Approx(1024.0).epsilon(1e-10));
}

TEST_CASE("seed derivation is a stable contract") {
  // Golden values: these pin the documented trial-seed policy. If this test
  // breaks, sweep results are no longer reproducible across versions.
  REQUIRE(splitmix64(0) == 0xe220a8397b1dcdafULL);
  REQUIRE(splitmix64(42) == 0xbdd732262feb6e95ULL);
  const std::uint64_t a = derive_seed(1, 2);
  const std::uint64_t b = derive_seed(1, 3);
  REQUIRE(a != b);
  REQUIRE(a == derive_seed(1, 2));
}
