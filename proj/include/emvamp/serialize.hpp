#pragma once

// JSON bindings for the domain types and engine config, the run-trace CSV
// writer, and small file/hash helpers shared by the CLI and the bench layer.

#include <Eigen/Dense>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emvamp/diagnostics.hpp"
#include "emvamp/engine.hpp"
#include "emvamp/problem.hpp"

namespace emvamp {

using json = nlohmann::json;

inline std::vector<double> to_std(const Eigen::VectorXd& v) {
  return {v.data(), v.data() + v.size()};
}
inline Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline void to_json(json& j, const BgParams& p) {
  j = json{{"beta", p.beta}, {"mu", p.mu}, {"tau", p.tau}};
}
inline void from_json(const json& j, BgParams& p) {
  p.beta = j.value("beta", 0.1);
  p.mu = j.value("mu", 0.0);
  p.tau = j.value("tau", 1.0);
}

inline void to_json(json& j, const MatrixSpec& s) {
  j = json{{"m", s.m}, {"n", s.n}, {"cond", s.cond},
           {"frob_sq_target", s.frob_sq_target}, {"seed", s.seed}};
}
inline void from_json(const json& j, MatrixSpec& s) {
  s.m = j.at("m").get<int>();
  s.n = j.at("n").get<int>();
  s.cond = j.value("cond", 1.0);
  s.frob_sq_target = j.value("frob_sq_target", -1.0);
  s.seed = j.value("seed", std::uint64_t{0});
}

// Matrices are stored as flat column-major decimal arrays.
inline void to_json(json& j, const SvdMatrix& a) {
  j = json{{"m", a.m},
           {"n", a.n},
           {"s", to_std(a.s)},
           {"u", std::vector<double>(a.U.data(), a.U.data() + a.U.size())},
           {"v", std::vector<double>(a.V.data(), a.V.data() + a.V.size())}};
}
inline void from_json(const json& j, SvdMatrix& a) {
  a.m = j.at("m").get<int>();
  a.n = j.at("n").get<int>();
  a.s = to_eigen(j.at("s").get<std::vector<double>>());
  const auto u = j.at("u").get<std::vector<double>>();
  const auto v = j.at("v").get<std::vector<double>>();
  if (static_cast<int>(u.size()) != a.m * a.m || static_cast<int>(v.size()) != a.n * a.n)
    throw std::invalid_argument("SvdMatrix: factor array size mismatch");
  a.U = Eigen::Map<const Eigen::MatrixXd>(u.data(), a.m, a.m);
  a.V = Eigen::Map<const Eigen::MatrixXd>(v.data(), a.n, a.n);
}

inline void to_json(json& j, const ProblemInstance& p) {
  j = json{{"matrix", p.matrix},         {"x_true", to_std(p.x_true)},
           {"w", to_std(p.w)},           {"y", to_std(p.y)},
           {"theta1_true", p.theta1_true}, {"theta2_true", p.theta2_true},
           {"snr_db", p.snr_db}};
}
inline void from_json(const json& j, ProblemInstance& p) {
  p.matrix = j.at("matrix").get<SvdMatrix>();
  p.x_true = to_eigen(j.at("x_true").get<std::vector<double>>());
  p.w = to_eigen(j.at("w").get<std::vector<double>>());
  p.y = to_eigen(j.at("y").get<std::vector<double>>());
  p.theta1_true = j.at("theta1_true").get<BgParams>();
  p.theta2_true = j.at("theta2_true").get<double>();
  p.snr_db = j.value("snr_db", 0.0);
}

inline std::string to_string(ResidualMode m) {
  return m == ResidualMode::R2 ? "r2" : "posterior_mean";
}
inline ResidualMode residual_mode_from_string(const std::string& s) {
  if (s == "r2") return ResidualMode::R2;
  if (s == "posterior_mean") return ResidualMode::PosteriorMean;
  throw std::invalid_argument("unknown residual_mode: " + s);
}
inline std::string to_string(NoiseNormalization m) {
  return m == NoiseNormalization::PerSignalDim ? "N" : "M";
}
inline NoiseNormalization noise_norm_from_string(const std::string& s) {
  if (s == "N") return NoiseNormalization::PerSignalDim;
  if (s == "M") return NoiseNormalization::PerMeasurement;
  throw std::invalid_argument("unknown noise_normalization: " + s);
}

inline void to_json(json& j, const VampConfig& c) {
  j = json{{"max_iters", c.max_iters},
           {"stop_tol", c.stop_tol},
           {"em_theta1",
            {{"enabled", c.em_theta1.enabled},
             {"inner_iters", c.em_theta1.inner_iters},
             {"freeze_beta", c.em_theta1.freeze.freeze_beta},
             {"freeze_mu", c.em_theta1.freeze.freeze_mu},
             {"freeze_tau", c.em_theta1.freeze.freeze_tau}}},
           {"em_theta2",
            {{"enabled", c.em_theta2.enabled},
             {"tol", c.em_theta2.tol},
             {"max_inner", c.em_theta2.max_inner}}},
           {"gamma_min", c.gamma_min},
           {"gamma_max", c.gamma_max},
           {"damping", c.damping},
           {"residual_mode", to_string(c.residual_mode)},
           {"noise_normalization", to_string(c.noise_norm)},
           {"seed", c.seed},
           {"record_energy", c.record_energy}};
}
inline void from_json(const json& j, VampConfig& c) {
  c = VampConfig{};
  c.max_iters = j.value("max_iters", c.max_iters);
  c.stop_tol = j.value("stop_tol", c.stop_tol);
  if (j.contains("em_theta1")) {
    const json& e = j.at("em_theta1");
    c.em_theta1.enabled = e.value("enabled", true);
    c.em_theta1.inner_iters = e.value("inner_iters", 1);
    c.em_theta1.freeze.freeze_beta = e.value("freeze_beta", false);
    c.em_theta1.freeze.freeze_mu = e.value("freeze_mu", false);
    c.em_theta1.freeze.freeze_tau = e.value("freeze_tau", false);
  }
  if (j.contains("em_theta2")) {
    const json& e = j.at("em_theta2");
    c.em_theta2.enabled = e.value("enabled", true);
    c.em_theta2.tol = e.value("tol", 1e-6);
    c.em_theta2.max_inner = e.value("max_inner", 100);
  }
  c.gamma_min = j.value("gamma_min", c.gamma_min);
  c.gamma_max = j.value("gamma_max", c.gamma_max);
  c.damping = j.value("damping", c.damping);
  c.residual_mode = residual_mode_from_string(j.value("residual_mode", std::string("posterior_mean")));
  c.noise_norm = noise_norm_from_string(j.value("noise_normalization", std::string("M")));
  c.seed = j.value("seed", std::uint64_t{0});
  c.record_energy = j.value("record_energy", false);
}

inline void to_json(json& j, const EnergyReport& r) {
  j = json{{"d1", r.d1},
           {"d2", r.d2},
           {"h_q", r.h_q},
           {"j", r.j},
           {"beta1", to_std(r.beta1)},
           {"beta2", to_std(r.beta2)},
           {"eta_gap", r.eta_gap},
           {"eta_sum_gap", r.eta_sum_gap},
           {"xhat_gap", r.xhat_gap},
           {"dual_gap", r.dual_gap},
           {"first_moment_gap", r.first_moment_gap},
           {"second_moment_gap", r.second_moment_gap},
           {"theta1_stationarity", r.theta1_stationarity},
           {"theta2_stationarity", r.theta2_stationarity}};
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hash_hex(const std::string& s) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(s)));
  return buf;
}

inline std::string run_trace_csv(const RunTrace& trace) {
  std::string out =
      "iter,nmse_db,beta,mu,tau,theta2,gamma1,gamma2,eta1,eta2,fp_eta_resid,fp_xhat_resid,"
      "clamp_flags\n";
  for (const RunRecord& r : trace.records) {
    out += std::to_string(r.iter) + ',' + format_double(r.nmse_db) + ',' +
           format_double(r.theta1.beta) + ',' + format_double(r.theta1.mu) + ',' +
           format_double(r.theta1.tau) + ',' + format_double(r.theta2) + ',' +
           format_double(r.gamma1) + ',' + format_double(r.gamma2) + ',' +
           format_double(r.eta1) + ',' + format_double(r.eta2) + ',' +
           format_double(r.fp_eta_resid) + ',' + format_double(r.fp_xhat_resid) + ',' +
           std::to_string(r.clamp_flags) + '\n';
  }
  return out;
}

// Per-coordinate posterior dump (pi, mean, var) for a pseudo-measurement.
inline std::string posterior_csv(const PseudoMeasurement& pm, const BgParams& params) {
  std::string out = "index,r,pi,mean,var\n";
  for (int i = 0; i < pm.r.size(); ++i) {
    const CoordinatePosterior c = bg_coordinate_posterior(pm.r(i), pm.gamma, params);
    out += std::to_string(i) + ',' + format_double(pm.r(i)) + ',' + format_double(c.pi) + ',' +
           format_double(c.mean) + ',' + format_double(c.var) + '\n';
  }
  return out;
}

}  // namespace emvamp
