#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "emvamp/bench.hpp"
#include "emvamp/serialize.hpp"

using namespace emvamp;
using Catch::Approx;

namespace {

SweepSpec tiny_spec() {
  SweepSpec spec;
  spec.problem.m = 32;
  spec.problem.n = 64;
  spec.kappas = {1.0, 10.0};
  spec.algorithms = {"em-vamp", "oracle-vamp"};
  spec.trials = 3;
  spec.base_seed = 9;
  spec.engine.max_iters = 40;
  spec.engine.stop_tol = 1e-8;
  return spec;
}

}  // namespace

TEST_CASE("trial seed policy is frozen") {
  REQUIRE(trial_seed(1, 0, 0) == 16762086716702521847ULL);
  REQUIRE(trial_seed(1, 1, 0) == 16509138682663993587ULL);
  REQUIRE(trial_seed(1, 0, 1) == 2411715461353429635ULL);
}

TEST_CASE("sweep CSV schema") {
  SweepResult empty;
  REQUIRE(sweep_csv(empty) == "kappa,algo,nmse_db_agg,nmse_db_iqr,diverged,iters_mean\n");

  SweepResult one;
  one.rows.push_back({32.0, "em-vamp", -41.25, 0.5, 0, 23.0});
  const std::string csv = sweep_csv(one);
  REQUIRE(csv.find("32,em-vamp,-41.25,0.5,0,23\n") != std::string::npos);
}

TEST_CASE("sweep runs, aggregates and round-trips") {
  const SweepSpec spec = tiny_spec();
  const SweepResult result = sweep_condition(spec, 2);

  REQUIRE(result.rows.size() == 4);  // 2 kappas x 2 algorithms
  REQUIRE(result.seeds.size() == 6);
  for (const SweepRow& row : result.rows) {
    CAPTURE(row.kappa, row.algo);
    REQUIRE(row.diverged == 0);
    REQUIRE(row.nmse_db_agg < -20.0);
    REQUIRE(row.iters_mean > 0.0);
  }

  SECTION("median aggregation matches direct runs") {
    std::vector<double> finals;
    for (int t = 0; t < 3; ++t) {
      ProblemSpec ps = spec.problem;
      ps.cond = spec.kappas[0];
      ps.seed = trial_seed(spec.base_seed, t, 0);
      const RunResult rr = run(make_instance(ps), apply_algorithm(spec.engine, "em-vamp"));
      finals.push_back(rr.trace.records.back().nmse_db);
    }
    std::sort(finals.begin(), finals.end());
    REQUIRE(result.rows[0].kappa == 1.0);
    REQUIRE(result.rows[0].algo == "em-vamp");
    REQUIRE(result.rows[0].nmse_db_agg == Approx(finals[1]).epsilon(1e-14));
  }

  SECTION("JSON round trip is exact") {
    json j = result;
    const SweepResult back = j.get<SweepResult>();
    REQUIRE(back == result);
    const json j2 = json::parse(j.dump());
    REQUIRE(j2.get<SweepResult>() == result);
  }

  SECTION("rerun is byte-identical") {
    const SweepResult again = sweep_condition(spec, 1);  // worker count must not matter
    REQUIRE(again == result);
    REQUIRE(sweep_csv(again) == sweep_csv(result));
  }
}

TEST_CASE("mean aggregation works in the linear domain") {
  SweepSpec spec = tiny_spec();
  spec.aggregation = "mean";
  spec.kappas = {1.0};
  spec.algorithms = {"oracle-vamp"};
  const SweepResult result = sweep_condition(spec, 1);

  std::vector<double> finals;
  for (int t = 0; t < 3; ++t) {
    ProblemSpec ps = spec.problem;
    ps.cond = 1.0;
    ps.seed = trial_seed(spec.base_seed, t, 0);
    const RunResult rr = run(make_instance(ps), apply_algorithm(spec.engine, "oracle-vamp"));
    finals.push_back(rr.trace.records.back().nmse_db);
  }
  double linear = 0.0;
  for (double f : finals) linear += std::pow(10.0, f / 10.0);
  REQUIRE(result.rows[0].nmse_db_agg == Approx(10.0 * std::log10(linear / 3.0)).epsilon(1e-13));
}

TEST_CASE("per-trial failures are recorded without aborting the sweep") {
  SweepSpec spec = tiny_spec();
  spec.problem.prior.beta = 7.0;  // invalid: every synthesis throws
  const SweepResult result = sweep_condition(spec, 2);
  REQUIRE(result.rows.size() == 4);
  for (const SweepRow& row : result.rows) REQUIRE(row.diverged == spec.trials);
  REQUIRE_FALSE(result.errors.empty());
}

TEST_CASE("trace curves start at the init point and honor the horizon") {
  SweepSpec spec = tiny_spec();
  spec.kappas = {10.0};
  spec.horizon = 5;
  spec.engine.stop_tol = 0.0;
  const TraceResult result = trace_iterations(spec, 2);
  REQUIRE(result.curves.size() == 2);
  for (const TraceCurve& c : result.curves) {
    REQUIRE(c.nmse_db.size() == 6);  // init + 5 iterations
    REQUIRE(c.nmse_db.front() == 0.0);
    REQUIRE(c.iters_to_1db_median >= 0.0);
    REQUIRE(c.diverged == 0);
  }

  SECTION("zero-iteration horizon keeps only the init point") {
    SweepSpec zero = spec;
    zero.horizon = 0;
    const TraceResult r0 = trace_iterations(zero, 1);
    for (const TraceCurve& c : r0.curves) {
      REQUIRE(c.nmse_db.size() == 1);
      REQUIRE(c.nmse_db.front() == 0.0);
    }
  }

  SECTION("trace JSON round trip") {
    json j = result;
    REQUIRE(j.get<TraceResult>() == result);
  }

  SECTION("trace CSV schema") {
    const std::string csv = trace_csv(result);
    REQUIRE(csv.rfind("kappa,algo,iter,nmse_db\n", 0) == 0);
    REQUIRE(csv.find("10,em-vamp,0,0\n") != std::string::npos);
  }
}

TEST_CASE("early-stopped runs pad their curve with the final value") {
  SweepSpec spec = tiny_spec();
  spec.kappas = {1.0};
  spec.algorithms = {"oracle-vamp"};
  spec.horizon = 39;
  spec.engine.stop_tol = 1e-8;  // stops well before the horizon
  const TraceResult result = trace_iterations(spec, 1);
  const TraceCurve& c = result.curves[0];
  REQUIRE(c.nmse_db.size() == 40);
  REQUIRE(c.nmse_db[c.nmse_db.size() - 1] == c.nmse_db[c.nmse_db.size() - 2]);
}

TEST_CASE("apply_algorithm") {
  VampConfig cfg;
  const VampConfig em = apply_algorithm(cfg, "em-vamp");
  REQUIRE(em.em_theta1.enabled);
  REQUIRE(em.em_theta2.enabled);
  const VampConfig orc = apply_algorithm(cfg, "oracle-vamp");
  REQUIRE_FALSE(orc.em_theta1.enabled);
  REQUIRE_FALSE(orc.em_theta2.enabled);
  REQUIRE_THROWS_AS(apply_algorithm(cfg, "amp"), std::invalid_argument);
}

TEST_CASE("spec validation") {
  SweepSpec spec = tiny_spec();
  spec.trials = 0;
  REQUIRE_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = tiny_spec();
  spec.kappas.clear();
  REQUIRE_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = tiny_spec();
  spec.aggregation = "mode";
  REQUIRE_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = tiny_spec();
  spec.algorithms = {"amp"};
  REQUIRE_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("config hash is stable under reordered JSON keys") {
  const SweepSpec spec = tiny_spec();
  json a = spec;
  json b = json::parse(R"({"trials": 3})");
  b.update(a);
  REQUIRE(hash_hex(a.dump()) == hash_hex(b.dump()));
}

TEST_CASE("run trace CSV columns are pinned") {
  ProblemSpec ps;
  ps.m = 24;
  ps.n = 48;
  ps.cond = 5.0;
  ps.seed = 3;
  VampConfig cfg;
  cfg.max_iters = 4;
  cfg.stop_tol = 0.0;
  const RunResult res = run(make_instance(ps), cfg);
  const std::string csv = run_trace_csv(res.trace);
  REQUIRE(csv.rfind("iter,nmse_db,beta,mu,tau,theta2,gamma1,gamma2,eta1,eta2,fp_eta_resid,"
                    "fp_xhat_resid,clamp_flags\n",
                    0) == 0);
  REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 4 records
}

TEST_CASE("posterior CSV dump") {
  PseudoMeasurement pm;
  pm.r = Eigen::Vector2d(0.5, -1.0);
  pm.gamma = 2.0;
  const std::string csv = posterior_csv(pm, {0.3, 0.0, 1.0});
  REQUIRE(csv.rfind("index,r,pi,mean,var\n", 0) == 0);
  REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("matrix and instance JSON round trips") {
  MatrixSpec mspec;
  mspec.m = 6;
  mspec.n = 9;
  mspec.cond = 4.0;
  mspec.seed = 77;
  const SvdMatrix a = build_matrix(mspec);
  json j = a;
  const SvdMatrix back = j.get<SvdMatrix>();
  REQUIRE(back.m == a.m);
  REQUIRE(back.U == a.U);
  REQUIRE(back.V == a.V);
  REQUIRE(back.s == a.s);

  const ProblemInstance inst = synthesize(mspec, {0.2, 0.1, 1.0}, 30.0, 5);
  json ji = inst;
  const ProblemInstance iback = json::parse(ji.dump()).get<ProblemInstance>();
  REQUIRE(iback.y == inst.y);
  REQUIRE(iback.x_true == inst.x_true);
  REQUIRE(iback.theta2_true == inst.theta2_true);
  REQUIRE(iback.theta1_true == inst.theta1_true);
}

TEST_CASE("engine config JSON honors defaults and round trips") {
  const json partial = json::parse(R"({"max_iters": 77})");
  const VampConfig cfg = partial.get<VampConfig>();
  REQUIRE(cfg.max_iters == 77);
  REQUIRE(cfg.em_theta1.enabled);
  REQUIRE(cfg.residual_mode == ResidualMode::PosteriorMean);
  REQUIRE(cfg.noise_norm == NoiseNormalization::PerMeasurement);

  VampConfig full;
  full.damping = 0.7;
  full.residual_mode = ResidualMode::R2;
  full.noise_norm = NoiseNormalization::PerSignalDim;
  full.em_theta1.freeze.freeze_mu = true;
  json j = full;
  const VampConfig back = j.get<VampConfig>();
  REQUIRE(back.damping == 0.7);
  REQUIRE(back.residual_mode == ResidualMode::R2);
  REQUIRE(back.noise_norm == NoiseNormalization::PerSignalDim);
  REQUIRE(back.em_theta1.freeze.freeze_mu);
}
