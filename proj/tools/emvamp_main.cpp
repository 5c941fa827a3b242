// Command-line front end: matrix generation, single runs with trace output,
// condition-number sweeps, per-iteration trace curves and fixed-point
// verification.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "emvamp/bench.hpp"
#include "emvamp/diagnostics.hpp"
#include "emvamp/engine.hpp"
#include "emvamp/problem.hpp"
#include "emvamp/serialize.hpp"
#include "emvamp/version.hpp"

namespace fs = std::filesystem;
using namespace emvamp;

namespace {

std::string default_out_dir() {
  if (const char* env = std::getenv("EMVAMP_OUT_DIR")) return env;
  return ".";
}

RunSpec load_run_spec(const std::string& path) {
  return json::parse(read_text_file(path)).get<RunSpec>();
}

SweepSpec load_sweep_spec(const std::string& path) {
  return json::parse(read_text_file(path)).get<SweepSpec>();
}

int cmd_gen_matrix(const MatrixSpec& spec, const std::string& out_path) {
  const SvdMatrix a = build_matrix(spec);
  json j{{"schema_version", kResultSchemaVersion},
         {"code_version", kVersion},
         {"spec", spec},
         {"matrix", a}};
  write_text_file(out_path, j.dump());
  std::cout << "wrote " << out_path << " (m=" << a.m << ", n=" << a.n
            << ", cond=" << format_double(a.cond()) << ", frob_sq=" << format_double(a.frob_sq())
            << ")\n";
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& out_path,
            const std::string& dump_posterior, const std::string& dump_theta2,
            const std::string& save_instance) {
  const RunSpec spec = load_run_spec(config_path);
  const VampConfig cfg = apply_algorithm(spec.engine, spec.algorithm);
  const ProblemInstance inst = make_instance(spec.problem);
  if (!save_instance.empty()) {
    json j = inst;
    write_text_file(save_instance, j.dump());
  }

  RunObserver observer;
  if (cfg.record_energy) observer = make_energy_observer();
  const RunResult res = run(inst, cfg, observer);
  write_text_file(out_path, run_trace_csv(res.trace));

  if (!dump_posterior.empty())
    write_text_file(dump_posterior,
                    posterior_csv({res.state.r1, res.state.gamma1}, res.state.theta1));
  if (!dump_theta2.empty()) {
    const LmmseWorkspace ws(inst.matrix, inst.y);
    const Theta2Iteration it =
        iterate_theta2(ws, res.state.r2, res.state.gamma2, res.state.theta2, cfg.em_theta2.tol,
                       cfg.em_theta2.max_inner, cfg.residual_mode, cfg.noise_norm,
                       /*keep_trajectory=*/true);
    std::string csv = "inner_iter,theta2\n";
    for (std::size_t i = 0; i < it.trajectory.size(); ++i)
      csv += std::to_string(i) + ',' + format_double(it.trajectory[i]) + '\n';
    write_text_file(dump_theta2, csv);
  }

  const double final_nmse =
      res.trace.records.empty() ? 0.0 : res.trace.records.back().nmse_db;
  std::cout << "algorithm=" << spec.algorithm << " iters=" << res.trace.records.size()
            << " final_nmse_db=" << format_double(final_nmse);
  if (cfg.record_energy && !res.trace.records.empty())
    std::cout << " final_energy_j=" << format_double(res.trace.records.back().energy_j);
  std::cout << (res.trace.diverged ? " DIVERGED" : "") << "\n";
  return res.trace.diverged ? 2 : 0;
}

int cmd_sweep(const std::string& config_path, std::string out_dir, int workers,
              std::int64_t seed_override) {
  SweepSpec spec = load_sweep_spec(config_path);
  if (seed_override >= 0) spec.base_seed = static_cast<std::uint64_t>(seed_override);
  if (out_dir.empty()) out_dir = default_out_dir();
  fs::create_directories(out_dir);

  const SweepResult result = sweep_condition(spec, workers);
  const std::string csv_path = (fs::path(out_dir) / "sweep.csv").string();
  const std::string json_path = (fs::path(out_dir) / "sweep.json").string();
  write_text_file(csv_path, sweep_csv(result));
  json j = result;
  write_text_file(json_path, j.dump(2));
  std::cout << "wrote " << csv_path << " and " << json_path << "\n";
  for (const SweepRow& row : result.rows)
    std::cout << "  kappa=" << format_double(row.kappa) << " " << row.algo
              << " nmse_db=" << format_double(row.nmse_db_agg) << " diverged=" << row.diverged
              << "\n";
  return 0;
}

int cmd_trace(const std::string& config_path, std::string out_dir, int workers,
              std::int64_t seed_override) {
  SweepSpec spec = load_sweep_spec(config_path);
  if (seed_override >= 0) spec.base_seed = static_cast<std::uint64_t>(seed_override);
  if (out_dir.empty()) out_dir = default_out_dir();
  fs::create_directories(out_dir);

  const TraceResult result = trace_iterations(spec, workers);
  const std::string csv_path = (fs::path(out_dir) / "trace.csv").string();
  const std::string json_path = (fs::path(out_dir) / "trace.json").string();
  write_text_file(csv_path, trace_csv(result));
  json j = result;
  write_text_file(json_path, j.dump(2));
  std::cout << "wrote " << csv_path << " and " << json_path << "\n";
  for (const TraceCurve& c : result.curves)
    std::cout << "  kappa=" << format_double(c.kappa) << " " << c.algo
              << " iters_to_1db_median=" << format_double(c.iters_to_1db_median) << "\n";
  return 0;
}

int cmd_verify(const std::string& config_path, const std::string& out_path, double tol_eta,
               double tol_xhat, double tol_dual, double tol_moment, double tol_theta) {
  const RunSpec spec = load_run_spec(config_path);
  const VampConfig cfg = apply_algorithm(spec.engine, spec.algorithm);
  const ProblemInstance inst = make_instance(spec.problem);
  const RunResult res = run(inst, cfg);
  const LmmseWorkspace ws(inst.matrix, inst.y);

  StationarityOptions opts;
  opts.check_theta1 = cfg.em_theta1.enabled;
  opts.check_theta2 = cfg.em_theta2.enabled;
  opts.freeze = cfg.em_theta1.freeze;
  opts.residual_mode = cfg.residual_mode;
  opts.noise_norm = cfg.noise_norm;
  const EnergyReport rep = stationarity_report(res.state, ws, opts);

  bool ok = rep.eta_gap <= tol_eta && rep.xhat_gap <= tol_xhat && rep.dual_gap <= tol_dual &&
            rep.first_moment_gap <= tol_moment && rep.second_moment_gap <= tol_moment;
  if (opts.check_theta1) ok = ok && rep.theta1_stationarity <= tol_theta;
  if (opts.check_theta2) ok = ok && rep.theta2_stationarity <= tol_theta;

  json j = rep;
  j["iters"] = res.trace.records.size();
  j["diverged"] = res.trace.diverged;
  j["final_nmse_db"] = res.trace.records.empty() ? 0.0 : res.trace.records.back().nmse_db;
  j["certified"] = ok;
  j["tolerances"] = {{"eta", tol_eta},
                     {"xhat", tol_xhat},
                     {"dual", tol_dual},
                     {"moment", tol_moment},
                     {"theta", tol_theta}};
  const std::string text = j.dump(2);
  std::cout << text << "\n";
  if (!out_path.empty()) write_text_file(out_path, text);
  return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EM-VAMP: sparse recovery with joint prior/noise learning"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  // gen-matrix
  MatrixSpec mspec;
  mspec.m = 256;
  mspec.n = 512;
  std::string gen_out = "matrix.json";
  std::int64_t gen_seed = 0;
  CLI::App* gen = app.add_subcommand("gen-matrix", "generate a measurement matrix (JSON)");
  gen->add_option("--m", mspec.m, "rows")->required();
  gen->add_option("--n", mspec.n, "columns")->required();
  gen->add_option("--cond", mspec.cond, "target condition number")->required();
  gen->add_option("--frob-sq", mspec.frob_sq_target, "target squared Frobenius norm (default n)");
  gen->add_option("--seed", gen_seed, "RNG seed");
  gen->add_option("--out", gen_out, "output path")->required();

  // run
  std::string run_config, run_out = "trace.csv", dump_posterior, dump_theta2, save_instance;
  CLI::App* runc = app.add_subcommand("run", "run one algorithm on one instance, write trace CSV");
  runc->add_option("--config", run_config, "JSON config")->required()->check(CLI::ExistingFile);
  runc->add_option("--out", run_out, "trace CSV path");
  runc->add_option("--dump-posterior", dump_posterior, "write final-state posterior CSV");
  runc->add_option("--dump-theta2", dump_theta2, "write final-state noise inner-loop CSV");
  runc->add_option("--save-instance", save_instance, "write the synthesized instance (JSON)");

  // sweep / trace
  std::string sweep_config, sweep_out;
  int workers = 1;
  std::int64_t seed_override = -1;
  CLI::App* sweep = app.add_subcommand("sweep", "NMSE vs condition number over many trials");
  sweep->add_option("--config", sweep_config, "JSON config")->required()->check(CLI::ExistingFile);
  sweep->add_option("--out", sweep_out, "output directory (default $EMVAMP_OUT_DIR or .)");
  sweep->add_option("--workers", workers, "concurrent trials");
  sweep->add_option("--seed", seed_override, "override base seed");

  std::string trace_config, trace_out;
  int trace_workers = 1;
  std::int64_t trace_seed = -1;
  CLI::App* trace = app.add_subcommand("trace", "NMSE vs iteration curves");
  trace->add_option("--config", trace_config, "JSON config")->required()->check(CLI::ExistingFile);
  trace->add_option("--out", trace_out, "output directory (default $EMVAMP_OUT_DIR or .)");
  trace->add_option("--workers", trace_workers, "concurrent trials");
  trace->add_option("--seed", trace_seed, "override base seed");

  // verify
  std::string verify_config, verify_out;
  double tol_eta = 1e-6, tol_xhat = 1e-6, tol_dual = 1e-8, tol_moment = 1e-6, tol_theta = 1e-8;
  CLI::App* verify =
      app.add_subcommand("verify", "run to convergence and certify the fixed-point identities");
  verify->add_option("--config", verify_config, "JSON config")->required()->check(CLI::ExistingFile);
  verify->add_option("--out", verify_out, "write the report JSON here too");
  verify->add_option("--tol-eta", tol_eta, "eta gap tolerance");
  verify->add_option("--tol-xhat", tol_xhat, "xhat gap tolerance");
  verify->add_option("--tol-dual", tol_dual, "dual identity tolerance");
  verify->add_option("--tol-moment", tol_moment, "moment gap tolerance");
  verify->add_option("--tol-theta", tol_theta, "parameter stationarity tolerance");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      mspec.seed = static_cast<std::uint64_t>(gen_seed);
      return cmd_gen_matrix(mspec, gen_out);
    }
    if (runc->parsed()) return cmd_run(run_config, run_out, dump_posterior, dump_theta2, save_instance);
    if (sweep->parsed()) return cmd_sweep(sweep_config, sweep_out, workers, seed_override);
    if (trace->parsed()) return cmd_trace(trace_config, trace_out, trace_workers, trace_seed);
    if (verify->parsed())
      return cmd_verify(verify_config, verify_out, tol_eta, tol_xhat, tol_dual, tol_moment,
                        tol_theta);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
