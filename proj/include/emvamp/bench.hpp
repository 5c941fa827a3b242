#pragma once

// Experiment harness: NMSE-vs-condition-number sweeps and NMSE-vs-iteration
// traces over many independent trials, with deterministic per-trial seeding,
// concurrent execution and schema-stable CSV/JSON reporting.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "emvamp/engine.hpp"
#include "emvamp/problem.hpp"
#include "emvamp/rng.hpp"
#include "emvamp/serialize.hpp"
#include "emvamp/version.hpp"

namespace emvamp {

// One synthetic problem description; cond is the swept axis in sweeps.
struct ProblemSpec {
  int m = 256;
  int n = 512;
  double cond = 1.0;
  double frob_sq_target = -1.0;
  BgParams prior{0.1, 0.0, 1.0};
  double snr_db = 40.0;
  std::uint64_t seed = 0;
};

inline ProblemInstance make_instance(const ProblemSpec& ps) {
  MatrixSpec ms{ps.m, ps.n, ps.cond, ps.frob_sq_target, 0};
  return synthesize(ms, ps.prior, ps.snr_db, ps.seed);
}

inline void to_json(json& j, const ProblemSpec& p) {
  j = json{{"m", p.m},           {"n", p.n},     {"cond", p.cond},
           {"frob_sq_target", p.frob_sq_target}, {"beta", p.prior.beta},
           {"mu", p.prior.mu},   {"tau", p.prior.tau},
           {"snr_db", p.snr_db}, {"seed", p.seed}};
}
inline void from_json(const json& j, ProblemSpec& p) {
  p = ProblemSpec{};
  p.m = j.at("m").get<int>();
  p.n = j.at("n").get<int>();
  p.cond = j.value("cond", 1.0);
  p.frob_sq_target = j.value("frob_sq_target", -1.0);
  p.prior.beta = j.value("beta", 0.1);
  p.prior.mu = j.value("mu", 0.0);
  p.prior.tau = j.value("tau", 1.0);
  p.snr_db = j.value("snr_db", 40.0);
  p.seed = j.value("seed", std::uint64_t{0});
}

// Config for `run` / `verify`: one problem, one algorithm.
struct RunSpec {
  ProblemSpec problem;
  std::string algorithm = "em-vamp";  // "em-vamp" or "oracle-vamp"
  VampConfig engine;
};

inline VampConfig apply_algorithm(VampConfig cfg, const std::string& algo) {
  if (algo == "em-vamp") {
    cfg.em_theta1.enabled = true;
    cfg.em_theta2.enabled = true;
  } else if (algo == "oracle-vamp") {
    cfg.em_theta1.enabled = false;
    cfg.em_theta2.enabled = false;
  } else {
    throw std::invalid_argument("unknown algorithm: " + algo);
  }
  return cfg;
}

inline void to_json(json& j, const RunSpec& r) {
  j = json{{"problem", r.problem}, {"algorithm", r.algorithm}, {"engine", r.engine}};
}
inline void from_json(const json& j, RunSpec& r) {
  r.problem = j.at("problem").get<ProblemSpec>();
  r.algorithm = j.value("algorithm", std::string("em-vamp"));
  if (j.contains("engine")) r.engine = j.at("engine").get<VampConfig>();
}

struct SweepSpec {
  ProblemSpec problem;  // problem.cond and problem.seed are overridden per point/trial
  std::vector<double> kappas{1.0, 10.0, 100.0, 1000.0, 3162.0};
  std::vector<std::string> algorithms{"em-vamp", "oracle-vamp"};
  int trials = 20;
  std::string aggregation = "median";  // "median" (dB domain) or "mean" (linear domain)
  std::uint64_t base_seed = 1;
  int horizon = 50;  // iteration budget for trace curves
  VampConfig engine;

  void validate() const {
    if (trials < 1) throw std::invalid_argument("SweepSpec: trials must be >= 1");
    if (kappas.empty()) throw std::invalid_argument("SweepSpec: kappa grid must be nonempty");
    if (algorithms.empty()) throw std::invalid_argument("SweepSpec: need at least one algorithm");
    if (aggregation != "median" && aggregation != "mean")
      throw std::invalid_argument("SweepSpec: aggregation must be median or mean");
    if (horizon < 0) throw std::invalid_argument("SweepSpec: horizon must be >= 0");
    for (const std::string& a : algorithms) (void)apply_algorithm(engine, a);
  }
};

inline void to_json(json& j, const SweepSpec& s) {
  j = json{{"problem", s.problem},   {"kappas", s.kappas}, {"algorithms", s.algorithms},
           {"trials", s.trials},     {"aggregation", s.aggregation},
           {"base_seed", s.base_seed}, {"horizon", s.horizon}, {"engine", s.engine}};
}
inline void from_json(const json& j, SweepSpec& s) {
  s = SweepSpec{};
  if (j.contains("problem")) s.problem = j.at("problem").get<ProblemSpec>();
  s.kappas = j.value("kappas", s.kappas);
  s.algorithms = j.value("algorithms", s.algorithms);
  s.trials = j.value("trials", s.trials);
  s.aggregation = j.value("aggregation", s.aggregation);
  s.base_seed = j.value("base_seed", s.base_seed);
  s.horizon = j.value("horizon", s.horizon);
  if (j.contains("engine")) s.engine = j.at("engine").get<VampConfig>();
}

// Seed policy: trial t at grid index k runs with derive_seed(base_seed, t, k).
// This mapping is a compatibility contract (tests pin golden values).
inline std::uint64_t trial_seed(std::uint64_t base_seed, int trial, int kappa_index) {
  return derive_seed(base_seed, static_cast<std::uint64_t>(trial),
                     static_cast<std::uint64_t>(kappa_index));
}

struct SweepRow {
  double kappa = 0.0;
  std::string algo;
  double nmse_db_agg = 0.0;
  double nmse_db_iqr = 0.0;
  int diverged = 0;
  double iters_mean = 0.0;

  bool operator==(const SweepRow&) const = default;
};

struct SweepResult {
  int schema_version = kResultSchemaVersion;
  std::string code_version = kVersion;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::vector<SweepRow> rows;
  std::vector<std::string> errors;  // per-trial failures, "kappa=..,trial=..: what"

  bool operator==(const SweepResult&) const = default;
};

struct TraceCurve {
  double kappa = 0.0;
  std::string algo;
  std::vector<double> nmse_db;  // index = completed iterations; [0] is the init point
  double iters_to_1db_median = 0.0;
  int diverged = 0;

  bool operator==(const TraceCurve&) const = default;
};

struct TraceResult {
  int schema_version = kResultSchemaVersion;
  std::string code_version = kVersion;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::vector<TraceCurve> curves;
  std::vector<std::string> errors;

  bool operator==(const TraceResult&) const = default;
};

namespace detail {

// Interpolated quantile (dB domain) of a sorted vector, q in [0,1].
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  if (sorted.size() == 1) return sorted.front();
  const double pos = q * (sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - lo;
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, 0.5);
}

inline double aggregate_nmse_db(std::vector<double> db_values, const std::string& aggregation) {
  if (db_values.empty()) return 0.0;
  if (aggregation == "median") return median(std::move(db_values));
  double acc = 0.0;
  for (double v : db_values) acc += std::pow(10.0, v / 10.0);
  return 10.0 * std::log10(acc / db_values.size());
}

inline double iqr_db(std::vector<double> db_values) {
  if (db_values.size() < 2) return 0.0;
  std::sort(db_values.begin(), db_values.end());
  return quantile_sorted(db_values, 0.75) - quantile_sorted(db_values, 0.25);
}

// Runs fn(i) for i in [0, count) on `workers` threads.
template <class Fn>
void parallel_for(int count, int workers, Fn&& fn) {
  workers = std::max(1, std::min(workers, count));
  if (workers == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
    });
  for (std::thread& th : pool) th.join();
}

struct TrialOutcome {
  bool failed = false;
  bool diverged = false;
  double final_nmse_db = 0.0;
  int iters = 0;
  std::vector<double> curve;  // init point + per-iteration NMSE (dB)
  std::string error;
};

}  // namespace detail

// Runs every (kappa, trial, algorithm) combination and aggregates final NMSE.
// Both algorithms see the same instance for a given (kappa, trial). Trials are
// independent and may run concurrently; failures are recorded, never fatal.
inline SweepResult sweep_condition(const SweepSpec& spec, int workers = 1) {
  spec.validate();
  const int nk = static_cast<int>(spec.kappas.size());
  const int na = static_cast<int>(spec.algorithms.size());
  const int nt = spec.trials;

  std::vector<detail::TrialOutcome> outcomes(static_cast<std::size_t>(nk) * na * nt);
  auto slot = [&](int k, int a, int t) -> detail::TrialOutcome& {
    return outcomes[(static_cast<std::size_t>(k) * na + a) * nt + t];
  };

  SweepResult result;
  {
    json j = spec;
    result.config_hash = hash_hex(j.dump());
  }
  result.seeds.reserve(static_cast<std::size_t>(nk) * nt);
  for (int k = 0; k < nk; ++k)
    for (int t = 0; t < nt; ++t) result.seeds.push_back(trial_seed(spec.base_seed, t, k));

  detail::parallel_for(nk * nt, workers, [&](int task) {
    const int k = task / nt;
    const int t = task % nt;
    ProblemSpec ps = spec.problem;
    ps.cond = spec.kappas[k];
    ps.seed = trial_seed(spec.base_seed, t, k);
    ProblemInstance inst;
    try {
      inst = make_instance(ps);
    } catch (const std::exception& e) {
      for (int a = 0; a < na; ++a) {
        slot(k, a, t).failed = true;
        slot(k, a, t).error = e.what();
      }
      return;
    }
    for (int a = 0; a < na; ++a) {
      detail::TrialOutcome& out = slot(k, a, t);
      try {
        const VampConfig cfg = apply_algorithm(spec.engine, spec.algorithms[a]);
        const RunResult rr = run(inst, cfg);
        out.diverged = rr.trace.diverged;
        out.iters = static_cast<int>(rr.trace.records.size());
        out.final_nmse_db =
            rr.trace.records.empty() ? 0.0 : rr.trace.records.back().nmse_db;
      } catch (const std::exception& e) {
        out.failed = true;
        out.error = e.what();
      }
    }
  });

  for (int k = 0; k < nk; ++k) {
    for (int a = 0; a < na; ++a) {
      SweepRow row;
      row.kappa = spec.kappas[k];
      row.algo = spec.algorithms[a];
      std::vector<double> db_values;
      std::vector<double> iters;
      for (int t = 0; t < nt; ++t) {
        const detail::TrialOutcome& out = slot(k, a, t);
        if (out.failed || out.diverged) {
          ++row.diverged;
          if (out.failed)
            result.errors.push_back("kappa=" + format_double(row.kappa) +
                                    ",algo=" + row.algo + ",trial=" + std::to_string(t) +
                                    ": " + out.error);
          continue;
        }
        db_values.push_back(out.final_nmse_db);
        iters.push_back(out.iters);
      }
      row.nmse_db_agg = detail::aggregate_nmse_db(db_values, spec.aggregation);
      row.nmse_db_iqr = detail::iqr_db(db_values);
      row.iters_mean = iters.empty()
                           ? 0.0
                           : std::accumulate(iters.begin(), iters.end(), 0.0) / iters.size();
      result.rows.push_back(std::move(row));
    }
  }
  return result;
}

// Median NMSE-vs-iteration curves at each kappa, plus the median number of
// iterations needed to come within 1 dB of each trial's final NMSE. Curves
// start at the init point (zero estimate, 0 dB) and are padded with the final
// value once a run stops early.
inline TraceResult trace_iterations(const SweepSpec& spec, int workers = 1) {
  spec.validate();
  const int nk = static_cast<int>(spec.kappas.size());
  const int na = static_cast<int>(spec.algorithms.size());
  const int nt = spec.trials;

  std::vector<detail::TrialOutcome> outcomes(static_cast<std::size_t>(nk) * na * nt);
  auto slot = [&](int k, int a, int t) -> detail::TrialOutcome& {
    return outcomes[(static_cast<std::size_t>(k) * na + a) * nt + t];
  };

  TraceResult result;
  {
    json j = spec;
    result.config_hash = hash_hex(j.dump());
  }
  for (int k = 0; k < nk; ++k)
    for (int t = 0; t < nt; ++t) result.seeds.push_back(trial_seed(spec.base_seed, t, k));

  detail::parallel_for(nk * nt, workers, [&](int task) {
    const int k = task / nt;
    const int t = task % nt;
    ProblemSpec ps = spec.problem;
    ps.cond = spec.kappas[k];
    ps.seed = trial_seed(spec.base_seed, t, k);
    ProblemInstance inst;
    try {
      inst = make_instance(ps);
    } catch (const std::exception& e) {
      for (int a = 0; a < na; ++a) {
        slot(k, a, t).failed = true;
        slot(k, a, t).error = e.what();
      }
      return;
    }
    for (int a = 0; a < na; ++a) {
      detail::TrialOutcome& out = slot(k, a, t);
      out.curve.push_back(0.0);  // zero initial estimate: NMSE = 1 = 0 dB
      if (spec.horizon == 0) continue;
      try {
        VampConfig cfg = apply_algorithm(spec.engine, spec.algorithms[a]);
        cfg.max_iters = spec.horizon;
        const RunResult rr = run(inst, cfg);
        out.diverged = rr.trace.diverged;
        for (const RunRecord& rec : rr.trace.records) out.curve.push_back(rec.nmse_db);
        while (static_cast<int>(out.curve.size()) < spec.horizon + 1)
          out.curve.push_back(out.curve.back());
      } catch (const std::exception& e) {
        out.failed = true;
        out.error = e.what();
      }
    }
  });

  for (int k = 0; k < nk; ++k) {
    for (int a = 0; a < na; ++a) {
      TraceCurve curve;
      curve.kappa = spec.kappas[k];
      curve.algo = spec.algorithms[a];
      std::vector<const detail::TrialOutcome*> valid;
      for (int t = 0; t < nt; ++t) {
        const detail::TrialOutcome& out = slot(k, a, t);
        if (out.failed || out.diverged) {
          ++curve.diverged;
          if (out.failed)
            result.errors.push_back("kappa=" + format_double(curve.kappa) +
                                    ",algo=" + curve.algo + ",trial=" + std::to_string(t) +
                                    ": " + out.error);
          continue;
        }
        valid.push_back(&out);
      }
      if (!valid.empty()) {
        const std::size_t len = valid.front()->curve.size();
        for (std::size_t i = 0; i < len; ++i) {
          std::vector<double> vals;
          vals.reserve(valid.size());
          for (const detail::TrialOutcome* out : valid) vals.push_back(out->curve[i]);
          curve.nmse_db.push_back(detail::median(std::move(vals)));
        }
        std::vector<double> iters_to;
        for (const detail::TrialOutcome* out : valid) {
          const double target = out->curve.back() + 1.0;
          std::size_t i = 0;
          while (i < out->curve.size() && out->curve[i] > target) ++i;
          iters_to.push_back(static_cast<double>(i));
        }
        curve.iters_to_1db_median = detail::median(std::move(iters_to));
      }
      result.curves.push_back(std::move(curve));
    }
  }
  return result;
}

inline void to_json(json& j, const SweepRow& r) {
  j = json{{"kappa", r.kappa},           {"algo", r.algo},
           {"nmse_db_agg", r.nmse_db_agg}, {"nmse_db_iqr", r.nmse_db_iqr},
           {"diverged", r.diverged},     {"iters_mean", r.iters_mean}};
}
inline void from_json(const json& j, SweepRow& r) {
  r.kappa = j.at("kappa").get<double>();
  r.algo = j.at("algo").get<std::string>();
  r.nmse_db_agg = j.at("nmse_db_agg").get<double>();
  r.nmse_db_iqr = j.at("nmse_db_iqr").get<double>();
  r.diverged = j.at("diverged").get<int>();
  r.iters_mean = j.at("iters_mean").get<double>();
}

inline void to_json(json& j, const SweepResult& r) {
  j = json{{"schema_version", r.schema_version}, {"code_version", r.code_version},
           {"config_hash", r.config_hash},       {"seeds", r.seeds},
           {"rows", r.rows},                     {"errors", r.errors}};
}
inline void from_json(const json& j, SweepResult& r) {
  r.schema_version = j.at("schema_version").get<int>();
  r.code_version = j.at("code_version").get<std::string>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  r.rows = j.at("rows").get<std::vector<SweepRow>>();
  r.errors = j.value("errors", std::vector<std::string>{});
}

inline void to_json(json& j, const TraceCurve& c) {
  j = json{{"kappa", c.kappa},
           {"algo", c.algo},
           {"nmse_db", c.nmse_db},
           {"iters_to_1db_median", c.iters_to_1db_median},
           {"diverged", c.diverged}};
}
inline void from_json(const json& j, TraceCurve& c) {
  c.kappa = j.at("kappa").get<double>();
  c.algo = j.at("algo").get<std::string>();
  c.nmse_db = j.at("nmse_db").get<std::vector<double>>();
  c.iters_to_1db_median = j.at("iters_to_1db_median").get<double>();
  c.diverged = j.at("diverged").get<int>();
}

inline void to_json(json& j, const TraceResult& r) {
  j = json{{"schema_version", r.schema_version}, {"code_version", r.code_version},
           {"config_hash", r.config_hash},       {"seeds", r.seeds},
           {"curves", r.curves},                 {"errors", r.errors}};
}
inline void from_json(const json& j, TraceResult& r) {
  r.schema_version = j.at("schema_version").get<int>();
  r.code_version = j.at("code_version").get<std::string>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  r.curves = j.at("curves").get<std::vector<TraceCurve>>();
  r.errors = j.value("errors", std::vector<std::string>{});
}

inline std::string sweep_csv(const SweepResult& result) {
  std::string out = "kappa,algo,nmse_db_agg,nmse_db_iqr,diverged,iters_mean\n";
  for (const SweepRow& r : result.rows)
    out += format_double(r.kappa) + ',' + r.algo + ',' + format_double(r.nmse_db_agg) + ',' +
           format_double(r.nmse_db_iqr) + ',' + std::to_string(r.diverged) + ',' +
           format_double(r.iters_mean) + '\n';
  return out;
}

inline std::string trace_csv(const TraceResult& result) {
  std::string out = "kappa,algo,iter,nmse_db\n";
  for (const TraceCurve& c : result.curves)
    for (std::size_t i = 0; i < c.nmse_db.size(); ++i)
      out += format_double(c.kappa) + ',' + c.algo + ',' + std::to_string(i) + ',' +
             format_double(c.nmse_db[i]) + '\n';
  return out;
}

}  // namespace emvamp
