#pragma once

// Test-protocol harness: runs a set of estimators over a shared population of
// unseen plant instances, accumulates absolute-error statistics against the
// noiseless states, times estimates on a dedicated serialized pass, and
// exports everything as CSV plus a JSON summary.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "icse/checkpoint.hpp"
#include "icse/ekf.hpp"
#include "icse/model.hpp"
#include "icse/process.hpp"
#include "icse/rng.hpp"

namespace icse {

namespace stats {

inline double mean(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("stats::mean: empty");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Sample standard deviation; zero for fewer than two points.
inline double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// Linear-interpolation quantile on a copy of the data, q in [0, 1].
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("stats::quantile: empty");
  if (q < 0.0 || q > 1.0) throw std::invalid_argument("stats::quantile: bad q");
  std::sort(v.begin(), v.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= v.size()) return v.back();
  const double frac = h - static_cast<double>(lo);
  return v[lo] + frac * (v[lo + 1] - v[lo]);
}

}  // namespace stats

enum class Deployment { streaming, batch };
enum class Precision { f64, f32 };

struct EstimateRun {
  std::vector<SimState> estimates;
  std::vector<double> latency_ms;
};

// A state estimator evaluated over recorded trajectories. Implementations
// must be safe to call concurrently from several threads.
class Estimator {
 public:
  virtual ~Estimator() = default;
  virtual std::string name() const = 0;
  virtual EstimateRun run(const Trajectory& traj) const = 0;
};

class MetaEstimator : public Estimator {
 public:
  MetaEstimator(Checkpoint ckpt, Deployment deployment,
                Precision precision = Precision::f64)
      : cfg_(ckpt.config),
        std_(ckpt.standardizer),
        deployment_(deployment),
        precision_(precision) {
    if (precision_ == Precision::f64) {
      w64_ = std::make_shared<const ModelWeights>(std::move(ckpt.weights));
    } else {
      w32_ = std::make_shared<const ModelWeightsT<float>>(
          cast_weights<float>(ckpt.weights));
    }
  }

  std::string name() const override { return "meta"; }

  EstimateRun run(const Trajectory& traj) const override {
    if (precision_ == Precision::f64) return run_impl<double>(w64_, traj);
    return run_impl<float>(w32_, traj);
  }

 private:
  template <class S>
  EstimateRun run_impl(const std::shared_ptr<const ModelWeightsT<S>>& w,
                       const Trajectory& traj) const {
    using clock = std::chrono::steady_clock;
    EstimateRun out;
    const std::size_t n = traj.length();
    out.estimates.reserve(n);
    out.latency_ms.reserve(n);
    if (deployment_ == Deployment::streaming) {
      StreamingEstimator<S> stream(w, cfg_, std_);
      for (std::size_t k = 0; k < n; ++k) {
        const auto t0 = clock::now();
        const SimState est = stream.push(traj.inputs[k], traj.outputs[k]);
        const auto t1 = clock::now();
        out.estimates.push_back(est);
        out.latency_ms.push_back(
            std::chrono::duration<double, std::milli>(t1 - t0).count());
      }
    } else {
      const auto t0 = clock::now();
      out.estimates = batch_estimate(*w, cfg_, std_, traj.inputs, traj.outputs);
      const auto t1 = clock::now();
      const double amortized =
          std::chrono::duration<double, std::milli>(t1 - t0).count() /
          static_cast<double>(n);
      out.latency_ms.assign(n, amortized);
    }
    return out;
  }

  ModelConfig cfg_;
  Standardizer std_;
  Deployment deployment_;
  Precision precision_;
  std::shared_ptr<const ModelWeights> w64_;
  std::shared_ptr<const ModelWeightsT<float>> w32_;
};

class OracleEkfEstimator : public Estimator {
 public:
  explicit OracleEkfEstimator(EkfConfig cfg = EkfConfig::oracle_default())
      : cfg_(std::move(cfg)) {}

  std::string name() const override { return "oracle_ekf"; }

  EstimateRun run(const Trajectory& traj) const override {
    const FilterRun fr = run_filter(traj, cfg_, traj.params);
    return EstimateRun{fr.estimates, fr.latency_ms};
  }

 private:
  EkfConfig cfg_;
};

class EnlargedEkfEstimator : public Estimator {
 public:
  EnlargedEkfEstimator(ProcessParams nominal_params,
                       EkfConfig cfg = EkfConfig::enlarged_default())
      : nominal_(nominal_params), cfg_(std::move(cfg)) {}

  std::string name() const override { return "enlarged_ekf"; }

  EstimateRun run(const Trajectory& traj) const override {
    const FilterRun fr = run_filter(traj, cfg_, nominal_);
    return EstimateRun{fr.estimates, fr.latency_ms};
  }

 private:
  ProcessParams nominal_;
  EkfConfig cfg_;
};

// Constant steady-state predictor; the floor any learned filter must beat.
class ConstantEstimator : public Estimator {
 public:
  explicit ConstantEstimator(SimState value) : value_(value) {}
  std::string name() const override { return "constant"; }
  EstimateRun run(const Trajectory& traj) const override {
    using clock = std::chrono::steady_clock;
    EstimateRun out;
    out.estimates.reserve(traj.length());
    out.latency_ms.reserve(traj.length());
    for (std::size_t k = 0; k < traj.length(); ++k) {
      const auto t0 = clock::now();
      out.estimates.push_back(value_);
      const auto t1 = clock::now();
      out.latency_ms.push_back(
          std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return out;
  }

 private:
  SimState value_;
};

// Debugging hook: replays the noiseless states, so every error is zero.
class TruthEstimator : public Estimator {
 public:
  std::string name() const override { return "truth"; }
  EstimateRun run(const Trajectory& traj) const override {
    EstimateRun out;
    out.estimates = traj.clean_states;
    out.latency_ms.assign(traj.length(), 0.0);
    return out;
  }
};

struct EvalConfig {
  int n_test = 100;
  int horizon = 500;
  int transient_cutoff = 50;
  std::vector<std::string> estimators = {"meta", "oracle_ekf", "enlarged_ekf"};
  std::uint64_t seed = 0;
  Deployment deployment = Deployment::streaming;
  Precision precision = Precision::f64;
  int threads = 0;            // 0: hardware concurrency
  int timing_instances = 3;   // serialized latency pass population
  int timing_repeats = 1;     // per-step latency = median over this many passes
  double ekf_jacobian_step = 1e-6;
  ClassPrior prior;
  NoiseSpec noise;

  void validate() const {
    if (n_test < 1) throw std::invalid_argument("EvalConfig: n_test must be >= 1");
    if (horizon < 1) throw std::invalid_argument("EvalConfig: horizon must be >= 1");
    if (transient_cutoff < 0 || transient_cutoff >= horizon) {
      throw std::invalid_argument(
          "EvalConfig: transient_cutoff must be in [0, horizon)");
    }
    if (estimators.empty()) {
      throw std::invalid_argument("EvalConfig: estimator list is empty");
    }
    for (const std::string& e : estimators) {
      if (e != "meta" && e != "oracle_ekf" && e != "enlarged_ekf" &&
          e != "constant" && e != "truth") {
        throw std::invalid_argument("EvalConfig: unknown estimator '" + e + "'");
      }
    }
    if (timing_instances < 1 || timing_repeats < 1) {
      throw std::invalid_argument("EvalConfig: timing fields must be >= 1");
    }
    if (threads < 0) throw std::invalid_argument("EvalConfig: threads must be >= 0");
    prior.validate();
    noise.validate();
  }

  int resolved_threads() const {
    int t = threads;
    if (t == 0) {
      t = static_cast<int>(std::thread::hardware_concurrency());
      if (t < 1) t = 1;
    }
    return std::min(t, n_test);
  }
};

struct EstimatorReport {
  std::string name;
  // Per time step: mean/std of |x - x_hat| across instances.
  std::vector<double> mean_abs_x1, std_abs_x1;
  std::vector<double> mean_abs_x2, std_abs_x2;
  struct Aggregate {
    double mean = 0.0, min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
  };
  Aggregate agg_x1, agg_x2;  // over time x instances
  double rmse_post_transient = 0.0;  // both channels, t >= transient_cutoff
  double mae_x1 = 0.0, mae_x2 = 0.0;  // post-transient
  double latency_ms_mean = 0.0, latency_ms_std = 0.0;
  std::vector<double> latency_mean_t, latency_std_t;  // timing pass, per step
  int failures = 0;
  int n_used = 0;
};

struct EvalReport {
  std::vector<EstimatorReport> estimators;
  int n_test = 0;
  int horizon = 0;
  int transient_cutoff = 0;
};

// The fixed population of unseen instances every estimator is scored on.
inline std::vector<Trajectory> make_test_population(const EvalConfig& cfg) {
  std::vector<Trajectory> population;
  population.reserve(static_cast<std::size_t>(cfg.n_test));
  constexpr std::uint64_t kAttempts = 64;
  for (int i = 0; i < cfg.n_test; ++i) {
    bool made = false;
    for (std::uint64_t a = 0; a < kAttempts && !made; ++a) {
      const std::uint64_t seed =
          derive_seed(cfg.seed, SeedDomain::test_data,
                      static_cast<std::uint64_t>(i) * kAttempts + a);
      try {
        population.push_back(
            simulate_trajectory(cfg.prior, cfg.noise, cfg.horizon, seed));
        made = true;
      } catch (const simulation_divergence&) {
      }
    }
    if (!made) {
      throw std::runtime_error("test population: instance " + std::to_string(i) +
                               " kept diverging");
    }
  }
  return population;
}

inline std::unique_ptr<Estimator> make_estimator(const std::string& kind,
                                                 const EvalConfig& cfg,
                                                 const Checkpoint* ckpt) {
  if (kind == "meta") {
    if (ckpt == nullptr) {
      throw std::invalid_argument("estimator 'meta' needs a checkpoint");
    }
    if (cfg.deployment == Deployment::batch && cfg.horizon > ckpt->config.n_ctx) {
      throw std::invalid_argument(
          "batch deployment needs horizon <= n_ctx; use streaming");
    }
    return std::make_unique<MetaEstimator>(*ckpt, cfg.deployment, cfg.precision);
  }
  if (kind == "oracle_ekf") {
    EkfConfig e = EkfConfig::oracle_default();
    e.jacobian_step = cfg.ekf_jacobian_step;
    e.x0_guess = Eigen::Vector2d(cfg.prior.x_s.x1, cfg.prior.x_s.x2);
    return std::make_unique<OracleEkfEstimator>(e);
  }
  if (kind == "enlarged_ekf") {
    EkfConfig e = EkfConfig::enlarged_default();
    e.jacobian_step = cfg.ekf_jacobian_step;
    e.x0_guess =
        Eigen::Vector3d(cfg.prior.x_s.x1, cfg.prior.x_s.x2, cfg.prior.nominal.UA2);
    return std::make_unique<EnlargedEkfEstimator>(cfg.prior.nominal, e);
  }
  if (kind == "constant") {
    return std::make_unique<ConstantEstimator>(cfg.prior.x_s);
  }
  if (kind == "truth") {
    return std::make_unique<TruthEstimator>();
  }
  throw std::invalid_argument("unknown estimator kind '" + kind + "'");
}

// Per-step latency of one estimator over one trajectory: median across
// `repeats` identical passes, computed on the calling thread.
inline std::vector<double> time_estimator(const Estimator& estimator,
                                          const Trajectory& traj, int repeats) {
  if (repeats < 1) throw std::invalid_argument("time_estimator: repeats >= 1");
  std::vector<std::vector<double>> passes;
  passes.reserve(static_cast<std::size_t>(repeats));
  for (int r = 0; r < repeats; ++r) {
    passes.push_back(estimator.run(traj).latency_ms);
  }
  const std::size_t n = passes.front().size();
  std::vector<double> medians(n, 0.0);
  std::vector<double> column(static_cast<std::size_t>(repeats));
  for (std::size_t k = 0; k < n; ++k) {
    for (int r = 0; r < repeats; ++r) {
      column[static_cast<std::size_t>(r)] = passes[static_cast<std::size_t>(r)][k];
    }
    medians[k] = stats::quantile(column, 0.5);
  }
  return medians;
}

// Scores already-built estimators on a fixed population. Statistics are
// reduced in instance order, so results do not depend on the thread count.
inline EvalReport evaluate_estimators(
    const EvalConfig& cfg, const std::vector<Trajectory>& population,
    const std::vector<const Estimator*>& estimators) {
  cfg.validate();
  if (estimators.empty()) {
    throw std::invalid_argument("evaluate: no estimators");
  }
  const std::size_t n_t = static_cast<std::size_t>(cfg.horizon);

  EvalReport report;
  report.n_test = cfg.n_test;
  report.horizon = cfg.horizon;
  report.transient_cutoff = cfg.transient_cutoff;

  for (const Estimator* est : estimators) {
    EstimatorReport er;
    er.name = est->name();

    // Error pass: instances in parallel, reduced in instance order.
    std::vector<std::vector<SimState>> estimates(population.size());
    std::vector<char> ok(population.size(), 0);
    {
      const int n_workers = cfg.resolved_threads();
      std::vector<std::thread> pool;
      auto worker = [&](int wid) {
        for (std::size_t i = static_cast<std::size_t>(wid); i < population.size();
             i += static_cast<std::size_t>(n_workers)) {
          try {
            EstimateRun run = est->run(population[i]);
            bool finite = run.estimates.size() == population[i].length();
            for (const SimState& s : run.estimates) {
              finite = finite && std::isfinite(s.x1) && std::isfinite(s.x2);
            }
            if (finite) {
              estimates[i] = std::move(run.estimates);
              ok[i] = 1;
            }
          } catch (const std::exception&) {
            // failure recorded below; instance excluded from aggregates
          }
        }
      };
      if (n_workers == 1) {
        worker(0);
      } else {
        for (int wid = 0; wid < n_workers; ++wid) pool.emplace_back(worker, wid);
        for (std::thread& th : pool) th.join();
      }
    }

    for (std::size_t i = 0; i < population.size(); ++i) {
      if (ok[i]) ++er.n_used;
      else ++er.failures;
    }
    if (er.n_used == 0) {
      throw std::runtime_error("estimator '" + er.name +
                               "' failed on every test instance");
    }

    er.mean_abs_x1.resize(n_t);
    er.std_abs_x1.resize(n_t);
    er.mean_abs_x2.resize(n_t);
    er.std_abs_x2.resize(n_t);
    std::vector<double> all_x1, all_x2, post_sq, post_x1, post_x2;
    all_x1.reserve(n_t * static_cast<std::size_t>(er.n_used));
    all_x2.reserve(n_t * static_cast<std::size_t>(er.n_used));
    std::vector<double> col_x1, col_x2;
    col_x1.reserve(static_cast<std::size_t>(er.n_used));
    col_x2.reserve(static_cast<std::size_t>(er.n_used));
    for (std::size_t t = 0; t < n_t; ++t) {
      col_x1.clear();
      col_x2.clear();
      for (std::size_t i = 0; i < population.size(); ++i) {
        if (!ok[i]) continue;
        const SimState& truth = population[i].clean_states[t];
        const SimState& est_t = estimates[i][t];
        const double e1 = std::abs(truth.x1 - est_t.x1);
        const double e2 = std::abs(truth.x2 - est_t.x2);
        col_x1.push_back(e1);
        col_x2.push_back(e2);
        all_x1.push_back(e1);
        all_x2.push_back(e2);
        if (static_cast<int>(t) >= cfg.transient_cutoff) {
          post_x1.push_back(e1);
          post_x2.push_back(e2);
          post_sq.push_back(e1 * e1);
          post_sq.push_back(e2 * e2);
        }
      }
      er.mean_abs_x1[t] = stats::mean(col_x1);
      er.std_abs_x1[t] = stats::stddev(col_x1);
      er.mean_abs_x2[t] = stats::mean(col_x2);
      er.std_abs_x2[t] = stats::stddev(col_x2);
    }

    auto fill_agg = [](const std::vector<double>& v,
                       EstimatorReport::Aggregate& a) {
      a.mean = stats::mean(v);
      a.min = stats::quantile(v, 0.0);
      a.q1 = stats::quantile(v, 0.25);
      a.median = stats::quantile(v, 0.5);
      a.q3 = stats::quantile(v, 0.75);
      a.max = stats::quantile(v, 1.0);
    };
    fill_agg(all_x1, er.agg_x1);
    fill_agg(all_x2, er.agg_x2);
    er.rmse_post_transient = std::sqrt(stats::mean(post_sq));
    er.mae_x1 = stats::mean(post_x1);
    er.mae_x2 = stats::mean(post_x2);

    // Timing pass: serialized on this thread, over instances the estimator
    // handled, warm-up step excluded from the scalar statistics.
    std::vector<std::vector<double>> lat_series;
    for (std::size_t i = 0;
         i < population.size() &&
         lat_series.size() < static_cast<std::size_t>(cfg.timing_instances);
         ++i) {
      if (!ok[i]) continue;
      lat_series.push_back(time_estimator(*est, population[i], cfg.timing_repeats));
    }
    const int timed = static_cast<int>(lat_series.size());
    er.latency_mean_t.resize(n_t);
    er.latency_std_t.resize(n_t);
    std::vector<double> col(static_cast<std::size_t>(timed));
    std::vector<double> flat;
    for (std::size_t t = 0; t < n_t; ++t) {
      for (int i = 0; i < timed; ++i) {
        col[static_cast<std::size_t>(i)] = lat_series[static_cast<std::size_t>(i)][t];
        if (t >= 1) flat.push_back(col[static_cast<std::size_t>(i)]);
      }
      er.latency_mean_t[t] = stats::mean(col);
      er.latency_std_t[t] = stats::stddev(col);
    }
    if (flat.empty()) flat.push_back(er.latency_mean_t[0]);  // horizon == 1
    er.latency_ms_mean = stats::mean(flat);
    er.latency_ms_std = stats::stddev(flat);

    report.estimators.push_back(std::move(er));
  }
  return report;
}

// Full protocol from a config: builds the test population and the named
// estimators, then scores them.
inline EvalReport evaluate(const EvalConfig& cfg, const Checkpoint* ckpt = nullptr) {
  cfg.validate();
  const std::vector<Trajectory> population = make_test_population(cfg);
  std::vector<std::unique_ptr<Estimator>> owned;
  std::vector<const Estimator*> estimators;
  for (const std::string& kind : cfg.estimators) {
    owned.push_back(make_estimator(kind, cfg, ckpt));
    estimators.push_back(owned.back().get());
  }
  return evaluate_estimators(cfg, population, estimators);
}

namespace detail {
inline std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace detail

// Writes error_x1.csv, error_x2.csv, aggregate.csv, timing.csv and
// summary.json under `dir`. Re-export of the same report is byte-identical.
inline void export_report(const EvalReport& report,
                          const std::filesystem::path& dir) {
  if (report.estimators.empty()) {
    throw std::invalid_argument("export_report: empty report");
  }
  std::filesystem::create_directories(dir);

  auto write_series = [&](const std::filesystem::path& path, bool x1) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << "t";
    for (const EstimatorReport& er : report.estimators) {
      out << "," << er.name << "_mean," << er.name << "_std";
    }
    out << "\n";
    for (int t = 0; t < report.horizon; ++t) {
      out << t;
      const std::size_t ti = static_cast<std::size_t>(t);
      for (const EstimatorReport& er : report.estimators) {
        out << "," << detail::fmt_g17(x1 ? er.mean_abs_x1[ti] : er.mean_abs_x2[ti])
            << "," << detail::fmt_g17(x1 ? er.std_abs_x1[ti] : er.std_abs_x2[ti]);
      }
      out << "\n";
    }
  };
  write_series(dir / "error_x1.csv", true);
  write_series(dir / "error_x2.csv", false);

  {
    std::ofstream out(dir / "aggregate.csv", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open aggregate.csv");
    out << "estimator,channel,mean,min,q1,median,q3,max\n";
    for (const EstimatorReport& er : report.estimators) {
      for (int ch = 0; ch < 2; ++ch) {
        const auto& a = (ch == 0) ? er.agg_x1 : er.agg_x2;
        out << er.name << ",x" << (ch + 1) << "," << detail::fmt_g17(a.mean)
            << "," << detail::fmt_g17(a.min) << "," << detail::fmt_g17(a.q1)
            << "," << detail::fmt_g17(a.median) << "," << detail::fmt_g17(a.q3)
            << "," << detail::fmt_g17(a.max) << "\n";
      }
    }
  }

  {
    std::ofstream out(dir / "timing.csv", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open timing.csv");
    out << "t";
    for (const EstimatorReport& er : report.estimators) {
      out << "," << er.name << "_mean_ms," << er.name << "_std_ms";
    }
    out << "\n";
    for (int t = 0; t < report.horizon; ++t) {
      out << t;
      const std::size_t ti = static_cast<std::size_t>(t);
      for (const EstimatorReport& er : report.estimators) {
        out << "," << detail::fmt_g17(er.latency_mean_t[ti]) << ","
            << detail::fmt_g17(er.latency_std_t[ti]);
      }
      out << "\n";
    }
  }

  {
    nlohmann::json summary;
    for (const EstimatorReport& er : report.estimators) {
      summary[er.name] = {
          {"rmse_post_transient", er.rmse_post_transient},
          {"mae_x1", er.mae_x1},
          {"mae_x2", er.mae_x2},
          {"latency_ms_mean", er.latency_ms_mean},
          {"latency_ms_std", er.latency_ms_std},
          {"failures", er.failures}};
    }
    std::ofstream out(dir / "summary.json", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open summary.json");
    out << summary.dump(2) << "\n";
  }
}

}  // namespace icse
