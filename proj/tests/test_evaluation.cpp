#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "icse/evaluation.hpp"
#include "icse/rng.hpp"
#include "icse/trainer.hpp"

using namespace icse;
namespace fs = std::filesystem;

namespace {

EvalConfig small_eval_config() {
  EvalConfig cfg;
  cfg.n_test = 4;
  cfg.horizon = 40;
  cfg.transient_cutoff = 5;
  cfg.estimators = {"truth"};
  cfg.seed = 11;
  cfg.timing_instances = 2;
  cfg.threads = 2;
  return cfg;
}

// Fails on one designated instance; used to exercise failure accounting.
class FlakyEstimator : public Estimator {
 public:
  explicit FlakyEstimator(std::uint64_t poison_seed) : poison_(poison_seed) {}
  std::string name() const override { return "flaky"; }
  EstimateRun run(const Trajectory& traj) const override {
    if (traj.seed == poison_) throw std::runtime_error("synthetic failure");
    EstimateRun out;
    out.estimates = traj.clean_states;
    out.latency_ms.assign(traj.length(), 0.0);
    return out;
  }

 private:
  std::uint64_t poison_;
};

Checkpoint tiny_checkpoint(int n_ctx) {
  TrainConfig tc;
  tc.n_itr = 2;
  tc.batch_size = 2;
  tc.n_calibration = 8;
  tc.threads = 1;
  tc.model.n_layers = 1;
  tc.model.n_heads = 1;
  tc.model.n_ctx = n_ctx;
  tc.model.d_filter = 8;
  tc.seed = 5;
  tc.checkpoint_every = 0;
  return train(tc).checkpoint;
}

}  // namespace

TEST(Stats, MatchNaiveReference) {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(3 + rng.next_u64() % 30);
    for (double& x : v) x = rng.normal(0.0, 3.0);

    double naive_mean = 0.0;
    for (double x : v) naive_mean += x;
    naive_mean /= static_cast<double>(v.size());
    ASSERT_NEAR(stats::mean(v), naive_mean, 1e-12);

    if (v.size() > 1) {
      double ss = 0.0;
      for (double x : v) ss += (x - naive_mean) * (x - naive_mean);
      ASSERT_NEAR(stats::stddev(v), std::sqrt(ss / (v.size() - 1)), 1e-12);
    }

    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (double q : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      const double h = q * static_cast<double>(sorted.size() - 1);
      const std::size_t lo = static_cast<std::size_t>(h);
      const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
      const double want = sorted[lo] + (h - lo) * (sorted[hi] - sorted[lo]);
      ASSERT_NEAR(stats::quantile(v, q), want, 1e-12);
    }
  }
}

TEST(Evaluate, PerfectEstimatorHasZeroError) {
  const EvalConfig cfg = small_eval_config();
  const EvalReport report = evaluate(cfg);
  ASSERT_EQ(report.estimators.size(), 1u);
  const EstimatorReport& er = report.estimators[0];
  EXPECT_EQ(er.name, "truth");
  EXPECT_EQ(er.failures, 0);
  EXPECT_EQ(er.n_used, 4);
  for (double v : er.mean_abs_x1) ASSERT_EQ(v, 0.0);
  for (double v : er.mean_abs_x2) ASSERT_EQ(v, 0.0);
  EXPECT_EQ(er.rmse_post_transient, 0.0);
  EXPECT_EQ(er.agg_x1.max, 0.0);
}

TEST(Evaluate, ConstantEstimatorOnQuietPlant) {
  EvalConfig cfg = small_eval_config();
  cfg.estimators = {"constant"};
  cfg.prior.perturb_frac = 0.0;
  cfg.prior.init_perturb_frac = 0.0;
  cfg.prior.prbs_amplitude = 0.0;
  cfg.noise = NoiseSpec::none();
  const EvalReport report = evaluate(cfg);
  const EstimatorReport& er = report.estimators[0];
  for (double v : er.mean_abs_x1) ASSERT_LE(v, 1e-2);
  for (double v : er.mean_abs_x2) ASSERT_LE(v, 1e-2);
}

TEST(Evaluate, FailuresAreCountedAndExcluded) {
  const EvalConfig cfg = small_eval_config();
  const auto population = make_test_population(cfg);
  FlakyEstimator flaky(population[1].seed);
  const EvalReport report = evaluate_estimators(cfg, population, {&flaky});
  const EstimatorReport& er = report.estimators[0];
  EXPECT_EQ(er.failures, 1);
  EXPECT_EQ(er.n_used, static_cast<int>(population.size()) - 1);
  for (double v : er.mean_abs_x1) ASSERT_EQ(v, 0.0);  // survivors are perfect
}

TEST(Evaluate, EstimatorIsolation) {
  EvalConfig one = small_eval_config();
  one.estimators = {"constant"};
  EvalConfig two = small_eval_config();
  two.estimators = {"constant", "truth"};
  const EvalReport a = evaluate(one);
  const EvalReport b = evaluate(two);
  const EstimatorReport& ca = a.estimators[0];
  const EstimatorReport& cb = b.estimators[0];
  ASSERT_EQ(ca.name, "constant");
  ASSERT_EQ(cb.name, "constant");
  for (std::size_t t = 0; t < ca.mean_abs_x1.size(); ++t) {
    ASSERT_EQ(ca.mean_abs_x1[t], cb.mean_abs_x1[t]);
    ASSERT_EQ(ca.std_abs_x2[t], cb.std_abs_x2[t]);
  }
  EXPECT_EQ(ca.rmse_post_transient, cb.rmse_post_transient);
}

TEST(Evaluate, EmptyEstimatorListRejected) {
  EvalConfig cfg = small_eval_config();
  cfg.estimators = {};
  EXPECT_THROW(evaluate(cfg), std::invalid_argument);
}

TEST(Evaluate, MetaNeedsCheckpoint) {
  EvalConfig cfg = small_eval_config();
  cfg.estimators = {"meta"};
  EXPECT_THROW(evaluate(cfg, nullptr), std::invalid_argument);
}

TEST(Evaluate, UnknownEstimatorRejected) {
  EvalConfig cfg = small_eval_config();
  cfg.estimators = {"psychic"};
  EXPECT_THROW(evaluate(cfg), std::invalid_argument);
}

TEST(Evaluate, BatchMatchesStreamingWithinContext) {
  const Checkpoint ckpt = tiny_checkpoint(48);
  EvalConfig cfg = small_eval_config();
  cfg.estimators = {"meta"};
  cfg.horizon = 48;
  cfg.n_test = 2;
  cfg.deployment = Deployment::streaming;
  const EvalReport streaming = evaluate(cfg, &ckpt);
  cfg.deployment = Deployment::batch;
  const EvalReport batch = evaluate(cfg, &ckpt);
  for (std::size_t t = 0; t < 48; ++t) {
    ASSERT_NEAR(streaming.estimators[0].mean_abs_x1[t],
                batch.estimators[0].mean_abs_x1[t], 1e-9);
    ASSERT_NEAR(streaming.estimators[0].mean_abs_x2[t],
                batch.estimators[0].mean_abs_x2[t], 1e-9);
  }
}

TEST(Evaluate, BatchRejectsHorizonPastContext) {
  const Checkpoint ckpt = tiny_checkpoint(16);
  EvalConfig cfg = small_eval_config();
  cfg.estimators = {"meta"};
  cfg.horizon = 40;
  cfg.deployment = Deployment::batch;
  EXPECT_THROW(evaluate(cfg, &ckpt), std::invalid_argument);
}

TEST(Evaluate, SinglePrecisionDeployment) {
  const Checkpoint ckpt = tiny_checkpoint(40);
  EvalConfig cfg = small_eval_config();
  cfg.estimators = {"meta"};
  cfg.n_test = 2;
  cfg.precision = Precision::f32;
  const EvalReport report = evaluate(cfg, &ckpt);
  for (double v : report.estimators[0].mean_abs_x1) {
    ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(ExportReport, SchemaAndIdempotence) {
  EvalConfig cfg = small_eval_config();
  cfg.estimators = {"constant", "truth"};
  const EvalReport report = evaluate(cfg);
  const fs::path dir = fs::temp_directory_path() / "icse_eval_export";
  fs::remove_all(dir);
  export_report(report, dir);

  auto first_line = [](const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    return line;
  };
  EXPECT_EQ(first_line(dir / "error_x1.csv"),
            "t,constant_mean,constant_std,truth_mean,truth_std");
  EXPECT_EQ(first_line(dir / "error_x2.csv"),
            "t,constant_mean,constant_std,truth_mean,truth_std");
  EXPECT_EQ(first_line(dir / "aggregate.csv"),
            "estimator,channel,mean,min,q1,median,q3,max");
  EXPECT_EQ(first_line(dir / "timing.csv"),
            "t,constant_mean_ms,constant_std_ms,truth_mean_ms,truth_std_ms");

  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string{std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>()};
  };
  const std::string before = slurp(dir / "error_x1.csv");
  export_report(report, dir);
  EXPECT_EQ(slurp(dir / "error_x1.csv"), before);
  fs::remove_all(dir);
}

TEST(ExportReport, ParseBackMatchesReport) {
  EvalConfig cfg = small_eval_config();
  cfg.estimators = {"constant"};
  const EvalReport report = evaluate(cfg);
  const fs::path dir = fs::temp_directory_path() / "icse_eval_parseback";
  fs::remove_all(dir);
  export_report(report, dir);

  std::ifstream in(dir / "error_x1.csv");
  std::string line;
  std::getline(in, line);  // header
  std::size_t t = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    ASSERT_EQ(std::stoul(cell), t);
    std::getline(ss, cell, ',');
    ASSERT_NEAR(std::stod(cell), report.estimators[0].mean_abs_x1[t], 1e-12);
    std::getline(ss, cell, ',');
    ASSERT_NEAR(std::stod(cell), report.estimators[0].std_abs_x1[t], 1e-12);
    ++t;
  }
  EXPECT_EQ(t, static_cast<std::size_t>(report.horizon));
  fs::remove_all(dir);
}

TEST(ExportReport, EmptyReportRejected) {
  const fs::path dir = fs::temp_directory_path() / "icse_eval_empty";
  fs::remove_all(dir);
  EXPECT_THROW(export_report(EvalReport{}, dir), std::invalid_argument);
  EXPECT_FALSE(fs::exists(dir / "error_x1.csv"));
  fs::remove_all(dir);
}

TEST(TimeEstimator, MedianOverRepeats) {
  const EvalConfig cfg = small_eval_config();
  const auto population = make_test_population(cfg);
  TruthEstimator truth;
  const auto lat = time_estimator(truth, population[0], 5);
  ASSERT_EQ(lat.size(), population[0].length());
  for (double v : lat) ASSERT_GE(v, 0.0);
}
