#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "icse/model.hpp"
#include "icse/rng.hpp"

using namespace icse;

namespace {

ModelConfig grad_config() {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.n_ctx = 6;
  cfg.d_filter = 8;
  return cfg;
}

void randomize(ModelWeights& w, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  for_each_tensor(w, [&](const std::string&, Tensor& t) {
    for (double& v : t.data) v = rng.normal(0.0, scale);
  });
}

std::vector<BatchSample> random_batch(const ModelConfig& cfg, int b, int T,
                                      std::uint64_t seed) {
  Rng rng(seed);
  std::vector<BatchSample> batch(static_cast<std::size_t>(b));
  for (BatchSample& s : batch) {
    s.tokens.resize(T, cfg.d_token());
    s.targets.resize(T, cfg.n_x);
    for (Eigen::Index i = 0; i < s.tokens.rows(); ++i) {
      for (Eigen::Index j = 0; j < s.tokens.cols(); ++j) {
        s.tokens(i, j) = rng.normal(0.0, 1.0);
      }
    }
    for (Eigen::Index i = 0; i < s.targets.rows(); ++i) {
      for (Eigen::Index j = 0; j < s.targets.cols(); ++j) {
        s.targets(i, j) = rng.normal(0.0, 1.0);
      }
    }
  }
  return batch;
}

}  // namespace

// Every analytic gradient component against central finite differences.
TEST(Backward, FiniteDifferenceCheck) {
  const ModelConfig cfg = grad_config();
  ModelWeights w = make_weights<double>(cfg);
  randomize(w, 21);
  const auto batch = random_batch(cfg, 2, 6, 22);

  const LossAndGrads lg = backward(w, cfg, batch);
  const double h = 1e-5;
  double worst = 0.0;
  std::string worst_name;

  std::vector<Tensor*> w_tensors, g_tensors;
  std::vector<std::string> names;
  for_each_tensor(w, [&](const std::string& n, Tensor& t) {
    w_tensors.push_back(&t);
    names.push_back(n);
  });
  for_each_tensor(const_cast<ModelWeights&>(lg.grads),
                  [&](const std::string&, Tensor& t) { g_tensors.push_back(&t); });

  for (std::size_t ti = 0; ti < w_tensors.size(); ++ti) {
    Tensor& t = *w_tensors[ti];
    for (std::size_t j = 0; j < t.data.size(); ++j) {
      const double orig = t.data[j];
      t.data[j] = orig + h;
      const double lp = loss(w, cfg, batch);
      t.data[j] = orig - h;
      const double lm = loss(w, cfg, batch);
      t.data[j] = orig;
      const double numeric = (lp - lm) / (2.0 * h);
      const double analytic = g_tensors[ti]->data[j];
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      if (rel > worst) {
        worst = rel;
        worst_name = names[ti];
      }
      ASSERT_LE(rel, 1e-4) << names[ti] << "[" << j << "] analytic=" << analytic
                           << " numeric=" << numeric;
    }
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
  (void)worst_name;
}

TEST(Backward, ZeroResidualGivesZeroGradients) {
  const ModelConfig cfg = grad_config();
  ModelWeights w = make_weights<double>(cfg);
  randomize(w, 31);
  std::vector<BatchSample> batch = random_batch(cfg, 2, 5, 32);
  for (BatchSample& s : batch) {
    s.targets = forward(w, cfg, s.tokens);
  }
  const LossAndGrads lg = backward(w, cfg, batch);
  EXPECT_DOUBLE_EQ(lg.loss, 0.0);
  for_each_tensor(lg.grads, [&](const std::string& name, const Tensor& t) {
    for (double v : t.data) {
      ASSERT_EQ(v, 0.0) << name;
    }
  });
}

// Scaling the output gradient by a power of two scales every weight gradient
// exactly.
TEST(Backward, LinearInOutputGradient) {
  const ModelConfig cfg = grad_config();
  ModelWeights w = make_weights<double>(cfg);
  randomize(w, 51);
  const auto batch = random_batch(cfg, 1, 4, 52);

  ForwardCache<double> cache;
  const RowMat<double> pred = forward(w, cfg, batch[0].tokens, &cache);
  const RowMat<double> d_out = 2.0 * (pred - batch[0].targets);

  ModelWeights g1 = make_weights<double>(cfg);
  ModelWeights g2 = make_weights<double>(cfg);
  backward(w, cfg, cache, d_out, g1);
  backward(w, cfg, cache, RowMat<double>(2.0 * d_out), g2);

  std::vector<const Tensor*> t1, t2;
  for_each_tensor(g1, [&](const std::string&, const Tensor& t) { t1.push_back(&t); });
  for_each_tensor(g2, [&](const std::string&, const Tensor& t) { t2.push_back(&t); });
  for (std::size_t i = 0; i < t1.size(); ++i) {
    for (std::size_t j = 0; j < t1[i]->data.size(); ++j) {
      ASSERT_EQ(2.0 * t1[i]->data[j], t2[i]->data[j]);
    }
  }
}

TEST(Backward, BatchGradientIsMeanOfSequenceGradients) {
  const ModelConfig cfg = grad_config();
  ModelWeights w = make_weights<double>(cfg);
  randomize(w, 61);
  const auto batch = random_batch(cfg, 3, 5, 62);
  const LossAndGrads lg = backward(w, cfg, batch);

  ModelWeights manual = make_weights<double>(cfg);
  double manual_loss = 0.0;
  for (const BatchSample& s : batch) {
    manual_loss += sequence_backward(w, cfg, s.tokens, s.targets, manual);
  }
  manual_loss /= 3.0;
  EXPECT_NEAR(lg.loss, manual_loss, 1e-12);

  std::vector<const Tensor*> got, want;
  for_each_tensor(lg.grads, [&](const std::string&, const Tensor& t) { got.push_back(&t); });
  for_each_tensor(manual, [&](const std::string&, const Tensor& t) { want.push_back(&t); });
  for (std::size_t i = 0; i < got.size(); ++i) {
    for (std::size_t j = 0; j < got[i]->data.size(); ++j) {
      ASSERT_NEAR(got[i]->data[j], want[i]->data[j] / 3.0, 1e-14);
    }
  }
}
