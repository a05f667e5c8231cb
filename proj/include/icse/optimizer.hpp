#pragma once

// AdamW-style optimizer: bias-corrected adaptive moments with decoupled
// weight decay, global gradient-norm clipping, and a linear-warmup +
// cosine-decay learning-rate schedule.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "icse/model.hpp"

namespace icse {

struct OptimizerConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double grad_clip = 1.0;     // <= 0 disables clipping
  int warmup_iters = 200;
  int total_iters = 1;
  double final_lr_frac = 0.1;  // cosine decays to this fraction

  void validate() const {
    if (!(learning_rate > 0.0)) {
      throw std::invalid_argument("OptimizerConfig: learning_rate must be > 0");
    }
    if (total_iters < 1) {
      throw std::invalid_argument("OptimizerConfig: total_iters must be >= 1");
    }
    if (warmup_iters < 0) {
      throw std::invalid_argument("OptimizerConfig: warmup_iters must be >= 0");
    }
  }
};

// Learning rate for 0-based iteration `iter`.
inline double lr_at(const OptimizerConfig& cfg, int iter) {
  if (iter < cfg.warmup_iters) {
    return cfg.learning_rate * static_cast<double>(iter + 1) /
           static_cast<double>(cfg.warmup_iters);
  }
  const int span = cfg.total_iters - cfg.warmup_iters;
  if (span <= 0) return cfg.learning_rate;
  const double progress =
      static_cast<double>(iter - cfg.warmup_iters) / static_cast<double>(span);
  const double floor_lr = cfg.final_lr_frac * cfg.learning_rate;
  return floor_lr + (cfg.learning_rate - floor_lr) * 0.5 *
                        (1.0 + std::cos(3.14159265358979323846 * progress));
}

// Scales gradients in place so the global L2 norm is at most max_norm.
// Returns the pre-clip norm.
inline double clip_global_norm(ModelWeights& grads, double max_norm) {
  double sumsq = 0.0;
  for_each_tensor(grads, [&](const std::string&, const Tensor& t) {
    for (double v : t.data) sumsq += v * v;
  });
  const double norm = std::sqrt(sumsq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for_each_tensor(grads, [&](const std::string&, Tensor& t) {
      for (double& v : t.data) v *= scale;
    });
  }
  return norm;
}

struct AdamState {
  ModelWeights m, v;
  std::int64_t step = 0;

  static AdamState init(const ModelConfig& cfg) {
    AdamState st;
    st.m = make_weights<double>(cfg);
    st.v = make_weights<double>(cfg);
    return st;
  }
};

// One decoupled-weight-decay adaptive-moment update at the given step size.
inline void optimizer_step(ModelWeights& weights, const ModelWeights& grads,
                           AdamState& state, const OptimizerConfig& cfg,
                           double lr) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

  std::vector<Tensor*> w_list, g_list, m_list, v_list;
  for_each_tensor(weights, [&](const std::string&, Tensor& t) { w_list.push_back(&t); });
  for_each_tensor(const_cast<ModelWeights&>(grads),
                  [&](const std::string&, Tensor& t) { g_list.push_back(&t); });
  for_each_tensor(state.m, [&](const std::string&, Tensor& t) { m_list.push_back(&t); });
  for_each_tensor(state.v, [&](const std::string&, Tensor& t) { v_list.push_back(&t); });

  for (std::size_t i = 0; i < w_list.size(); ++i) {
    Tensor& w = *w_list[i];
    const Tensor& g = *g_list[i];
    Tensor& m = *m_list[i];
    Tensor& v = *v_list[i];
    for (std::size_t j = 0; j < w.data.size(); ++j) {
      m.data[j] = cfg.beta1 * m.data[j] + (1.0 - cfg.beta1) * g.data[j];
      v.data[j] = cfg.beta2 * v.data[j] + (1.0 - cfg.beta2) * g.data[j] * g.data[j];
      const double m_hat = m.data[j] / bc1;
      const double v_hat = v.data[j] / bc2;
      w.data[j] -= lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) +
                         cfg.weight_decay * w.data[j]);
    }
  }
}

}  // namespace icse
