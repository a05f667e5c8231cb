#pragma once

// Training loop for the meta-filter: every iteration draws a fresh batch of
// simulated plants/inputs/noises (no trajectory seed is ever reused), runs
// forward/backward per sequence on a small worker pool, reduces gradients in
// slot order, and applies one optimizer step. Fully deterministic given the
// config: two identical runs produce bit-identical logs and checkpoints.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "icse/checkpoint.hpp"
#include "icse/model.hpp"
#include "icse/optimizer.hpp"
#include "icse/process.hpp"
#include "icse/standardize.hpp"

namespace icse {

struct TrainConfig {
  int n_itr = 2000;
  int batch_size = 16;
  double learning_rate = 1e-4;
  int warmup_iters = 200;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  int checkpoint_every = 500;  // 0: only the final checkpoint
  int n_calibration = 1024;    // trajectories used to fit the standardizer
  int threads = 0;             // 0: hardware concurrency, capped at batch_size
  ModelConfig model;
  ClassPrior prior;
  NoiseSpec noise;

  void validate() const {
    if (n_itr < 1) throw std::invalid_argument("TrainConfig: n_itr must be >= 1");
    if (batch_size < 1) {
      throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    }
    if (!(learning_rate > 0.0)) {
      throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    }
    if (warmup_iters < 0) {
      throw std::invalid_argument("TrainConfig: warmup_iters must be >= 0");
    }
    if (checkpoint_every < 0) {
      throw std::invalid_argument("TrainConfig: checkpoint_every must be >= 0");
    }
    if (n_calibration < 1) {
      throw std::invalid_argument("TrainConfig: n_calibration must be >= 1");
    }
    if (threads < 0) throw std::invalid_argument("TrainConfig: threads must be >= 0");
    model.validate();
    prior.validate();
    noise.validate();
  }

  int resolved_threads() const {
    int t = threads;
    if (t == 0) {
      t = static_cast<int>(std::thread::hardware_concurrency());
      if (t < 1) t = 1;
    }
    return std::min(t, batch_size);
  }
};

struct TrainLogRecord {
  int iteration = 0;
  double loss = 0.0;
  double rmse = 0.0;     // standardized state rmse of the batch
  double lr = 0.0;
  double elapsed_s = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TrainLogRecord> log;
  int resampled = 0;  // divergent simulations replaced during training
  double elapsed_s = 0.0;
};

class train_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline BatchSample make_batch_sample(const Trajectory& traj,
                                     const Standardizer& std_) {
  const Eigen::Index T = static_cast<Eigen::Index>(traj.length());
  BatchSample s;
  s.tokens.resize(T, 3);
  s.targets.resize(T, 2);
  for (Eigen::Index t = 0; t < T; ++t) {
    const std::size_t k = static_cast<std::size_t>(t);
    const auto tok = std_.standardize_token(traj.inputs[k], traj.outputs[k]);
    s.tokens(t, 0) = tok[0];
    s.tokens(t, 1) = tok[1];
    s.tokens(t, 2) = tok[2];
    const SimState z = std_.standardize_state(traj.clean_states[k]);
    s.targets(t, 0) = z.x1;
    s.targets(t, 1) = z.x2;
  }
  return s;
}

// Standardized state rmse of the model on a fixed set of trajectories.
inline double heldout_rmse(const ModelWeights& w, const ModelConfig& cfg,
                           const Standardizer& std_,
                           const std::vector<Trajectory>& trajectories) {
  if (trajectories.empty()) {
    throw std::invalid_argument("heldout_rmse: no trajectories");
  }
  double sumsq = 0.0;
  std::size_t count = 0;
  for (const Trajectory& traj : trajectories) {
    const BatchSample s = make_batch_sample(traj, std_);
    const RowMat<double> pred = forward(w, cfg, s.tokens);
    sumsq += (pred - s.targets).squaredNorm();
    count += static_cast<std::size_t>(pred.size());
  }
  return std::sqrt(sumsq / static_cast<double>(count));
}

namespace detail {

inline constexpr std::uint64_t kMaxResampleAttempts = 64;

// Deterministic per-slot trajectory draw with divergence resampling: slot g
// tries sub-indices g*kMax+0, g*kMax+1, ... so retries never disturb other
// slots' streams.
inline Trajectory draw_training_trajectory(const TrainConfig& cfg,
                                           std::uint64_t global_slot,
                                           int& resampled) {
  for (std::uint64_t attempt = 0; attempt < kMaxResampleAttempts; ++attempt) {
    const std::uint64_t seed =
        derive_seed(cfg.seed, SeedDomain::train_data,
                    global_slot * kMaxResampleAttempts + attempt);
    try {
      return simulate_trajectory(cfg.prior, cfg.noise, cfg.model.n_ctx, seed);
    } catch (const simulation_divergence&) {
      ++resampled;
    }
  }
  throw train_error("slot " + std::to_string(global_slot) +
                    ": all resampling attempts diverged");
}

inline void write_train_log(const std::filesystem::path& path,
                            const std::vector<TrainLogRecord>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw train_error("cannot open " + path.string());
  out << "iter,loss,rmse,lr,elapsed_s\n";
  char line[256];
  for (const TrainLogRecord& r : log) {
    std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g,%.17g\n",
                  r.iteration, r.loss, r.rmse, r.lr, r.elapsed_s);
    out << line;
  }
}

}  // namespace detail

// Fits the standardizer the trained filter will ship with: moments over a
// fixed calibration population drawn from the same prior.
inline Standardizer fit_standardizer(const TrainConfig& cfg) {
  std::vector<Trajectory> calib;
  calib.reserve(static_cast<std::size_t>(cfg.n_calibration));
  int discarded = 0;
  for (int i = 0; i < cfg.n_calibration; ++i) {
    const std::uint64_t seed = derive_seed(cfg.seed, SeedDomain::calibration,
                                           static_cast<std::uint64_t>(i));
    try {
      calib.push_back(
          simulate_trajectory(cfg.prior, cfg.noise, cfg.model.n_ctx, seed));
    } catch (const simulation_divergence&) {
      ++discarded;  // rare stiff instances do not bias the moments much
    }
  }
  if (calib.empty()) {
    throw train_error("standardizer calibration: every simulation diverged");
  }
  (void)discarded;
  return Standardizer::fit(calib);
}

// Runs the full training loop. When `out_dir` is non-empty, checkpoints are
// written there atomically (every checkpoint_every iterations and at the
// end) together with the training log CSV.
inline TrainResult train(const TrainConfig& cfg,
                         const std::filesystem::path& out_dir = {}) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         t_start)
        .count();
  };

  const Standardizer std_ = fit_standardizer(cfg);
  ModelWeights weights = init_weights(cfg.model, cfg.seed);

  OptimizerConfig opt;
  opt.learning_rate = cfg.learning_rate;
  opt.warmup_iters = cfg.warmup_iters;
  opt.total_iters = cfg.n_itr;
  opt.grad_clip = cfg.grad_clip;
  opt.validate();
  AdamState adam = AdamState::init(cfg.model);

  const int b = cfg.batch_size;
  const int n_workers = cfg.resolved_threads();
  const double n_scalars =
      static_cast<double>(cfg.model.n_ctx) * static_cast<double>(cfg.model.n_x);

  // Per-slot gradient buffers keep the reduction order independent of
  // thread scheduling (and of the thread count).
  std::vector<ModelWeights> slot_grads;
  slot_grads.reserve(static_cast<std::size_t>(b));
  for (int s = 0; s < b; ++s) slot_grads.push_back(make_weights<double>(cfg.model));
  std::vector<double> slot_loss(static_cast<std::size_t>(b), 0.0);
  std::vector<int> slot_resampled(static_cast<std::size_t>(b), 0);

  ModelWeights total_grads = make_weights<double>(cfg.model);

  TrainResult result;
  result.log.reserve(static_cast<std::size_t>(cfg.n_itr));
  bool have_checkpoint = false;
  const std::filesystem::path ckpt_path =
      out_dir.empty() ? std::filesystem::path{} : out_dir / "checkpoint.bin";

  auto write_ckpt = [&](const ModelWeights& w) {
    if (out_dir.empty()) return;
    save_checkpoint(ckpt_path, Checkpoint{cfg.model, std_, w});
    have_checkpoint = true;
  };

  for (int iter = 0; iter < cfg.n_itr; ++iter) {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_workers));
    auto worker = [&](int wid) {
      try {
        for (int s = wid; s < b; s += n_workers) {
          const std::size_t si = static_cast<std::size_t>(s);
          const std::uint64_t g = static_cast<std::uint64_t>(iter) *
                                      static_cast<std::uint64_t>(b) +
                                  static_cast<std::uint64_t>(s);
          const Trajectory traj =
              detail::draw_training_trajectory(cfg, g, slot_resampled[si]);
          const BatchSample sample = make_batch_sample(traj, std_);
          for_each_tensor(slot_grads[si],
                          [](const std::string&, Tensor& t) { t.fill(0.0); });
          slot_loss[si] = sequence_backward(weights, cfg.model, sample.tokens,
                                            sample.targets, slot_grads[si]);
        }
      } catch (...) {
        errors[static_cast<std::size_t>(wid)] = std::current_exception();
      }
    };
    if (n_workers == 1) {
      worker(0);
    } else {
      for (int wid = 0; wid < n_workers; ++wid) pool.emplace_back(worker, wid);
      for (std::thread& th : pool) th.join();
    }
    for (auto& err : errors) {
      if (!err) continue;
      try {
        std::rethrow_exception(err);
      } catch (const std::exception& e) {
        if (!out_dir.empty()) {
          detail::write_train_log(out_dir / "train_log.csv", result.log);
        }
        throw train_error(
            "training aborted at iteration " + std::to_string(iter) + ": " +
            e.what() +
            (have_checkpoint ? "; last good checkpoint kept at " + ckpt_path.string()
                             : "; no checkpoint written yet"));
      }
    }

    double batch_loss = 0.0;
    for (int s = 0; s < b; ++s) batch_loss += slot_loss[static_cast<std::size_t>(s)];
    batch_loss /= static_cast<double>(b);

    if (!std::isfinite(batch_loss)) {
      if (!out_dir.empty()) detail::write_train_log(out_dir / "train_log.csv", result.log);
      throw train_error(
          "non-finite loss at iteration " + std::to_string(iter) +
          (have_checkpoint ? "; last good checkpoint kept at " + ckpt_path.string()
                           : "; no checkpoint written yet"));
    }

    for_each_tensor(total_grads, [](const std::string&, Tensor& t) { t.fill(0.0); });
    std::vector<Tensor*> totals;
    for_each_tensor(total_grads,
                    [&](const std::string&, Tensor& t) { totals.push_back(&t); });
    for (int s = 0; s < b; ++s) {
      std::size_t ti = 0;
      for_each_tensor(slot_grads[static_cast<std::size_t>(s)],
                      [&](const std::string&, const Tensor& t) {
                        Tensor& dst = *totals[ti++];
                        for (std::size_t j = 0; j < t.data.size(); ++j) {
                          dst.data[j] += t.data[j];
                        }
                      });
    }
    const double inv_b = 1.0 / static_cast<double>(b);
    for (Tensor* t : totals) {
      for (double& v : t->data) v *= inv_b;
    }

    clip_global_norm(total_grads, cfg.grad_clip);
    const double lr = lr_at(opt, iter);
    optimizer_step(weights, total_grads, adam, opt, lr);

    result.log.push_back(TrainLogRecord{iter, batch_loss,
                                        std::sqrt(batch_loss / n_scalars), lr,
                                        elapsed()});

    if (cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 &&
        iter + 1 < cfg.n_itr) {
      write_ckpt(weights);
    }
  }

  for (int s : slot_resampled) result.resampled += s;
  result.checkpoint = Checkpoint{cfg.model, std_, std::move(weights)};
  write_ckpt(result.checkpoint.weights);
  if (!out_dir.empty()) {
    detail::write_train_log(out_dir / "train_log.csv", result.log);
  }
  result.elapsed_s = elapsed();
  return result;
}

}  // namespace icse
