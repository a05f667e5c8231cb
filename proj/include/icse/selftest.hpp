#pragma once

// Fast self-diagnosis suite: mathematical identities the artifact must hold
// at runtime on the current hardware/compiler, each instant to compute.

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "icse/ekf.hpp"
#include "icse/model.hpp"
#include "icse/process.hpp"
#include "icse/rng.hpp"

namespace icse {

struct SelfTestCheck {
  std::string name;
  double tolerance = 0.0;
  double measured = 0.0;
  bool pass = false;
};

namespace detail {

inline SelfTestCheck check_steady_state() {
  const auto dx = continuous_dynamics(SimState{25.0, 49.743},
                                      SimInput{191.713, 215.888},
                                      ProcessParams::nominal());
  SelfTestCheck c{"steady_state_residual", 1e-2,
                  std::max(std::abs(dx[0]), std::abs(dx[1])), false};
  c.pass = c.measured <= c.tolerance;
  return c;
}

inline SelfTestCheck check_causality() {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.n_ctx = 12;
  cfg.d_filter = 8;
  int violations = 0;
  Rng pick(2024);
  for (int trial = 0; trial < 20; ++trial) {
    ModelWeights w = make_weights<double>(cfg);
    Rng wr(derive_seed(7, SeedDomain::weight_init, trial));
    for_each_tensor(w, [&](const std::string&, Tensor& t) {
      for (double& v : t.data) v = wr.normal(0.0, 0.4);
    });
    const int T = 4 + static_cast<int>(pick.next_u64() % 8);
    RowMat<double> tokens(T, cfg.d_token());
    for (Eigen::Index i = 0; i < tokens.rows(); ++i) {
      for (Eigen::Index j = 0; j < tokens.cols(); ++j) {
        tokens(i, j) = pick.normal(0.0, 1.0);
      }
    }
    const auto base = forward(w, cfg, tokens);
    const int j = 1 + static_cast<int>(pick.next_u64() %
                                       static_cast<std::uint64_t>(T - 1));
    tokens.row(j).array() += 5.0;
    const auto poked = forward(w, cfg, tokens);
    for (int t = 0; t < j; ++t) {
      if (std::memcmp(base.row(t).data(), poked.row(t).data(),
                      sizeof(double) * static_cast<std::size_t>(cfg.n_x)) != 0) {
        ++violations;
      }
    }
  }
  SelfTestCheck c{"causality_bit_exact", 0.0, static_cast<double>(violations),
                  violations == 0};
  return c;
}

inline SelfTestCheck check_gradients() {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  cfg.n_ctx = 4;
  cfg.d_filter = 4;
  ModelWeights w = make_weights<double>(cfg);
  Rng wr(31);
  for_each_tensor(w, [&](const std::string&, Tensor& t) {
    for (double& v : t.data) v = wr.normal(0.0, 0.3);
  });
  BatchSample s;
  s.tokens.resize(3, cfg.d_token());
  s.targets.resize(3, cfg.n_x);
  for (Eigen::Index i = 0; i < s.tokens.size(); ++i) {
    s.tokens(i / s.tokens.cols(), i % s.tokens.cols()) = wr.normal(0.0, 1.0);
  }
  for (Eigen::Index i = 0; i < s.targets.size(); ++i) {
    s.targets(i / s.targets.cols(), i % s.targets.cols()) = wr.normal(0.0, 1.0);
  }
  const std::vector<BatchSample> batch = {s};
  const LossAndGrads lg = backward(w, cfg, batch);

  double worst = 0.0;
  const double h = 1e-5;
  std::vector<Tensor*> wt;
  std::vector<const Tensor*> gt;
  for_each_tensor(w, [&](const std::string&, Tensor& t) { wt.push_back(&t); });
  for_each_tensor(lg.grads,
                  [&](const std::string&, const Tensor& t) { gt.push_back(&t); });
  for (std::size_t ti = 0; ti < wt.size(); ++ti) {
    for (std::size_t j = 0; j < wt[ti]->data.size(); ++j) {
      const double orig = wt[ti]->data[j];
      wt[ti]->data[j] = orig + h;
      const double lp = loss(w, cfg, batch);
      wt[ti]->data[j] = orig - h;
      const double lm = loss(w, cfg, batch);
      wt[ti]->data[j] = orig;
      const double numeric = (lp - lm) / (2.0 * h);
      const double analytic = gt[ti]->data[j];
      worst = std::max(worst, std::abs(analytic - numeric) /
                                  std::max({std::abs(analytic),
                                            std::abs(numeric), 1e-6}));
    }
  }
  SelfTestCheck c{"gradient_finite_difference", 1e-4, worst, worst <= 1e-4};
  return c;
}

inline SelfTestCheck check_linear_kf() {
  Eigen::Matrix2d A;
  A << 0.85, 0.1, -0.05, 0.7;
  const Eigen::Matrix2d Q = Eigen::Vector2d(0.2, 0.3).asDiagonal();
  Eigen::RowVectorXd H(2);
  H << 0.0, 1.0;
  const double R = 1.5;

  Rng rng(6);
  Eigen::Vector2d x_true(1.0, -1.0);
  FilterBelief belief{Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2)};
  Eigen::VectorXd ref_x = Eigen::VectorXd::Zero(2);
  Eigen::MatrixXd ref_p = Eigen::MatrixXd::Identity(2, 2);

  auto f = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return A * x; };
  auto jac = [&](const Eigen::VectorXd&) { return A; };

  double worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    x_true = A * x_true + Eigen::Vector2d(rng.normal(0.0, std::sqrt(0.2)),
                                          rng.normal(0.0, std::sqrt(0.3)));
    const double y = x_true(1) + rng.normal(0.0, std::sqrt(R));

    ref_x = A * ref_x;
    ref_p = A * ref_p * A.transpose() + Q;
    const double S = (H * ref_p * H.transpose())(0, 0) + R;
    const Eigen::VectorXd K = ref_p * H.transpose() / S;
    ref_x += K * (y - (H * ref_x)(0, 0));
    ref_p = (Eigen::MatrixXd::Identity(2, 2) - K * H) * ref_p;

    belief = ekf_step_with_jacobian(belief, f, jac, Q, H, R, y).belief;
    worst = std::max(worst, (belief.mean - ref_x).cwiseAbs().maxCoeff());
  }
  SelfTestCheck c{"linear_kalman_equivalence", 1e-10, worst, worst <= 1e-10};
  return c;
}

}  // namespace detail

inline std::vector<SelfTestCheck> run_selftest() {
  return {detail::check_steady_state(), detail::check_causality(),
          detail::check_gradients(), detail::check_linear_kf()};
}

}  // namespace icse
