#pragma once

// Extended Kalman filter baselines. Two flavours over the evaporation plant:
//   oracle   - knows the instance's true coefficients;
//   enlarged - knows nominal coefficients except the condenser heat-transfer
//              coefficient, which rides along as a constant third state.
// The predict/update core is generic over the transition map; Jacobians come
// from central finite differences unless an exact one is supplied.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "icse/process.hpp"

namespace icse {

struct EkfConfig {
  enum class Mode { oracle, enlarged };

  Mode mode = Mode::oracle;
  Eigen::VectorXd q_diag;
  double r = 2.0;
  Eigen::VectorXd p0_diag;
  Eigen::VectorXd x0_guess;
  double jacobian_step = 1e-6;  // relative central-difference step

  static EkfConfig oracle_default() {
    EkfConfig cfg;
    cfg.mode = Mode::oracle;
    cfg.q_diag = Eigen::Vector2d(0.5, 0.5);
    cfg.r = 2.0;
    cfg.p0_diag = Eigen::Vector2d(0.1, 0.1);
    cfg.x0_guess = Eigen::Vector2d(25.0, 49.743);
    return cfg;
  }

  static EkfConfig enlarged_default() {
    EkfConfig cfg;
    cfg.mode = Mode::enlarged;
    cfg.q_diag = Eigen::Vector3d(0.5, 0.5, 0.0);
    cfg.r = 2.0;
    cfg.p0_diag = Eigen::Vector3d(0.1, 0.1, 1.0);
    cfg.x0_guess = Eigen::Vector3d(25.0, 49.743, 6.84);
    return cfg;
  }

  int dim() const { return mode == Mode::oracle ? 2 : 3; }

  void validate() const {
    if (q_diag.size() != dim() || p0_diag.size() != dim() ||
        x0_guess.size() != dim()) {
      throw std::invalid_argument("EkfConfig: dimension mismatch for mode");
    }
    if (q_diag.minCoeff() < 0.0 || p0_diag.minCoeff() < 0.0 || r < 0.0) {
      throw std::invalid_argument("EkfConfig: covariances must be >= 0");
    }
    if (!(jacobian_step > 0.0)) {
      throw std::invalid_argument("EkfConfig: jacobian_step must be > 0");
    }
  }
};

struct FilterBelief {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  double min_cov_eigenvalue() const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    return es.eigenvalues().minCoeff();
  }
};

// Central-difference Jacobian with per-component step rel_step * max(1,|x_i|).
template <class F>
Eigen::MatrixXd numeric_jacobian(F&& f, const Eigen::VectorXd& x,
                                 double rel_step) {
  const Eigen::Index n = x.size();
  Eigen::VectorXd fp = f(x);
  const Eigen::Index m = fp.size();
  Eigen::MatrixXd jac(m, n);
  Eigen::VectorXd xp = x, xm = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double step = rel_step * std::max(1.0, std::abs(x(i)));
    xp(i) = x(i) + step;
    xm(i) = x(i) - step;
    jac.col(i) = (f(xp) - f(xm)) / (2.0 * step);
    xp(i) = x(i);
    xm(i) = x(i);
  }
  if (!jac.allFinite()) {
    throw std::runtime_error("numeric_jacobian: non-finite entries");
  }
  return jac;
}

struct EkfStepResult {
  FilterBelief belief;
  double innovation = 0.0;
};

// Measurement update with a scalar output y = H x + v, Joseph-form covariance.
inline EkfStepResult ekf_update(const FilterBelief& prior,
                                const Eigen::RowVectorXd& H, double R,
                                double y) {
  const double innov_cov = (H * prior.cov * H.transpose())(0, 0) + R;
  if (!(innov_cov > 0.0)) {
    throw std::runtime_error("ekf_update: innovation covariance not positive");
  }
  const Eigen::VectorXd gain = prior.cov * H.transpose() / innov_cov;
  const double innovation = y - (H * prior.mean)(0, 0);

  EkfStepResult out;
  out.innovation = innovation;
  out.belief.mean = prior.mean + gain * innovation;
  const Eigen::MatrixXd closed =
      Eigen::MatrixXd::Identity(prior.mean.size(), prior.mean.size()) - gain * H;
  Eigen::MatrixXd cov =
      closed * prior.cov * closed.transpose() + gain * R * gain.transpose();
  out.belief.cov = 0.5 * (cov + cov.transpose());
  return out;
}

// Time update through an arbitrary transition with an explicit Jacobian.
template <class F, class J>
FilterBelief ekf_predict_with_jacobian(const FilterBelief& belief, F&& f,
                                       J&& jacobian_of_f,
                                       const Eigen::MatrixXd& Q) {
  FilterBelief out;
  out.mean = f(belief.mean);
  const Eigen::MatrixXd F_lin = jacobian_of_f(belief.mean);
  Eigen::MatrixXd cov = F_lin * belief.cov * F_lin.transpose() + Q;
  out.cov = 0.5 * (cov + cov.transpose());
  if (!out.mean.allFinite() || !out.cov.allFinite()) {
    throw std::runtime_error("ekf_predict: non-finite belief");
  }
  return out;
}

template <class F>
FilterBelief ekf_predict(const FilterBelief& belief, F&& f,
                         const Eigen::MatrixXd& Q, double jacobian_rel_step) {
  return ekf_predict_with_jacobian(
      belief, f,
      [&](const Eigen::VectorXd& x) { return numeric_jacobian(f, x, jacobian_rel_step); },
      Q);
}

// Full predict-then-update step with an explicit Jacobian.
template <class F, class J>
EkfStepResult ekf_step_with_jacobian(const FilterBelief& belief, F&& f,
                                     J&& jacobian_of_f, const Eigen::MatrixXd& Q,
                                     const Eigen::RowVectorXd& H, double R,
                                     double y) {
  return ekf_update(ekf_predict_with_jacobian(belief, f, jacobian_of_f, Q), H, R, y);
}

// Full predict-then-update step with a finite-difference Jacobian.
template <class F>
EkfStepResult ekf_step(const FilterBelief& belief, F&& f,
                       const Eigen::MatrixXd& Q, const Eigen::RowVectorXd& H,
                       double R, double y, double jacobian_rel_step = 1e-6) {
  return ekf_update(ekf_predict(belief, f, Q, jacobian_rel_step), H, R, y);
}

// One sampling interval of the filter's internal model. Oracle mode uses the
// supplied coefficients directly; enlarged mode reads the condenser
// coefficient from the third state and keeps that state constant.
inline Eigen::VectorXd evap_transition(const Eigen::VectorXd& x,
                                       const SimInput& u,
                                       const ProcessParams& model,
                                       EkfConfig::Mode mode) {
  if (mode == EkfConfig::Mode::oracle) {
    const SimState next = integrate_step(SimState{x(0), x(1)}, u, model);
    return Eigen::Vector2d(next.x1, next.x2);
  }
  ProcessParams p = model;
  p.UA2 = x(2);
  const SimState next = integrate_step(SimState{x(0), x(1)}, u, p);
  return Eigen::Vector3d(next.x1, next.x2, x(2));
}

// Only the pressure is measured.
inline Eigen::RowVectorXd evap_measurement_row(EkfConfig::Mode mode) {
  if (mode == EkfConfig::Mode::oracle) {
    Eigen::RowVectorXd H(2);
    H << 0.0, 1.0;
    return H;
  }
  Eigen::RowVectorXd H(3);
  H << 0.0, 1.0, 0.0;
  return H;
}

class EvapEkf {
 public:
  // `model_params`: the instance's true coefficients for oracle mode, the
  // nominal coefficients for enlarged mode (UA2 is then ignored in favour of
  // the augmented state).
  EvapEkf(EkfConfig cfg, ProcessParams model_params)
      : cfg_(std::move(cfg)), model_(model_params) {
    cfg_.validate();
    belief_.mean = cfg_.x0_guess;
    belief_.cov = cfg_.p0_diag.asDiagonal();
    q_ = cfg_.q_diag.asDiagonal();
    h_row_ = evap_measurement_row(cfg_.mode);
  }

  // Advances one sample: propagate through the plant model under the
  // previous input (skipped when `u_prev` is null, i.e. at time zero where
  // the initial guess plays the one-step-ahead prediction), then assimilate
  // the measurement.
  EkfStepResult step(const SimInput* u_prev, double y) {
    FilterBelief prior = belief_;
    if (u_prev != nullptr) {
      const SimInput u = *u_prev;
      auto f = [&](const Eigen::VectorXd& x) {
        return evap_transition(x, u, model_, cfg_.mode);
      };
      prior = ekf_predict(belief_, f, q_, cfg_.jacobian_step);
    }
    EkfStepResult res = ekf_update(prior, h_row_, cfg_.r, y);
    belief_ = res.belief;
    return res;
  }

  const FilterBelief& belief() const { return belief_; }
  const EkfConfig& config() const { return cfg_; }

 private:
  EkfConfig cfg_;
  ProcessParams model_;
  FilterBelief belief_;
  Eigen::MatrixXd q_;
  Eigen::RowVectorXd h_row_;
};

struct FilterRun {
  std::vector<SimState> estimates;     // x_hat_{k|k}, first two components
  std::vector<double> latency_ms;      // wall clock around each step
  std::vector<double> innovations;
  std::vector<double> min_cov_eig;     // covariance health per step
  std::vector<double> x3;              // enlarged mode: UA2 estimate per step
};

// Runs the filter over a recorded trajectory. Oracle mode expects the
// instance's true coefficients in `model_params`; enlarged mode the nominal
// ones.
inline FilterRun run_filter(const Trajectory& traj, const EkfConfig& cfg,
                            const ProcessParams& model_params) {
  const std::size_t n = traj.length();
  if (traj.outputs.size() != n || traj.inputs.size() != n) {
    throw std::invalid_argument("run_filter: misaligned trajectory sequences");
  }
  EvapEkf filter(cfg, model_params);
  FilterRun run;
  run.estimates.reserve(n);
  run.latency_ms.reserve(n);
  run.innovations.reserve(n);
  run.min_cov_eig.reserve(n);

  using clock = std::chrono::steady_clock;
  for (std::size_t k = 0; k < n; ++k) {
    const SimInput* u_prev = (k == 0) ? nullptr : &traj.inputs[k - 1];
    const auto t0 = clock::now();
    const EkfStepResult res = filter.step(u_prev, traj.outputs[k]);
    const auto t1 = clock::now();
    run.latency_ms.push_back(
        std::chrono::duration<double, std::milli>(t1 - t0).count());
    run.estimates.push_back(SimState{res.belief.mean(0), res.belief.mean(1)});
    run.innovations.push_back(res.innovation);
    run.min_cov_eig.push_back(res.belief.min_cov_eigenvalue());
    if (cfg.mode == EkfConfig::Mode::enlarged) {
      run.x3.push_back(res.belief.mean(2));
    }
  }
  return run;
}

}  // namespace icse
