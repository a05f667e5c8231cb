#pragma once

// Forced-circulation evaporator benchmark: a two-state nonlinear plant
// (x1 = product composition [%], x2 = operating pressure [kPa]) driven by
// steam pressure u1 and cooling-water flow u2. Instances of the plant class
// are drawn by uniformly perturbing the nominal coefficients.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "icse/rng.hpp"

namespace icse {

struct SimState {
  double x1 = 0.0;  // product composition [%]
  double x2 = 0.0;  // operating pressure [kPa]
};

struct SimInput {
  double u1 = 0.0;  // steam pressure actuation [kPa]
  double u2 = 0.0;  // cooling-water flow [kg/min]
};

using StateDeriv = std::array<double, 2>;

// Raised when the plant algebra or the integrated state leaves the finite
// range; carries the first offending quantity by name.
class simulation_divergence : public std::runtime_error {
 public:
  simulation_divergence(std::string quantity, double value)
      : std::runtime_error("simulation diverged: " + quantity + " = " +
                           std::to_string(value)),
        quantity_(std::move(quantity)) {}

  const std::string& quantity() const noexcept { return quantity_; }

 private:
  std::string quantity_;
};

struct ProcessParams {
  double a = 0.0, b = 0.0, c = 0.0, d = 0.0, e = 0.0;  // temperature algebra
  double varphi = 0.0, gamma = 0.0;                    // steam jacket
  double h = 0.0;                                      // UA1 coefficient
  double M = 0.0;                                      // liquid holdup [kg]
  double C = 0.0;          // pressure capacitance [kg/kPa]
  double UA2 = 0.0;        // condenser heat transfer [kW/K]
  double Cp = 0.0;         // heat capacity [kW/(kg/min)/K]
  double lambda = 0.0;     // latent heat of vaporization
  double lambda_s = 0.0;   // latent heat of steam
  double F1 = 0.0;         // feed flow [kg/min]
  double X1 = 0.0;         // feed composition [%]
  double F3 = 0.0;         // circulating flow [kg/min]
  double T1 = 0.0;         // feed temperature [C]
  double T200 = 0.0;       // cooling-water inlet temperature [C]

  static constexpr std::size_t kCount = 19;

  static const std::array<const char*, kCount>& names() {
    static const std::array<const char*, kCount> n = {
        "a",  "b", "c",   "d",  "e",  "varphi",   "gamma", "h",  "M",  "C",
        "UA2", "Cp", "lambda", "lambda_s", "F1", "X1", "F3", "T1", "T200"};
    return n;
  }

  std::array<double, kCount> to_array() const {
    return {a, b, c, d, e, varphi, gamma, h, M, C,
            UA2, Cp, lambda, lambda_s, F1, X1, F3, T1, T200};
  }

  static ProcessParams from_array(const std::array<double, kCount>& v) {
    ProcessParams p;
    p.a = v[0]; p.b = v[1]; p.c = v[2]; p.d = v[3]; p.e = v[4];
    p.varphi = v[5]; p.gamma = v[6]; p.h = v[7]; p.M = v[8]; p.C = v[9];
    p.UA2 = v[10]; p.Cp = v[11]; p.lambda = v[12]; p.lambda_s = v[13];
    p.F1 = v[14]; p.X1 = v[15]; p.F3 = v[16]; p.T1 = v[17]; p.T200 = v[18];
    return p;
  }

  // Nominal coefficients; (25, 49.743) with inputs (191.713, 215.888) is a
  // stationary point of the resulting vector field.
  static ProcessParams nominal() {
    ProcessParams p;
    p.a = 0.5616; p.b = 0.3126; p.c = 48.43; p.d = 0.507; p.e = 55.0;
    p.varphi = 0.1538; p.gamma = 90.0; p.h = 0.16; p.M = 20.0; p.C = 4.0;
    p.UA2 = 6.84; p.Cp = 0.07; p.lambda = 38.5; p.lambda_s = 36.6;
    p.F1 = 10.0; p.X1 = 5.0; p.F3 = 50.0; p.T1 = 40.0; p.T200 = 25.0;
    return p;
  }

  void validate() const {
    auto positive = [](double v, const char* what) {
      if (!(v > 0.0)) {
        throw std::invalid_argument(std::string("ProcessParams: ") + what +
                                    " must be > 0");
      }
    };
    positive(M, "M");
    positive(C, "C");
    positive(lambda, "lambda");
    positive(lambda_s, "lambda_s");
    positive(Cp, "Cp");
    positive(UA2, "UA2");
  }
};

// Diagonal process noise plus scalar output noise, both given as variances.
struct NoiseSpec {
  std::array<double, 2> process_var = {0.5, 0.5};
  double output_var = 2.0;

  static NoiseSpec none() { return NoiseSpec{{0.0, 0.0}, 0.0}; }

  void validate() const {
    if (process_var[0] < 0.0 || process_var[1] < 0.0 || output_var < 0.0) {
      throw std::invalid_argument("NoiseSpec: variances must be >= 0");
    }
  }
};

// The distribution the plant class is drawn from: nominal coefficients with a
// multiplicative uniform perturbation, randomized initial condition around the
// steady state, and a two-level excitation added to the steady-state input.
struct ClassPrior {
  ProcessParams nominal = ProcessParams::nominal();
  double perturb_frac = 0.2;
  SimState x_s{25.0, 49.743};
  SimInput u_s{191.713, 215.888};
  double prbs_amplitude = 20.0;
  double init_perturb_frac = 0.2;

  void validate() const {
    if (perturb_frac < 0.0 || perturb_frac >= 1.0) {
      throw std::invalid_argument("ClassPrior: perturb_frac must be in [0, 1)");
    }
    if (init_perturb_frac < 0.0 || init_perturb_frac >= 1.0) {
      throw std::invalid_argument(
          "ClassPrior: init_perturb_frac must be in [0, 1)");
    }
    nominal.validate();
  }
};

// All algebraic quantities of the plant evaluated at (x, u).
struct EvapIntermediates {
  double T2, T3, T100, UA1, Q100, F100, F4, Q200, F5, F2;
};

namespace detail {
inline double checked(double v, const char* what) {
  if (!std::isfinite(v)) throw simulation_divergence(what, v);
  return v;
}
}  // namespace detail

inline EvapIntermediates compute_intermediates(const SimState& x,
                                               const SimInput& u,
                                               const ProcessParams& p) {
  using detail::checked;
  EvapIntermediates m{};
  m.T2 = checked(p.a * x.x2 + p.b * x.x1 + p.c, "T2");
  m.T3 = checked(p.d * x.x2 + p.e, "T3");
  m.T100 = checked(p.varphi * u.u1 + p.gamma, "T100");
  m.UA1 = checked(p.h * (p.F1 + p.F3), "UA1");
  m.Q100 = checked(m.UA1 * (m.T100 - m.T2), "Q100");
  m.F100 = checked(m.Q100 / p.lambda_s, "F100");
  m.F4 = checked((m.Q100 - p.F1 * p.Cp * (m.T2 - p.T1)) / p.lambda, "F4");
  m.Q200 = checked(p.UA2 * (m.T3 - p.T200) / (1.0 + p.UA2 / (2.0 * p.Cp * u.u2)),
                   "Q200");
  m.F5 = checked(m.Q200 / p.lambda, "F5");
  m.F2 = checked(p.F1 - m.F4, "F2");
  return m;
}

// Continuous-time vector field. Pure: identical inputs give bit-identical
// derivatives. The composition balance uses the composition state itself;
// the pressure balance is the vapor energy balance.
inline StateDeriv continuous_dynamics(const SimState& x, const SimInput& u,
                                      const ProcessParams& p) {
  const EvapIntermediates m = compute_intermediates(x, u, p);
  StateDeriv dx;
  dx[0] = detail::checked((p.F1 * p.X1 - m.F2 * x.x1) / p.M, "dx1");
  dx[1] = detail::checked((m.F4 - m.F5) / p.C, "dx2");
  return dx;
}

// Classical RK4 over [0, Ts] with n_sub equal sub-steps; f is any callable
// SimState -> StateDeriv (the input is held by the caller, zero-order hold).
template <class Dyn>
SimState rk4_integrate(SimState x, Dyn&& f, double Ts, int n_sub) {
  if (!(Ts > 0.0)) throw std::invalid_argument("rk4_integrate: Ts must be > 0");
  if (n_sub < 1) throw std::invalid_argument("rk4_integrate: n_sub must be >= 1");
  const double dt = Ts / n_sub;
  for (int s = 0; s < n_sub; ++s) {
    const StateDeriv k1 = f(x);
    const StateDeriv k2 =
        f(SimState{x.x1 + 0.5 * dt * k1[0], x.x2 + 0.5 * dt * k1[1]});
    const StateDeriv k3 =
        f(SimState{x.x1 + 0.5 * dt * k2[0], x.x2 + 0.5 * dt * k2[1]});
    const StateDeriv k4 = f(SimState{x.x1 + dt * k3[0], x.x2 + dt * k3[1]});
    x.x1 += dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
    x.x2 += dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
  }
  detail::checked(x.x1, "x1");
  detail::checked(x.x2, "x2");
  return x;
}

inline constexpr int kDefaultSubsteps = 10;

// One sampling interval of the plant under zero-order-hold input.
inline SimState integrate_step(const SimState& x, const SimInput& u,
                               const ProcessParams& p, double Ts = 1.0,
                               int n_sub = kDefaultSubsteps) {
  return rk4_integrate(
      x, [&](const SimState& s) { return continuous_dynamics(s, u, p); }, Ts,
      n_sub);
}

// Draws one plant instance: every coefficient independently scaled by
// (1 + perturb_frac * U[-1,1]).
inline ProcessParams sample_instance(const ClassPrior& prior,
                                     std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  auto values = prior.nominal.to_array();
  for (double& v : values) {
    v *= 1.0 + prior.perturb_frac * rng.uniform(-1.0, 1.0);
  }
  return ProcessParams::from_array(values);
}

// Two-level excitation: independent fair coin per sample, values +/-amplitude.
inline std::vector<double> generate_prbs(int length, double amplitude,
                                         std::uint64_t rng_seed) {
  if (length <= 0) throw std::invalid_argument("generate_prbs: length must be > 0");
  Rng rng(rng_seed);
  std::vector<double> signal(static_cast<std::size_t>(length));
  for (double& v : signal) {
    v = rng.flip() ? amplitude : -amplitude;
  }
  return signal;
}

// One dataset: inputs, noiseless states (the regression target), and noisy
// outputs, all of length N. The noisy companion state that generated the
// outputs plus the recorded noise draws are kept for diagnostics; they are
// not part of the serialized form.
struct Trajectory {
  std::vector<SimInput> inputs;
  std::vector<SimState> clean_states;   // xo: noise-free twin, same inputs
  std::vector<double> outputs;          // y = noisy x2 + measurement noise
  ProcessParams params;
  std::uint64_t seed = 0;
  double dt_sample = 1.0;

  std::vector<SimState> noisy_states;            // diagnostics only
  std::vector<std::array<double, 2>> process_noise;  // w_k, length N-1
  std::vector<double> output_noise;              // v_k, length N

  std::size_t length() const { return inputs.size(); }
};

namespace detail {
// Lane tags for the per-trajectory substreams; each consumer gets its own
// stream so changing one never shifts another.
enum : std::uint64_t {
  kLaneParams = 0x11,
  kLaneInit = 0x22,
  kLanePrbsU1 = 0x33,
  kLanePrbsU2 = 0x44,
  kLaneProcessNoise = 0x55,
  kLaneMeasNoise = 0x66,
};

inline std::uint64_t lane(std::uint64_t seed, std::uint64_t tag) {
  return mix64(mix64(seed) ^ tag);
}
}  // namespace detail

inline Trajectory simulate_trajectory(const ClassPrior& prior,
                                      const NoiseSpec& noise, int N,
                                      std::uint64_t rng_seed) {
  if (N < 1) throw std::invalid_argument("simulate_trajectory: N must be >= 1");
  prior.validate();
  noise.validate();

  Trajectory traj;
  traj.seed = rng_seed;
  traj.params = sample_instance(prior, detail::lane(rng_seed, detail::kLaneParams));

  const std::size_t n = static_cast<std::size_t>(N);
  traj.inputs.resize(n);
  traj.clean_states.resize(n);
  traj.outputs.resize(n);
  traj.noisy_states.resize(n);
  traj.process_noise.resize(n - 1);
  traj.output_noise.resize(n);

  Rng init_rng(detail::lane(rng_seed, detail::kLaneInit));
  SimState x0{
      prior.x_s.x1 * (1.0 + prior.init_perturb_frac * init_rng.uniform(-1.0, 1.0)),
      prior.x_s.x2 * (1.0 + prior.init_perturb_frac * init_rng.uniform(-1.0, 1.0))};

  const std::vector<double> prbs1 =
      generate_prbs(N, prior.prbs_amplitude, detail::lane(rng_seed, detail::kLanePrbsU1));
  const std::vector<double> prbs2 =
      generate_prbs(N, prior.prbs_amplitude, detail::lane(rng_seed, detail::kLanePrbsU2));
  for (std::size_t k = 0; k < n; ++k) {
    traj.inputs[k] = SimInput{prior.u_s.u1 + prbs1[k], prior.u_s.u2 + prbs2[k]};
  }

  Rng w_rng(detail::lane(rng_seed, detail::kLaneProcessNoise));
  Rng v_rng(detail::lane(rng_seed, detail::kLaneMeasNoise));
  const double w1_std = std::sqrt(noise.process_var[0]);
  const double w2_std = std::sqrt(noise.process_var[1]);
  const double v_std = std::sqrt(noise.output_var);

  traj.clean_states[0] = x0;
  traj.noisy_states[0] = x0;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    traj.clean_states[k + 1] =
        integrate_step(traj.clean_states[k], traj.inputs[k], traj.params);
    const SimState propagated =
        integrate_step(traj.noisy_states[k], traj.inputs[k], traj.params);
    const std::array<double, 2> w = {w_rng.normal(0.0, w1_std),
                                     w_rng.normal(0.0, w2_std)};
    traj.process_noise[k] = w;
    traj.noisy_states[k + 1] =
        SimState{detail::checked(propagated.x1 + w[0], "x1"),
                 detail::checked(propagated.x2 + w[1], "x2")};
  }
  for (std::size_t k = 0; k < n; ++k) {
    traj.output_noise[k] = v_rng.normal(0.0, v_std);
    traj.outputs[k] = traj.noisy_states[k].x2 + traj.output_noise[k];
  }
  return traj;
}

}  // namespace icse
