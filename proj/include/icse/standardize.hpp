#pragma once

// Per-channel affine standardization for inputs, outputs, and states. The
// physical scales differ by an order of magnitude (composition ~25 vs input
// ~200), so tokens and regression targets are both mapped to zero mean, unit
// variance. Fitted once on calibration data and stored with the checkpoint.

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "icse/process.hpp"

namespace icse {

struct Standardizer {
  std::array<double, 2> u_mean = {0.0, 0.0};
  std::array<double, 2> u_std = {1.0, 1.0};
  double y_mean = 0.0;
  double y_std = 1.0;
  std::array<double, 2> x_mean = {0.0, 0.0};
  std::array<double, 2> x_std = {1.0, 1.0};

  void validate() const {
    for (double s : {u_std[0], u_std[1], y_std, x_std[0], x_std[1]}) {
      if (!(s > 0.0)) {
        throw std::invalid_argument("Standardizer: std entries must be > 0");
      }
    }
  }

  SimState standardize_state(const SimState& x) const {
    return {(x.x1 - x_mean[0]) / x_std[0], (x.x2 - x_mean[1]) / x_std[1]};
  }

  SimState destandardize_state(const SimState& z) const {
    return {z.x1 * x_std[0] + x_mean[0], z.x2 * x_std[1] + x_mean[1]};
  }

  std::array<double, 3> standardize_token(const SimInput& u, double y) const {
    return {(u.u1 - u_mean[0]) / u_std[0], (u.u2 - u_mean[1]) / u_std[1],
            (y - y_mean) / y_std};
  }

  // Moment-matched fit over every sample of every trajectory. Constant
  // channels keep unit scale so the transform stays invertible.
  static Standardizer fit(const std::vector<Trajectory>& trajectories) {
    if (trajectories.empty()) {
      throw std::invalid_argument("Standardizer::fit: no trajectories");
    }
    // channels: u1, u2, y, x1, x2
    std::array<double, 5> sum{}, sumsq{};
    std::size_t count = 0;
    for (const Trajectory& t : trajectories) {
      for (std::size_t k = 0; k < t.length(); ++k) {
        const std::array<double, 5> v = {t.inputs[k].u1, t.inputs[k].u2,
                                         t.outputs[k], t.clean_states[k].x1,
                                         t.clean_states[k].x2};
        for (std::size_t c = 0; c < 5; ++c) {
          sum[c] += v[c];
          sumsq[c] += v[c] * v[c];
        }
        ++count;
      }
    }
    std::array<double, 5> mean{}, stddev{};
    for (std::size_t c = 0; c < 5; ++c) {
      mean[c] = sum[c] / static_cast<double>(count);
      const double var =
          std::max(0.0, sumsq[c] / static_cast<double>(count) - mean[c] * mean[c]);
      stddev[c] = std::sqrt(var);
      if (!(stddev[c] > 0.0)) stddev[c] = 1.0;
    }
    Standardizer s;
    s.u_mean = {mean[0], mean[1]};
    s.u_std = {stddev[0], stddev[1]};
    s.y_mean = mean[2];
    s.y_std = stddev[2];
    s.x_mean = {mean[3], mean[4]};
    s.x_std = {stddev[3], stddev[4]};
    return s;
  }
};

}  // namespace icse
