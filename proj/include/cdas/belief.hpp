// Copyright 2026 The CDAS Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Diagonal Gaussian posterior over the search vector.
//
// The sensing matrix has one-hot rows and the noise is white, so the
// Kalman update of a diagonal prior stays diagonal and factorizes into
// independent scalar updates, one per reading. The target vector is
// static, so the prediction step is the identity.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "cdas/grid_env.hpp"
#include "cdas/rng.hpp"

namespace cdas {

struct BeliefState {
  std::vector<double> mean;
  std::vector<double> var;
  GridShape shape;

  int n() const { return static_cast<int>(mean.size()); }
};

// Channel 0 is the mean grid, channel 1 the variance grid, both row-major.
struct StateImage {
  GridShape shape;
  std::vector<double> channels;  // size 2 * n

  std::span<const double> mean() const {
    return {channels.data(), static_cast<std::size_t>(shape.size())};
  }
  std::span<const double> var() const {
    return {channels.data() + shape.size(), static_cast<std::size_t>(shape.size())};
  }
};

struct RecoveryConfig {
  double c_thr = 0.5;
};

struct RecoveryResult {
  double fraction = 0.0;
  bool exact = false;
};

inline BeliefState init_belief(GridShape shape, double sigma) {
  const int n = shape.size();
  if (n < 1) throw std::invalid_argument("belief needs at least one cell");
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  return {std::vector<double>(n, 1.0 / n), std::vector<double>(n, sigma * sigma),
          shape};
}

inline BeliefState init_belief(int n, double sigma) {
  return init_belief(GridShape{1, n}, sigma);
}

// In-place scalar update for one reading at one cell.
inline void fuse_reading(BeliefState& b, int cell, double y, double noise_var) {
  const double prec = 1.0 / b.var[cell] + 1.0 / noise_var;
  const double v = 1.0 / prec;
  b.mean[cell] = v * (b.mean[cell] / b.var[cell] + y / noise_var);
  b.var[cell] = v;
}

inline void apply_observation(BeliefState& b, std::span<const int> cells,
                              std::span<const double> values, double sigma) {
  if (cells.size() != values.size())
    throw std::invalid_argument("observation length does not match action");
  const double nv = sigma * sigma;
  for (std::size_t q = 0; q < cells.size(); ++q)
    fuse_reading(b, cells[q], values[q], nv);
}

inline BeliefState update_belief(BeliefState belief, const SensingAction& action,
                                  const Observation& obs, double sigma) {
  apply_observation(belief, action.cells, obs.values, sigma);
  return belief;
}

inline StateImage state_image(const BeliefState& b) {
  StateImage s{b.shape, {}};
  s.channels.reserve(2 * b.mean.size());
  s.channels.insert(s.channels.end(), b.mean.begin(), b.mean.end());
  s.channels.insert(s.channels.end(), b.var.begin(), b.var.end());
  return s;
}

inline double entropy(const BeliefState& b) {
  constexpr double kTwoPiE = 2.0 * std::numbers::pi * std::numbers::e;
  double h = 0.0;
  for (double v : b.var) h += 0.5 * std::log(kTwoPiE * v);
  return h;
}

// Posterior entropy of a linear Gaussian model does not depend on y, so
// the expectation over observations drops out.
inline double expected_information_gain(const BeliefState& b,
                                        const SensingAction& action,
                                        double sigma) {
  const double nv = sigma * sigma;
  double gain = 0.0;
  // Repeated cells within one action fuse sequentially.
  std::vector<std::pair<int, double>> touched;
  for (int c : action.cells) {
    double v = b.var[c];
    for (auto& [cell, vv] : touched)
      if (cell == c) v = vv;
    const double v_new = 1.0 / (1.0 / v + 1.0 / nv);
    gain += 0.5 * std::log(v / v_new);
    bool found = false;
    for (auto& [cell, vv] : touched)
      if (cell == c) { vv = v_new; found = true; }
    if (!found) touched.emplace_back(c, v_new);
  }
  return gain;
}

inline std::vector<double> thompson_sample(const BeliefState& b, Rng& rng) {
  std::vector<double> out(b.mean.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = b.mean[i] + std::sqrt(b.var[i]) * standard_normal(rng);
  return out;
}

inline std::vector<std::uint8_t> quantize(std::span<const double> x,
                                          const RecoveryConfig& cfg) {
  std::vector<std::uint8_t> q(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) q[i] = x[i] >= cfg.c_thr ? 1 : 0;
  return q;
}

// Monte Carlo estimate of the expected +1/-1 full-recovery reward of a
// single action: Thompson samples stand in for the truth, simulated
// readings come from the quantized sample, and the one-step posterior
// mean is compared with it after quantization.
inline double expected_onestep_reward(const BeliefState& b,
                                      const SensingAction& action, double sigma,
                                      const RecoveryConfig& cfg, int n_beta,
                                      int n_y, Rng& rng) {
  if (n_beta < 1 || n_y < 1)
    throw std::invalid_argument("n_beta and n_y must be positive");
  const int n = b.n();
  const double nv = sigma * sigma;
  double total = 0.0;
  std::vector<std::uint8_t> sensed(n, 0);
  for (int c : action.cells) sensed[c] = 1;
  for (int ib = 0; ib < n_beta; ++ib) {
    const auto sample = quantize(thompson_sample(b, rng), cfg);
    // Cells outside the action keep their current mean.
    bool rest_match = true;
    for (int i = 0; i < n && rest_match; ++i)
      if (!sensed[i] && (b.mean[i] >= cfg.c_thr) != (sample[i] == 1))
        rest_match = false;
    for (int iy = 0; iy < n_y; ++iy) {
      bool match = rest_match;
      // Sequential fusion handles repeated cells within an action.
      std::vector<std::pair<int, std::pair<double, double>>> state;
      for (std::size_t q = 0; q < action.cells.size(); ++q) {
        const int c = action.cells[q];
        const double y = sample[c] + sigma * standard_normal(rng);
        double m = b.mean[c], v = b.var[c];
        for (auto& [cell, mv] : state)
          if (cell == c) { m = mv.first; v = mv.second; }
        const double v_new = 1.0 / (1.0 / v + 1.0 / nv);
        const double m_new = v_new * (m / v + y / nv);
        bool found = false;
        for (auto& [cell, mv] : state)
          if (cell == c) { mv = {m_new, v_new}; found = true; }
        if (!found) state.push_back({c, {m_new, v_new}});
      }
      for (const auto& [cell, mv] : state)
        if ((mv.first >= cfg.c_thr) != (sample[cell] == 1)) match = false;
      total += match ? 1.0 : -1.0;
    }
  }
  return total / (static_cast<double>(n_beta) * n_y);
}

// Exact iff the quantized mean equals the truth. The fraction is the
// Jaccard overlap of predicted and true target sets, which reduces to
// found / k without false positives and stays below 1 with any.
inline RecoveryResult recovery_check(std::span<const double> mean,
                                     std::span<const std::uint8_t> truth,
                                     const RecoveryConfig& cfg) {
  int found = 0, k = 0, false_pos = 0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const bool pred = mean[i] >= cfg.c_thr;
    if (truth[i]) {
      ++k;
      if (pred) ++found;
    } else if (pred) {
      ++false_pos;
    }
  }
  RecoveryResult r;
  r.exact = found == k && false_pos == 0;
  const int uni = k + false_pos;
  r.fraction = uni == 0 ? 1.0 : static_cast<double>(found) / uni;
  return r;
}

inline RecoveryResult recovery_check(const BeliefState& b, const Environment& env,
                                     const RecoveryConfig& cfg) {
  return recovery_check(b.mean, env.beta_true(), cfg);
}

}  // namespace cdas
