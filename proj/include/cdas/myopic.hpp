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

// One-step baselines: information-greedy and Thompson-sampling selection.

#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "cdas/belief.hpp"

namespace cdas {

inline std::size_t eig_select(const BeliefState& b,
                              std::span<const SensingAction> actions,
                              double sigma) {
  if (actions.empty()) throw std::invalid_argument("empty action list");
  std::size_t best = 0;
  double best_gain = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < actions.size(); ++i) {
    const double g = expected_information_gain(b, actions[i], sigma);
    if (g > best_gain) {
      best_gain = g;
      best = i;
    }
  }
  return best;
}

// Monte Carlo value of -||target - posterior_mean'||^2 for one action,
// where readings are simulated from `target`.
inline double ts_objective(const BeliefState& b, const SensingAction& action,
                           std::span<const double> target, double sigma,
                           int n_y, Rng& rng) {
  const double nv = sigma * sigma;
  double base = 0.0;
  for (int i = 0; i < b.n(); ++i) {
    const double e = target[i] - b.mean[i];
    base += e * e;
  }
  double acc = 0.0;
  BeliefState scratch = b;
  for (int iy = 0; iy < n_y; ++iy) {
    double err = base;
    for (int c : action.cells) {
      scratch.mean[c] = b.mean[c];
      scratch.var[c] = b.var[c];
    }
    for (int c : action.cells) {
      const double y = target[c] + sigma * standard_normal(rng);
      fuse_reading(scratch, c, y, nv);
    }
    for (int c : action.cells) {
      const double e0 = target[c] - b.mean[c];
      const double e1 = target[c] - scratch.mean[c];
      err += e1 * e1 - e0 * e0;
    }
    acc -= err;
  }
  return acc / n_y;
}

inline std::size_t ts_select(const BeliefState& b,
                             std::span<const SensingAction> actions,
                             double sigma, int n_y, Rng& rng,
                             const RecoveryConfig& cfg = {}) {
  if (actions.empty()) throw std::invalid_argument("empty action list");
  const auto q = quantize(thompson_sample(b, rng), cfg);
  const std::vector<double> target(q.begin(), q.end());
  std::size_t best = 0;
  double best_val = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < actions.size(); ++i) {
    const double v = ts_objective(b, actions[i], target, sigma, n_y, rng);
    if (v > best_val) {
      best_val = v;
      best = i;
    }
  }
  return best;
}

}  // namespace cdas
