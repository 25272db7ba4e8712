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

// Cost-aware lookahead by depth-limited UCT.
//
// Every simulation draws one Thompson sample from the root belief and
// treats its quantization as the truth. Readings along the selected path
// are simulated from that truth and fused into a scratch belief. The leaf
// value is +1/-1 for exact recovery of the sampled truth plus the
// fraction of the root's squared estimation error that the path removed;
// the second term separates actions when the sample carries no target and
// every path trivially "recovers" it.
//
// The decision is an epsilon-pareto choice over root actions: keep the
// actions whose mean value is within `epsilon_pareto` of the best and
// return the one with the lowest mean simulated cost.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "cdas/belief.hpp"

namespace cdas {

struct MctsConfig {
  int depth = 2;
  int budget = 5000;
  double ucb_c = std::numbers::sqrt2;
  CostModel cost;
  double epsilon_pareto = 0.05;
  RecoveryConfig recovery;
};

struct RootActionStats {
  int visits = 0;
  double mean_value = 0.0;
  double mean_cost = 0.0;
};

struct MctsResult {
  std::size_t action = 0;
  double wall_seconds = 0.0;
  int simulations = 0;
  std::vector<RootActionStats> root;
};

namespace detail {

struct MctsNode {
  int visits = 0;
  double value_sum = 0.0;
  double cost_sum = 0.0;
  std::vector<int> children;  // node ids, -1 when not yet expanded
};

}  // namespace detail

inline std::size_t pareto_select(std::span<const RootActionStats> stats,
                                 double epsilon) {
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& s : stats)
    if (s.visits > 0) best = std::max(best, s.mean_value);
  const double floor = std::isinf(epsilon) ? -std::numeric_limits<double>::infinity()
                                           : best - epsilon;
  std::size_t pick = 0;
  double pick_cost = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < stats.size(); ++a) {
    const auto& s = stats[a];
    if (s.visits == 0 || s.mean_value < floor) continue;
    if (s.mean_cost < pick_cost) {
      pick_cost = s.mean_cost;
      pick = a;
    }
  }
  return pick;
}

inline MctsResult mcts_plan(const BeliefState& belief,
                            std::span<const SensingAction> actions,
                            int start_cell, const MctsConfig& cfg, double sigma,
                            Rng& rng) {
  const auto t0 = std::chrono::steady_clock::now();
  const int num_actions = static_cast<int>(actions.size());
  if (num_actions == 0) throw std::invalid_argument("empty action list");
  if (cfg.depth < 1) throw std::invalid_argument("depth must be at least 1");
  if (cfg.budget < num_actions)
    throw std::invalid_argument("budget below the number of root actions");

  const GridShape& shape = belief.shape;
  const double nv = sigma * sigma;
  std::vector<detail::MctsNode> nodes;
  nodes.reserve(static_cast<std::size_t>(cfg.budget) * cfg.depth + 1);
  nodes.push_back({0, 0.0, 0.0, std::vector<int>(num_actions, -1)});

  BeliefState scratch = belief;
  std::vector<int> path;
  path.reserve(cfg.depth + 1);

  for (int sim = 0; sim < cfg.budget; ++sim) {
    const auto truth = quantize(thompson_sample(belief, rng), cfg.recovery);
    double root_err = 0.0;
    for (int i = 0; i < belief.n(); ++i) {
      const double e = truth[i] - belief.mean[i];
      root_err += e * e;
    }
    scratch.mean = belief.mean;
    scratch.var = belief.var;
    int cell = start_cell;
    double cost = 0.0;
    int node = 0;
    path.clear();
    path.push_back(0);
    for (int d = 0; d < cfg.depth; ++d) {
      auto& cur = nodes[node];
      if (cur.children.empty()) cur.children.assign(num_actions, -1);
      int pick = -1;
      for (int a = 0; a < num_actions; ++a) {
        const int c = cur.children[a];
        if (c < 0 || nodes[c].visits == 0) {
          pick = a;
          break;
        }
      }
      if (pick < 0) {
        const double log_n = std::log(static_cast<double>(cur.visits));
        double best = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < num_actions; ++a) {
          const auto& ch = nodes[cur.children[a]];
          const double ucb = ch.value_sum / ch.visits +
                             cfg.ucb_c * std::sqrt(log_n / ch.visits);
          if (ucb > best) {
            best = ucb;
            pick = a;
          }
        }
      }
      if (nodes[node].children[pick] < 0) {
        nodes[node].children[pick] = static_cast<int>(nodes.size());
        nodes.push_back({});
      }
      node = nodes[node].children[pick];
      path.push_back(node);

      const SensingAction& act = actions[pick];
      cost += travel_cost(cfg.cost, shape, cell, act.origin) + cfg.cost.sense_cost;
      cell = act.origin;
      for (int c : act.cells)
        fuse_reading(scratch, c, truth[c] + sigma * standard_normal(rng), nv);
    }
    const auto rec = recovery_check(scratch.mean, truth, cfg.recovery);
    double leaf_err = 0.0;
    for (int i = 0; i < belief.n(); ++i) {
      const double e = truth[i] - scratch.mean[i];
      leaf_err += e * e;
    }
    const double value = (rec.exact ? 1.0 : -1.0) +
                         (root_err > 0.0 ? 1.0 - leaf_err / root_err : 0.0);
    for (int id : path) {
      nodes[id].visits += 1;
      nodes[id].value_sum += value;
      nodes[id].cost_sum += cost;
    }
  }

  MctsResult out;
  out.simulations = cfg.budget;
  out.root.resize(num_actions);
  for (int a = 0; a < num_actions; ++a) {
    const int c = nodes[0].children[a];
    if (c < 0 || nodes[c].visits == 0) continue;
    out.root[a] = {nodes[c].visits, nodes[c].value_sum / nodes[c].visits,
                   nodes[c].cost_sum / nodes[c].visits};
  }
  out.action = pareto_select(out.root, cfg.epsilon_pareto);
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace cdas
