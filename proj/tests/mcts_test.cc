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

#include "cdas/mcts.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <limits>

#include "oracles.hpp"

namespace cdas {
namespace {

// Exact expected leaf value of every depth-1 action with noiseless
// readings, by enumerating all quantized truths of an n-cell belief.
std::vector<double> depth1_oracle(const BeliefState& b,
                                  const std::vector<SensingAction>& actions,
                                  double c_thr) {
  const int n = b.n();
  std::vector<double> p_one(n);
  for (int i = 0; i < n; ++i)
    p_one[i] = 1.0 - test::normal_cdf((c_thr - b.mean[i]) / std::sqrt(b.var[i]));
  std::vector<double> value(actions.size(), 0.0);
  for (int code = 0; code < (1 << n); ++code) {
    double p = 1.0;
    std::vector<double> truth(n);
    for (int i = 0; i < n; ++i) {
      truth[i] = (code >> i) & 1;
      p *= truth[i] ? p_one[i] : 1 - p_one[i];
    }
    double root_err = 0.0;
    for (int i = 0; i < n; ++i) root_err += (truth[i] - b.mean[i]) * (truth[i] - b.mean[i]);
    for (std::size_t a = 0; a < actions.size(); ++a) {
      std::vector<double> m = b.mean;
      for (int c : actions[a].cells) m[c] = truth[c];
      bool exact = true;
      double leaf_err = 0.0;
      for (int i = 0; i < n; ++i) {
        if ((m[i] >= c_thr) != (truth[i] == 1)) exact = false;
        leaf_err += (truth[i] - m[i]) * (truth[i] - m[i]);
      }
      value[a] += p * ((exact ? 1.0 : -1.0) + 1.0 - leaf_err / root_err);
    }
  }
  return value;
}

TEST(MctsPlan, DepthOneMatchesExhaustiveOracle) {
  BeliefState b{{0.45, 0.55, 0.2, 0.6}, {0.02, 0.03, 0.01, 0.05}, GridShape{1, 4}};
  const auto actions = enumerate_actions(GridShape{1, 4}, line3_pattern());
  const auto oracle = depth1_oracle(b, actions, 0.5);
  const auto best = static_cast<std::size_t>(
      std::max_element(oracle.begin(), oracle.end()) - oracle.begin());
  auto same_cells = [&](std::size_t a, std::size_t c) {
    auto x = actions[a].cells, y = actions[c].cells;
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    return x == y;
  };
  // Mirror-image actions share a cell set; the runner-up must differ.
  double runner_up = -1e9;
  for (std::size_t a = 0; a < actions.size(); ++a)
    if (!same_cells(a, best)) runner_up = std::max(runner_up, oracle[a]);
  ASSERT_GT(oracle[best] - runner_up, 0.05) << "oracle must separate the top action";

  MctsConfig cfg;
  cfg.depth = 1;
  cfg.budget = 20000;
  cfg.cost = {1.0, 1000.0};
  cfg.epsilon_pareto = 0.0;
  Rng rng(4);
  const auto res = mcts_plan(b, actions, 0, cfg, 1e-6, rng);
  EXPECT_TRUE(same_cells(res.action, best))
      << "picked " << res.action << ", oracle best " << best;
}

TEST(MctsPlan, EqualRewardPrefersNearerAction) {
  const GridShape g{1, 8};
  auto b = init_belief(g, 1.0 / 16);
  auto far = make_action(g, 5, Direction::W, FovPattern{{{3, 0}}, {Direction::W}});
  auto near = make_action(g, 1, Direction::E, FovPattern{{{1, 0}}, {Direction::E}});
  ASSERT_EQ(far.cells, near.cells);
  const std::vector<SensingAction> actions{far, near};
  MctsConfig cfg;
  cfg.depth = 1;
  cfg.budget = 4000;
  cfg.cost = {1.0, 0.0};
  Rng rng(8);
  const auto res = mcts_plan(b, actions, 0, cfg, 1.0 / 16, rng);
  EXPECT_EQ(res.action, 1u);
  EXPECT_DOUBLE_EQ(res.root[0].mean_cost, 5.0);
  EXPECT_DOUBLE_EQ(res.root[1].mean_cost, 1.0);
}

TEST(MctsPlan, MinimalBudgetVisitsEachRootOnce) {
  const auto actions = enumerate_actions(GridShape{1, 16}, line3_pattern());
  const auto b = init_belief(16, 1.0 / 16);
  MctsConfig cfg;
  cfg.budget = static_cast<int>(actions.size());
  Rng rng(12);
  const auto res = mcts_plan(b, actions, 0, cfg, 1.0 / 16, rng);
  double best = -1e9;
  for (const auto& s : res.root) {
    EXPECT_EQ(s.visits, 1);
    best = std::max(best, s.mean_value);
  }
  const auto& chosen = res.root[res.action];
  EXPECT_GE(chosen.mean_value, best - cfg.epsilon_pareto);
  for (const auto& s : res.root)
    if (s.mean_value >= best - cfg.epsilon_pareto) {
      EXPECT_LE(chosen.mean_cost, s.mean_cost);
    }
}

TEST(MctsPlan, BudgetIsExactAndRootsCoveredFirst) {
  const auto actions = enumerate_actions(GridShape{4, 4}, wedge2_pattern());
  const auto b = init_belief(GridShape{4, 4}, 0.2);
  MctsConfig cfg;
  cfg.budget = 500;
  Rng rng(1);
  const auto res = mcts_plan(b, actions, 5, cfg, 0.2, rng);
  int total = 0;
  for (const auto& s : res.root) {
    EXPECT_GE(s.visits, 1);
    total += s.visits;
  }
  EXPECT_EQ(total, cfg.budget);
  EXPECT_EQ(res.simulations, cfg.budget);
  EXPECT_GT(res.wall_seconds, 0.0);
}

TEST(MctsPlan, EpsilonExtremes) {
  const auto actions = enumerate_actions(GridShape{1, 16}, line3_pattern());
  auto b = init_belief(16, 1.0 / 16);
  b.mean[9] = 0.48;
  b.var[9] = 0.002;
  MctsConfig cfg;
  cfg.budget = 3000;
  cfg.cost = {1.0, 0.0};

  cfg.epsilon_pareto = std::numeric_limits<double>::infinity();
  Rng r1(3);
  auto res = mcts_plan(b, actions, 6, cfg, 1.0 / 16, r1);
  double min_cost = 1e18;
  for (const auto& s : res.root) min_cost = std::min(min_cost, s.mean_cost);
  EXPECT_DOUBLE_EQ(res.root[res.action].mean_cost, min_cost);

  cfg.epsilon_pareto = 0.0;
  Rng r2(3);
  res = mcts_plan(b, actions, 6, cfg, 1.0 / 16, r2);
  double max_val = -1e18;
  for (const auto& s : res.root) max_val = std::max(max_val, s.mean_value);
  EXPECT_DOUBLE_EQ(res.root[res.action].mean_value, max_val);
}

TEST(MctsPlan, DeterministicForSeed) {
  const auto actions = enumerate_actions(GridShape{1, 16}, line3_pattern());
  const auto b = init_belief(16, 1.0 / 16);
  MctsConfig cfg;
  cfg.budget = 800;
  Rng r1(42), r2(42);
  const auto a = mcts_plan(b, actions, 0, cfg, 1.0 / 16, r1);
  const auto c = mcts_plan(b, actions, 0, cfg, 1.0 / 16, r2);
  EXPECT_EQ(a.action, c.action);
  for (std::size_t i = 0; i < a.root.size(); ++i) {
    EXPECT_EQ(a.root[i].visits, c.root[i].visits);
    EXPECT_EQ(a.root[i].mean_value, c.root[i].mean_value);
  }
}

TEST(MctsPlan, Errors) {
  const auto b = init_belief(4, 0.1);
  MctsConfig cfg;
  Rng rng(0);
  EXPECT_THROW(mcts_plan(b, std::vector<SensingAction>{}, 0, cfg, 0.1, rng),
               std::invalid_argument);
  const auto actions = enumerate_actions(GridShape{1, 4}, line3_pattern());
  cfg.budget = 3;
  EXPECT_THROW(mcts_plan(b, actions, 0, cfg, 0.1, rng), std::invalid_argument);
}

}  // namespace
}  // namespace cdas
