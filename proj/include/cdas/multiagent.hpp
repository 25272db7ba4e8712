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

// Episode runners.
//
// Agents live on a shared clock measured in seconds of travel and sensing.
// The agent with the earliest ready time acts next (ties by id): it folds
// in every message that has arrived, plans on its own belief, moves,
// senses and broadcasts the raw reading. A reading completes at the ready
// time plus its cost; copies reach teammates `delay_s` later unless the
// channel drops them. Team progress is scored on the union of all
// readings taken so far.

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdas/belief.hpp"
#include "cdas/diffusion.hpp"
#include "cdas/grid_env.hpp"
#include "cdas/mcts.hpp"
#include "cdas/myopic.hpp"
#include "cdas/rng.hpp"

namespace cdas {

class Planner {
 public:
  virtual ~Planner() = default;
  virtual std::string name() const = 0;
  // Index into the shared action list.
  virtual std::size_t plan(const BeliefState& belief, int current_cell, Rng& rng) = 0;
};

class EigPlanner : public Planner {
 public:
  EigPlanner(std::vector<SensingAction> actions, double sigma)
      : actions_(std::move(actions)), sigma_(sigma) {}
  std::string name() const override { return "eig"; }
  std::size_t plan(const BeliefState& b, int, Rng&) override {
    return eig_select(b, actions_, sigma_);
  }

 private:
  std::vector<SensingAction> actions_;
  double sigma_;
};

class TsPlanner : public Planner {
 public:
  TsPlanner(std::vector<SensingAction> actions, double sigma, int n_y)
      : actions_(std::move(actions)), sigma_(sigma), n_y_(n_y) {}
  std::string name() const override { return "ts"; }
  std::size_t plan(const BeliefState& b, int, Rng& rng) override {
    return ts_select(b, actions_, sigma_, n_y_, rng);
  }

 private:
  std::vector<SensingAction> actions_;
  double sigma_;
  int n_y_;
};

class MctsPlanner : public Planner {
 public:
  MctsPlanner(std::vector<SensingAction> actions, MctsConfig cfg, double sigma)
      : actions_(std::move(actions)), cfg_(cfg), sigma_(sigma) {}
  std::string name() const override { return "mcts"; }
  std::size_t plan(const BeliefState& b, int cell, Rng& rng) override {
    return mcts_plan(b, actions_, cell, cfg_, sigma_, rng).action;
  }

 private:
  std::vector<SensingAction> actions_;
  MctsConfig cfg_;
  double sigma_;
};

class DiffusionPlanner : public Planner {
 public:
  DiffusionPlanner(std::shared_ptr<const DiffusionModels> models,
                   std::vector<SensingAction> templates, SamplerConfig cfg)
      : models_(std::move(models)), templates_(std::move(templates)), cfg_(cfg) {}
  std::string name() const override { return cfg_.lambda_cost > 0 ? "cdas" : "das"; }
  std::size_t plan(const BeliefState& b, int cell, Rng& rng) override {
    return cdas_sample(*models_, state_image(b), cell, templates_, cfg_, rng).action;
  }

 private:
  std::shared_ptr<const DiffusionModels> models_;
  std::vector<SensingAction> templates_;
  SamplerConfig cfg_;
};

using PlannerFactory = std::function<std::unique_ptr<Planner>(int agent_id)>;

struct ChannelConfig {
  double drop_prob = 0.0;
  double delay_s = 0.0;
};

struct RunConfig {
  int agents = 1;
  int start_cell = 0;
  int max_measurements = 100;
  CostModel cost;
  ChannelConfig channel;
  RecoveryConfig recovery;
  std::uint64_t seed = 0;
};

struct Reading {
  std::size_t action = 0;
  std::vector<double> values;
  double arrival_s = 0.0;
  int source = 0;
};

struct AgentState {
  int id = 0;
  BeliefState belief;
  std::vector<Reading> readings;  // in the order they were fused
  int cell = 0;
  double cost_s = 0.0;   // reported travel + sensing cost
  double ready_s = 0.0;  // clock for turn order
  std::vector<Reading> inbox;
};

struct MeasurementLog {
  int index = 0;  // 1-based team measurement count
  int agent = 0;
  double time_s = 0.0;
  std::size_t action = 0;
  int origin = 0;
  double team_recovery = 0.0;
  bool team_exact = false;
  double agent_recovery = 0.0;
  bool agent_exact = false;
  double agent_cost_s = 0.0;
  double team_cost_s = 0.0;
  double decision_s = 0.0;
};

struct RunLog {
  std::vector<MeasurementLog> entries;
  std::vector<AgentState> agents;
  BeliefState team_belief;
  bool all_agents_exact = false;
  bool team_exact = false;
};

namespace detail {

inline void ingest(AgentState& a, const std::vector<SensingAction>& actions, double now,
                   double sigma) {
  // Stable by arrival time so equal arrivals keep send order.
  std::stable_sort(a.inbox.begin(), a.inbox.end(),
                   [](const Reading& x, const Reading& y) { return x.arrival_s < y.arrival_s; });
  auto it = a.inbox.begin();
  for (; it != a.inbox.end() && it->arrival_s <= now; ++it) {
    apply_observation(a.belief, actions[it->action].cells, it->values, sigma);
    a.readings.push_back(std::move(*it));
  }
  a.inbox.erase(a.inbox.begin(), it);
}

inline double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

// Stream layout shared with run_single_agent: planner rng of agent j uses
// stream 100 + j, its observation noise 200 + j, the channel stream 300.
inline RunLog run_multiagent(const Environment& env, const std::vector<SensingAction>& actions,
                             const PlannerFactory& factory, const RunConfig& cfg) {
  if (cfg.agents < 1) throw std::invalid_argument("need at least one agent");
  if (!(cfg.channel.drop_prob >= 0.0 && cfg.channel.drop_prob <= 1.0))
    throw std::invalid_argument("drop_prob must be in [0,1]");
  if (cfg.channel.delay_s < 0.0) throw std::invalid_argument("delay must be nonnegative");
  if (!env.shape().contains(cfg.start_cell)) throw std::invalid_argument("start cell off grid");
  const double sigma = env.sigma();
  const int j_count = cfg.agents;
  // Zero sensing cost would let an agent act forever at one instant.
  const double turn_floor = cfg.cost.sense_cost > 0.0 ? 0.0 : 1.0;

  std::vector<std::unique_ptr<Planner>> planners;
  std::vector<Rng> plan_rng, obs_rng;
  RunLog log;
  for (int j = 0; j < j_count; ++j) {
    planners.push_back(factory(j));
    plan_rng.emplace_back(derive_seed(cfg.seed, 100 + j));
    obs_rng.emplace_back(derive_seed(cfg.seed, 200 + j));
    AgentState a;
    a.id = j;
    a.belief = init_belief(env.shape(), sigma);
    a.cell = cfg.start_cell;
    log.agents.push_back(std::move(a));
  }
  Rng channel_rng(derive_seed(cfg.seed, 300));
  log.team_belief = init_belief(env.shape(), sigma);
  double team_cost = 0.0;

  for (int m = 1; m <= cfg.max_measurements; ++m) {
    int j = 0;
    for (int i = 1; i < j_count; ++i)
      if (log.agents[i].ready_s < log.agents[j].ready_s) j = i;
    AgentState& a = log.agents[j];
    const double now = a.ready_s;
    detail::ingest(a, actions, now, sigma);

    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t act = planners[j]->plan(a.belief, a.cell, plan_rng[j]);
    const double decision_s = detail::elapsed(t0);
    if (act >= actions.size()) throw std::out_of_range("planner returned a bad action");

    const auto& action = actions[act];
    const double step_cost = travel_cost(cfg.cost, env.shape(), a.cell, action.origin) +
                             cfg.cost.sense_cost;
    const auto obs = observe(env, action, obs_rng[j], m);
    const double done = now + step_cost;
    a.cost_s += step_cost;
    a.ready_s = done + turn_floor;
    a.cell = action.origin;
    apply_observation(a.belief, action.cells, obs.values, sigma);
    a.readings.push_back({act, obs.values, done, j});
    apply_observation(log.team_belief, action.cells, obs.values, sigma);
    team_cost += step_cost;

    for (int i = 0; i < j_count; ++i) {
      if (i == j) continue;
      if (cfg.channel.drop_prob > 0.0 && uniform01(channel_rng) < cfg.channel.drop_prob)
        continue;
      log.agents[i].inbox.push_back({act, obs.values, done + cfg.channel.delay_s, j});
    }

    // Readings that have landed by `done` count toward each agent's flag,
    // scored on a copy so no agent plans with them early.
    bool all_exact = true;
    for (const auto& other : log.agents) {
      BeliefState b = other.belief;
      for (const auto& r : other.inbox)
        if (r.arrival_s <= done) apply_observation(b, actions[r.action].cells, r.values, sigma);
      all_exact = all_exact && recovery_check(b, env, cfg.recovery).exact;
    }
    const auto team = recovery_check(log.team_belief, env, cfg.recovery);
    const auto own = recovery_check(a.belief, env, cfg.recovery);
    log.entries.push_back({m, j, done, act, action.origin, team.fraction, team.exact,
                           own.fraction, own.exact, a.cost_s, team_cost, decision_s});
    log.team_exact = team.exact;
    log.all_agents_exact = all_exact;
    if (all_exact) break;
  }
  return log;
}

// Plain single-agent loop with the same stream layout as agent 0 above.
inline RunLog run_single_agent(const Environment& env, const std::vector<SensingAction>& actions,
                               Planner& planner, const RunConfig& cfg) {
  if (!env.shape().contains(cfg.start_cell)) throw std::invalid_argument("start cell off grid");
  const double sigma = env.sigma();
  Rng plan_rng(derive_seed(cfg.seed, 100));
  Rng obs_rng(derive_seed(cfg.seed, 200));
  RunLog log;
  AgentState a;
  a.belief = init_belief(env.shape(), sigma);
  a.cell = cfg.start_cell;
  const double turn_floor = cfg.cost.sense_cost > 0.0 ? 0.0 : 1.0;
  for (int m = 1; m <= cfg.max_measurements; ++m) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t act = planner.plan(a.belief, a.cell, plan_rng);
    const double decision_s = detail::elapsed(t0);
    const auto& action = actions.at(act);
    const double step_cost =
        travel_cost(cfg.cost, env.shape(), a.cell, action.origin) + cfg.cost.sense_cost;
    const auto obs = observe(env, action, obs_rng, m);
    const double done = a.ready_s + step_cost;
    a.cost_s += step_cost;
    a.ready_s = done + turn_floor;
    a.cell = action.origin;
    a.belief = update_belief(a.belief, action, obs, sigma);
    a.readings.push_back({act, obs.values, done, 0});
    const auto r = recovery_check(a.belief, env, cfg.recovery);
    log.entries.push_back({m, 0, done, act, action.origin, r.fraction, r.exact, r.fraction,
                           r.exact, a.cost_s, a.cost_s, decision_s});
    log.team_exact = log.all_agents_exact = r.exact;
    if (r.exact) break;
  }
  log.team_belief = a.belief;
  log.agents.push_back(std::move(a));
  return log;
}

// Refolds an agent's readings from the prior, for consistency checks.
inline BeliefState replay_belief(const AgentState& a, const std::vector<SensingAction>& actions,
                                 GridShape shape, double sigma) {
  auto b = init_belief(shape, sigma);
  for (const auto& r : a.readings) apply_observation(b, actions[r.action].cells, r.values, sigma);
  return b;
}

}  // namespace cdas
