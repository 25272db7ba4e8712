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

// Experiment harness: JSON configs with dotted overrides, trial seeding,
// planner construction by name and the metrics CSV shared with the plots.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "cdas/datagen.hpp"
#include "cdas/diffusion.hpp"
#include "cdas/multiagent.hpp"

namespace cdas {

inline constexpr int kMetricsSchemaVersion = 1;

inline const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols{
      "trial",           "algo",           "measurement_index",    "recovery_fraction",
      "exact_recovery_flag", "cumulative_cost_s", "decision_wallclock_s", "agent_id"};
  return cols;
}

inline nlohmann::json default_experiment_config() {
  return nlohmann::json::parse(R"({
    "env": {"n_len": 1, "n_wid": 16, "k": 1, "sigma": 0.0625, "fov": "line3",
            "start_cell": 0, "c_thr": 0.5},
    "cost": {"speed_v": 1.0, "sense_cost_s": 0.0},
    "run": {"algos": ["eig"], "agents": 1, "max_measurements": 40,
            "drop_prob": 0.0, "delay_s": 0.0, "record_wallclock": true},
    "ts": {"n_y": 5},
    "mcts": {"depth": 2, "budget": 5000, "ucb_c": 1.4142135623730951,
             "epsilon_pareto": 0.05},
    "diffusion": {"models": "models", "n_diff": 100, "alpha_guide": 10.0,
                  "lambda_cost": 1.0, "mode": "network_direct"},
    "data": {"m_episodes": 500, "t_steps": 16, "horizon_h": 8, "gamma": 0.9,
             "n_beta": 10, "n_y": 5},
    "train": {"dataset": "dataset.bin", "t_diff": 64, "hidden": [256, 256],
              "activation": "silu", "time_embedding": 16, "epochs": 100,
              "batch_size": 64, "lr": 0.001, "return_noising": false}
  })");
}

namespace detail {

inline bool same_kind(const nlohmann::json& a, const nlohmann::json& ref) {
  if (ref.is_number()) return a.is_number();
  if (ref.is_array()) return a.is_array();
  return a.type() == ref.type();
}

inline void check_shape(const nlohmann::json& user, const nlohmann::json& ref,
                        const std::string& where) {
  if (!user.is_object()) throw std::invalid_argument("config section " + where + " must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!ref.contains(key)) throw std::invalid_argument("unknown config key " + path);
    const auto& r = ref.at(key);
    if (r.is_object()) {
      check_shape(value, r, path);
    } else if (!same_kind(value, r)) {
      throw std::invalid_argument("wrong type for config key " + path);
    }
  }
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace detail

// Overlays `user` on the defaults; unknown keys and type changes throw.
inline nlohmann::json merge_config(const nlohmann::json& user) {
  auto cfg = default_experiment_config();
  detail::check_shape(user, cfg, "");
  cfg.merge_patch(user);
  return cfg;
}

// "section.key=value"; the value is read as JSON, else as a bare string.
inline void apply_override(nlohmann::json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest.erase(0, pos + 1))
    parts.push_back(rest.substr(0, pos));
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = {{*it, patch}};
  detail::check_shape(patch, default_experiment_config(), "");
  cfg.merge_patch(patch);
}

inline nlohmann::json load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path.string());
  const auto j = nlohmann::json::parse(is, nullptr, false);
  if (j.is_discarded()) throw std::invalid_argument("config is not valid JSON: " + path.string());
  return merge_config(j);
}

struct ExperimentSettings {
  DatasetConfig data;  // also carries the grid, k, sigma, fov and start cell
  CostModel cost;
  std::vector<std::string> algos;
  int agents = 1;
  int max_measurements = 40;
  ChannelConfig channel;
  bool record_wallclock = true;
  int ts_n_y = 5;
  MctsConfig mcts;
  SamplerConfig sampler;
  std::string models_dir;
  std::string dataset_file;
  int t_diff = 64;
  NetConfig net;
  TrainConfig train;
  bool return_noising = false;

  GridShape shape() const { return data.shape(); }
};

inline const std::vector<std::string>& known_algos() {
  static const std::vector<std::string> a{"eig", "ts", "mcts", "das", "cdas"};
  return a;
}

inline bool needs_models(const std::string& algo) { return algo == "das" || algo == "cdas"; }

inline ExperimentSettings settings_from_json(const nlohmann::json& cfg) {
  ExperimentSettings s;
  const auto& env = cfg.at("env");
  auto& d = s.data;
  d.n_len = env.at("n_len").get<int>();
  d.n_wid = env.at("n_wid").get<int>();
  d.k = env.at("k").get<int>();
  d.sigma = env.at("sigma").get<double>();
  d.fov = parse_fov(env.at("fov").get<std::string>());
  d.start_cell = env.at("start_cell").get<int>();
  d.recovery.c_thr = env.at("c_thr").get<double>();
  const auto& data = cfg.at("data");
  d.m_episodes = data.at("m_episodes").get<int>();
  d.t_steps = data.at("t_steps").get<int>();
  d.horizon_h = data.at("horizon_h").get<int>();
  d.gamma = data.at("gamma").get<double>();
  d.n_beta = data.at("n_beta").get<int>();
  d.n_y = data.at("n_y").get<int>();
  validate(d);

  s.cost.speed = cfg.at("cost").at("speed_v").get<double>();
  s.cost.sense_cost = cfg.at("cost").at("sense_cost_s").get<double>();
  if (!(s.cost.speed > 0.0)) throw std::invalid_argument("cost.speed_v must be positive");
  if (s.cost.sense_cost < 0.0) throw std::invalid_argument("cost.sense_cost_s must be >= 0");

  const auto& run = cfg.at("run");
  for (const auto& a : run.at("algos")) {
    if (!a.is_string()) throw std::invalid_argument("run.algos must list names");
    const auto name = a.get<std::string>();
    if (std::find(known_algos().begin(), known_algos().end(), name) == known_algos().end())
      throw std::invalid_argument("unknown algo " + name);
    s.algos.push_back(name);
  }
  if (s.algos.empty()) throw std::invalid_argument("run.algos is empty");
  s.agents = run.at("agents").get<int>();
  s.max_measurements = run.at("max_measurements").get<int>();
  s.channel.drop_prob = run.at("drop_prob").get<double>();
  s.channel.delay_s = run.at("delay_s").get<double>();
  s.record_wallclock = run.at("record_wallclock").get<bool>();
  if (s.agents < 1) throw std::invalid_argument("run.agents must be >= 1");
  if (s.max_measurements < 1) throw std::invalid_argument("run.max_measurements must be >= 1");
  if (!(s.channel.drop_prob >= 0.0 && s.channel.drop_prob <= 1.0))
    throw std::invalid_argument("run.drop_prob must lie in [0,1]");
  if (s.channel.delay_s < 0.0) throw std::invalid_argument("run.delay_s must be >= 0");

  s.ts_n_y = cfg.at("ts").at("n_y").get<int>();
  if (s.ts_n_y < 1) throw std::invalid_argument("ts.n_y must be >= 1");
  const auto& mc = cfg.at("mcts");
  s.mcts.depth = mc.at("depth").get<int>();
  s.mcts.budget = mc.at("budget").get<int>();
  s.mcts.ucb_c = mc.at("ucb_c").get<double>();
  s.mcts.epsilon_pareto = mc.at("epsilon_pareto").get<double>();
  s.mcts.cost = s.cost;
  s.mcts.recovery = d.recovery;
  if (s.mcts.depth < 1 || s.mcts.budget < 1 || !(s.mcts.ucb_c > 0.0) ||
      s.mcts.epsilon_pareto < 0.0)
    throw std::invalid_argument("bad mcts settings");

  const auto& df = cfg.at("diffusion");
  s.models_dir = df.at("models").get<std::string>();
  s.sampler.n_diff = df.at("n_diff").get<int>();
  s.sampler.alpha_guide = df.at("alpha_guide").get<double>();
  s.sampler.lambda_cost = df.at("lambda_cost").get<double>();
  s.sampler.mode = parse_reverse_mean_mode(df.at("mode").get<std::string>());
  if (s.sampler.n_diff < 1) throw std::invalid_argument("diffusion.n_diff must be >= 1");
  if (s.sampler.alpha_guide < 0.0 || s.sampler.lambda_cost < 0.0)
    throw std::invalid_argument("diffusion coefficients must be >= 0");

  const auto& tr = cfg.at("train");
  s.dataset_file = tr.at("dataset").get<std::string>();
  s.t_diff = tr.at("t_diff").get<int>();
  s.net.hidden = tr.at("hidden").get<std::vector<int>>();
  s.net.activation = nn::parse_activation(tr.at("activation").get<std::string>());
  s.net.time_embedding = tr.at("time_embedding").get<int>();
  s.train.epochs = tr.at("epochs").get<int>();
  s.train.batch_size = tr.at("batch_size").get<int>();
  s.train.lr = tr.at("lr").get<double>();
  s.return_noising = tr.at("return_noising").get<bool>();
  if (s.t_diff < 1 || s.net.time_embedding < 2 || s.net.time_embedding % 2 != 0 ||
      s.train.epochs < 1 || s.train.batch_size < 1 || !(s.train.lr > 0.0))
    throw std::invalid_argument("bad train settings");
  for (int h : s.net.hidden)
    if (h < 1) throw std::invalid_argument("train.hidden widths must be positive");
  return s;
}

// Evaluation instances live on their own stream so they never coincide
// with training episodes generated from the same master seed.
inline std::uint64_t trial_seed(std::uint64_t seed, int trial) {
  return derive_seed(derive_seed(seed, 0xe7a1), static_cast<std::uint64_t>(trial));
}

inline Environment trial_environment(const ExperimentSettings& s, std::uint64_t seed, int trial) {
  const auto& d = s.data;
  return new_environment(d.n_len, d.n_wid, d.k, d.sigma, d.fov, trial_seed(seed, trial));
}

inline RunConfig trial_run_config(const ExperimentSettings& s, std::uint64_t seed, int trial) {
  RunConfig rc;
  rc.agents = s.agents;
  rc.start_cell = s.data.start_cell;
  rc.max_measurements = s.max_measurements;
  rc.cost = s.cost;
  rc.channel = s.channel;
  rc.recovery = s.data.recovery;
  rc.seed = derive_seed(trial_seed(seed, trial), 1);
  return rc;
}

inline PlannerFactory make_planner_factory(const ExperimentSettings& s, const std::string& algo,
                                           const std::vector<SensingAction>& actions,
                                           std::shared_ptr<const DiffusionModels> models) {
  const double sigma = s.data.sigma;
  if (algo == "eig")
    return [=](int) { return std::make_unique<EigPlanner>(actions, sigma); };
  if (algo == "ts")
    return [=, n_y = s.ts_n_y](int) { return std::make_unique<TsPlanner>(actions, sigma, n_y); };
  if (algo == "mcts")
    return [=, mc = s.mcts](int) { return std::make_unique<MctsPlanner>(actions, mc, sigma); };
  if (needs_models(algo)) {
    if (!models) throw std::invalid_argument(algo + " needs trained models");
    if (!(models->shape == s.shape()))
      throw std::invalid_argument("model grid does not match the configured grid");
    auto sc = s.sampler;
    if (algo == "das") sc.lambda_cost = 0.0;
    if (algo == "cdas" && !(sc.lambda_cost > 0.0))
      throw std::invalid_argument("cdas needs diffusion.lambda_cost > 0");
    return [=](int) { return std::make_unique<DiffusionPlanner>(models, actions, sc); };
  }
  throw std::invalid_argument("unknown algo " + algo);
}

struct MetricsRow {
  int trial = 0;
  std::string algo;
  int measurement_index = 0;
  double recovery_fraction = 0.0;
  bool exact = false;
  double cumulative_cost_s = 0.0;
  double decision_s = 0.0;
  int agent_id = 0;
};

// Team view: union-belief recovery and summed team cost.
inline std::vector<MetricsRow> rows_from_log(int trial, const std::string& algo,
                                             const RunLog& log, bool record_wallclock) {
  std::vector<MetricsRow> rows;
  rows.reserve(log.entries.size());
  for (const auto& e : log.entries)
    rows.push_back({trial, algo, e.index, e.team_recovery, e.team_exact, e.team_cost_s,
                    record_wallclock ? e.decision_s : 0.0, e.agent});
  return rows;
}

struct TrialResult {
  int trial = 0;
  std::string algo;
  RunLog log;
};

// Trials x algos, spread over `workers` threads; output order is fixed.
inline std::vector<TrialResult> run_trials(const ExperimentSettings& s, std::uint64_t seed,
                                           int trials, int workers,
                                           std::shared_ptr<const DiffusionModels> models) {
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  const int n_algo = static_cast<int>(s.algos.size());
  const int jobs = trials * n_algo;
  std::vector<TrialResult> out(jobs);
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto work = [&] {
    for (int job; (job = next.fetch_add(1)) < jobs;) {
      try {
        const int trial = job / n_algo;
        const auto& algo = s.algos[job % n_algo];
        const auto env = trial_environment(s, seed, trial);
        const auto actions = enumerate_actions(env);
        const auto factory = make_planner_factory(s, algo, actions, models);
        out[job] = {trial, algo,
                    run_multiagent(env, actions, factory, trial_run_config(s, seed, trial))};
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        next = jobs;
      }
    }
  };
  const int n_threads = std::clamp(workers, 1, jobs);
  std::vector<std::thread> pool;
  for (int i = 1; i < n_threads; ++i) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return out;
}

inline std::vector<MetricsRow> metrics_rows(const std::vector<TrialResult>& results,
                                            bool record_wallclock) {
  std::vector<MetricsRow> rows;
  for (const auto& r : results) {
    auto part = rows_from_log(r.trial, r.algo, r.log, record_wallclock);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
  const auto& cols = metrics_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  for (const auto& r : rows) {
    os << r.trial << ',' << r.algo << ',' << r.measurement_index << ','
       << detail::fmt_double(r.recovery_fraction) << ',' << (r.exact ? 1 : 0) << ','
       << detail::fmt_double(r.cumulative_cost_s) << ',' << detail::fmt_double(r.decision_s)
       << ',' << r.agent_id << '\n';
  }
}

inline std::vector<MetricsRow> read_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("empty metrics file");
  if (detail::split_csv_line(line) != metrics_columns())
    throw std::runtime_error("metrics header does not match schema");
  std::vector<MetricsRow> rows;
  for (int line_no = 2; std::getline(is, line); ++line_no) {
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != metrics_columns().size())
      throw std::runtime_error("bad field count on line " + std::to_string(line_no));
    try {
      MetricsRow r;
      r.trial = std::stoi(f[0]);
      r.algo = f[1];
      r.measurement_index = std::stoi(f[2]);
      r.recovery_fraction = std::stod(f[3]);
      r.exact = std::stoi(f[4]) != 0;
      r.cumulative_cost_s = std::stod(f[5]);
      r.decision_s = std::stod(f[6]);
      r.agent_id = std::stoi(f[7]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw std::runtime_error("unparsable value on line " + std::to_string(line_no));
    }
  }
  return rows;
}

struct BenchRow {
  std::string algo;
  std::size_t decisions = 0;
  double mean_decision_s = 0.0;
};

// Mean decision time per algo, in first-seen order.
inline std::vector<BenchRow> bench_summary(const std::vector<MetricsRow>& rows) {
  std::vector<BenchRow> out;
  std::map<std::string, std::size_t> slot;
  for (const auto& r : rows) {
    auto [it, fresh] = slot.try_emplace(r.algo, out.size());
    if (fresh) out.push_back({r.algo, 0, 0.0});
    auto& b = out[it->second];
    ++b.decisions;
    b.mean_decision_s += r.decision_s;
  }
  for (auto& b : out) b.mean_decision_s /= static_cast<double>(b.decisions);
  return out;
}

struct TrainedBundle {
  DiffusionModels models;
  std::vector<double> rho_loss, nu_loss, dist_loss;
};

inline TrainedBundle train_bundle(const Dataset& ds, const ExperimentSettings& s, Rng& rng) {
  const auto td = chunk_episodes(ds, ds.config.horizon_h, ds.config.gamma);
  TrainedBundle b;
  b.models.shape = td.shape;
  b.models.horizon = td.horizon;
  b.models.time_embedding = s.net.time_embedding;
  b.models.schedule = cosine_schedule(s.t_diff);
  b.models.nu_noised = s.return_noising;
  auto rho = train_trajectory_model(td, b.models.schedule, s.net, s.train, rng);
  auto nu = train_return_model(td, b.models.schedule, s.return_noising, s.net, s.train, rng);
  auto dist = train_distance_model(td, s.net, s.train, rng);
  b.models.rho = std::move(rho.net);
  b.models.nu = std::move(nu.net);
  b.models.dist = std::move(dist.net);
  b.rho_loss = std::move(rho.loss_history);
  b.nu_loss = std::move(nu.loss_history);
  b.dist_loss = std::move(dist.loss_history);
  return b;
}

inline void write_training_curves(std::ostream& os, const TrainedBundle& b) {
  os << "model,epoch,loss\n";
  auto put = [&](const char* name, const std::vector<double>& h) {
    for (std::size_t e = 0; e < h.size(); ++e)
      os << name << ',' << e + 1 << ',' << detail::fmt_double(h[e]) << '\n';
  };
  put("rho", b.rho_loss);
  put("nu", b.nu_loss);
  put("dist", b.dist_loss);
}

// Writes through a sibling temporary so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& body) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    os << body;
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::filesystem::path resolve_path(const std::filesystem::path& base,
                                          const std::string& p) {
  return detail::resolve(base, p);
}

}  // namespace cdas
