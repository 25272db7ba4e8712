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

// Offline behaviour data: information-greedy episodes with one-step
// recovery reward labels, chunked into fixed-horizon training sequences.

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "cdas/belief.hpp"
#include "cdas/diffusion.hpp"
#include "cdas/grid_env.hpp"
#include "cdas/myopic.hpp"
#include "cdas/rng.hpp"
#include "json.hpp"

namespace cdas {

struct DatasetConfig {
  int m_episodes = 500;
  int t_steps = 16;
  int horizon_h = 8;
  double gamma = 0.9;
  int n_len = 1;
  int n_wid = 16;
  int k = 1;
  double sigma = 1.0 / 16;
  FovPreset fov = FovPreset::Line3;
  int start_cell = 0;
  int n_beta = 10;
  int n_y = 5;
  RecoveryConfig recovery;
  std::uint64_t rng_seed = 0;

  GridShape shape() const { return {n_len, n_wid}; }
};

inline void validate(const DatasetConfig& c) {
  if (c.m_episodes < 1 || c.t_steps < 1 || c.horizon_h < 1)
    throw std::invalid_argument("episode counts and horizon must be positive");
  if (c.horizon_h > c.t_steps) throw std::invalid_argument("horizon exceeds episode length");
  if (!(c.gamma > 0.0 && c.gamma <= 1.0)) throw std::invalid_argument("gamma must be in (0,1]");
  if (c.n_beta < 1 || c.n_y < 1) throw std::invalid_argument("reward sample sizes must be positive");
  if (!c.shape().contains(c.start_cell)) throw std::invalid_argument("start cell off grid");
}

inline FovPattern preset_pattern(FovPreset fov) {
  switch (fov) {
    case FovPreset::Line3: return line3_pattern();
    case FovPreset::Wedge2: return wedge2_pattern();
    default: throw std::invalid_argument("dataset needs a preset field of view");
  }
}

struct EpisodeRecord {
  std::uint64_t env_seed = 0;
  std::vector<std::uint8_t> beta;
  std::vector<std::vector<double>> states;  // T x 2n, before each action
  std::vector<int> actions;                 // template index per step
  std::vector<double> rewards;
  std::vector<int> cells;                   // agent cell after each step
  double final_recovery = 0.0;
};

struct Dataset {
  DatasetConfig config;
  std::vector<SensingAction> templates;
  std::vector<EpisodeRecord> episodes;
};

inline EpisodeRecord generate_episode(const DatasetConfig& c,
                                      const std::vector<SensingAction>& templates,
                                      std::size_t episode) {
  const std::uint64_t seed = derive_seed(c.rng_seed, episode);
  const auto env = new_environment(c.n_len, c.n_wid, c.k, c.sigma, c.fov, seed);
  Rng obs_rng(derive_seed(seed, 1));
  Rng reward_rng(derive_seed(seed, 2));
  EpisodeRecord rec;
  rec.env_seed = seed;
  rec.beta = env.beta_true();
  auto belief = init_belief(env.shape(), c.sigma);
  for (int t = 0; t < c.t_steps; ++t) {
    const std::size_t a = eig_select(belief, templates, c.sigma);
    rec.states.push_back(state_image(belief).channels);
    rec.actions.push_back(static_cast<int>(a));
    rec.rewards.push_back(expected_onestep_reward(belief, templates[a], c.sigma, c.recovery,
                                                  c.n_beta, c.n_y, reward_rng));
    rec.cells.push_back(templates[a].origin);
    belief = update_belief(belief, templates[a], observe(env, templates[a], obs_rng, t), c.sigma);
  }
  rec.final_recovery = recovery_check(belief, env, c.recovery).fraction;
  return rec;
}

// Episodes are independent and seeded per index, so the worker count does
// not change the output.
inline Dataset generate_dataset(const DatasetConfig& c, int workers = 1) {
  validate(c);
  Dataset ds;
  ds.config = c;
  ds.templates = enumerate_actions(c.shape(), preset_pattern(c.fov));
  ds.episodes.resize(c.m_episodes);
  workers = std::clamp(workers, 1, c.m_episodes);
  auto work = [&](int w) {
    for (int e = w; e < c.m_episodes; e += workers)
      ds.episodes[e] = generate_episode(c, ds.templates, e);
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& th : pool) th.join();
  }
  return ds;
}

inline double discounted_return(std::span<const double> rewards, double gamma) {
  double r = 0.0, g = 1.0;
  for (double v : rewards) {
    r += g * v;
    g *= gamma;
  }
  return r;
}

inline TrajectoryDataset chunk_episodes(const Dataset& ds, int horizon_h, double gamma) {
  const int t_steps = ds.config.t_steps;
  if (horizon_h < 1 || horizon_h > t_steps)
    throw std::invalid_argument("horizon must be in [1, T]");
  TrajectoryDataset out;
  out.shape = ds.config.shape();
  out.horizon = horizon_h;
  for (const auto& ep : ds.episodes) {
    for (int t = 0; t + horizon_h <= t_steps; ++t) {
      TrajectoryChunk ch;
      ch.state = ep.states[t];
      ch.start_cell = t == 0 ? ds.config.start_cell : ep.cells[t - 1];
      for (int h = 0; h < horizon_h; ++h) {
        const auto& a = ds.templates[ep.actions[t + h]];
        for (auto bit : a.mask) ch.tau.push_back(code_cell(bit));
        ch.origins.push_back(a.origin);
      }
      ch.ret = discounted_return(
          std::span<const double>(ep.rewards).subspan(t, horizon_h), gamma);
      ch.distance = path_distance(out.shape, ch.start_cell, ch.origins);
      out.chunks.push_back(std::move(ch));
    }
  }
  return out;
}

inline nlohmann::json to_json(const DatasetConfig& c) {
  return {{"m_episodes", c.m_episodes}, {"t_steps", c.t_steps},
          {"horizon_h", c.horizon_h},   {"gamma", c.gamma},
          {"n_len", c.n_len},           {"n_wid", c.n_wid},
          {"k", c.k},                   {"sigma", c.sigma},
          {"fov", to_string(c.fov)},    {"start_cell", c.start_cell},
          {"n_beta", c.n_beta},         {"n_y", c.n_y},
          {"c_thr", c.recovery.c_thr},  {"rng_seed", c.rng_seed}};
}

inline DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  DatasetConfig c;
  c.m_episodes = j.at("m_episodes").get<int>();
  c.t_steps = j.at("t_steps").get<int>();
  c.horizon_h = j.at("horizon_h").get<int>();
  c.gamma = j.at("gamma").get<double>();
  c.n_len = j.at("n_len").get<int>();
  c.n_wid = j.at("n_wid").get<int>();
  c.k = j.at("k").get<int>();
  c.sigma = j.at("sigma").get<double>();
  c.fov = parse_fov(j.at("fov").get<std::string>());
  c.start_cell = j.at("start_cell").get<int>();
  c.n_beta = j.at("n_beta").get<int>();
  c.n_y = j.at("n_y").get<int>();
  c.recovery.c_thr = j.at("c_thr").get<double>();
  c.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  return c;
}

namespace detail {

template <class T>
void put(std::ostream& os, T v) {
  static_assert(std::endian::native == std::endian::little);
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  os.write(buf, sizeof(T));
}

template <class T>
T get(std::istream& is) {
  char buf[sizeof(T)];
  if (!is.read(buf, sizeof(T))) throw std::runtime_error("truncated dataset file");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace detail

// Binary body: "cdas-dataset 1\n", then per episode: u64 env seed, n beta
// bytes, f64 final recovery, then per step i32 action, i32 cell, f64 reward
// and 2n f64 state.
inline void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  const auto& c = ds.config;
  const int n = c.shape().size();
  {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "cdas-dataset 1\n";
    for (const auto& ep : ds.episodes) {
      detail::put<std::uint64_t>(os, ep.env_seed);
      os.write(reinterpret_cast<const char*>(ep.beta.data()), n);
      detail::put<double>(os, ep.final_recovery);
      for (int t = 0; t < c.t_steps; ++t) {
        detail::put<std::int32_t>(os, ep.actions[t]);
        detail::put<std::int32_t>(os, ep.cells[t]);
        detail::put<double>(os, ep.rewards[t]);
        for (double v : ep.states[t]) detail::put<double>(os, v);
      }
    }
    if (!os) throw std::runtime_error("write failed for " + path.string());
  }
  nlohmann::json m;
  m["format"] = "cdas-dataset";
  m["version"] = 1;
  m["config"] = to_json(c);
  m["episodes"] = ds.episodes.size();
  m["templates"] = ds.templates.size();
  m["data_file"] = path.filename().string();
  std::ofstream(path.string() + ".json") << m.dump(2) << "\n";
}

inline Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream ms(path.string() + ".json");
  if (!ms) throw std::runtime_error("missing dataset manifest for " + path.string());
  const auto m = nlohmann::json::parse(ms);
  if (m.value("format", "") != "cdas-dataset" || m.value("version", 0) != 1)
    throw std::runtime_error("unsupported dataset manifest");
  Dataset ds;
  ds.config = dataset_config_from_json(m.at("config"));
  validate(ds.config);
  const auto& c = ds.config;
  ds.templates = enumerate_actions(c.shape(), preset_pattern(c.fov));
  const int n = c.shape().size();
  std::ifstream is(path, std::ios::binary);
  std::string header;
  if (!std::getline(is, header) || header != "cdas-dataset 1")
    throw std::runtime_error("bad dataset header in " + path.string());
  const auto count = m.at("episodes").get<std::size_t>();
  for (std::size_t e = 0; e < count; ++e) {
    EpisodeRecord ep;
    ep.env_seed = detail::get<std::uint64_t>(is);
    ep.beta.resize(n);
    if (!is.read(reinterpret_cast<char*>(ep.beta.data()), n))
      throw std::runtime_error("truncated dataset file");
    ep.final_recovery = detail::get<double>(is);
    for (int t = 0; t < c.t_steps; ++t) {
      const int a = detail::get<std::int32_t>(is);
      if (a < 0 || a >= static_cast<int>(ds.templates.size()))
        throw std::runtime_error("action index out of range in dataset");
      ep.actions.push_back(a);
      ep.cells.push_back(detail::get<std::int32_t>(is));
      ep.rewards.push_back(detail::get<double>(is));
      std::vector<double> s(2 * n);
      for (auto& v : s) v = detail::get<double>(is);
      ep.states.push_back(std::move(s));
    }
    ds.episodes.push_back(std::move(ep));
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw std::runtime_error("trailing bytes in dataset file");
  return ds;
}

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<int> counts;
};

inline Histogram histogram(std::span<const double> values, double lo, double hi, int bins) {
  Histogram h{lo, hi, std::vector<int>(bins, 0)};
  for (double v : values) {
    int b = static_cast<int>((v - lo) / (hi - lo) * bins);
    h.counts[std::clamp(b, 0, bins - 1)] += 1;
  }
  return h;
}

struct DatasetStats {
  std::size_t episodes = 0;
  std::size_t chunks = 0;
  Histogram rewards;
  Histogram returns;
};

inline DatasetStats dataset_stats(const Dataset& ds, int bins = 10) {
  const auto& c = ds.config;
  DatasetStats st;
  st.episodes = ds.episodes.size();
  std::vector<double> r;
  for (const auto& ep : ds.episodes) r.insert(r.end(), ep.rewards.begin(), ep.rewards.end());
  st.rewards = histogram(r, -1.0, 1.0, bins);
  const auto chunks = chunk_episodes(ds, c.horizon_h, c.gamma);
  st.chunks = chunks.chunks.size();
  double bound = 0.0, g = 1.0;
  for (int h = 0; h < c.horizon_h; ++h, g *= c.gamma) bound += g;
  std::vector<double> ret;
  for (const auto& ch : chunks.chunks) ret.push_back(*ch.ret);
  st.returns = histogram(ret, -bound, bound, bins);
  return st;
}

}  // namespace cdas
