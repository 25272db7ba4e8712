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

// Gridded search world: hidden target vector, region sensing actions,
// noisy linear observations and travel/sensing costs.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cdas/rng.hpp"

namespace cdas {

enum class Direction : std::uint8_t { E = 0, W = 1, N = 2, S = 3 };

inline const char* to_string(Direction d) {
  switch (d) {
    case Direction::E: return "E";
    case Direction::W: return "W";
    case Direction::N: return "N";
    case Direction::S: return "S";
  }
  return "?";
}

enum class FovPreset : std::uint8_t { Line3, Wedge2, Custom };

inline const char* to_string(FovPreset p) {
  switch (p) {
    case FovPreset::Line3: return "line3";
    case FovPreset::Wedge2: return "wedge2";
    case FovPreset::Custom: return "custom";
  }
  return "?";
}

inline FovPreset parse_fov(const std::string& s) {
  if (s == "line3") return FovPreset::Line3;
  if (s == "wedge2") return FovPreset::Wedge2;
  if (s == "custom") return FovPreset::Custom;
  throw std::invalid_argument("unknown fov preset: " + s);
}

// A sensed cell relative to the agent: `ahead` cells along the facing
// direction, `lateral` cells to the right of it.
struct FovOffset {
  int ahead = 0;
  int lateral = 0;
  bool operator==(const FovOffset&) const = default;
};

struct FovPattern {
  std::vector<FovOffset> offsets;
  std::vector<Direction> directions{Direction::E, Direction::W, Direction::N,
                                    Direction::S};
};

inline FovPattern line3_pattern() {
  return {{{0, 0}, {1, 0}, {2, 0}}, {Direction::E, Direction::W}};
}

inline FovPattern wedge2_pattern() {
  return {{{0, 0}, {1, 0}, {2, -1}, {2, 0}, {2, 1}},
          {Direction::E, Direction::W, Direction::N, Direction::S}};
}

struct Coord {
  int row = 0;
  int col = 0;
  bool operator==(const Coord&) const = default;
};

struct GridShape {
  int rows = 1;
  int cols = 1;

  int size() const { return rows * cols; }
  bool contains(Coord c) const {
    return c.row >= 0 && c.row < rows && c.col >= 0 && c.col < cols;
  }
  bool contains(int cell) const { return cell >= 0 && cell < size(); }
  Coord coord(int cell) const { return {cell / cols, cell % cols}; }
  int index(Coord c) const { return c.row * cols + c.col; }
  bool operator==(const GridShape&) const = default;
};

struct SensingAction {
  int origin = 0;
  Direction direction = Direction::E;
  std::vector<int> cells;          // sensed cells, pattern order
  std::vector<std::uint8_t> mask;  // row-major, ones exactly at cells
};

struct Observation {
  std::vector<double> values;
  int timestamp = 0;
};

struct CostModel {
  double speed = 1.0;       // cells per second
  double sense_cost = 0.0;  // seconds per action
};

class Environment {
 public:
  Environment(GridShape shape, std::vector<std::uint8_t> beta_true,
              double sigma, FovPreset fov, std::uint64_t seed,
              FovPattern custom = {})
      : shape_(shape),
        beta_(std::move(beta_true)),
        sigma_(sigma),
        fov_(fov),
        seed_(seed),
        custom_(std::move(custom)) {
    if (shape_.rows < 1 || shape_.cols < 1)
      throw std::invalid_argument("grid dimensions must be positive");
    if (!(sigma_ > 0.0)) throw std::invalid_argument("sigma must be positive");
    if (static_cast<int>(beta_.size()) != shape_.size())
      throw std::invalid_argument("beta length does not match grid");
    k_ = static_cast<int>(std::count(beta_.begin(), beta_.end(), 1));
    if (k_ < 1) throw std::invalid_argument("beta must contain a target");
    if (fov_ == FovPreset::Custom && custom_.offsets.empty())
      throw std::invalid_argument("custom fov needs at least one offset");
  }

  const GridShape& shape() const { return shape_; }
  int n() const { return shape_.size(); }
  int k() const { return k_; }
  double sigma() const { return sigma_; }
  FovPreset fov() const { return fov_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<std::uint8_t>& beta_true() const { return beta_; }

  FovPattern pattern() const {
    switch (fov_) {
      case FovPreset::Line3: return line3_pattern();
      case FovPreset::Wedge2: return wedge2_pattern();
      case FovPreset::Custom: return custom_;
    }
    return custom_;
  }

 private:
  GridShape shape_;
  std::vector<std::uint8_t> beta_;
  int k_ = 0;
  double sigma_;
  FovPreset fov_;
  std::uint64_t seed_;
  FovPattern custom_;
};

// Targets are placed uniformly without replacement by a partial
// Fisher-Yates shuffle driven by rng_seed.
inline Environment new_environment(int n_len, int n_wid, int k, double sigma,
                                   FovPreset fov, std::uint64_t rng_seed,
                                   FovPattern custom = {}) {
  if (n_len < 1 || n_wid < 1)
    throw std::invalid_argument("grid dimensions must be positive");
  const int n = n_len * n_wid;
  if (k < 1 || k > n) throw std::invalid_argument("k must lie in [1, n]");
  Rng rng(derive_seed(rng_seed, 0));
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::uint8_t> beta(n, 0);
  for (int i = 0; i < k; ++i) {
    const int j =
        i + static_cast<int>(std::uniform_int_distribution<int>(0, n - 1 - i)(rng));
    std::swap(perm[i], perm[j]);
    beta[perm[i]] = 1;
  }
  return Environment({n_len, n_wid}, std::move(beta), sigma, fov, rng_seed,
                     std::move(custom));
}

namespace detail {

inline Coord step_of(Direction d) {
  switch (d) {
    case Direction::E: return {0, 1};
    case Direction::W: return {0, -1};
    case Direction::N: return {-1, 0};
    case Direction::S: return {1, 0};
  }
  return {0, 0};
}

}  // namespace detail

inline SensingAction make_action(const GridShape& shape, int origin,
                                 Direction dir, const FovPattern& pattern) {
  SensingAction a;
  a.origin = origin;
  a.direction = dir;
  a.mask.assign(shape.size(), 0);
  const Coord o = shape.coord(origin);
  const Coord f = detail::step_of(dir);
  const Coord right{f.col, -f.row};  // facing E, right is S
  for (const FovOffset& off : pattern.offsets) {
    const Coord c{o.row + off.ahead * f.row + off.lateral * right.row,
                  o.col + off.ahead * f.col + off.lateral * right.col};
    if (!shape.contains(c)) continue;
    const int idx = shape.index(c);
    if (a.mask[idx]) continue;
    a.mask[idx] = 1;
    a.cells.push_back(idx);
  }
  return a;
}

// Ordered by origin, then direction in E, W, N, S order.
inline std::vector<SensingAction> enumerate_actions(const GridShape& shape,
                                                    const FovPattern& pattern) {
  std::vector<Direction> dirs = pattern.directions;
  std::sort(dirs.begin(), dirs.end());
  dirs.erase(std::unique(dirs.begin(), dirs.end()), dirs.end());
  std::vector<SensingAction> out;
  out.reserve(static_cast<std::size_t>(shape.size()) * dirs.size());
  for (int c = 0; c < shape.size(); ++c)
    for (Direction d : dirs) out.push_back(make_action(shape, c, d, pattern));
  return out;
}

inline std::vector<SensingAction> enumerate_actions(const Environment& env) {
  return enumerate_actions(env.shape(), env.pattern());
}

inline Observation observe(const Environment& env, const SensingAction& action,
                           Rng& rng, int timestamp = 0) {
  Observation obs;
  obs.timestamp = timestamp;
  obs.values.reserve(action.cells.size());
  for (int c : action.cells) {
    if (!env.shape().contains(c))
      throw std::out_of_range("sensed cell outside grid");
    obs.values.push_back(env.beta_true()[c] + env.sigma() * standard_normal(rng));
  }
  return obs;
}

inline double travel_cost(const CostModel& cost, Coord a, Coord b) {
  return std::hypot(double(a.row - b.row), double(a.col - b.col)) / cost.speed;
}

inline double travel_cost(const CostModel& cost, const GridShape& shape,
                          int cell_a, int cell_b) {
  return travel_cost(cost, shape.coord(cell_a), shape.coord(cell_b));
}

inline double episode_cost(const CostModel& cost, const GridShape& shape,
                           int start_cell, std::span<const int> origins) {
  double total = 0.0;
  int prev = start_cell;
  for (int o : origins) {
    total += travel_cost(cost, shape, prev, o) + cost.sense_cost;
    prev = o;
  }
  return total;
}

inline double episode_cost(const CostModel& cost, const GridShape& shape,
                           int start_cell,
                           std::span<const SensingAction> actions) {
  std::vector<int> origins;
  origins.reserve(actions.size());
  for (const auto& a : actions) origins.push_back(a.origin);
  return episode_cost(cost, shape, start_cell, origins);
}

// Text record:
//   cdas-environment 1
//   n_len <int>
//   n_wid <int>
//   k <int>
//   sigma <hexfloat>
//   fov <line3|wedge2|custom>
//   seed <u64>
//   [pattern <count> a0 l0 a1 l1 ...]      custom only
//   [directions <string of ENWS>]          custom only
//   beta <n chars of 0/1>
inline void write_environment(std::ostream& os, const Environment& env) {
  char sigma_buf[64];
  std::snprintf(sigma_buf, sizeof sigma_buf, "%a", env.sigma());
  os << "cdas-environment 1\n"
     << "n_len " << env.shape().rows << "\n"
     << "n_wid " << env.shape().cols << "\n"
     << "k " << env.k() << "\n"
     << "sigma " << sigma_buf << "\n"
     << "fov " << to_string(env.fov()) << "\n"
     << "seed " << env.seed() << "\n";
  if (env.fov() == FovPreset::Custom) {
    const FovPattern p = env.pattern();
    os << "pattern " << p.offsets.size();
    for (const auto& o : p.offsets) os << ' ' << o.ahead << ' ' << o.lateral;
    os << "\ndirections ";
    for (Direction d : p.directions) os << to_string(d);
    os << "\n";
  }
  os << "beta ";
  for (auto b : env.beta_true()) os << char('0' + b);
  os << "\n";
}

inline Environment read_environment(std::istream& is) {
  std::string key;
  int version = 0;
  if (!(is >> key >> version) || key != "cdas-environment" || version != 1)
    throw std::runtime_error("not a cdas-environment v1 record");
  int rows = 0, cols = 0, k = 0;
  double sigma = 0;
  std::uint64_t seed = 0;
  FovPreset fov = FovPreset::Line3;
  FovPattern custom;
  std::string beta_str;
  while (is >> key) {
    if (key == "n_len") is >> rows;
    else if (key == "n_wid") is >> cols;
    else if (key == "k") is >> k;
    else if (key == "sigma") {
      std::string s;
      is >> s;
      sigma = std::strtod(s.c_str(), nullptr);
    } else if (key == "fov") {
      std::string s;
      is >> s;
      fov = parse_fov(s);
    } else if (key == "seed") is >> seed;
    else if (key == "pattern") {
      std::size_t count = 0;
      is >> count;
      custom.offsets.resize(count);
      for (auto& o : custom.offsets) is >> o.ahead >> o.lateral;
    } else if (key == "directions") {
      std::string s;
      is >> s;
      custom.directions.clear();
      for (char ch : s) {
        switch (ch) {
          case 'E': custom.directions.push_back(Direction::E); break;
          case 'W': custom.directions.push_back(Direction::W); break;
          case 'N': custom.directions.push_back(Direction::N); break;
          case 'S': custom.directions.push_back(Direction::S); break;
          default: throw std::runtime_error("bad direction in record");
        }
      }
    } else if (key == "beta") {
      is >> beta_str;
      break;
    } else {
      throw std::runtime_error("unknown environment key: " + key);
    }
  }
  if (!is && !is.eof()) throw std::runtime_error("truncated environment record");
  std::vector<std::uint8_t> beta;
  for (char ch : beta_str) {
    if (ch != '0' && ch != '1') throw std::runtime_error("bad beta digit");
    beta.push_back(static_cast<std::uint8_t>(ch - '0'));
  }
  Environment env({rows, cols}, std::move(beta), sigma, fov, seed,
                  std::move(custom));
  if (env.k() != k) throw std::runtime_error("k does not match beta");
  return env;
}

}  // namespace cdas
