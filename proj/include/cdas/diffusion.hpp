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

// Gradient-guided diffusion over lookahead action sequences.
//
// A trajectory is H action frames of n cells each, flattened frame-major
// and coded -1/+1. Three networks are trained on chunks of behaviour data:
//
//   trajectory model   [tau_t, s, emb(t)] -> clean tau    (H*n outputs)
//   return model       [tau,   s, emb(t)] -> discounted return
//   distance model     tau                -> distance travelled
//
// Sampling starts every chain from standard normal noise and walks the
// schedule down to t = 1. The reverse mean is the trajectory model output
// (or the DDPM posterior mean built from it), shifted by the scaled
// gradient of return minus lambda times distance. Final iterates are
// snapped to the nearest action templates and the chain with the best
// return-minus-distance score supplies the action to execute.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdas/belief.hpp"
#include "cdas/grid_env.hpp"
#include "cdas/nn.hpp"
#include "cdas/rng.hpp"
#include "json.hpp"

namespace cdas {

using nn::Matrix;
using nn::Vector;

struct NoiseSchedule {
  int t_diff = 0;
  double cosine_s = 0.008;
  std::vector<double> alpha_bar;      // size t_diff + 1, alpha_bar[0] = 1
  std::vector<double> beta;           // size t_diff + 1, beta[0] = 0
  std::vector<double> step_variance;  // size t_diff + 1, zero at 0 and 1
};

inline NoiseSchedule cosine_schedule(int t_diff, double s = 0.008) {
  if (t_diff < 1) throw std::invalid_argument("t_diff must be positive");
  NoiseSchedule sch;
  sch.t_diff = t_diff;
  sch.cosine_s = s;
  auto f = [&](int t) {
    const double c = std::cos((t / double(t_diff) + s) / (1.0 + s) * std::numbers::pi / 2);
    return c * c;
  };
  sch.alpha_bar.assign(t_diff + 1, 1.0);
  sch.beta.assign(t_diff + 1, 0.0);
  sch.step_variance.assign(t_diff + 1, 0.0);
  for (int t = 1; t <= t_diff; ++t) {
    sch.beta[t] = std::min(1.0 - f(t) / f(t - 1), 0.999);
    sch.alpha_bar[t] = sch.alpha_bar[t - 1] * (1.0 - sch.beta[t]);
  }
  for (int t = 2; t <= t_diff; ++t) {
    const double v = (1.0 - sch.alpha_bar[t - 1]) / (1.0 - sch.alpha_bar[t]) * sch.beta[t];
    sch.step_variance[t] = std::max(v, 0.0);
  }
  return sch;
}

inline Vector forward_noise(const Vector& tau0, int t, const Vector& noise,
                            const NoiseSchedule& sch) {
  if (t < 0 || t > sch.t_diff) throw std::out_of_range("diffusion step out of range");
  if (noise.size() != tau0.size()) throw std::invalid_argument("noise shape mismatch");
  const double ab = sch.alpha_bar[t];
  return std::sqrt(ab) * tau0 + std::sqrt(1.0 - ab) * noise;
}

inline std::vector<double> timestep_embedding(int t, int width) {
  if (width < 2 || width % 2) throw std::invalid_argument("embedding width must be even");
  const int half = width / 2;
  std::vector<double> e(width);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e[i] = std::sin(t * freq);
    e[half + i] = std::cos(t * freq);
  }
  return e;
}

inline double code_cell(std::uint8_t bit) { return bit ? 1.0 : -1.0; }

// One training example: conditioning state, coded action frames and labels.
struct TrajectoryChunk {
  std::vector<double> state;  // 2n
  std::vector<double> tau;    // H*n, -1/+1
  std::vector<int> origins;   // H
  int start_cell = 0;
  std::optional<double> ret;
  std::optional<double> distance;
};

struct TrajectoryDataset {
  GridShape shape;
  int horizon = 0;
  std::vector<TrajectoryChunk> chunks;

  int n() const { return shape.size(); }
  int tau_dim() const { return horizon * n(); }
};

inline double path_distance(const GridShape& shape, int start_cell,
                            std::span<const int> origins) {
  return episode_cost(CostModel{1.0, 0.0}, shape, start_cell, origins);
}

inline void validate(const TrajectoryDataset& ds) {
  if (ds.chunks.empty()) throw std::invalid_argument("dataset is empty");
  if (ds.horizon < 1 || ds.n() < 1) throw std::invalid_argument("bad dataset shape");
  for (const auto& c : ds.chunks) {
    if (static_cast<int>(c.tau.size()) != ds.tau_dim() ||
        static_cast<int>(c.state.size()) != 2 * ds.n() ||
        static_cast<int>(c.origins.size()) != ds.horizon)
      throw std::invalid_argument("chunk does not match dataset horizon/grid");
  }
}

struct NetConfig {
  std::vector<int> hidden{256, 256};
  nn::Activation activation = nn::Activation::Silu;
  int time_embedding = 16;
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 64;
  double lr = 1e-3;
};

struct TrainedModel {
  nn::Network net;
  std::vector<double> loss_history;  // mean minibatch loss per epoch
};

namespace detail {

// Fills rows [tau; state; emb(t)] of column `col`.
inline void fill_conditioned(Matrix& x, Eigen::Index col, std::span<const double> tau,
                             std::span<const double> state, std::span<const double> emb) {
  Eigen::Index r = 0;
  for (double v : tau) x(r++, col) = v;
  for (double v : state) x(r++, col) = v;
  for (double v : emb) x(r++, col) = v;
}

// Trajectory inputs are already centred; state channels get one shift and
// scale per channel group so sparse cells cannot blow up the inputs.
inline void set_conditioned_standardization(nn::Network& net, const TrajectoryDataset& ds) {
  const int n = ds.n(), td = ds.tau_dim();
  for (int g = 0; g < 2; ++g) {
    double s1 = 0.0, s2 = 0.0, count = 0.0;
    for (const auto& c : ds.chunks)
      for (int i = 0; i < n; ++i) {
        const double v = c.state[g * n + i];
        s1 += v;
        s2 += v * v;
        count += 1;
      }
    const double mu = s1 / count;
    const double sd = std::sqrt(std::max(s2 / count - mu * mu, 0.0));
    const double scale = sd > 1e-12 ? 1.0 / sd : 1.0;
    for (int i = 0; i < n; ++i) {
      net.input_shift(td + g * n + i) = mu;
      net.input_scale(td + g * n + i) = scale;
    }
  }
}

// Epoch-wise shuffled index stream; small datasets repeat within a batch.
class BatchSampler {
 public:
  BatchSampler(std::size_t size, Rng& rng) : size_(size), rng_(rng) { refill(); }
  std::size_t next() {
    if (pos_ == order_.size()) refill();
    return order_[pos_++];
  }

 private:
  void refill() {
    order_.resize(size_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
  }
  std::size_t size_;
  Rng& rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

inline int batches_per_epoch(std::size_t size, int batch) {
  return std::max<int>(1, static_cast<int>((size + batch - 1) / batch));
}

// Output layer absorbs the label normalisation so the stored network
// predicts raw labels.
inline void fold_output_scale(nn::Network& net, double mu, double sd) {
  auto& last = net.layers.back();
  last.weight *= sd;
  last.bias = last.bias * sd + Vector::Constant(last.bias.size(), mu);
}

inline void label_moments(const std::vector<double>& y, double& mu, double& sd) {
  double s1 = 0.0, s2 = 0.0;
  for (double v : y) {
    s1 += v;
    s2 += v * v;
  }
  mu = s1 / y.size();
  sd = std::sqrt(std::max(s2 / y.size() - mu * mu, 0.0));
  if (sd < 1e-8) sd = 1.0;
}

}  // namespace detail

inline int conditioned_input_dim(const TrajectoryDataset& ds, int emb) {
  return ds.tau_dim() + 2 * ds.n() + emb;
}

// Mean over `samples` draws of ||tau0 - rho(s, tau_t, t)||^2 with random t.
inline double trajectory_loss(const nn::Network& net, const TrajectoryDataset& ds,
                              const NoiseSchedule& sch, int emb_width, int samples,
                              Rng& rng) {
  validate(ds);
  const int td = ds.tau_dim();
  Matrix x(conditioned_input_dim(ds, emb_width), samples);
  Matrix target(td, samples);
  std::uniform_int_distribution<int> pick_t(1, sch.t_diff);
  std::uniform_int_distribution<std::size_t> pick(0, ds.chunks.size() - 1);
  for (int c = 0; c < samples; ++c) {
    const auto& ch = ds.chunks[pick(rng)];
    const int t = pick_t(rng);
    Vector noise(td);
    for (int i = 0; i < td; ++i) noise(i) = standard_normal(rng);
    const Eigen::Map<const Vector> tau0(ch.tau.data(), td);
    const Vector taut = forward_noise(tau0, t, noise, sch);
    detail::fill_conditioned(x, c, std::span<const double>(taut.data(), td), ch.state,
                             timestep_embedding(t, emb_width));
    target.col(c) = tau0;
  }
  return (nn::forward(net, x) - target).colwise().squaredNorm().mean();
}

inline TrainedModel train_trajectory_model(const TrajectoryDataset& ds,
                                           const NoiseSchedule& sch, const NetConfig& net_cfg,
                                           const TrainConfig& cfg, Rng& rng) {
  validate(ds);
  const int td = ds.tau_dim();
  const int in = conditioned_input_dim(ds, net_cfg.time_embedding);
  TrainedModel out;
  out.net = nn::make_mlp(in, net_cfg.hidden, td, rng, net_cfg.activation);
  detail::set_conditioned_standardization(out.net, ds);
  auto adam = nn::make_adam(out.net, cfg.lr);
  detail::BatchSampler sampler(ds.chunks.size(), rng);
  std::uniform_int_distribution<int> pick_t(1, sch.t_diff);
  const int bs = cfg.batch_size;
  Matrix x(in, bs), target(td, bs);
  Vector noise(td);
  nn::ForwardCache cache;
  nn::Gradients grads;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const int nb = detail::batches_per_epoch(ds.chunks.size(), bs);
    double epoch_loss = 0.0;
    for (int b = 0; b < nb; ++b) {
      for (int c = 0; c < bs; ++c) {
        const auto& ch = ds.chunks[sampler.next()];
        const int t = pick_t(rng);
        for (int i = 0; i < td; ++i) noise(i) = standard_normal(rng);
        const Eigen::Map<const Vector> tau0(ch.tau.data(), td);
        const Vector taut = forward_noise(tau0, t, noise, sch);
        detail::fill_conditioned(x, c, std::span<const double>(taut.data(), td), ch.state,
                                 timestep_embedding(t, net_cfg.time_embedding));
        target.col(c) = tau0;
      }
      const Matrix pred = nn::forward(out.net, x, &cache);
      const Matrix resid = pred - target;
      epoch_loss += resid.colwise().squaredNorm().mean();
      nn::backward(out.net, cache, (2.0 / bs) * resid, &grads, nullptr);
      nn::adam_step(out.net, adam, grads);
    }
    out.loss_history.push_back(epoch_loss / nb);
  }
  return out;
}

// With `noising` off every example is the clean trajectory at t = 0.
inline TrainedModel train_return_model(const TrajectoryDataset& ds, const NoiseSchedule& sch,
                                       bool noising, const NetConfig& net_cfg,
                                       const TrainConfig& cfg, Rng& rng) {
  validate(ds);
  std::vector<double> labels;
  for (const auto& c : ds.chunks) {
    if (!c.ret) throw std::invalid_argument("dataset has no return labels");
    labels.push_back(*c.ret);
  }
  double mu, sd;
  detail::label_moments(labels, mu, sd);
  const int td = ds.tau_dim();
  const int in = conditioned_input_dim(ds, net_cfg.time_embedding);
  TrainedModel out;
  out.net = nn::make_mlp(in, net_cfg.hidden, 1, rng, net_cfg.activation);
  detail::set_conditioned_standardization(out.net, ds);
  auto adam = nn::make_adam(out.net, cfg.lr);
  detail::BatchSampler sampler(ds.chunks.size(), rng);
  std::uniform_int_distribution<int> pick_t(0, sch.t_diff);
  const int bs = cfg.batch_size;
  const auto emb0 = timestep_embedding(0, net_cfg.time_embedding);
  Matrix x(in, bs), target(1, bs);
  Vector noise(td);
  nn::ForwardCache cache;
  nn::Gradients grads;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const int nb = detail::batches_per_epoch(ds.chunks.size(), bs);
    double epoch_loss = 0.0;
    for (int b = 0; b < nb; ++b) {
      for (int c = 0; c < bs; ++c) {
        const std::size_t idx = sampler.next();
        const auto& ch = ds.chunks[idx];
        if (noising) {
          const int t = pick_t(rng);
          for (int i = 0; i < td; ++i) noise(i) = standard_normal(rng);
          const Vector taut =
              forward_noise(Eigen::Map<const Vector>(ch.tau.data(), td), t, noise, sch);
          detail::fill_conditioned(x, c, std::span<const double>(taut.data(), td), ch.state,
                                   timestep_embedding(t, net_cfg.time_embedding));
        } else {
          detail::fill_conditioned(x, c, ch.tau, ch.state, emb0);
        }
        target(0, c) = (labels[idx] - mu) / sd;
      }
      const Matrix resid = nn::forward(out.net, x, &cache) - target;
      epoch_loss += resid.squaredNorm() / bs * sd * sd;
      nn::backward(out.net, cache, (2.0 / bs) * resid, &grads, nullptr);
      nn::adam_step(out.net, adam, grads);
    }
    out.loss_history.push_back(epoch_loss / nb);
  }
  detail::fold_output_scale(out.net, mu, sd);
  return out;
}

inline TrainedModel train_distance_model(const TrajectoryDataset& ds, const NetConfig& net_cfg,
                                         const TrainConfig& cfg, Rng& rng) {
  validate(ds);
  std::vector<double> labels;
  for (const auto& c : ds.chunks) {
    if (!c.distance) throw std::invalid_argument("dataset has no distance labels");
    labels.push_back(*c.distance);
  }
  double mu, sd;
  detail::label_moments(labels, mu, sd);
  const int td = ds.tau_dim();
  TrainedModel out;
  out.net = nn::make_mlp(td, net_cfg.hidden, 1, rng, net_cfg.activation);
  auto adam = nn::make_adam(out.net, cfg.lr);
  detail::BatchSampler sampler(ds.chunks.size(), rng);
  const int bs = cfg.batch_size;
  Matrix x(td, bs), target(1, bs);
  nn::ForwardCache cache;
  nn::Gradients grads;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const int nb = detail::batches_per_epoch(ds.chunks.size(), bs);
    double epoch_loss = 0.0;
    for (int b = 0; b < nb; ++b) {
      for (int c = 0; c < bs; ++c) {
        const std::size_t idx = sampler.next();
        x.col(c) = Eigen::Map<const Vector>(ds.chunks[idx].tau.data(), td);
        target(0, c) = (labels[idx] - mu) / sd;
      }
      const Matrix resid = nn::forward(out.net, x, &cache) - target;
      epoch_loss += resid.squaredNorm() / bs * sd * sd;
      nn::backward(out.net, cache, (2.0 / bs) * resid, &grads, nullptr);
      nn::adam_step(out.net, adam, grads);
    }
    out.loss_history.push_back(epoch_loss / nb);
  }
  detail::fold_output_scale(out.net, mu, sd);
  return out;
}

// Templates as a (templates x n) matrix of -1/+1 codes.
inline Matrix coded_templates(std::span<const SensingAction> templates) {
  if (templates.empty()) throw std::invalid_argument("no action templates");
  const auto n = static_cast<Eigen::Index>(templates[0].mask.size());
  Matrix k(static_cast<Eigen::Index>(templates.size()), n);
  for (std::size_t a = 0; a < templates.size(); ++a) {
    if (static_cast<Eigen::Index>(templates[a].mask.size()) != n)
      throw std::invalid_argument("templates disagree on grid size");
    for (Eigen::Index i = 0; i < n; ++i) k(a, i) = code_cell(templates[a].mask[i]);
  }
  return k;
}

// Template index per frame for every column of `frames` (H*n x chains).
inline std::vector<std::size_t> binarize_frames(const Matrix& coded, const Matrix& frames,
                                                int horizon) {
  const auto n = coded.cols();
  const auto chains = frames.cols();
  std::vector<std::size_t> out(static_cast<std::size_t>(chains) * horizon);
  Matrix scores;
  for (int h = 0; h < horizon; ++h) {
    scores.noalias() = coded * frames.middleRows(h * n, n);
    for (Eigen::Index c = 0; c < chains; ++c) {
      Eigen::Index best = 0;
      for (Eigen::Index a = 1; a < scores.rows(); ++a)
        if (scores(a, c) > scores(best, c)) best = a;
      out[c * horizon + h] = static_cast<std::size_t>(best);
    }
  }
  return out;
}

inline std::vector<std::size_t> binarize_trajectory(std::span<const double> tau0, int horizon,
                                                    std::span<const SensingAction> templates) {
  const Matrix coded = coded_templates(templates);
  if (static_cast<Eigen::Index>(tau0.size()) != horizon * coded.cols())
    throw std::invalid_argument("trajectory does not match templates");
  const Eigen::Map<const Matrix> frames(tau0.data(), static_cast<Eigen::Index>(tau0.size()), 1);
  return binarize_frames(coded, frames, horizon);
}

inline std::vector<double> coded_trajectory(std::span<const std::size_t> actions,
                                            std::span<const SensingAction> templates) {
  std::vector<double> tau;
  for (std::size_t a : actions)
    for (auto bit : templates[a].mask) tau.push_back(code_cell(bit));
  return tau;
}

struct DiffusionModels {
  GridShape shape;
  int horizon = 0;
  int time_embedding = 16;
  NoiseSchedule schedule;
  bool nu_noised = false;  // nu trained on noised sequences and their step
  nn::Network rho;
  nn::Network nu;
  nn::Network dist;

  int tau_dim() const { return horizon * shape.size(); }
};

enum class ReverseMeanMode : std::uint8_t { NetworkDirect, DdpmPosterior };

inline const char* to_string(ReverseMeanMode m) {
  return m == ReverseMeanMode::NetworkDirect ? "network_direct" : "ddpm_posterior";
}

inline ReverseMeanMode parse_reverse_mean_mode(const std::string& s) {
  if (s == "network_direct") return ReverseMeanMode::NetworkDirect;
  if (s == "ddpm_posterior") return ReverseMeanMode::DdpmPosterior;
  throw std::invalid_argument("unknown reverse mean mode: " + s);
}

struct SamplerConfig {
  int n_diff = 100;
  double alpha_guide = 10.0;
  double lambda_cost = 0.0;
  ReverseMeanMode mode = ReverseMeanMode::NetworkDirect;
};

struct SampleResult {
  std::size_t action = 0;              // template index to execute
  std::vector<std::size_t> sequence;   // binarized best chain
  double score = 0.0;
  std::vector<double> scores;          // per chain
  std::vector<double> returns;         // return-model value per chain
  std::vector<double> distances;       // ground-truth distance per chain
  std::vector<std::size_t> first_actions;
  std::vector<std::size_t> chains;     // chains x H binarized sequences
  double wall_seconds = 0.0;
};

inline void check_models(const DiffusionModels& m) {
  const int td = m.tau_dim();
  const int in = td + 2 * m.shape.size() + m.time_embedding;
  if (m.rho.input_dim() != in || m.rho.output_dim() != td || m.nu.input_dim() != in ||
      m.nu.output_dim() != 1 || m.dist.input_dim() != td || m.dist.output_dim() != 1)
    throw std::invalid_argument("model shapes do not match horizon and grid");
  if (m.schedule.t_diff < 1) throw std::invalid_argument("model has no noise schedule");
}

inline SampleResult cdas_sample(const DiffusionModels& models, const StateImage& state,
                                int current_cell, std::span<const SensingAction> templates,
                                const SamplerConfig& cfg, Rng& rng) {
  const auto t0 = std::chrono::steady_clock::now();
  check_models(models);
  if (cfg.n_diff < 1) throw std::invalid_argument("n_diff must be positive");
  if (!(state.shape == models.shape)) throw std::invalid_argument("state grid mismatch");
  const Matrix coded = coded_templates(templates);
  if (coded.cols() != models.shape.size())
    throw std::invalid_argument("templates do not match grid");
  const auto& sch = models.schedule;
  const int td = models.tau_dim();
  const int sd = 2 * models.shape.size();
  const int emb = models.time_embedding;
  const int chains = cfg.n_diff;

  std::vector<Rng> chain_rng;
  const std::uint64_t base = rng();
  chain_rng.reserve(chains);
  for (int c = 0; c < chains; ++c) chain_rng.emplace_back(derive_seed(base, c));

  Matrix x(td + sd + emb, chains);
  for (int c = 0; c < chains; ++c) {
    for (int i = 0; i < td; ++i) x(i, c) = standard_normal(chain_rng[c]);
    for (int i = 0; i < sd; ++i) x(td + i, c) = state.channels[i];
  }
  const auto e0 = timestep_embedding(0, emb);
  const bool guided = cfg.alpha_guide > 0.0;
  const bool costed = guided && cfg.lambda_cost > 0.0;
  Matrix mean, grad;
  for (int t = sch.t_diff; t >= 1; --t) {
    const auto e = timestep_embedding(t, emb);
    for (int c = 0; c < chains; ++c)
      for (int i = 0; i < emb; ++i) x(td + sd + i, c) = e[i];
    mean = nn::forward(models.rho, x);
    if (cfg.mode == ReverseMeanMode::DdpmPosterior) {
      const double ab = sch.alpha_bar[t], ab_prev = sch.alpha_bar[t - 1];
      const double c0 = std::sqrt(ab_prev) * sch.beta[t] / (1.0 - ab);
      const double ct = std::sqrt(1.0 - sch.beta[t]) * (1.0 - ab_prev) / (1.0 - ab);
      mean = c0 * mean.cwiseMax(-1.0).cwiseMin(1.0) + ct * x.topRows(td);
    }
    const double var = sch.step_variance[t];
    if (guided && var > 0.0) {
      if (!models.nu_noised)
        for (int c = 0; c < chains; ++c)
          for (int i = 0; i < emb; ++i) x(td + sd + i, c) = e0[i];
      grad = nn::input_gradients(models.nu, x).topRows(td);
      if (costed)
        grad -= cfg.lambda_cost * nn::input_gradients(models.dist, Matrix(x.topRows(td)));
      mean += (cfg.alpha_guide * var) * grad;
    }
    const double sdev = std::sqrt(var);
    for (int c = 0; c < chains; ++c)
      for (int i = 0; i < td; ++i)
        x(i, c) = mean(i, c) + (sdev > 0.0 ? sdev * standard_normal(chain_rng[c]) : 0.0);
    if (!x.topRows(td).allFinite())
      throw std::runtime_error("non-finite diffusion iterate");
  }

  const std::vector<std::size_t> seq = binarize_frames(coded, x.topRows(td), models.horizon);
  const int h = models.horizon;
  SampleResult res;
  res.scores.resize(chains);
  res.returns.resize(chains);
  res.distances.resize(chains);
  res.first_actions.resize(chains);
  const int n = models.shape.size();
  std::vector<int> origins(h);
  for (int c = 0; c < chains; ++c) {
    for (int k = 0; k < h; ++k) {
      const std::size_t a = seq[c * h + k];
      origins[k] = templates[a].origin;
      for (int i = 0; i < n; ++i) x(k * n + i, c) = coded(a, i);
    }
    for (int i = 0; i < emb; ++i) x(td + sd + i, c) = e0[i];
    res.distances[c] = path_distance(models.shape, current_cell, origins);
    res.first_actions[c] = seq[c * h];
  }
  const Matrix nu = nn::forward(models.nu, x);
  std::size_t best = 0;
  for (int c = 0; c < chains; ++c) {
    res.returns[c] = nu(0, c);
    res.scores[c] = nu(0, c) - cfg.lambda_cost * res.distances[c];
    if (res.scores[c] > res.scores[best]) best = c;
  }
  res.action = seq[best * h];
  res.chains = seq;
  res.sequence.assign(seq.begin() + best * h, seq.begin() + (best + 1) * h);
  res.score = res.scores[best];
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline SampleResult das_plan_step(const DiffusionModels& models, const StateImage& state,
                                  int current_cell, std::span<const SensingAction> templates,
                                  SamplerConfig cfg, Rng& rng) {
  cfg.lambda_cost = 0.0;
  return cdas_sample(models, state, current_cell, templates, cfg, rng);
}

// Bundle directory: manifest.json plus rho.mlp, nu.mlp, dist.mlp.
inline void save_models(const std::filesystem::path& dir, const DiffusionModels& m) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["format"] = "cdas-diffusion-bundle";
  j["version"] = 1;
  j["rows"] = m.shape.rows;
  j["cols"] = m.shape.cols;
  j["horizon"] = m.horizon;
  j["time_embedding"] = m.time_embedding;
  j["schedule"] = {{"kind", "cosine"}, {"t_diff", m.schedule.t_diff},
                   {"s", m.schedule.cosine_s}};
  j["coding"] = "minus_one_plus_one";
  j["nu_noised"] = m.nu_noised;
  j["models"] = {{"rho", "rho.mlp"}, {"nu", "nu.mlp"}, {"dist", "dist.mlp"}};
  std::ofstream(dir / "manifest.json") << j.dump(2) << "\n";
  for (auto [name, net] : {std::pair{"rho.mlp", &m.rho}, std::pair{"nu.mlp", &m.nu},
                           std::pair{"dist.mlp", &m.dist}}) {
    std::ofstream os(dir / name, std::ios::binary);
    nn::write_network(os, *net);
    if (!os) throw std::runtime_error(std::string("cannot write ") + name);
  }
}

inline DiffusionModels load_models(const std::filesystem::path& dir) {
  std::ifstream ms(dir / "manifest.json");
  if (!ms) throw std::runtime_error("missing manifest in " + dir.string());
  const auto j = nlohmann::json::parse(ms);
  if (j.value("format", "") != "cdas-diffusion-bundle" || j.value("version", 0) != 1)
    throw std::runtime_error("unsupported model bundle");
  if (j.at("coding") != "minus_one_plus_one" || j.at("schedule").at("kind") != "cosine")
    throw std::runtime_error("unsupported bundle coding or schedule");
  DiffusionModels m;
  m.shape = {j.at("rows").get<int>(), j.at("cols").get<int>()};
  m.horizon = j.at("horizon").get<int>();
  m.nu_noised = j.value("nu_noised", false);
  m.time_embedding = j.at("time_embedding").get<int>();
  m.schedule = cosine_schedule(j.at("schedule").at("t_diff").get<int>(),
                               j.at("schedule").at("s").get<double>());
  auto load = [&](const std::string& key) {
    std::ifstream is(dir / j.at("models").at(key).get<std::string>(), std::ios::binary);
    if (!is) throw std::runtime_error("missing model file for " + key);
    return nn::read_network(is);
  };
  m.rho = load("rho");
  m.nu = load("nu");
  m.dist = load("dist");
  check_models(m);
  return m;
}

}  // namespace cdas
