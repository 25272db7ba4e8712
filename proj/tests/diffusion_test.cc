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

#include "cdas/diffusion.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

#include "cdas/datagen.hpp"

namespace cdas {
namespace {

const GridShape kLine{1, 16};

std::vector<SensingAction> line_templates() {
  return enumerate_actions(kLine, line3_pattern());
}

// P(X >= wins) for X ~ Binomial(n, 1/2).
double sign_test_p(int wins, int n) {
  double p = 0.0;
  for (int k = wins; k <= n; ++k)
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) -
                  n * std::log(2.0));
  return p;
}

TEST(Schedule, CosineInvariants) {
  for (int t_diff : {1, 8, 32, 64}) {
    const auto s = cosine_schedule(t_diff);
    ASSERT_EQ(s.alpha_bar.size(), std::size_t(t_diff + 1));
    EXPECT_EQ(s.alpha_bar[0], 1.0);
    for (int t = 1; t <= t_diff; ++t) {
      EXPECT_LT(s.alpha_bar[t], s.alpha_bar[t - 1]);
      EXPECT_GE(s.alpha_bar[t], 0.0);
      EXPECT_GE(s.step_variance[t], 0.0);
    }
    EXPECT_EQ(s.step_variance[1], 0.0);
  }
}

TEST(Schedule, MidpointMatchesClosedForm) {
  // Without clipping the product of (1 - beta) telescopes to f(t)/f(0).
  const int t_diff = 64;
  const double s = 0.008;
  const auto sch = cosine_schedule(t_diff, s);
  auto f = [&](double t) {
    return std::pow(std::cos((t / t_diff + s) / (1 + s) * std::numbers::pi / 2), 2);
  };
  const double ab = f(32) / f(0);
  EXPECT_NEAR(sch.alpha_bar[32], ab, 1e-12);
  Vector tau0 = Vector::Constant(4, 1.0), noise = Vector::Zero(4);
  noise(1) = 1.0;
  const Vector out = forward_noise(tau0, 32, noise, sch);
  EXPECT_NEAR(out(0), std::sqrt(ab), 1e-12);
  EXPECT_NEAR(out(1), std::sqrt(ab) + std::sqrt(1 - ab), 1e-12);
  // Posterior variance from its textbook definition.
  const double beta = 1 - (f(32) / f(0)) / (f(31) / f(0));
  const double ab_prev = f(31) / f(0);
  EXPECT_NEAR(sch.step_variance[32], (1 - ab_prev) / (1 - ab) * beta, 1e-12);
}

TEST(ForwardNoise, EndpointsAndErrors) {
  const auto sch = cosine_schedule(16);
  Rng rng(1);
  Vector tau0(6), noise(6);
  for (int i = 0; i < 6; ++i) {
    tau0(i) = standard_normal(rng);
    noise(i) = standard_normal(rng);
  }
  EXPECT_EQ(forward_noise(tau0, 0, noise, sch), tau0);
  auto zero_end = sch;
  zero_end.alpha_bar[16] = 0.0;
  EXPECT_EQ(forward_noise(tau0, 16, noise, zero_end), noise);
  EXPECT_THROW(forward_noise(tau0, 17, noise, sch), std::out_of_range);
  EXPECT_THROW(forward_noise(tau0, -1, noise, sch), std::out_of_range);
  EXPECT_THROW(forward_noise(tau0, 3, Vector::Zero(5), sch), std::invalid_argument);
}

TEST(Embedding, ZeroStepIsSinZeroCosOne) {
  const auto e = timestep_embedding(0, 16);
  for (int i = 0; i < 8; ++i) {
    EXPECT_EQ(e[i], 0.0);
    EXPECT_EQ(e[8 + i], 1.0);
  }
  EXPECT_NEAR(timestep_embedding(3, 16)[0], std::sin(3.0), 1e-15);
}

TEST(Binarize, ExactTemplateFramesMapBack) {
  const auto tpl = line_templates();
  for (std::size_t a = 0; a < tpl.size(); ++a) {
    const std::vector<std::size_t> seq{a};
    const auto tau = coded_trajectory(seq, tpl);
    const auto back = binarize_trajectory(tau, 1, tpl);
    // Mirror actions share a mask; the lowest index with that mask wins.
    EXPECT_EQ(tpl[back[0]].mask, tpl[a].mask);
    EXPECT_LE(back[0], a);
  }
}

TEST(Binarize, SmallNoiseKeepsTemplate) {
  const auto tpl = line_templates();
  Rng rng(2);
  std::uniform_real_distribution<double> u(-0.099, 0.099);
  for (int rep = 0; rep < 20; ++rep)
    for (std::size_t a = 0; a < tpl.size(); ++a) {
      auto tau = coded_trajectory(std::vector<std::size_t>{a}, tpl);
      for (auto& v : tau) v += u(rng);
      EXPECT_EQ(tpl[binarize_trajectory(tau, 1, tpl)[0]].mask, tpl[a].mask);
    }
}

TEST(Binarize, ZeroFrameTiesToIndexZeroAndShapesChecked) {
  const auto tpl = line_templates();
  const std::vector<double> zero(3 * 16, 0.0);
  const auto seq = binarize_trajectory(zero, 3, tpl);
  EXPECT_EQ(seq, (std::vector<std::size_t>{0, 0, 0}));
  EXPECT_THROW(binarize_trajectory(zero, 2, tpl), std::invalid_argument);
  EXPECT_THROW(binarize_trajectory(zero, 3, std::vector<SensingAction>{}),
               std::invalid_argument);
}

// Every chunk repeats one fixed trajectory under one fixed state.
TrajectoryDataset single_trajectory_dataset(const std::vector<SensingAction>& tpl,
                                            int horizon) {
  TrajectoryDataset ds;
  ds.shape = kLine;
  ds.horizon = horizon;
  std::vector<std::size_t> seq;
  for (int h = 0; h < horizon; ++h) seq.push_back((3 * h) % 14 * 2);
  TrajectoryChunk ch;
  ch.state = state_image(init_belief(kLine, 1.0 / 16)).channels;
  ch.tau = coded_trajectory(seq, tpl);
  for (auto a : seq) ch.origins.push_back(tpl[a].origin);
  ch.ret = 1.0;
  ch.distance = path_distance(kLine, 0, ch.origins);
  ds.chunks.push_back(ch);
  return ds;
}

TEST(TrainTrajectory, UntrainedLossNearSecondMoment) {
  const auto tpl = line_templates();
  const auto ds = single_trajectory_dataset(tpl, 4);
  Rng rng(3);
  NetConfig nc;
  nc.hidden = {64, 64};
  TrainConfig tc;
  tc.epochs = 0;
  const auto sch = cosine_schedule(32);
  const auto m = train_trajectory_model(ds, sch, nc, tc, rng);
  const double second_moment = 4 * 16.0;  // every coded entry is +-1
  const double loss = trajectory_loss(m.net, ds, sch, nc.time_embedding, 500, rng);
  EXPECT_GE(loss, 0.0);
  EXPECT_NEAR(loss, second_moment, 0.5 * second_moment);
}

TEST(TrainTrajectory, OverfitOneTrajectoryAndSampleIt) {
  const auto tpl = line_templates();
  const int horizon = 8;
  const auto ds = single_trajectory_dataset(tpl, horizon);
  Rng rng(4);
  NetConfig nc;
  nc.hidden = {128, 128};
  TrainConfig tc;
  tc.epochs = 2000;
  tc.lr = 1e-2;
  DiffusionModels m;
  m.shape = kLine;
  m.horizon = horizon;
  m.schedule = cosine_schedule(64);
  auto rho = train_trajectory_model(ds, m.schedule, nc, tc, rng);
  for (double l : rho.loss_history) ASSERT_GE(l, 0.0);
  EXPECT_LT(rho.loss_history.back(), 1e-3);
  m.rho = rho.net;
  TrainConfig small;
  small.epochs = 5;
  m.nu = train_return_model(ds, m.schedule, false, nc, small, rng).net;
  m.dist = train_distance_model(ds, nc, small, rng).net;

  const auto expect = binarize_trajectory(ds.chunks[0].tau, horizon, tpl);
  SamplerConfig sc;
  sc.n_diff = 100;
  sc.alpha_guide = 0.0;
  const auto res = cdas_sample(m, state_image(init_belief(kLine, 1.0 / 16)), 0, tpl, sc, rng);
  int match = 0;
  for (int c = 0; c < sc.n_diff; ++c)
    match += std::equal(expect.begin(), expect.end(), res.chains.begin() + c * horizon);
  EXPECT_GE(match, 95);

  SamplerConfig ddpm = sc;
  ddpm.mode = ReverseMeanMode::DdpmPosterior;
  const auto r2 = cdas_sample(m, state_image(init_belief(kLine, 1.0 / 16)), 0, tpl, ddpm, rng);
  EXPECT_EQ(r2.scores.size(), 100u);
  for (double s : r2.scores) EXPECT_TRUE(std::isfinite(s));
}

TEST(TrainTrajectory, RejectsBadDatasets) {
  const auto tpl = line_templates();
  auto ds = single_trajectory_dataset(tpl, 4);
  Rng rng(0);
  const auto sch = cosine_schedule(8);
  TrajectoryDataset empty;
  empty.shape = kLine;
  empty.horizon = 4;
  EXPECT_THROW(train_trajectory_model(empty, sch, {}, {}, rng), std::invalid_argument);
  ds.chunks[0].tau.pop_back();
  EXPECT_THROW(train_trajectory_model(ds, sch, {}, {}, rng), std::invalid_argument);
  auto no_labels = single_trajectory_dataset(tpl, 4);
  no_labels.chunks[0].ret.reset();
  no_labels.chunks[0].distance.reset();
  EXPECT_THROW(train_return_model(no_labels, sch, false, {}, {}, rng), std::invalid_argument);
  EXPECT_THROW(train_distance_model(no_labels, {}, {}, rng), std::invalid_argument);
}

TEST(TrainReturn, ConstantLabelsAreLearned) {
  DatasetConfig dc;
  dc.m_episodes = 20;
  dc.rng_seed = 5;
  auto ds = chunk_episodes(generate_dataset(dc), 8, 0.9);
  for (auto& ch : ds.chunks) ch.ret = 2.5;
  Rng rng(6);
  NetConfig nc;
  nc.hidden = {32, 32};
  TrainConfig tc;
  tc.epochs = 20;
  const auto sch = cosine_schedule(16);
  const auto m = train_return_model(ds, sch, false, nc, tc, rng);
  ASSERT_EQ(m.net.output_dim(), 1);
  const auto emb = timestep_embedding(0, nc.time_embedding);
  for (std::size_t i = 0; i < ds.chunks.size(); i += 17) {
    std::vector<double> x = ds.chunks[i].tau;
    x.insert(x.end(), ds.chunks[i].state.begin(), ds.chunks[i].state.end());
    x.insert(x.end(), emb.begin(), emb.end());
    const Vector y = nn::forward(m.net, x);
    ASSERT_EQ(y.size(), 1);
    EXPECT_NEAR(y(0), 2.5, 1e-2);
  }
}

double return_rmse(const nn::Network& net, const TrajectoryDataset& ds, int emb_width,
                   double* baseline, double label_mean) {
  const auto emb = timestep_embedding(0, emb_width);
  double se = 0.0, base = 0.0;
  for (const auto& ch : ds.chunks) {
    std::vector<double> x = ch.tau;
    x.insert(x.end(), ch.state.begin(), ch.state.end());
    x.insert(x.end(), emb.begin(), emb.end());
    const double pred = nn::forward(net, x)(0);
    se += (pred - *ch.ret) * (pred - *ch.ret);
    base += (label_mean - *ch.ret) * (label_mean - *ch.ret);
  }
  *baseline = std::sqrt(base / ds.chunks.size());
  return std::sqrt(se / ds.chunks.size());
}

TEST(TrainReturn, HeldOutBeatsMeanPredictor) {
  DatasetConfig dc;
  dc.rng_seed = 7;
  const auto data = generate_dataset(dc);
  Dataset train = data, held = data;
  train.episodes.resize(400);
  held.episodes.erase(held.episodes.begin(), held.episodes.begin() + 400);
  const auto tr = chunk_episodes(train, 8, dc.gamma);
  const auto te = chunk_episodes(held, 8, dc.gamma);
  double mean = 0.0;
  for (const auto& ch : tr.chunks) mean += *ch.ret;
  mean /= tr.chunks.size();
  Rng rng(8);
  NetConfig nc;
  nc.hidden = {64, 64};
  TrainConfig tc;
  tc.epochs = 40;
  const auto m = train_return_model(tr, cosine_schedule(16), false, nc, tc, rng);
  double baseline = 0.0;
  const double rmse = return_rmse(m.net, te, nc.time_embedding, &baseline, mean);
  EXPECT_LT(rmse, baseline);
}

TEST(TrainDistance, SameOriginTrajectoriesPredictZero) {
  const auto tpl = line_templates();
  TrajectoryDataset ds;
  ds.shape = kLine;
  ds.horizon = 4;
  Rng rng(9);
  for (int i = 0; i < 64; ++i) {
    // Every frame senses from the start cell itself; directions vary.
    std::vector<std::size_t> seq;
    for (int h = 0; h < 4; ++h) seq.push_back(10 + (rng() % 2));
    TrajectoryChunk ch;
    ch.state.assign(32, 0.0);
    ch.tau = coded_trajectory(seq, tpl);
    for (auto a : seq) ch.origins.push_back(tpl[a].origin);
    ch.start_cell = 5;
    ch.distance = path_distance(kLine, 5, ch.origins);
    ASSERT_EQ(*ch.distance, 0.0);
    ds.chunks.push_back(ch);
  }
  NetConfig nc;
  nc.hidden = {32, 32};
  TrainConfig tc;
  tc.epochs = 50;
  const auto m = train_distance_model(ds, nc, tc, rng);
  for (const auto& ch : ds.chunks) EXPECT_NEAR(nn::forward(m.net, ch.tau)(0), 0.0, 0.1);
  std::normal_distribution<double> z(0.0, 3.0);
  std::vector<double> x(64);
  for (int i = 0; i < 20; ++i) {
    for (auto& v : x) v = z(rng);
    EXPECT_TRUE(std::isfinite(nn::forward(m.net, x)(0)));
  }
}

TEST(TrainDistance, LossFallsOverFirstEpochs) {
  DatasetConfig dc;
  dc.m_episodes = 200;
  dc.rng_seed = 10;
  const auto ds = chunk_episodes(generate_dataset(dc), 8, 0.9);
  Rng rng(11);
  NetConfig nc;
  nc.hidden = {64, 64};
  TrainConfig tc;
  tc.epochs = 12;
  const auto m = train_distance_model(ds, nc, tc, rng);
  // Three-epoch moving average.
  std::vector<double> smooth;
  for (int e = 1; e + 1 < 12; ++e)
    smooth.push_back((m.loss_history[e - 1] + m.loss_history[e] + m.loss_history[e + 1]) / 3);
  for (std::size_t i = 1; i < smooth.size(); ++i) EXPECT_LT(smooth[i], smooth[i - 1]);
}

// Synthetic data whose return counts the frames that sense cell 12, so the
// return model has a clear input gradient toward sensing it.
struct GuidedFixture {
  std::vector<SensingAction> tpl = line_templates();
  DiffusionModels m;

  GuidedFixture() {
    TrajectoryDataset ds;
    ds.shape = kLine;
    ds.horizon = 4;
    Rng rng(12);
    std::uniform_int_distribution<std::size_t> pick(0, tpl.size() - 1);
    for (int i = 0; i < 2000; ++i) {
      std::vector<std::size_t> seq;
      double ret = 0.0;
      for (int h = 0; h < 4; ++h) {
        seq.push_back(pick(rng));
        ret += tpl[seq.back()].mask[12] ? 1.0 : -1.0;
      }
      auto b = init_belief(kLine, 1.0 / 16);
      b.mean[rng() % 16] = uniform01(rng);
      TrajectoryChunk ch;
      ch.state = state_image(b).channels;
      ch.tau = coded_trajectory(seq, tpl);
      for (auto a : seq) ch.origins.push_back(tpl[a].origin);
      ch.ret = ret;
      ch.start_cell = static_cast<int>(rng() % 16);
      ch.distance = path_distance(kLine, ch.start_cell, ch.origins);
      ds.chunks.push_back(ch);
    }
    NetConfig nc;
    nc.hidden = {64, 64};
    TrainConfig tc;
    tc.epochs = 40;
    m.shape = kLine;
    m.horizon = 4;
    m.schedule = cosine_schedule(16);
    m.rho = train_trajectory_model(ds, m.schedule, nc, tc, rng).net;
    m.nu = train_return_model(ds, m.schedule, false, nc, tc, rng).net;
    m.dist = train_distance_model(ds, nc, tc, rng).net;
  }
};

const GuidedFixture& guided() {
  static const GuidedFixture f;
  return f;
}

TEST(CdasSample, GuidanceRaisesReturnScores) {
  const auto& f = guided();
  Rng rng(13);
  int wins = 0;
  const int trials = 20;
  for (int t = 0; t < trials; ++t) {
    auto b = init_belief(kLine, 1.0 / 16);
    b.mean[t % 16] = 0.5;
    const auto s = state_image(b);
    SamplerConfig sc;
    sc.n_diff = 100;
    sc.alpha_guide = 0.0;
    const auto plain = cdas_sample(f.m, s, 0, f.tpl, sc, rng);
    sc.alpha_guide = 10.0;
    const auto steered = cdas_sample(f.m, s, 0, f.tpl, sc, rng);
    auto mean = [](const std::vector<double>& v) {
      double a = 0;
      for (double x : v) a += x;
      return a / v.size();
    };
    if (mean(steered.returns) >= mean(plain.returns)) ++wins;
  }
  EXPECT_LT(sign_test_p(wins, trials), 0.05) << wins << "/" << trials;
}

TEST(CdasSample, LargeLambdaPicksNearbyAction) {
  const auto& f = guided();
  Rng rng(14);
  for (int current : {0, 7, 15}) {
    SamplerConfig sc;
    sc.n_diff = 100;
    sc.lambda_cost = 1000.0;
    const auto res =
        cdas_sample(f.m, state_image(init_belief(kLine, 1.0 / 16)), current, f.tpl, sc, rng);
    std::vector<double> dist;
    for (const auto& a : f.tpl) dist.push_back(std::abs(a.origin - current));
    std::nth_element(dist.begin(), dist.begin() + dist.size() / 2, dist.end());
    EXPECT_LE(std::abs(f.tpl[res.action].origin - current), dist[dist.size() / 2]);
  }
}

TEST(CdasSample, DeterministicAndDasMatchesZeroLambda) {
  const auto& f = guided();
  const auto s = state_image(init_belief(kLine, 1.0 / 16));
  SamplerConfig sc;
  sc.n_diff = 1;
  Rng r1(15), r2(15);
  const auto a = cdas_sample(f.m, s, 3, f.tpl, sc, r1);
  const auto b = cdas_sample(f.m, s, 3, f.tpl, sc, r2);
  EXPECT_EQ(a.action, b.action);
  EXPECT_EQ(a.sequence, b.sequence);
  EXPECT_EQ(a.score, b.score);

  sc.n_diff = 50;
  sc.lambda_cost = 0.0;
  Rng r3(16), r4(16);
  const auto c = cdas_sample(f.m, s, 3, f.tpl, sc, r3);
  SamplerConfig with_lambda = sc;
  with_lambda.lambda_cost = 7.0;
  const auto d = das_plan_step(f.m, s, 3, f.tpl, with_lambda, r4);
  EXPECT_EQ(c.scores, d.scores);
  EXPECT_EQ(c.action, d.action);
  EXPECT_EQ(c.scores, c.returns);
}

TEST(CdasSample, ShapeErrors) {
  const auto& f = guided();
  Rng rng(0);
  SamplerConfig sc;
  sc.n_diff = 0;
  const auto s = state_image(init_belief(kLine, 1.0 / 16));
  EXPECT_THROW(cdas_sample(f.m, s, 0, f.tpl, sc, rng), std::invalid_argument);
  sc.n_diff = 2;
  EXPECT_THROW(cdas_sample(f.m, s, 0, std::vector<SensingAction>{}, sc, rng),
               std::invalid_argument);
  const auto wrong = state_image(init_belief(GridShape{4, 4}, 0.1));
  EXPECT_THROW(cdas_sample(f.m, wrong, 0, f.tpl, sc, rng), std::invalid_argument);
  auto bad = f.m;
  bad.horizon = 5;
  EXPECT_THROW(cdas_sample(bad, s, 0, f.tpl, sc, rng), std::invalid_argument);
}

TEST(ModelBundle, RoundTripSamplesIdentically) {
  const auto& f = guided();
  const auto dir = std::filesystem::temp_directory_path() / "cdas_bundle_test";
  std::filesystem::remove_all(dir);
  save_models(dir, f.m);
  const auto back = load_models(dir);
  EXPECT_EQ(back.horizon, f.m.horizon);
  EXPECT_EQ(back.schedule.alpha_bar, f.m.schedule.alpha_bar);
  const auto s = state_image(init_belief(kLine, 1.0 / 16));
  SamplerConfig sc;
  sc.n_diff = 20;
  sc.lambda_cost = 0.5;
  Rng r1(17), r2(17);
  EXPECT_EQ(cdas_sample(f.m, s, 2, f.tpl, sc, r1).scores,
            cdas_sample(back, s, 2, f.tpl, sc, r2).scores);
  EXPECT_FALSE(back.nu_noised);

  // A return model trained on noised inputs is queried at the current step,
  // so the flag changes the guided samples.
  auto noised = f.m;
  noised.nu_noised = true;
  save_models(dir, noised);
  EXPECT_TRUE(load_models(dir).nu_noised);
  Rng r3(17), r4(17);
  EXPECT_NE(cdas_sample(f.m, s, 2, f.tpl, sc, r3).scores,
            cdas_sample(noised, s, 2, f.tpl, sc, r4).scores);

  std::filesystem::remove(dir / "nu.mlp");
  EXPECT_THROW(load_models(dir), std::runtime_error);
  std::filesystem::remove_all(dir);
}

// Trained on information-greedy data, the planner's first actions should
// sweep the line rather than revisit cells.
TEST(DasPlanStep, OneDimensionalCoverage) {
  DatasetConfig dc;
  dc.rng_seed = 18;
  const auto data = generate_dataset(dc);
  const auto ds = chunk_episodes(data, 8, dc.gamma);
  Rng rng(19);
  NetConfig nc;
  nc.hidden = {128, 128};
  TrainConfig tc;
  tc.epochs = 100;
  DiffusionModels m;
  m.shape = kLine;
  m.horizon = 8;
  m.schedule = cosine_schedule(64);
  m.rho = train_trajectory_model(ds, m.schedule, nc, tc, rng).net;
  m.nu = train_return_model(ds, m.schedule, false, nc, tc, rng).net;
  m.dist = train_distance_model(ds, nc, tc, rng).net;
  const auto tpl = line_templates();
  std::vector<int> repeats;
  for (int seed = 0; seed < 20; ++seed) {
    // Noise-free readings of an empty line keep the belief on the sweep.
    auto b = init_belief(kLine, 1.0 / 16);
    Rng prng(100 + seed);
    std::vector<int> seen(16, 0);
    int cell = 0, rep = 0;
    for (int step = 0; step < 6; ++step) {
      SamplerConfig sc;
      sc.n_diff = 100;
      const auto res = das_plan_step(m, state_image(b), cell, tpl, sc, prng);
      const auto& a = tpl[res.action];
      for (int c : a.cells) rep += seen[c]++ > 0;
      std::vector<double> y(a.cells.size(), 0.0);
      apply_observation(b, a.cells, y, 1.0 / 16);
      cell = a.origin;
    }
    repeats.push_back(rep);
  }
  std::nth_element(repeats.begin(), repeats.begin() + 10, repeats.end());
  EXPECT_LE(repeats[10], 2);
}

}  // namespace
}  // namespace cdas
