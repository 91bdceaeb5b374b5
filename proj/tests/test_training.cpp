/*
 * Copyright 2026 The incda Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "incda/dynamics.hpp"
#include "incda/gaussian_map.hpp"
#include "incda/training.hpp"
#include "test_util.hpp"

namespace incda {
namespace {

NeuralPriorShape tiny_shape() {
  NeuralPriorShape shape;
  shape.phase_dim = 2;
  shape.steps = 3;
  shape.width = 4;
  shape.depth = 2;
  shape.embed_dim = 2;
  return shape;
}

std::vector<Sample> random_samples(Index phase_dim, Index steps, int n, std::uint64_t seed,
                                   bool observed = true) {
  std::mt19937_64 rng(seed);
  std::vector<Sample> out;
  const Index d = phase_dim * steps;
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.id = i;
    s.x = testing::random_vector(d, rng);
    s.z0 = s.x + testing::random_vector(d, rng, 0.5);
    s.proc = observed ? sample_process(phase_dim, steps, {0}, 0.5, 0.3, seed + static_cast<std::uint64_t>(i))
                      : ObservationProcess::empty(d, 0.3);
    s.y = observe(s.proc, s.x, seed + 100 + static_cast<std::uint64_t>(i));
    out.push_back(std::move(s));
  }
  return out;
}

NeuralPrior perturbed(const NeuralPriorShape& shape, std::uint64_t seed) {
  auto prior = make_neural_prior(shape, seed);
  std::mt19937_64 rng(seed + 7);
  prior.unpack(prior.pack() + testing::random_vector(prior.parameter_count(), rng, 0.2));
  return prior;
}

TEST(TemperatureSchedule, RegularSpacingOfFiveLevels) {
  const auto sched = TemperatureSchedule::regular(5);
  ASSERT_EQ(sched.size(), 5u);
  for (int k = 1; k <= 5; ++k) EXPECT_DOUBLE_EQ(sched[static_cast<std::size_t>(k - 1)], 1.0 - k / 6.0);
  const auto with_unit = TemperatureSchedule::regular(5, true);
  ASSERT_EQ(with_unit.size(), 6u);
  EXPECT_EQ(with_unit[0], 1.0);
}

TEST(TemperatureSchedule, RejectsInvalidLevels) {
  EXPECT_THROW(TemperatureSchedule({0.5, 0.5}), Error);
  EXPECT_THROW(TemperatureSchedule({0.5, 0.7}), Error);
  EXPECT_THROW(TemperatureSchedule({0.0}), Error);
  EXPECT_THROW(TemperatureSchedule({1.5}), Error);
  EXPECT_THROW(TemperatureSchedule(std::vector<double>{}), Error);
  EXPECT_THROW(TemperatureSchedule::regular(0), Error);
}

TEST(BuildInterpolants, EndpointsAndConvexity) {
  std::mt19937_64 rng(1);
  const Vector z0 = testing::random_vector(10, rng), x = testing::random_vector(10, rng);
  const auto ends = build_interpolants(z0, x, TemperatureSchedule({1.0}));
  EXPECT_EQ(ends[0].second, z0);
  const auto pts = build_interpolants(z0, x, TemperatureSchedule::regular(5));
  ASSERT_EQ(pts.size(), 5u);
  for (const auto& [s, z] : pts) {
    EXPECT_LT((z - (s * z0 + (1.0 - s) * x)).norm(), 1e-15);
    for (Index i = 0; i < 10; ++i) {
      EXPECT_GE(z(i), std::min(z0(i), x(i)) - 1e-15);
      EXPECT_LE(z(i), std::max(z0(i), x(i)) + 1e-15);
    }
  }
  // s -> 0 approaches the target.
  const auto fine = build_interpolants(z0, x, TemperatureSchedule({1e-12}));
  EXPECT_LT((fine[0].second - x).norm(), 1e-11);
  EXPECT_THROW(build_interpolants(z0, Vector::Zero(3), TemperatureSchedule::one_shot()), Error);
}

TEST(OneShotLoss, ZeroForPerfectOperatorAndQuadraticInResidual) {
  const auto prior = perturbed(tiny_shape(), 2);
  auto samples = random_samples(2, 3, 4, 2);
  for (auto& s : samples) s.x = neural_assimilate(prior, s.z0, s.y, s.proc, 1.0);
  EXPECT_LT(one_shot_loss(prior, samples).loss, 1e-28);

  std::mt19937_64 rng(2);
  auto once = samples, twice = samples;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Vector r = testing::random_vector(6, rng);
    once[i].x -= r;
    twice[i].x -= 2.0 * r;
  }
  EXPECT_NEAR(one_shot_loss(prior, twice).loss, 4.0 * one_shot_loss(prior, once).loss, 1e-12);
}

TEST(MultiTemperatureLoss, SingleUnitLevelEqualsOneShot) {
  const auto prior = perturbed(tiny_shape(), 3);
  const auto samples = random_samples(2, 3, 5, 3);
  const auto a = one_shot_loss(prior, samples);
  const auto b = multi_temperature_loss(prior, samples, TemperatureSchedule({1.0}));
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.grad, b.grad);
}

TEST(MultiTemperatureLoss, MatchesTwoLoopReevaluation) {
  const auto prior = perturbed(tiny_shape(), 4);
  const auto samples = random_samples(2, 3, 5, 4);
  const auto sched = TemperatureSchedule::regular(3, true);
  double total = 0.0;
  for (const auto& s : samples) {
    for (double level : sched.levels()) {
      const Vector z = level * s.z0 + (1.0 - level) * s.x;
      total += (neural_assimilate(prior, z, s.y, s.proc, level) - s.x).squaredNorm();
    }
  }
  total /= static_cast<double>(samples.size() * sched.size());
  EXPECT_NEAR(multi_temperature_loss(prior, samples, sched).loss, total, 1e-12 * total);
}

TEST(MultiTemperatureLoss, PerfectOperatorGivesZero) {
  const auto prior = perturbed(tiny_shape(), 5);
  auto samples = random_samples(2, 3, 1, 5, false);
  // With m = 0 the operator is the prior mean; make the target its fixed point at every level.
  auto zeroed = prior;
  Vector theta = zeroed.mu_net.pack();
  theta.setZero();
  zeroed.mu_net.unpack(theta);
  samples[0].z0 = samples[0].x;
  EXPECT_EQ(multi_temperature_loss(zeroed, samples, TemperatureSchedule::regular(5)).loss, 0.0);
}

TEST(LossGradients, MatchFiniteDifferences) {
  NeuralPriorShape shape = tiny_shape();
  shape.phase_dim = 1;
  shape.steps = 4;
  const auto prior = perturbed(shape, 6);
  ASSERT_LE(prior.parameter_count(), 200);
  const auto samples = random_samples(1, 4, 3, 6);
  const auto sched = TemperatureSchedule::regular(2, true);
  NeuralPrior work = prior;
  const Vector theta = prior.pack();

  const auto one = one_shot_loss(prior, samples);
  const Vector fd_one = testing::finite_difference(
      [&](const Vector& t) {
        work.unpack(t);
        return one_shot_loss(work, samples).loss;
      },
      theta);
  EXPECT_LT(testing::relative_error(one.grad, fd_one), 1e-4);

  const auto multi = multi_temperature_loss(prior, samples, sched);
  const Vector fd_multi = testing::finite_difference(
      [&](const Vector& t) {
        work.unpack(t);
        return multi_temperature_loss(work, samples, sched).loss;
      },
      theta);
  EXPECT_LT(testing::relative_error(multi.grad, fd_multi), 1e-4);
}

TEST(Train, ZeroEpochsKeepsInitialParameters) {
  const auto prior = perturbed(tiny_shape(), 7);
  const auto samples = random_samples(2, 3, 16, 7);
  TrainConfig config;
  config.epochs = 0;
  const auto result = train(samples, TemperatureSchedule::regular(2), config, 1, prior);
  EXPECT_EQ(result.prior.pack(), prior.pack());
  EXPECT_TRUE(result.log.empty());
}

TEST(Train, DeterministicAndResumable) {
  const auto prior = perturbed(tiny_shape(), 8);
  const auto samples = random_samples(2, 3, 40, 8);
  const auto sched = TemperatureSchedule::regular(2, true);
  TrainConfig config;
  config.epochs = 6;
  config.batch_size = 8;
  config.lr = 1e-2;
  config.lr_final_fraction = 0.1;
  const auto a = train(samples, sched, config, 11, prior);
  const auto b = train(samples, sched, config, 11, prior);
  EXPECT_EQ(a.prior.pack(), b.prior.pack());
  const auto c = train(samples, sched, config, 12, prior);
  EXPECT_NE(a.prior.pack(), c.prior.pack());

  TrainState whole = start_training(prior, config);
  continue_training(whole, samples, sched, config, 11, 6);
  TrainState split = start_training(prior, config);
  continue_training(split, samples, sched, config, 11, 3);
  TrainState resumed = split;  // stands in for a checkpoint round trip
  continue_training(resumed, samples, sched, config, 11, 6);
  EXPECT_EQ(whole.prior.pack(), resumed.prior.pack());
  EXPECT_EQ(whole.best_theta, resumed.best_theta);
  ASSERT_EQ(whole.log.size(), resumed.log.size());
  for (std::size_t k = 0; k < whole.log.size(); ++k) EXPECT_EQ(whole.log[k].loss, resumed.log[k].loss);
}

TEST(Train, LogHasMonotoneEpochsAndBothSplits) {
  const auto samples = random_samples(2, 3, 30, 9);
  TrainConfig config;
  config.epochs = 4;
  config.batch_size = 8;
  const auto result = train(samples, TemperatureSchedule::regular(2), config, 3, perturbed(tiny_shape(), 9));
  ASSERT_EQ(result.log.size(), 8u);
  for (std::size_t k = 0; k < result.log.size(); ++k) {
    EXPECT_EQ(result.log[k].epoch, static_cast<int>(k / 2) + 1);
    EXPECT_EQ(result.log[k].split, k % 2 == 0 ? "train" : "validation");
    EXPECT_GE(result.log[k].loss, 0.0);
  }
}

TEST(Train, NonFiniteLossNamesTheBatch) {
  auto samples = random_samples(2, 3, 8, 10);
  samples[3].x(0) = std::numeric_limits<double>::quiet_NaN();
  TrainConfig config;
  config.epochs = 1;
  config.batch_size = 4;
  config.validation_fraction = 0.0;
  try {
    train(samples, TemperatureSchedule::regular(2), config, 1, perturbed(tiny_shape(), 10));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteLoss);
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos);
  }
}

TEST(TrainUnconditional, EqualsTrainWithoutObservations) {
  const auto prior = perturbed(tiny_shape(), 11);
  const auto observed = random_samples(2, 3, 24, 11, true);
  auto blind = observed;
  for (auto& s : blind) {
    s.proc = ObservationProcess::empty(6, 0.3);
    s.y = Vector(0);
  }
  TrainConfig config;
  config.epochs = 3;
  config.batch_size = 8;
  const auto sched = TemperatureSchedule::regular(2);
  const auto a = train_unconditional(observed, sched, config, 5, prior);
  const auto b = train(blind, sched, config, 5, prior);
  EXPECT_EQ(a.prior.pack(), b.prior.pack());
}

TEST(TrainUnconditional, LossIgnoresObservations) {
  const auto prior = perturbed(tiny_shape(), 12);
  auto samples = random_samples(2, 3, 6, 12);
  const auto sched = TemperatureSchedule::regular(3);
  const double before = temperature_loss(prior, samples, sched, false, false).loss;
  std::rotate(samples.begin(), samples.begin() + 1, samples.end());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::swap(samples[i].y, samples[(i + 1) % samples.size()].y);
  }
  std::rotate(samples.rbegin(), samples.rbegin() + 1, samples.rend());
  EXPECT_EQ(temperature_loss(prior, samples, sched, false, false).loss, before);
}

// Small Lorenz set with moment-prior first guesses, in normalized units.
std::vector<Sample> lorenz_samples(int n, std::uint64_t seed) {
  const auto model = lorenz63();
  const double dt = 0.025;
  const Index steps = 32;
  std::mt19937_64 rng(seed);
  std::vector<Trajectory> raw;
  for (int i = 0; i < n; ++i) {
    raw.push_back(simulate(model, lorenz_initial_condition(model, dt, 1000, rng), steps, dt,
                           std::sqrt(dt), seed + static_cast<std::uint64_t>(i)));
  }
  const auto norm = Normalizer::fit(raw);
  std::vector<Trajectory> normalized;
  for (const auto& t : raw) normalized.push_back(norm.normalize(t));
  const auto moment = build_moment_prior(normalized);
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.id = i;
    s.x = normalized[static_cast<std::size_t>(i)].values;
    s.proc = sample_process(3, steps, {0}, 0.25, 0.05, seed * 31 + static_cast<std::uint64_t>(i));
    s.y = observe(s.proc, s.x, seed * 37 + static_cast<std::uint64_t>(i));
    s.z0 = map_dense(s.y, s.proc, moment);
    out.push_back(std::move(s));
  }
  return out;
}

TEST(Train, LorenzSmokeRunHalvesLoss) {
  const auto samples = lorenz_samples(256, 21);
  NeuralPriorShape shape;
  shape.phase_dim = 3;
  shape.steps = 32;
  const auto sched = TemperatureSchedule::regular(5, true);
  TrainConfig config;
  config.epochs = 200;
  config.batch_size = 64;
  config.validation_fraction = 0.0;
  const auto initial = make_neural_prior(shape, 21);
  const double before = multi_temperature_loss(initial, samples, sched).loss;
  const auto result = train(samples, sched, config, 21, initial);
  const double after = multi_temperature_loss(result.prior, samples, sched).loss;
  EXPECT_LT(after, 0.5 * before) << before << " -> " << after;

  const double before_u = temperature_loss(initial, samples, sched, false, false).loss;
  const auto uncond = train_unconditional(samples, sched, config, 21, initial);
  const double after_u = temperature_loss(uncond.prior, samples, sched, false, false).loss;
  EXPECT_LT(after_u, 0.5 * before_u) << before_u << " -> " << after_u;
}

}  // namespace
}  // namespace incda
