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

#ifndef INCDA_TRAINING_HPP_
#define INCDA_TRAINING_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "incda/neural.hpp"
#include "incda/neural_prior.hpp"
#include "incda/observation.hpp"

namespace incda {

/// One training/test triplet in normalized units.
struct Sample {
  Index id = 0;
  Vector x;                  // ground truth
  ObservationProcess proc;
  Vector y;
  Vector z0;                 // first guess
};

/// Strictly decreasing levels in (0, 1].
class TemperatureSchedule {
 public:
  TemperatureSchedule() = default;
  explicit TemperatureSchedule(std::vector<double> levels) : levels_(std::move(levels)) {
    if (levels_.empty()) throw Error(ErrorCode::InvalidConfig, "schedule needs a level");
    for (std::size_t k = 0; k < levels_.size(); ++k) {
      if (!(levels_[k] > 0.0 && levels_[k] <= 1.0)) {
        throw Error(ErrorCode::InvalidConfig, "temperature levels must lie in (0, 1]");
      }
      if (k > 0 && !(levels_[k] < levels_[k - 1])) {
        throw Error(ErrorCode::InvalidConfig, "temperature levels must strictly decrease");
      }
    }
  }

  /// s_k = 1 - k / (l + 1) for k = 1..l, or k = 0..l with `include_unit_level`.
  static TemperatureSchedule regular(int count, bool include_unit_level = false) {
    if (count < 1) throw Error(ErrorCode::InvalidConfig, "schedule needs count >= 1");
    std::vector<double> levels;
    for (int k = include_unit_level ? 0 : 1; k <= count; ++k) {
      levels.push_back(1.0 - static_cast<double>(k) / static_cast<double>(count + 1));
    }
    return TemperatureSchedule(std::move(levels));
  }

  /// The single level s = 1.
  static TemperatureSchedule one_shot() { return TemperatureSchedule({1.0}); }

  std::size_t size() const noexcept { return levels_.size(); }
  double operator[](std::size_t k) const { return levels_[k]; }
  const std::vector<double>& levels() const noexcept { return levels_; }

 private:
  std::vector<double> levels_;
};

/// z_k = s_k z0 + (1 - s_k) x for each level.
inline std::vector<std::pair<double, Vector>> build_interpolants(const Vector& z0, const Vector& x,
                                                                 const TemperatureSchedule& schedule) {
  require_dim(x.size(), z0.size(), "interpolant endpoints");
  std::vector<std::pair<double, Vector>> out;
  out.reserve(schedule.size());
  for (double s : schedule.levels()) out.emplace_back(s, s * z0 + (1.0 - s) * x);
  return out;
}

struct LossAndGradient {
  double loss = 0.0;
  Vector grad;
};

/**
 * Mean over (sample, level) of |A(z_k, y; theta, s_k) - x|^2 and its
 * theta-gradient. With `use_observations` false every query sees an empty
 * process, so A reduces to the prior mean (the unconditional ablation).
 */
inline LossAndGradient temperature_loss(const NeuralPrior& prior, std::span<const Sample> batch,
                                        const TemperatureSchedule& schedule,
                                        bool use_observations = true, bool want_grad = true) {
  if (batch.empty()) throw Error(ErrorCode::InsufficientData, "empty batch");
  const Index d = prior.dim();
  const ObservationProcess no_obs = ObservationProcess::empty(d, 1.0);
  const Vector no_y(0);
  std::vector<Vector> interpolants;
  interpolants.reserve(batch.size() * schedule.size());
  std::vector<AssimilationQuery> queries;
  std::vector<const Vector*> targets;
  for (const auto& sample : batch) {
    require_dim(sample.x.size(), d, "sample truth");
    for (auto& [s, z] : build_interpolants(sample.z0, sample.x, schedule)) {
      interpolants.push_back(std::move(z));
      queries.push_back({&interpolants.back(), use_observations ? &sample.y : &no_y,
                         use_observations ? &sample.proc : &no_obs, s});
      targets.push_back(&sample.x);
    }
  }
  const AssimilationBatch forward(prior, std::move(queries), want_grad);
  const auto n = static_cast<Index>(targets.size());
  Matrix residual = forward.outputs();
  for (Index c = 0; c < n; ++c) residual.col(c) -= *targets[static_cast<std::size_t>(c)];
  LossAndGradient out;
  out.loss = residual.squaredNorm() / static_cast<double>(n);
  if (want_grad) out.grad = forward.backward((2.0 / static_cast<double>(n)) * residual);
  return out;
}

/// Reconstruction loss of a single application from the first guess, s = 1.
inline LossAndGradient one_shot_loss(const NeuralPrior& prior, std::span<const Sample> batch) {
  return temperature_loss(prior, batch, TemperatureSchedule::one_shot());
}

inline LossAndGradient multi_temperature_loss(const NeuralPrior& prior,
                                              std::span<const Sample> batch,
                                              const TemperatureSchedule& schedule) {
  return temperature_loss(prior, batch, schedule);
}

struct TrainConfig {
  int epochs = 3000;
  Index batch_size = 64;
  double lr = 1e-3;
  double lr_final_fraction = 1.0;  // exponential decay of lr down to this fraction
  double validation_fraction = 0.1;
  int patience = 0;                // 0 disables early stopping
  bool use_observations = true;    // false trains the unconditional ablation
};

struct TrainLogEntry {
  int epoch = 0;
  std::string split;
  double loss = 0.0;
};

/// Everything needed to continue a run bit-identically.
struct TrainState {
  NeuralPrior prior;
  AdamState adam;
  int epoch = 0;                   // epochs completed
  Vector best_theta;
  double best_validation = std::numeric_limits<double>::infinity();
  int stale_epochs = 0;
  bool stopped_early = false;
  std::vector<TrainLogEntry> log;
};

inline TrainState start_training(NeuralPrior prior, const TrainConfig& config) {
  TrainState state;
  state.adam = AdamState::for_size(prior.parameter_count(), config.lr);
  state.best_theta = prior.pack();
  state.prior = std::move(prior);
  return state;
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/**
 * Minibatch Adam on the multi-temperature objective. The trailing
 * validation_fraction of `dataset` is held out; the best validation
 * parameters are kept. Shuffling depends only on (seed, epoch), so a
 * resumed state continues exactly as an uninterrupted run would.
 */
inline void continue_training(TrainState& state, std::span<const Sample> dataset,
                              const TemperatureSchedule& schedule, const TrainConfig& config,
                              std::uint64_t seed, int until_epoch) {
  if (dataset.empty()) throw Error(ErrorCode::InsufficientData, "empty training set");
  const auto total = dataset.size();
  auto held = static_cast<std::size_t>(std::floor(config.validation_fraction * static_cast<double>(total)));
  if (held >= total) held = 0;
  const auto fit = dataset.first(total - held);
  const auto validation = dataset.subspan(total - held);
  const auto batch_size = static_cast<std::size_t>(std::max<Index>(1, config.batch_size));

  std::vector<std::size_t> order(fit.size());
  std::vector<Sample> batch;
  while (state.epoch < until_epoch && !state.stopped_early) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(detail::mix_seed(seed, static_cast<std::uint64_t>(state.epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    if (config.epochs > 0 && config.lr_final_fraction != 1.0) {
      const double progress = static_cast<double>(state.epoch) / static_cast<double>(config.epochs);
      state.adam.lr = config.lr * std::pow(config.lr_final_fraction, progress);
    }

    Vector theta = state.prior.pack();
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + batch_size); ++k) {
        batch.push_back(fit[order[k]]);
      }
      const std::string where =
          "epoch " + std::to_string(state.epoch) + " batch " + std::to_string(batches);
      LossAndGradient lg;
      try {
        lg = temperature_loss(state.prior, batch, schedule, config.use_observations);
      } catch (const NotPositiveDefinite&) {
        // Only non-finite network outputs can break an SPD-by-construction solve.
        throw Error(ErrorCode::NonFiniteLoss, where + ": non-finite precision");
      }
      if (!std::isfinite(lg.loss) || !lg.grad.allFinite()) {
        throw Error(ErrorCode::NonFiniteLoss, where);
      }
      adam_update(state.adam, theta, lg.grad);
      state.prior.unpack(theta);
      loss_sum += lg.loss;
      ++batches;
    }
    ++state.epoch;
    state.log.push_back({state.epoch, "train", loss_sum / static_cast<double>(std::max<std::size_t>(1, batches))});

    if (!validation.empty()) {
      double val = 0.0;
      for (std::size_t start = 0; start < validation.size(); start += 256) {
        const auto chunk = validation.subspan(start, std::min<std::size_t>(256, validation.size() - start));
        val += temperature_loss(state.prior, chunk, schedule, config.use_observations, false).loss *
               static_cast<double>(chunk.size());
      }
      val /= static_cast<double>(validation.size());
      state.log.push_back({state.epoch, "validation", val});
      if (val < state.best_validation) {
        state.best_validation = val;
        state.best_theta = theta;
        state.stale_epochs = 0;
      } else if (config.patience > 0 && ++state.stale_epochs >= config.patience) {
        state.stopped_early = true;
      }
    } else {
      state.best_theta = theta;
    }
  }
}

struct TrainResult {
  NeuralPrior prior;
  std::vector<TrainLogEntry> log;
};

/// Trains `initial` for config.epochs epochs; returns the best validation parameters.
inline TrainResult train(std::span<const Sample> dataset, const TemperatureSchedule& schedule,
                         const TrainConfig& config, std::uint64_t seed, NeuralPrior initial) {
  TrainState state = start_training(std::move(initial), config);
  continue_training(state, dataset, schedule, config, seed, config.epochs);
  state.prior.unpack(state.best_theta);
  return {std::move(state.prior), std::move(state.log)};
}

/// Same loop with the MAP step replaced by the prior mean: learns z_k -> x without y.
inline TrainResult train_unconditional(std::span<const Sample> dataset,
                                       const TemperatureSchedule& schedule, TrainConfig config,
                                       std::uint64_t seed, NeuralPrior initial) {
  config.use_observations = false;
  return train(dataset, schedule, config, seed, std::move(initial));
}

}  // namespace incda

#endif  // INCDA_TRAINING_HPP_
