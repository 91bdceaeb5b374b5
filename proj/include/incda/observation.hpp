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

#ifndef INCDA_OBSERVATION_HPP_
#define INCDA_OBSERVATION_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "incda/common.hpp"

namespace incda {

/**
 * Linear subsampling operator H (a sorted index set into the flat state)
 * with isotropic Gaussian noise R = noise_std^2 I.
 */
class ObservationProcess {
 public:
  ObservationProcess() = default;
  ObservationProcess(Index state_dim, std::vector<Index> observed, double noise_std)
      : state_dim_(state_dim), observed_(std::move(observed)), noise_std_(noise_std) {
    for (std::size_t n = 0; n < observed_.size(); ++n) {
      if (observed_[n] < 0 || observed_[n] >= state_dim_) {
        throw Error(ErrorCode::IndexOutOfRange,
                    "observed index " + std::to_string(observed_[n]));
      }
      if (n > 0 && observed_[n] <= observed_[n - 1]) {
        throw Error(ErrorCode::IndexOutOfRange, "observed indices must be strictly increasing");
      }
    }
    if (noise_std_ < 0.0) throw Error(ErrorCode::InvalidConfig, "noise_std must be >= 0");
  }

  /// Every slot observed.
  static ObservationProcess full(Index state_dim, double noise_std) {
    std::vector<Index> all(static_cast<std::size_t>(state_dim));
    for (Index i = 0; i < state_dim; ++i) all[static_cast<std::size_t>(i)] = i;
    return {state_dim, std::move(all), noise_std};
  }

  static ObservationProcess empty(Index state_dim, double noise_std) {
    return {state_dim, {}, noise_std};
  }

  Index state_dim() const noexcept { return state_dim_; }
  Index size() const noexcept { return static_cast<Index>(observed_.size()); }
  double noise_std() const noexcept { return noise_std_; }
  const std::vector<Index>& indices() const noexcept { return observed_; }

  /// Diagonal of H^T R^{-1} H restricted to the observed slots (rho^{-2} each).
  Vector precision_values() const {
    return Vector::Constant(size(), 1.0 / (noise_std_ * noise_std_));
  }

  /// Dense H, for oracles and small problems.
  Matrix dense() const {
    Matrix h = Matrix::Zero(size(), state_dim_);
    for (Index n = 0; n < size(); ++n) h(n, observed_[static_cast<std::size_t>(n)]) = 1.0;
    return h;
  }

 private:
  Index state_dim_ = 0;
  std::vector<Index> observed_;
  double noise_std_ = 0.0;
};

inline Vector apply_H(const ObservationProcess& proc, const Vector& x) {
  require_dim(x.size(), proc.state_dim(), "apply_H state");
  Vector out(proc.size());
  for (Index n = 0; n < proc.size(); ++n) out(n) = x(proc.indices()[static_cast<std::size_t>(n)]);
  return out;
}

inline Vector apply_Ht(const ObservationProcess& proc, const Vector& v) {
  require_dim(v.size(), proc.size(), "apply_Ht observation");
  Vector out = Vector::Zero(proc.state_dim());
  for (Index n = 0; n < proc.size(); ++n) out(proc.indices()[static_cast<std::size_t>(n)]) = v(n);
  return out;
}

/// y = H x + xi with xi ~ N(0, noise_std^2 I), deterministic in `seed`.
inline Vector observe(const ObservationProcess& proc, const Vector& x, std::uint64_t seed) {
  Vector y = apply_H(proc, x);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index n = 0; n < y.size(); ++n) y(n) += proc.noise_std() * normal(rng);
  return y;
}

/**
 * Picks ceil(obs_fraction * steps) distinct time steps (endpoints forced in
 * when `keep_endpoints`) and observes `components` at each of them.
 */
inline ObservationProcess sample_process(Index phase_dim, Index steps,
                                         const std::vector<Index>& components,
                                         double obs_fraction, double noise_std,
                                         std::uint64_t seed, bool keep_endpoints = true) {
  if (!(obs_fraction > 0.0 && obs_fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "obs_fraction must lie in (0, 1]");
  }
  for (Index c : components) {
    if (c < 0 || c >= phase_dim) {
      throw Error(ErrorCode::IndexOutOfRange, "observed component " + std::to_string(c));
    }
  }
  // Guard against 0.25 * 32 = 8.000000001 style rounding.
  const auto wanted = static_cast<Index>(
      std::ceil(obs_fraction * static_cast<double>(steps) - 1e-9));
  const Index count = std::clamp<Index>(wanted, 1, steps);

  std::vector<Index> pool(static_cast<std::size_t>(steps));
  for (Index t = 0; t < steps; ++t) pool[static_cast<std::size_t>(t)] = t;
  std::vector<Index> chosen;
  if (keep_endpoints) {
    chosen.push_back(0);
    if (count >= 2 && steps >= 2) chosen.push_back(steps - 1);
    pool.erase(std::remove_if(pool.begin(), pool.end(),
                              [&](Index t) {
                                return std::find(chosen.begin(), chosen.end(), t) !=
                                       chosen.end();
                              }),
               pool.end());
  }
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates over the remaining candidates.
  for (std::size_t n = 0; static_cast<Index>(chosen.size()) < count && n < pool.size(); ++n) {
    std::uniform_int_distribution<std::size_t> pick(n, pool.size() - 1);
    std::swap(pool[n], pool[pick(rng)]);
    chosen.push_back(pool[n]);
  }

  std::set<Index> flat;
  for (Index t : chosen) {
    for (Index c : components) flat.insert(t * phase_dim + c);
  }
  if (flat.empty()) throw Error(ErrorCode::EmptyObservation, "no observed slot");
  return {phase_dim * steps, std::vector<Index>(flat.begin(), flat.end()), noise_std};
}

}  // namespace incda

#endif  // INCDA_OBSERVATION_HPP_
