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

// End-to-end use of the library on Lorenz 63 without the CLI: simulate a
// small twin experiment, build a Gaussian first guess, then compare
// weak-constraint 4D-Var with a briefly trained neural assimilation operator.

#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

#include "incda/fourdvar.hpp"
#include "incda/sampler.hpp"
#include "incda/training.hpp"

int main() {
  using namespace incda;
  const auto model = lorenz63();
  const double dt = 0.025;
  const Index steps = 32;

  std::vector<Trajectory> physical;
  for (std::uint64_t n = 0; n < 320; ++n) {
    std::mt19937_64 rng(n);
    const Vector u0 = lorenz_initial_condition(model, dt, 1000, rng);
    physical.push_back(simulate(model, u0, steps, dt, std::sqrt(dt), n));
  }
  const Normalizer norm = Normalizer::fit({physical.begin(), physical.begin() + 256});

  std::vector<Sample> samples;
  for (std::size_t n = 0; n < physical.size(); ++n) {
    Sample s;
    s.id = static_cast<Index>(n);
    s.x = norm.normalize(physical[n]).values;
    s.proc = sample_process(3, steps, {0}, 0.25, 0.05, 1000 + n);
    s.y = observe(s.proc, s.x, 2000 + n);
    samples.push_back(std::move(s));
  }
  std::vector<Vector> train_x;
  for (std::size_t n = 0; n < 256; ++n) train_x.push_back(samples[n].x);
  const auto gaussian = build_moment_prior(train_x);
  for (auto& s : samples) s.z0 = map_dense(s.y, s.proc, gaussian);

  NeuralPriorShape shape;
  auto prior = make_neural_prior(shape, 7);
  prior.normalizer = norm;
  TrainConfig tc;
  tc.epochs = 30;
  const auto schedule = TemperatureSchedule::regular(5, true);
  const auto trained = train(std::span<const Sample>(samples.data(), 256), schedule, tc, 11, prior);

  // 4D-Var in normalized coordinates, background from the initial states.
  std::vector<Vector> first;
  for (const auto& x : train_x) first.push_back(x.head(3));
  const auto background = build_moment_prior(first);
  const WeakConstraintCost cost{normalized_model(model, norm), dt,
                                Vector(Vector::Constant(3, dt).cwiseQuotient(norm.std.cwiseAbs2())),
                                background.mean, background.cov};

  double err_fg = 0.0, err_var = 0.0, err_neural = 0.0;
  for (std::size_t n = 256; n < samples.size(); ++n) {
    const auto& s = samples[n];
    const double scale = std::sqrt(static_cast<double>(s.x.size()));
    err_fg += (s.z0 - s.x).norm() / scale;
    err_var += (run_weak_4dvar(s.y, s.proc, s.z0, cost).estimate() - s.x).norm() / scale;
    err_neural += (incremental_assimilate(trained.prior, s.y, s.proc, s.z0, schedule).estimate - s.x).norm() / scale;
  }
  const double count = static_cast<double>(samples.size() - 256);
  std::printf("mean normalized RMSE over %d test trajectories\n", static_cast<int>(count));
  std::printf("  gaussian first guess  %.3f\n", err_fg / count);
  std::printf("  weak-constraint 4dvar %.3f\n", err_var / count);
  std::printf("  neural (30 epochs)    %.3f\n", err_neural / count);
  return 0;
}
