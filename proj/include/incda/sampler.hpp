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

#ifndef INCDA_SAMPLER_HPP_
#define INCDA_SAMPLER_HPP_

#include <chrono>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "incda/fourdvar.hpp"
#include "incda/neural_prior.hpp"
#include "incda/training.hpp"

namespace incda {

enum class UpdateRule {
  ColdDiffusion,  // z += (s_k - s_{k+1}) (x_k - z0), s_{l+1} = 0
  PaperLiteral,   // z += s_k (x_k - z0)
};

inline std::string to_string(UpdateRule rule) {
  return rule == UpdateRule::ColdDiffusion ? "cold-diffusion" : "paper-literal";
}

inline UpdateRule update_rule_from_string(const std::string& name) {
  if (name == "cold-diffusion") return UpdateRule::ColdDiffusion;
  if (name == "paper-literal") return UpdateRule::PaperLiteral;
  throw Error(ErrorCode::InvalidConfig, "unknown update rule " + name);
}

struct ReconstructionResult {
  Vector estimate;
  std::vector<Vector> iterates;
  double wall_seconds = 0.0;
  std::string method;
  int iterations = 0;
  bool converged = true;
  std::vector<double> objectives;  // 4D-Var paths only
  std::vector<double> alphas;
  std::vector<double> lambdas;
};

/**
 * Coarse-to-fine iteration: x_k = op(z_k, s_k), then the update rule.
 * `op` is any callable Vector(const Vector&, double).
 */
template <class Operator>
ReconstructionResult incremental_iterate(Operator&& op, const Vector& z0,
                                         const TemperatureSchedule& schedule, UpdateRule rule) {
  const auto start = std::chrono::steady_clock::now();
  ReconstructionResult out;
  Vector z = z0;
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    const double s = schedule[k];
    const Vector x = op(z, s);
    const double next = k + 1 < schedule.size() ? schedule[k + 1] : 0.0;
    const double weight = rule == UpdateRule::ColdDiffusion ? s - next : s;
    z += weight * (x - z0);
    if (!z.allFinite()) {
      throw Error(ErrorCode::NonFiniteLoss, "sampler diverged at level " + std::to_string(k));
    }
    out.iterates.push_back(z);
  }
  out.estimate = std::move(z);
  out.iterations = static_cast<int>(schedule.size());
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

inline ReconstructionResult incremental_assimilate(const NeuralPrior& prior, const Vector& y,
                                                   const ObservationProcess& proc,
                                                   const Vector& z0,
                                                   const TemperatureSchedule& schedule,
                                                   UpdateRule rule = UpdateRule::ColdDiffusion) {
  auto out = incremental_iterate(
      [&](const Vector& z, double s) { return neural_assimilate(prior, z, y, proc, s); }, z0,
      schedule, rule);
  out.method = "neural";
  return out;
}

/// The ablation: same iteration with x_k = mu(z_k, s_k); never sees y.
inline ReconstructionResult unconditional_restore(const NeuralPrior& prior, const Vector& z0,
                                                  const TemperatureSchedule& schedule,
                                                  UpdateRule rule = UpdateRule::ColdDiffusion) {
  auto out = incremental_iterate(
      [&](const Vector& z, double s) { return prior_mu(prior, z, s); }, z0, schedule, rule);
  out.method = "unconditional";
  return out;
}

inline ReconstructionResult from_trace(GaussNewtonTrace trace, std::string method,
                                       double seconds) {
  ReconstructionResult out;
  out.estimate = trace.estimate();
  out.iterates = std::move(trace.iterates);
  out.objectives = std::move(trace.objectives);
  out.alphas = std::move(trace.alphas);
  out.lambdas = std::move(trace.lambdas);
  out.iterations = trace.iterations;
  out.converged = trace.converged && !trace.line_search_failed;
  out.method = std::move(method);
  out.wall_seconds = seconds;
  return out;
}

/// Absolute objective level that ends a hybrid refinement.
inline double hybrid_tolerance(const ObservationProcess& proc, double threshold) {
  return 0.5 * static_cast<double>(proc.size()) + threshold * static_cast<double>(proc.state_dim());
}

/**
 * Refines an estimate with 4D-Var until the full objective drops below
 * m / 2 + threshold * d (or 4D-Var stops on its own). The whitened
 * objective cannot go below about m / 2 at its minimum, so the threshold
 * bounds the excess over that floor per state dimension.
 */

inline ReconstructionResult hybrid_refine(const Vector& x_start, const Vector& y,
                                          const ObservationProcess& proc,
                                          const WeakConstraintCost& cost, double threshold = 0.05,
                                          FourDVarOptions opts = {}) {
  const auto start = std::chrono::steady_clock::now();
  opts.tol = std::isinf(threshold) ? std::numeric_limits<double>::infinity()
                                   : hybrid_tolerance(proc, threshold);
  auto trace = run_weak_4dvar(y, proc, x_start, cost, opts);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return from_trace(std::move(trace), "hybrid", seconds);
}

}  // namespace incda

#endif  // INCDA_SAMPLER_HPP_
