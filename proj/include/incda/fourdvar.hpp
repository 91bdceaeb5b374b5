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

#ifndef INCDA_FOURDVAR_HPP_
#define INCDA_FOURDVAR_HPP_

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "incda/band_linalg.hpp"
#include "incda/dynamics.hpp"
#include "incda/gaussian_map.hpp"
#include "incda/observation.hpp"

namespace incda {

/**
 * Weak-constraint prior
 *   U(x) = 1/2 |x_0 - x_b|^2_{B^{-1}} + 1/2 sum_t |x_{t+1} - F(x_t)|^2_{Q^{-1}}
 * where F is one RK4 step of `model` over `dt` and Q = diag(process_noise).
 */
struct WeakConstraintCost {
  DynamicalModel model;
  double dt = 0.0;
  Vector process_noise;      // diagonal of Q, one entry per phase component
  Vector background_mean;    // x_b
  Matrix background_cov;     // B

  WeakConstraintCost() = default;
  WeakConstraintCost(DynamicalModel model_, double dt_, Vector process_noise_,
                     Vector background_mean_, Matrix background_cov_)
      : model(std::move(model_)),
        dt(dt_),
        process_noise(std::move(process_noise_)),
        background_mean(std::move(background_mean_)),
        background_cov(std::move(background_cov_)) {
    const Index phi = model.phase_dim;
    require_dim(process_noise.size(), phi, "process noise");
    require_dim(background_mean.size(), phi, "background mean");
    require_dim(background_cov.rows(), phi, "background covariance");
    if ((process_noise.array() <= 0.0).any()) {
      throw Error(ErrorCode::NotPositiveDefinite, "process noise must be positive");
    }
    Eigen::LLT<Matrix> llt(background_cov);
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorCode::NotPositiveDefinite, "background covariance must be SPD");
    }
    background_precision = llt.solve(Matrix::Identity(phi, phi));
    background_precision = 0.5 * (background_precision + background_precision.transpose()).eval();
  }

  Index phase_dim() const noexcept { return model.phase_dim; }

  Matrix background_precision;
};

namespace detail {

struct CostLinearization {
  double value = 0.0;
  Vector gradient;
  std::vector<Matrix> tangents;  // d F(x_t) / d x_t, t = 0..T-2
};

inline Index steps_of(const WeakConstraintCost& cost, const Vector& x) {
  const Index phi = cost.phase_dim();
  if (phi == 0 || x.size() % phi != 0 || x.size() == 0) {
    throw Error(ErrorCode::DimensionMismatch, "trajectory length is not a multiple of phase_dim");
  }
  return x.size() / phi;
}

inline CostLinearization linearize(const WeakConstraintCost& cost, const Vector& x,
                                   bool with_tangents) {
  const Index phi = cost.phase_dim();
  const Index steps = steps_of(cost, x);
  CostLinearization out;
  out.gradient = Vector::Zero(x.size());
  const Vector rb = x.head(phi) - cost.background_mean;
  const Vector wb = cost.background_precision * rb;
  out.value = 0.5 * rb.dot(wb);
  out.gradient.head(phi) += wb;
  if (with_tangents) out.tangents.reserve(static_cast<std::size_t>(steps));
  for (Index t = 0; t + 1 < steps; ++t) {
    auto step = rk4_step_linearized(cost.model, x.segment(t * phi, phi), cost.dt);
    const Vector r = x.segment((t + 1) * phi, phi) - step.next;
    const Vector w = r.cwiseQuotient(cost.process_noise);
    out.value += 0.5 * r.dot(w);
    out.gradient.segment((t + 1) * phi, phi) += w;
    out.gradient.segment(t * phi, phi) -= step.tangent.transpose() * w;
    if (with_tangents) out.tangents.push_back(std::move(step.tangent));
  }
  return out;
}

}  // namespace detail

inline double cost_U(const WeakConstraintCost& cost, const Vector& x) {
  const Index phi = cost.phase_dim();
  const Index steps = detail::steps_of(cost, x);
  const Vector rb = x.head(phi) - cost.background_mean;
  double value = 0.5 * rb.dot(cost.background_precision * rb);
  for (Index t = 0; t + 1 < steps; ++t) {
    const Vector r = x.segment((t + 1) * phi, phi) -
                     rk4_step(cost.model, x.segment(t * phi, phi), cost.dt);
    value += 0.5 * r.cwiseAbs2().cwiseQuotient(cost.process_noise).sum();
  }
  return value;
}

/// Adjoint accumulation of dU/dx through the step tangents.
inline Vector grad_U(const WeakConstraintCost& cost, const Vector& x) {
  return detail::linearize(cost, x, false).gradient;
}

/// U(x) + 1/2 |H x - y|^2 / rho^2.
inline double full_objective(const WeakConstraintCost& cost, const ObservationProcess& proc,
                             const Vector& y, const Vector& x) {
  const double rho2 = proc.noise_std() * proc.noise_std();
  const double data = proc.size() == 0 ? 0.0 : 0.5 * (apply_H(proc, x) - y).squaredNorm() / rho2;
  return cost_U(cost, x) + data;
}

/// Gauss-Newton precision J^T W J (half-bandwidth 2 phi - 1), plus damping * I.
inline BandMatrix gauss_newton_precision(const WeakConstraintCost& cost, Index steps,
                                         const std::vector<Matrix>& tangents, double damping) {
  const Index phi = cost.phase_dim();
  const Index d = phi * steps;
  const Index bandwidth = std::min<Index>(2 * phi - 1, d - 1);
  BandMatrix lambda(d, bandwidth);
  const Vector qinv = cost.process_noise.cwiseInverse();
  auto add_block = [&](Index row_step, Index col_step, const Matrix& block) {
    for (Index a = 0; a < phi; ++a) {
      for (Index b = 0; b < phi; ++b) {
        const Index i = row_step * phi + a, j = col_step * phi + b;
        if (i >= j) lambda.at(i, j) += block(a, b);
      }
    }
  };
  add_block(0, 0, cost.background_precision);
  for (Index t = 0; t + 1 < steps; ++t) {
    const Matrix& m = tangents[static_cast<std::size_t>(t)];
    add_block(t + 1, t + 1, qinv.asDiagonal().toDenseMatrix());
    add_block(t, t, m.transpose() * qinv.asDiagonal() * m);
    add_block(t + 1, t, -(qinv.asDiagonal() * m));
  }
  if (damping > 0.0) lambda.data().row(0).array() += damping;
  return lambda;
}

/**
 * Local Gaussian approximation of the prior around z: precision
 * Lambda(z) = J^T W J (+ damping I), mean mu(z) = z - Lambda(z)^{-1} grad U(z).
 */
inline BandGaussianPrior local_quadratic(const WeakConstraintCost& cost, const Vector& z,
                                         double damping = 0.0) {
  const auto lin = detail::linearize(cost, z, true);
  const Index steps = detail::steps_of(cost, z);
  BandMatrix precision = gauss_newton_precision(cost, steps, lin.tangents, damping);
  BandCholesky chol = band_cholesky(precision);
  Vector mean = z - band_solve(chol, lin.gradient);
  return {std::move(mean), std::move(precision), std::move(chol)};
}

struct FourDVarOptions {
  int max_iters = 50;
  double tol = 0.0;              // stop once the full objective falls below this
  double rel_tol = 1e-10;        // stop once the relative decrease falls below this
  double lambda0 = 1e-3;         // initial Levenberg damping
  double lambda_factor = 10.0;
  double lambda_restart = 1e-3;  // used when a rejection happens at lambda = 0
  double lambda_max = 1e12;
  int max_halvings = 8;          // alpha grid {1, 1/2, ..., 2^-max_halvings}
};

struct GaussNewtonTrace {
  std::vector<Vector> iterates;   // z_0 .. z_iterations
  std::vector<double> objectives; // full objective at each iterate
  std::vector<double> alphas;     // accepted step sizes, one per iteration
  std::vector<double> lambdas;    // damping used for each accepted step
  bool converged = false;
  bool line_search_failed = false;
  int iterations = 0;

  const Vector& estimate() const { return iterates.back(); }
  double final_objective() const { return objectives.back(); }
};

/**
 * Incremental weak-constraint 4D-Var: x_k = MAP under the local quadratic
 * at z_k, then z_{k+1} = z_k + alpha_k (x_k - z_k) with the first alpha of
 * the halving grid that lowers the full objective. A rejected grid raises
 * the Levenberg damping and retries; an accepted step lowers it.
 */
inline GaussNewtonTrace run_weak_4dvar(const Vector& y, const ObservationProcess& proc,
                                       const Vector& z0, const WeakConstraintCost& cost,
                                       const FourDVarOptions& opts = {}) {
  require_dim(z0.size(), proc.state_dim(), "4dvar first guess");
  const Index steps = detail::steps_of(cost, z0);
  GaussNewtonTrace trace;
  Vector z = z0;
  double objective = full_objective(cost, proc, y, z);
  trace.iterates.push_back(z);
  trace.objectives.push_back(objective);
  double lambda = opts.lambda0;

  if (objective < opts.tol) {
    trace.converged = true;
    return trace;
  }
  for (int iter = 0; iter < opts.max_iters; ++iter) {
    const auto lin = detail::linearize(cost, z, true);
    const BandMatrix gn = gauss_newton_precision(cost, steps, lin.tangents, 0.0);
    bool accepted = false;
    double next_objective = objective;
    Vector next;
    double used_alpha = 0.0;
    while (!accepted) {
      BandMatrix damped = gn;
      if (lambda > 0.0) damped.data().row(0).array() += lambda;
      BandCholesky chol = band_cholesky(damped);
      Vector mean = z - band_solve(chol, lin.gradient);
      const BandGaussianPrior local{std::move(mean), std::move(damped), std::move(chol)};
      const Vector target = map_banded(y, proc, local);
      const Vector direction = target - z;
      if (direction.norm() <= 1e-12 * (1.0 + z.norm())) {
        trace.converged = true;
        return trace;
      }
      double alpha = 1.0;
      for (int h = 0; h <= opts.max_halvings; ++h, alpha *= 0.5) {
        Vector candidate = z + alpha * direction;
        const double value = full_objective(cost, proc, y, candidate);
        if (std::isfinite(value) && value < objective) {
          accepted = true;
          next = std::move(candidate);
          next_objective = value;
          used_alpha = alpha;
          break;
        }
      }
      if (accepted) break;
      lambda = lambda > 0.0 ? lambda * opts.lambda_factor : opts.lambda_restart;
      if (lambda > opts.lambda_max) {
        trace.line_search_failed = true;
        return trace;
      }
    }
    const double decrease = objective - next_objective;
    z = std::move(next);
    trace.iterates.push_back(z);
    trace.objectives.push_back(next_objective);
    trace.alphas.push_back(used_alpha);
    trace.lambdas.push_back(lambda);
    ++trace.iterations;
    lambda /= opts.lambda_factor;
    const double previous = objective;
    objective = next_objective;
    if (objective < opts.tol ||
        decrease <= opts.rel_tol * std::max(std::abs(previous), 1e-300)) {
      trace.converged = true;
      break;
    }
  }
  return trace;
}

}  // namespace incda

#endif  // INCDA_FOURDVAR_HPP_
