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

#ifndef INCDA_GAUSSIAN_MAP_HPP_
#define INCDA_GAUSSIAN_MAP_HPP_

#include <algorithm>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "incda/band_linalg.hpp"
#include "incda/dynamics.hpp"
#include "incda/observation.hpp"

namespace incda {

/// N(mean, cov) with a dense covariance, symmetrized and lifted to PSD on construction.
struct DenseGaussianPrior {
  Vector mean;
  Matrix cov;

  DenseGaussianPrior() = default;
  DenseGaussianPrior(Vector mean_, Matrix cov_) : mean(std::move(mean_)), cov(std::move(cov_)) {
    require_dim(cov.rows(), mean.size(), "prior covariance rows");
    require_dim(cov.cols(), mean.size(), "prior covariance cols");
    cov = 0.5 * (cov + cov.transpose()).eval();
    const double d = static_cast<double>(mean.size());
    const double tol = 1e-8 * std::max(cov.trace(), 0.0) / d;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov, Eigen::EigenvaluesOnly);
    const double lowest = eig.eigenvalues().minCoeff();
    if (lowest < -tol) cov.diagonal().array() += -lowest;
  }

  Index dim() const noexcept { return mean.size(); }
};

/// N(mean, precision^{-1}) with a banded precision and its band factor.
struct BandGaussianPrior {
  Vector mean;
  BandMatrix precision;
  BandCholesky factor;

  static BandGaussianPrior from_precision(Vector mean, BandMatrix precision) {
    require_dim(precision.dim(), mean.size(), "band prior precision");
    BandCholesky chol = band_cholesky(precision);
    return {std::move(mean), std::move(precision), std::move(chol)};
  }

  static BandGaussianPrior from_factor(Vector mean, BandCholesky factor) {
    require_dim(factor.dim(), mean.size(), "band prior factor");
    BandMatrix precision = band_gram(factor);
    return {std::move(mean), std::move(precision), std::move(factor)};
  }

  Index dim() const noexcept { return mean.size(); }

  DenseGaussianPrior densify() const {
    return {mean, precision.to_dense().inverse()};
  }
};

/**
 * Gain form: mu + P H^T (H P H^T + R)^{-1} (y - H mu). Only the m x m
 * innovation system is factored.
 */
inline Vector map_dense(const Vector& y, const ObservationProcess& proc,
                        const DenseGaussianPrior& prior) {
  require_dim(prior.dim(), proc.state_dim(), "map_dense prior");
  require_dim(y.size(), proc.size(), "map_dense observations");
  const Index m = proc.size();
  if (m == 0) return prior.mean;
  const auto& idx = proc.indices();
  Matrix pht(prior.dim(), m);
  for (Index n = 0; n < m; ++n) pht.col(n) = prior.cov.col(idx[static_cast<std::size_t>(n)]);
  Matrix innovation_cov(m, m);
  for (Index n = 0; n < m; ++n) innovation_cov.row(n) = pht.row(idx[static_cast<std::size_t>(n)]);
  const double r = proc.noise_std() * proc.noise_std();
  innovation_cov.diagonal().array() += r;

  Eigen::LLT<Matrix> llt(innovation_cov);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::SingularInnovation, "H P H^T + R is not positive definite");
  }
  const Vector innovation = y - apply_H(proc, prior.mean);
  const Vector weights = llt.solve(innovation);
  if (!weights.allFinite()) throw Error(ErrorCode::SingularInnovation, "non-finite gain");
  return prior.mean + pht * weights;
}

/// Information-form pieces of the banded MAP: the factor of Lambda + H^T R^{-1} H and the rhs.
struct BandedPosterior {
  BandCholesky factor;
  Vector rhs;
};

/**
 * `factor` must factor `precision`. The explicit sum is factored first; if
 * rounding in a badly scaled precision breaks that, the observation term is
 * folded into `factor` by rank-one updates instead, which cannot fail.
 */
inline BandedPosterior banded_posterior(const Vector& y, const ObservationProcess& proc,
                                        const Vector& mean, const BandMatrix& precision,
                                        const BandCholesky& factor) {
  require_dim(precision.dim(), proc.state_dim(), "map_banded prior");
  require_dim(factor.dim(), proc.state_dim(), "map_banded prior factor");
  require_dim(y.size(), proc.size(), "map_banded observations");
  BandedPosterior post;
  post.rhs = band_matvec(precision, mean) +
             apply_Ht(proc, y.cwiseProduct(proc.precision_values()));
  try {
    post.factor = band_cholesky(
        add_to_band_diagonal(precision, proc.indices(), proc.precision_values()));
  } catch (const NotPositiveDefinite&) {
    post.factor = factor;
    band_cholesky_add_diagonal(post.factor, proc.indices(), proc.precision_values());
  }
  return post;
}

/// Information form: solves (Lambda + H^T R^{-1} H) x = Lambda mu + H^T R^{-1} y.
inline Vector map_banded(const Vector& y, const ObservationProcess& proc,
                         const BandGaussianPrior& prior) {
  require_dim(prior.dim(), proc.state_dim(), "map_banded prior");
  require_dim(y.size(), proc.size(), "map_banded observations");
  if (proc.size() == 0) return prior.mean;
  const auto post = banded_posterior(y, proc, prior.mean, prior.precision, prior.factor);
  return band_solve(post.factor, post.rhs);
}

/// Sample mean and covariance (N - 1 normalization) plus eps I, eps = 1e-6 tr/d.
inline DenseGaussianPrior build_moment_prior(const std::vector<Vector>& samples) {
  if (samples.size() < 2) {
    throw Error(ErrorCode::InsufficientData, "moment prior needs at least two samples");
  }
  const Index d = samples.front().size();
  const auto n = static_cast<double>(samples.size());
  Vector mean = Vector::Zero(d);
  for (const auto& s : samples) {
    require_dim(s.size(), d, "moment prior sample");
    mean += s;
  }
  mean /= n;
  Matrix centered(d, static_cast<Index>(samples.size()));
  for (std::size_t k = 0; k < samples.size(); ++k) {
    centered.col(static_cast<Index>(k)) = samples[k] - mean;
  }
  Matrix cov = (centered * centered.transpose()) / (n - 1.0);
  const double eps = std::max(1e-6 * cov.trace() / static_cast<double>(d), 1e-12);
  cov.diagonal().array() += eps;
  return {std::move(mean), std::move(cov)};
}

inline DenseGaussianPrior build_moment_prior(const std::vector<Trajectory>& batch) {
  std::vector<Vector> samples;
  samples.reserve(batch.size());
  for (const auto& t : batch) samples.push_back(t.values);
  return build_moment_prior(samples);
}

/// Fourth-order Taylor truncation of exp(dt * a).
inline Matrix taylor4_exponential(const Matrix& a, double dt) {
  const Matrix h = dt * a;
  const Matrix eye = Matrix::Identity(a.rows(), a.cols());
  const Matrix h2 = h * h;
  return eye + h + h2 / 2.0 + h2 * h / 6.0 + h2 * h2 / 24.0;
}

/**
 * Joint law of x_0..x_{T-1} under x_{t+1} = A x_t + w_t, w_t ~ N(0, Q),
 * x_0 ~ N(m0, P0). Cov(x_t, x_s) = A^{t-s} Var(x_s) for s <= t.
 */
inline DenseGaussianPrior build_linear_gaussian_prior(const Matrix& transition, Index steps,
                                                      const Vector& init_mean,
                                                      const Matrix& init_cov,
                                                      const Matrix& process_noise) {
  if (steps < 1) throw Error(ErrorCode::DimensionMismatch, "prior needs steps >= 1");
  const Index phi = transition.rows();
  const Index d = phi * steps;
  Vector mean(d);
  Matrix cov = Matrix::Zero(d, d);
  std::vector<Matrix> var(static_cast<std::size_t>(steps));
  mean.segment(0, phi) = init_mean;
  var[0] = init_cov;
  for (Index t = 1; t < steps; ++t) {
    mean.segment(t * phi, phi) = transition * mean.segment((t - 1) * phi, phi);
    const Matrix& prev = var[static_cast<std::size_t>(t - 1)];
    var[static_cast<std::size_t>(t)] = transition * prev * transition.transpose() + process_noise;
  }
  for (Index s = 0; s < steps; ++s) {
    Matrix block = var[static_cast<std::size_t>(s)];
    for (Index t = s; t < steps; ++t) {
      cov.block(t * phi, s * phi, phi, phi) = block;
      cov.block(s * phi, t * phi, phi, phi) = block.transpose();
      block = transition * block;
    }
  }
  return {std::move(mean), std::move(cov)};
}

/// Gaussian trajectory prior of the small-angle pendulum (transition = Taylor-4 exponential).
inline DenseGaussianPrior build_linear_pendulum_prior(Index steps, double dt,
                                                      const Vector& init_mean,
                                                      const Matrix& init_cov,
                                                      const Matrix& process_noise,
                                                      double omega2 = 1.0) {
  Matrix generator(2, 2);
  generator << 0.0, 1.0, -omega2, 0.0;
  return build_linear_gaussian_prior(taylor4_exponential(generator, dt), steps, init_mean,
                                     init_cov, process_noise);
}

/// Pushes a physical-units trajectory prior through the per-component normalizer.
inline DenseGaussianPrior normalize_prior(const DenseGaussianPrior& prior,
                                          const Normalizer& norm, Index steps) {
  const Vector scale = norm.tiled_std(steps).cwiseInverse();
  Vector mean = (prior.mean - norm.tiled_mean(steps)).cwiseProduct(scale);
  Matrix cov = scale.asDiagonal() * prior.cov * scale.asDiagonal();
  return {std::move(mean), std::move(cov)};
}

}  // namespace incda

#endif  // INCDA_GAUSSIAN_MAP_HPP_
