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
#include <chrono>
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "incda/gaussian_map.hpp"
#include "test_util.hpp"

namespace incda {
namespace {

using testing::random_vector;

ObservationProcess random_mask(Index d, std::mt19937_64& rng, double noise = 0.1) {
  std::bernoulli_distribution keep(0.3);
  std::vector<Index> idx;
  for (Index i = 0; i < d; ++i) {
    if (keep(rng)) idx.push_back(i);
  }
  if (idx.empty()) idx.push_back(0);
  return {d, idx, noise};
}

DenseGaussianPrior random_dense_prior(Index d, std::mt19937_64& rng) {
  const Matrix a = Matrix::NullaryExpr(d, d, [&]() { return std::normal_distribution<double>()(rng); });
  return {random_vector(d, rng), a * a.transpose() / static_cast<double>(d) + 0.1 * Matrix::Identity(d, d)};
}

TEST(MapDense, ZeroInnovationReturnsMean) {
  std::mt19937_64 rng(1);
  const auto prior = random_dense_prior(12, rng);
  const auto proc = random_mask(12, rng);
  EXPECT_LT((map_dense(apply_H(proc, prior.mean), proc, prior) - prior.mean).norm(), 1e-12);
}

TEST(MapDense, ScalarKalmanArithmetic) {
  const DenseGaussianPrior prior(Vector::Zero(1), Matrix::Identity(1, 1));
  const auto proc = ObservationProcess::full(1, 1.0);
  Vector y(1);
  y << 2.0;
  EXPECT_NEAR(map_dense(y, proc, prior)(0), 1.0, 1e-15);
}

TEST(MapDense, NoiselessLimitInterpolatesData) {
  std::mt19937_64 rng(2);
  const auto prior = random_dense_prior(10, rng);
  const auto proc = ObservationProcess::full(10, 1e-6);  // R = 1e-12 I
  const Vector y = random_vector(10, rng);
  EXPECT_LT((map_dense(y, proc, prior) - y).norm(), 1e-5);
}

TEST(MapDense, SolutionIsStationaryForQuadratic) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Index d = 8 + 5 * trial;
    const auto prior = random_dense_prior(d, rng);
    const auto proc = random_mask(d, rng, 0.2);
    const Vector y = random_vector(proc.size(), rng);
    const Vector x = map_dense(y, proc, prior);
    const Matrix h = proc.dense();
    const Vector grad = prior.cov.llt().solve(x - prior.mean) +
                        h.transpose() * (h * x - y) / (0.2 * 0.2);
    EXPECT_LT(grad.norm(), 1e-6 * (1.0 + x.norm()));
  }
}

TEST(MapDense, SingularInnovationIsReported) {
  const DenseGaussianPrior prior(Vector::Zero(3), Matrix::Zero(3, 3));
  const ObservationProcess proc(3, {1}, 0.0);
  try {
    map_dense(Vector::Ones(1), proc, prior);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularInnovation);
  }
}

TEST(MapBanded, ZeroInnovationAndNoDataReturnMean) {
  std::mt19937_64 rng(4);
  const auto prior = BandGaussianPrior::from_precision(random_vector(20, rng),
                                                       testing::random_spd_band(20, 3, rng));
  const auto proc = random_mask(20, rng);
  EXPECT_LT((map_banded(apply_H(proc, prior.mean), proc, prior) - prior.mean).norm(), 1e-12);
  const auto none = ObservationProcess::empty(20, 0.1);
  EXPECT_EQ(map_banded(Vector(0), none, prior), prior.mean);
}

TEST(MapBanded, BadlyScaledFactorStillSolves) {
  std::mt19937_64 rng(12);
  const Index d = 40;
  BandCholesky chol{BandMatrix(d, 1)};
  for (Index i = 0; i < d; ++i) {
    chol.factor.data()(0, i) = 1.0;
    if (i > 0) chol.factor.data()(1, i) = 0.3;
  }
  // First pivot of the explicit sum is 1e-8 against a 1e10 diagonal.
  chol.factor.data()(0, 0) = 1e-4;
  chol.factor.data()(1, 1) = 1e5;
  EXPECT_THROW(band_cholesky(band_gram(chol)), NotPositiveDefinite);
  const auto prior = BandGaussianPrior::from_factor(random_vector(d, rng), chol);
  const ObservationProcess proc(d, std::vector<Index>{13, 39}, 0.05);
  const Vector y = random_vector(2, rng);
  const Vector x = map_banded(y, proc, prior);
  ASSERT_TRUE(x.allFinite());
  // Stationarity checked through the unfactored pieces: L L^T (x - mu) + H^T R^{-1} (H x - y) = 0.
  const Matrix l = chol.to_dense_lower();
  const Vector prior_term = l * (l.transpose() * (x - prior.mean));
  Vector obs_term = Vector::Zero(d);
  obs_term(13) = (x(13) - y(0)) / 0.0025;
  obs_term(39) = (x(39) - y(1)) / 0.0025;
  const double scale = l.norm() * (l.transpose() * (x - prior.mean)).norm() + obs_term.norm();
  EXPECT_LT((prior_term + obs_term).norm(), 1e-8 * scale);
}

TEST(MapBanded, AgreesWithDenseGainForm) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    const Index d = 4 + static_cast<Index>(rng() % 61);
    const Index b = std::min<Index>(1 + trial % 6, d - 1);
    const auto prior = BandGaussianPrior::from_precision(random_vector(d, rng),
                                                         testing::random_spd_band(d, b, rng));
    const auto proc = random_mask(d, rng, 0.3);
    const Vector y = random_vector(proc.size(), rng);
    const Vector banded = map_banded(y, proc, prior);
    const Vector dense = map_dense(y, proc, prior.densify());
    EXPECT_LT(testing::relative_error(banded, dense), 1e-8);
  }
}

TEST(MapBanded, NoiselessFullObservationInterpolates) {
  std::mt19937_64 rng(6);
  const auto prior = BandGaussianPrior::from_precision(random_vector(16, rng),
                                                       testing::random_spd_band(16, 2, rng));
  const Vector y = random_vector(16, rng);
  EXPECT_LT((map_banded(y, ObservationProcess::full(16, 1e-6), prior) - y).norm(), 1e-5);
}

// Runtime grows linearly in d at fixed bandwidth and observation density.
TEST(MapBanded, CostScalesLinearlyInDimension) {
  std::mt19937_64 rng(7);
  const std::vector<Index> dims{96, 192, 384, 768};
  std::vector<double> times;
  for (Index d : dims) {
    const auto prior = BandGaussianPrior::from_precision(random_vector(d, rng),
                                                         testing::random_spd_band(d, 12, rng));
    std::vector<Index> idx;
    for (Index i = 0; i < d; i += 12) idx.push_back(i);
    const ObservationProcess proc(d, idx, 0.05);
    const Vector y = random_vector(proc.size(), rng);
    double best = 1e300;
    for (int rep = 0; rep < 7; ++rep) {
      const auto start = std::chrono::steady_clock::now();
      double sink = 0.0;
      for (int k = 0; k < 50; ++k) sink += map_banded(y, proc, prior)(0);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      best = std::min(best, secs);
      EXPECT_TRUE(std::isfinite(sink));
    }
    times.push_back(best);
  }
  // Least-squares fit t = c d through the origin; each point within x1.5 of it.
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < dims.size(); ++k) {
    num += times[k] * static_cast<double>(dims[k]);
    den += static_cast<double>(dims[k] * dims[k]);
  }
  const double slope = num / den;
  for (std::size_t k = 0; k < dims.size(); ++k) {
    const double ratio = times[k] / (slope * static_cast<double>(dims[k]));
    EXPECT_GT(ratio, 1.0 / 1.5) << "d = " << dims[k];
    EXPECT_LT(ratio, 1.5) << "d = " << dims[k];
  }
}

TEST(MomentPrior, IdenticalSamplesGiveRegularizedZeroCovariance) {
  std::mt19937_64 rng(8);
  const Vector x = random_vector(5, rng);
  const auto prior = build_moment_prior(std::vector<Vector>{x, x, x});
  EXPECT_LT((prior.mean - x).norm(), 1e-15);
  const double eps = prior.cov(0, 0);
  EXPECT_GT(eps, 0.0);
  EXPECT_LT((prior.cov - eps * Matrix::Identity(5, 5)).norm(), 1e-15);
}

TEST(MomentPrior, SymmetricPairHasZeroMean) {
  std::mt19937_64 rng(9);
  const Vector x = random_vector(5, rng);
  const auto prior = build_moment_prior(std::vector<Vector>{x, -x});
  EXPECT_LT(prior.mean.norm(), 1e-15);
}

TEST(MomentPrior, RejectsSingleSample) {
  EXPECT_THROW(build_moment_prior(std::vector<Vector>{Vector::Ones(3)}), Error);
}

TEST(MomentPrior, RecoversKnownGaussian) {
  std::mt19937_64 rng(10);
  Matrix chol(3, 3);
  chol << 1.0, 0.0, 0.0, 0.5, 0.8, 0.0, -0.3, 0.2, 0.6;
  const Matrix cov = chol * chol.transpose();
  Vector mean(3);
  mean << 1.0, -2.0, 0.5;
  const int n = 10000;
  std::vector<Vector> samples;
  for (int k = 0; k < n; ++k) samples.push_back(mean + chol * testing::gaussian_vector(3, rng));
  const auto prior = build_moment_prior(samples);
  for (Index i = 0; i < 3; ++i) {
    EXPECT_LT(std::abs(prior.mean(i) - mean(i)), 3.0 * std::sqrt(cov(i, i) / n));
    for (Index j = 0; j < 3; ++j) {
      const double se = std::sqrt((cov(i, i) * cov(j, j) + cov(i, j) * cov(i, j)) / n);
      EXPECT_LT(std::abs(prior.cov(i, j) - cov(i, j)), 3.0 * se + 1e-5) << i << "," << j;
    }
  }
}

TEST(LinearPendulumPrior, SingleStepIsInitialLaw) {
  Vector m0(2);
  m0 << 0.3, -0.1;
  Matrix p0(2, 2);
  p0 << 0.5, 0.1, 0.1, 0.2;
  const auto prior = build_linear_pendulum_prior(1, 0.1, m0, p0, 0.01 * Matrix::Identity(2, 2));
  EXPECT_EQ(prior.mean, m0);
  EXPECT_LT((prior.cov - p0).norm(), 1e-15);
}

TEST(LinearPendulumPrior, NoiselessIsDeterministicPropagation) {
  Vector m0(2);
  m0 << 0.3, -0.1;
  const auto prior = build_linear_pendulum_prior(6, 0.1, m0, Matrix::Zero(2, 2), Matrix::Zero(2, 2));
  EXPECT_EQ(prior.cov.norm(), 0.0);
  Matrix gen(2, 2);
  gen << 0, 1, -1, 0;
  const Matrix a = taylor4_exponential(gen, 0.1);
  Vector u = m0;
  for (Index t = 0; t < 6; ++t) {
    EXPECT_LT((prior.mean.segment(2 * t, 2) - u).norm(), 1e-14);
    u = a * u;
  }
}

TEST(LinearPendulumPrior, TransitionMatchesRk4OnLinearModel) {
  Matrix gen(2, 2);
  gen << 0, 1, -1, 0;
  const auto model = linearized_pendulum();
  Vector u(2);
  u << 0.4, 0.2;
  EXPECT_LT((taylor4_exponential(gen, 0.1) * u - rk4_step(model, u, 0.1)).norm(), 1e-15);
}

TEST(LinearPendulumPrior, MatchesMonteCarloRollouts) {
  const Index steps = 5;
  const double dt = 0.1;
  Vector m0(2);
  m0 << 0.2, -0.3;
  Matrix p0(2, 2);
  p0 << 0.4, 0.05, 0.05, 0.3;
  const Matrix q = 0.02 * Matrix::Identity(2, 2);
  const auto prior = build_linear_pendulum_prior(steps, dt, m0, p0, q);

  Matrix gen(2, 2);
  gen << 0, 1, -1, 0;
  const Matrix a = taylor4_exponential(gen, dt);
  const Matrix p0_chol = p0.llt().matrixL();
  const Matrix q_chol = q.llt().matrixL();
  std::mt19937_64 rng(11);
  const int n = 100000;
  const Index d = 2 * steps;
  Vector sum = Vector::Zero(d);
  Matrix outer = Matrix::Zero(d, d);
  Vector x(d);
  for (int k = 0; k < n; ++k) {
    x.segment(0, 2) = m0 + p0_chol * testing::gaussian_vector(2, rng);
    for (Index t = 1; t < steps; ++t) {
      x.segment(2 * t, 2) = a * x.segment(2 * (t - 1), 2) + q_chol * testing::gaussian_vector(2, rng);
    }
    sum += x;
    outer.noalias() += x * x.transpose();
  }
  const Vector mean = sum / n;
  const Matrix cov = outer / n - mean * mean.transpose();
  for (Index i = 0; i < d; ++i) {
    EXPECT_LT(std::abs(mean(i) - prior.mean(i)), 3.0 * std::sqrt(prior.cov(i, i) / n) + 1e-12);
    for (Index j = 0; j < d; ++j) {
      const double se = std::sqrt((prior.cov(i, i) * prior.cov(j, j) + prior.cov(i, j) * prior.cov(i, j)) / n);
      EXPECT_LT(std::abs(cov(i, j) - prior.cov(i, j)), 3.5 * se) << i << "," << j;
    }
  }
}

TEST(DenseGaussianPrior, LiftsSlightlyIndefiniteCovariance) {
  Matrix c = Matrix::Identity(3, 3);
  c(2, 2) = -1e-3;
  const DenseGaussianPrior p(Vector::Zero(3), c);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(p.cov);
  EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-12);
}

TEST(NormalizePrior, AffineChangeOfVariables) {
  std::mt19937_64 rng(12);
  const auto prior = random_dense_prior(6, rng);
  Normalizer norm{Vector::Constant(2, 1.5), Vector::Constant(2, 2.0)};
  const auto np = normalize_prior(prior, norm, 3);
  EXPECT_LT((np.mean - (prior.mean.array() - 1.5).matrix() / 2.0).norm(), 1e-14);
  EXPECT_LT((np.cov - prior.cov / 4.0).norm(), 1e-14);
}

}  // namespace
}  // namespace incda
