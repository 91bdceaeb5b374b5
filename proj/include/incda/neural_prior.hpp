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

#ifndef INCDA_NEURAL_PRIOR_HPP_
#define INCDA_NEURAL_PRIOR_HPP_

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "incda/band_linalg.hpp"
#include "incda/dynamics.hpp"
#include "incda/gaussian_map.hpp"
#include "incda/neural.hpp"
#include "incda/observation.hpp"
#include "incda/parallel.hpp"

namespace incda {

inline double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/**
 * Conditional Gaussian prior x | z ~ N(mu(z, s), Lambda(z, s)^{-1}).
 *
 * mu = z + mu_net([z; embed(s)]). prec_net emits the d (b + 1) entries of a
 * lower band factor L in band storage order; its diagonal goes through
 * softplus + diag_floor, so Lambda = L L^T is SPD for any parameters.
 */
struct NeuralPrior {
  MLPParams mu_net;
  MLPParams prec_net;
  Index phase_dim = 0;
  Index steps = 0;
  Index half_bandwidth = 0;  // of L; Lambda has twice this
  Index embed_dim = 16;
  double diag_floor = 1e-4;
  Normalizer normalizer;

  Index dim() const noexcept { return phase_dim * steps; }
  Index input_dim() const noexcept { return dim() + embed_dim; }

  Index parameter_count() const {
    return mu_net.parameter_count() + prec_net.parameter_count();
  }

  Vector pack() const {
    Vector out(parameter_count());
    out << mu_net.pack(), prec_net.pack();
    return out;
  }

  void unpack(const Vector& theta) {
    require_dim(theta.size(), parameter_count(), "neural prior parameters");
    mu_net.unpack(theta.head(mu_net.parameter_count()));
    prec_net.unpack(theta.tail(prec_net.parameter_count()));
  }
};

struct NeuralPriorShape {
  Index phase_dim = 3;
  Index steps = 32;
  Index width = 32;
  Index depth = 4;        // number of affine layers
  Index embed_dim = 16;
  double diag_floor = 1e-4;
  double final_scale = 0.1;  // shrinks the last layer so training starts near identity
};

/// Fresh prior: mu ~ z and Lambda ~ I at initialization.
inline NeuralPrior make_neural_prior(const NeuralPriorShape& shape, std::uint64_t seed) {
  NeuralPrior p;
  p.phase_dim = shape.phase_dim;
  p.steps = shape.steps;
  p.half_bandwidth = 2 * shape.phase_dim;
  p.embed_dim = shape.embed_dim;
  p.diag_floor = shape.diag_floor;
  p.normalizer = Normalizer::identity(shape.phase_dim);
  const Index d = p.dim();
  std::vector<Index> mu_dims{p.input_dim()}, prec_dims{p.input_dim()};
  for (Index k = 0; k + 1 < shape.depth; ++k) {
    mu_dims.push_back(shape.width);
    prec_dims.push_back(shape.width);
  }
  mu_dims.push_back(d);
  prec_dims.push_back(d * (p.half_bandwidth + 1));
  std::mt19937_64 rng(seed);
  p.mu_net = make_mlp(mu_dims, rng, shape.final_scale);
  p.prec_net = make_mlp(prec_dims, rng, shape.final_scale);
  // softplus(raw) + floor = 1 on the diagonal, zero off it.
  auto& bias = p.prec_net.layers.back().bias;
  const double unit_raw = std::log(std::expm1(1.0 - p.diag_floor));
  const Index width = p.half_bandwidth + 1;
  for (Index i = 0; i < d; ++i) {
    for (Index k = 0; k < width; ++k) bias(i * width + k) = k == 0 ? unit_raw : 0.0;
  }
  return p;
}

/// Network input [z; embed(s)].
inline Vector prior_input(const NeuralPrior& prior, const Vector& z, double s) {
  require_dim(z.size(), prior.dim(), "neural prior state");
  Vector in(prior.input_dim());
  in << z, embed_temperature(s, prior.embed_dim);
  return in;
}

/// Builds the band factor from one column of raw prec_net output.
inline BandCholesky factor_from_raw(const NeuralPrior& prior, const Eigen::Ref<const Vector>& raw) {
  const Index d = prior.dim(), b = prior.half_bandwidth, width = b + 1;
  BandCholesky chol{BandMatrix(d, b)};
  Matrix& l = chol.factor.data();
  for (Index i = 0; i < d; ++i) {
    l(0, i) = softplus(raw(i * width)) + prior.diag_floor;
    for (Index k = 1; k <= std::min(b, i); ++k) l(k, i) = raw(i * width + k);
  }
  return chol;
}

inline Vector prior_mu(const NeuralPrior& prior, const Vector& z, double s) {
  return z + mlp_forward(prior.mu_net, prior_input(prior, z, s));
}

inline BandCholesky prior_precision(const NeuralPrior& prior, const Vector& z, double s) {
  return factor_from_raw(prior, mlp_forward(prior.prec_net, prior_input(prior, z, s)));
}

inline BandGaussianPrior neural_local_prior(const NeuralPrior& prior, const Vector& z, double s) {
  return BandGaussianPrior::from_factor(prior_mu(prior, z, s), prior_precision(prior, z, s));
}

/// A(z, y; theta, s): MAP of y under the neural local prior. Exactly mu when m = 0.
inline Vector neural_assimilate(const NeuralPrior& prior, const Vector& z, const Vector& y,
                                const ObservationProcess& proc, double s) {
  require_dim(proc.state_dim(), prior.dim(), "neural_assimilate process");
  if (proc.size() == 0) {
    require_dim(y.size(), 0, "neural_assimilate observations");
    return prior_mu(prior, z, s);
  }
  return map_banded(y, proc, neural_local_prior(prior, z, s));
}

/// One (z, y, H, s) query of a batched evaluation.
struct AssimilationQuery {
  const Vector* z = nullptr;
  const Vector* y = nullptr;
  const ObservationProcess* proc = nullptr;
  double s = 1.0;
};

/**
 * Batched forward pass of A(z, y; theta, s) keeping what the backward
 * pass needs. Column n of `outputs` answers query n.
 */
class AssimilationBatch {
 public:
  AssimilationBatch(const NeuralPrior& prior, std::vector<AssimilationQuery> queries,
                    bool keep_cache = true)
      : prior_(&prior), queries_(std::move(queries)) {
    const Index n = static_cast<Index>(queries_.size());
    const Index d = prior.dim();
    Matrix inputs(prior.input_dim(), n);
    bool any_obs = false;
    for (Index c = 0; c < n; ++c) {
      const auto& q = queries_[static_cast<std::size_t>(c)];
      inputs.col(c) = prior_input(prior, *q.z, q.s);
      require_dim(q.proc->state_dim(), d, "assimilation process");
      require_dim(q.y->size(), q.proc->size(), "assimilation observations");
      any_obs = any_obs || q.proc->size() > 0;
    }
    means_ = mlp_forward(prior.mu_net, inputs, keep_cache ? &mu_cache_ : nullptr);
    for (Index c = 0; c < n; ++c) means_.col(c) += *queries_[static_cast<std::size_t>(c)].z;
    outputs_ = means_;
    if (!any_obs) return;

    raw_ = mlp_forward(prior.prec_net, inputs, keep_cache ? &prec_cache_ : nullptr);
    uses_precision_ = true;
    columns_.resize(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t c) {
      const auto& q = queries_[c];
      if (q.proc->size() == 0) return;
      auto& col = columns_[c];
      col.factor = factor_from_raw(prior, raw_.col(static_cast<Index>(c)));
      col.precision = band_gram(col.factor);
      const Vector mean = means_.col(static_cast<Index>(c));
      col.posterior = banded_posterior(*q.y, *q.proc, mean, col.precision, col.factor);
      outputs_.col(static_cast<Index>(c)) = band_solve(col.posterior.factor, col.posterior.rhs);
    });
  }

  const Matrix& outputs() const noexcept { return outputs_; }
  const Matrix& means() const noexcept { return means_; }

  /**
   * theta-gradient of sum_n <outputs.col(n), grad_outputs.col(n)>, chained
   * through the banded solve (implicit differentiation) and both networks.
   */
  Vector backward(const Matrix& grad_outputs) const {
    const NeuralPrior& prior = *prior_;
    const Index n = outputs_.cols(), d = prior.dim();
    require_dim(grad_outputs.rows(), d, "grad_outputs rows");
    require_dim(grad_outputs.cols(), n, "grad_outputs cols");
    if (mu_cache_.inputs.empty()) throw Error(ErrorCode::StaleCache, "forward kept no cache");
    Matrix grad_means = grad_outputs;
    Matrix grad_raw;
    if (uses_precision_) {
      const Index b = prior.half_bandwidth, width = b + 1;
      grad_raw = Matrix::Zero(d * width, n);
      parallel_for(static_cast<std::size_t>(n), [&](std::size_t c) {
        const auto& q = queries_[c];
        if (q.proc->size() == 0) return;
        const auto& col = columns_[c];
        const Index ci = static_cast<Index>(c);
        const Vector g = grad_outputs.col(ci);
        const Vector u = band_solve(col.posterior.factor, g);
        const Vector gap = means_.col(ci) - outputs_.col(ci);
        const BandMatrix grad_precision =
            stored_outer_gradient(u, gap, col.precision.half_bandwidth());
        grad_means.col(ci) = band_matvec(col.precision, u);
        const BandMatrix grad_factor = band_gram_adjoint(col.factor, grad_precision);
        for (Index i = 0; i < d; ++i) {
          grad_raw(i * width, ci) = grad_factor.data()(0, i) * sigmoid(raw_(i * width, ci));
          for (Index k = 1; k <= std::min(b, i); ++k) {
            grad_raw(i * width + k, ci) = grad_factor.data()(k, i);
          }
        }
      });
    }
    Vector grad(prior.parameter_count());
    const auto mu_grads = mlp_backward(prior.mu_net, mu_cache_, grad_means, false);
    grad.head(prior.mu_net.parameter_count()) = mu_grads.params.pack();
    if (uses_precision_) {
      const auto prec_grads = mlp_backward(prior.prec_net, prec_cache_, grad_raw, false);
      grad.tail(prior.prec_net.parameter_count()) = prec_grads.params.pack();
    } else {
      grad.tail(prior.prec_net.parameter_count()).setZero();
    }
    return grad;
  }

 private:
  struct Column {
    BandCholesky factor;
    BandMatrix precision;
    BandedPosterior posterior;
  };

  const NeuralPrior* prior_;
  std::vector<AssimilationQuery> queries_;
  MLPCache mu_cache_, prec_cache_;
  Matrix means_, raw_, outputs_;
  std::vector<Column> columns_;
  bool uses_precision_ = false;
};

/// Exact theta-gradient of <A(z, y; theta, s), grad_x>.
inline Vector assimilate_vjp(const NeuralPrior& prior, const Vector& z, const Vector& y,
                             const ObservationProcess& proc, double s, const Vector& grad_x) {
  require_dim(grad_x.size(), prior.dim(), "assimilate_vjp grad_x");
  AssimilationBatch batch(prior, {AssimilationQuery{&z, &y, &proc, s}});
  return batch.backward(grad_x);
}

}  // namespace incda

#endif  // INCDA_NEURAL_PRIOR_HPP_
