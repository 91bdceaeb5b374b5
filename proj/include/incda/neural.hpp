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

#ifndef INCDA_NEURAL_HPP_
#define INCDA_NEURAL_HPP_

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "incda/common.hpp"

namespace incda {

enum class Activation { Gelu, Identity };

inline std::string to_string(Activation a) {
  return a == Activation::Gelu ? "gelu" : "identity";
}

inline Activation activation_from_string(const std::string& name) {
  if (name == "gelu") return Activation::Gelu;
  if (name == "identity") return Activation::Identity;
  throw Error(ErrorCode::InvalidConfig, "unknown activation " + name);
}

// Exact GELU, x * Phi(x).
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

inline double gelu_derivative(double x) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)) +
         x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

struct DenseLayer {
  Matrix weights;  // out x in
  Vector bias;
  Activation activation = Activation::Identity;
};

/// Fully-connected network; all layers but the last use GELU.
struct MLPParams {
  std::vector<DenseLayer> layers;
  std::uint64_t revision = 0;  // bumped by every mutation through this API

  Index input_dim() const { return layers.front().weights.cols(); }
  Index output_dim() const { return layers.back().weights.rows(); }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }

  /// Weights (column-major) then bias, layer by layer.
  Vector pack() const {
    Vector out(parameter_count());
    Index pos = 0;
    for (const auto& l : layers) {
      out.segment(pos, l.weights.size()) = l.weights.reshaped();
      pos += l.weights.size();
      out.segment(pos, l.bias.size()) = l.bias;
      pos += l.bias.size();
    }
    return out;
  }

  void unpack(const Eigen::Ref<const Vector>& flat) {
    require_dim(flat.size(), parameter_count(), "mlp parameters");
    Index pos = 0;
    for (auto& l : layers) {
      l.weights.reshaped() = flat.segment(pos, l.weights.size());
      pos += l.weights.size();
      l.bias = flat.segment(pos, l.bias.size());
      pos += l.bias.size();
    }
    ++revision;
  }

  std::vector<Index> dims() const {
    std::vector<Index> out{input_dim()};
    for (const auto& l : layers) out.push_back(l.weights.rows());
    return out;
  }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; the last layer is scaled by `final_scale`.
inline MLPParams make_mlp(const std::vector<Index>& dims, std::mt19937_64& rng,
                          double final_scale = 1.0) {
  if (dims.size() < 2) throw Error(ErrorCode::ShapeMismatch, "mlp needs at least one layer");
  MLPParams net;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    DenseLayer layer;
    const Index in = dims[k], out = dims[k + 1];
    const bool last = k + 2 == dims.size();
    const double bound = (last ? final_scale : 1.0) / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> unif(-bound, bound);
    layer.weights.resize(out, in);
    for (Index j = 0; j < in; ++j) {
      for (Index i = 0; i < out; ++i) layer.weights(i, j) = unif(rng);
    }
    layer.bias.resize(out);
    for (Index i = 0; i < out; ++i) layer.bias(i) = unif(rng);
    layer.activation = last ? Activation::Identity : Activation::Gelu;
    net.layers.push_back(std::move(layer));
  }
  return net;
}

/// Activations kept by the forward pass; columns are batch entries.
struct MLPCache {
  std::vector<Matrix> inputs;        // input to layer k
  std::vector<Matrix> preactivations;
  std::uint64_t revision = 0;
  const MLPParams* owner = nullptr;
};

inline Matrix mlp_forward(const MLPParams& params, const Matrix& input, MLPCache* cache = nullptr) {
  require_dim(input.rows(), params.input_dim(), "mlp input");
  if (cache != nullptr) {
    cache->inputs.clear();
    cache->preactivations.clear();
    cache->revision = params.revision;
    cache->owner = &params;
  }
  Matrix a = input;
  for (const auto& layer : params.layers) {
    Matrix z = layer.weights * a;
    z.colwise() += layer.bias;
    Matrix next = layer.activation == Activation::Gelu ? z.unaryExpr(&gelu) : z;
    if (cache != nullptr) {
      cache->inputs.push_back(std::move(a));
      cache->preactivations.push_back(std::move(z));
    }
    a = std::move(next);
  }
  return a;
}

inline Vector mlp_forward(const MLPParams& params, const Vector& input) {
  return mlp_forward(params, Matrix(input), nullptr).col(0);
}

struct MLPGradients {
  MLPParams params;  // same shapes as the network, holding gradients
  Matrix input;      // gradient w.r.t. the input batch
};

/// Gradients of sum over the batch of <output, grad_output>.
inline MLPGradients mlp_backward(const MLPParams& params, const MLPCache& cache,
                                 const Matrix& grad_output, bool want_input_grad = true) {
  if (cache.owner != &params || cache.revision != params.revision ||
      cache.inputs.size() != params.layers.size()) {
    throw Error(ErrorCode::StaleCache, "cache does not belong to these parameters");
  }
  require_dim(grad_output.rows(), params.output_dim(), "mlp grad_output rows");
  require_dim(grad_output.cols(), cache.inputs.front().cols(), "mlp grad_output cols");
  MLPGradients out;
  out.params.layers.resize(params.layers.size());
  Matrix delta = grad_output;
  for (std::size_t k = params.layers.size(); k-- > 0;) {
    const auto& layer = params.layers[k];
    if (layer.activation == Activation::Gelu) {
      delta.array() *= cache.preactivations[k].unaryExpr(&gelu_derivative).array();
    }
    auto& g = out.params.layers[k];
    g.activation = layer.activation;
    g.weights.noalias() = delta * cache.inputs[k].transpose();
    g.bias = delta.rowwise().sum();
    if (k > 0 || want_input_grad) delta = layer.weights.transpose() * delta;
  }
  if (want_input_grad) out.input = std::move(delta);
  return out;
}

/// Interleaved (sin, cos) of s * w_j with w_j geometric over [1, 1000].
inline Vector embed_temperature(double s, Index dim) {
  if (dim % 2 != 0 || dim <= 0) throw Error(ErrorCode::OddDim, "embedding dim must be even");
  const Index half = dim / 2;
  Vector out(dim);
  for (Index j = 0; j < half; ++j) {
    const double exponent = half == 1 ? 0.0 : static_cast<double>(j) / static_cast<double>(half - 1);
    const double freq = std::pow(1000.0, exponent);
    out(2 * j) = std::sin(s * freq);
    out(2 * j + 1) = std::cos(s * freq);
  }
  return out;
}

struct AdamState {
  std::int64_t step = 0;
  Vector first_moment;
  Vector second_moment;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_size(Index n, double lr = 1e-3) {
    AdamState s;
    s.first_moment = Vector::Zero(n);
    s.second_moment = Vector::Zero(n);
    s.lr = lr;
    return s;
  }
};

/// One bias-corrected Adam step, in place.
inline void adam_update(AdamState& state, Eigen::Ref<Vector> params, const Vector& grads) {
  if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "adam state, params and grads must share a shape");
  }
  ++state.step;
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
  state.second_moment =
      state.beta2 * state.second_moment + (1.0 - state.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params.array() -= state.lr * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.eps);
}

}  // namespace incda

#endif  // INCDA_NEURAL_HPP_
