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

#ifndef INCDA_DYNAMICS_HPP_
#define INCDA_DYNAMICS_HPP_

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "incda/common.hpp"

namespace incda {

/// Autonomous ODE u' = f(u) with its analytic Jacobian.
struct DynamicalModel {
  std::string name;
  Index phase_dim = 0;
  std::map<std::string, double> params;
  std::function<Vector(const Vector&)> drift;
  std::function<Matrix(const Vector&)> jacobian;
};

inline Vector lorenz_drift(const Vector& u, double sigma, double rho, double beta) {
  Vector out(3);
  out << sigma * (u(1) - u(0)), rho * u(0) - u(1) - u(0) * u(2), u(0) * u(1) - beta * u(2);
  return out;
}

inline Matrix lorenz_jacobian(const Vector& u, double sigma, double rho, double beta) {
  Matrix j(3, 3);
  j << -sigma, sigma, 0.0,
       rho - u(2), -1.0, -u(0),
       u(1), u(0), -beta;
  return j;
}

inline Vector pendulum_drift(const Vector& u, double omega2) {
  Vector out(2);
  out << u(1), -omega2 * std::sin(u(0));
  return out;
}

inline Matrix pendulum_jacobian(const Vector& u, double omega2) {
  Matrix j(2, 2);
  j << 0.0, 1.0, -omega2 * std::cos(u(0)), 0.0;
  return j;
}

inline DynamicalModel lorenz63(double sigma = 10.0, double rho = 28.0, double beta = 8.0 / 3.0) {
  DynamicalModel m;
  m.name = "lorenz63";
  m.phase_dim = 3;
  m.params = {{"sigma", sigma}, {"rho", rho}, {"beta", beta}};
  m.drift = [=](const Vector& u) { return lorenz_drift(u, sigma, rho, beta); };
  m.jacobian = [=](const Vector& u) { return lorenz_jacobian(u, sigma, rho, beta); };
  return m;
}

inline DynamicalModel pendulum(double omega2 = 1.0) {
  DynamicalModel m;
  m.name = "pendulum";
  m.phase_dim = 2;
  m.params = {{"omega2", omega2}};
  m.drift = [=](const Vector& u) { return pendulum_drift(u, omega2); };
  m.jacobian = [=](const Vector& u) { return pendulum_jacobian(u, omega2); };
  return m;
}

/// u' = A u.
inline DynamicalModel linear_model(const Matrix& a, std::string name = "linear") {
  DynamicalModel m;
  m.name = std::move(name);
  m.phase_dim = a.rows();
  m.drift = [a](const Vector& u) -> Vector { return a * u; };
  m.jacobian = [a](const Vector&) -> Matrix { return a; };
  return m;
}

/// Small-angle pendulum, u' = [[0, 1], [-omega2, 0]] u.
inline DynamicalModel linearized_pendulum(double omega2 = 1.0) {
  Matrix a(2, 2);
  a << 0.0, 1.0, -omega2, 0.0;
  auto m = linear_model(a, "linearized_pendulum");
  m.params = {{"omega2", omega2}};
  return m;
}

inline Matrix model_jacobian(const DynamicalModel& model, const Vector& u) {
  require_dim(u.size(), model.phase_dim, "model_jacobian state");
  return model.jacobian(u);
}

/// One classical fourth-order Runge-Kutta step.
inline Vector rk4_step(const DynamicalModel& model, const Vector& u, double dt) {
  const Vector k1 = model.drift(u);
  const Vector k2 = model.drift(u + 0.5 * dt * k1);
  const Vector k3 = model.drift(u + 0.5 * dt * k2);
  const Vector k4 = model.drift(u + dt * k3);
  return u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

struct StepLinearization {
  Vector next;
  Matrix tangent;  // d next / d u
};

/// RK4 step together with its tangent-linear map.
inline StepLinearization rk4_step_linearized(const DynamicalModel& model, const Vector& u,
                                             double dt) {
  const Index n = u.size();
  const Matrix eye = Matrix::Identity(n, n);
  const Vector k1 = model.drift(u);
  const Matrix j1 = model.jacobian(u);
  const Vector u2 = u + 0.5 * dt * k1;
  const Vector k2 = model.drift(u2);
  const Matrix j2 = model.jacobian(u2) * (eye + 0.5 * dt * j1);
  const Vector u3 = u + 0.5 * dt * k2;
  const Vector k3 = model.drift(u3);
  const Matrix j3 = model.jacobian(u3) * (eye + 0.5 * dt * j2);
  const Vector u4 = u + dt * k3;
  const Vector k4 = model.drift(u4);
  const Matrix j4 = model.jacobian(u4) * (eye + dt * j3);
  return {u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4),
          eye + (dt / 6.0) * (j1 + 2.0 * j2 + 2.0 * j3 + j4)};
}

inline Vector integrate_step(const DynamicalModel& model, const Vector& u, double dt,
                             const Vector& noise) {
  require_dim(u.size(), model.phase_dim, "integrate_step state");
  require_dim(noise.size(), model.phase_dim, "integrate_step noise");
  return rk4_step(model, u, dt) + noise;
}

/// Flat spatio-temporal state; step t occupies [t * phase_dim, (t + 1) * phase_dim).
struct Trajectory {
  Index phase_dim = 0;
  Index steps = 0;
  Vector values;

  Trajectory() = default;
  Trajectory(Index phase_dim_, Index steps_)
      : phase_dim(phase_dim_), steps(steps_), values(Vector::Zero(phase_dim_ * steps_)) {}
  Trajectory(Index phase_dim_, Index steps_, Vector values_)
      : phase_dim(phase_dim_), steps(steps_), values(std::move(values_)) {
    require_dim(values.size(), phase_dim * steps, "trajectory values");
  }

  Index dim() const noexcept { return phase_dim * steps; }
  auto state(Index t) { return values.segment(t * phase_dim, phase_dim); }
  auto state(Index t) const { return values.segment(t * phase_dim, phase_dim); }

  /// Row t holds the state at step t.
  Matrix unflatten() const {
    Matrix out(steps, phase_dim);
    for (Index t = 0; t < steps; ++t) out.row(t) = state(t).transpose();
    return out;
  }

  static Trajectory flatten(const Matrix& rows) {
    Trajectory out(rows.cols(), rows.rows());
    for (Index t = 0; t < out.steps; ++t) out.state(t) = rows.row(t).transpose();
    return out;
  }
};

/**
 * Fixed-step stochastic simulation: state t+1 is one RK4 step from state t
 * plus N(0, noise_std^2 I) noise. Bit-identical for identical arguments.
 */
inline Trajectory simulate(const DynamicalModel& model, const Vector& u0, Index steps, double dt,
                           double noise_std, std::uint64_t seed) {
  require_dim(u0.size(), model.phase_dim, "simulate initial state");
  if (steps < 1) throw Error(ErrorCode::DimensionMismatch, "simulate needs steps >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Trajectory out(model.phase_dim, steps);
  out.state(0) = u0;
  Vector noise(model.phase_dim);
  for (Index t = 1; t < steps; ++t) {
    for (Index c = 0; c < model.phase_dim; ++c) noise(c) = noise_std * normal(rng);
    out.state(t) = integrate_step(model, out.state(t - 1), dt, noise);
  }
  return out;
}

/// Draws a Lorenz initial state on the attractor by a noise-free burn-in.
inline Vector lorenz_initial_condition(const DynamicalModel& model, double dt, Index burn_in,
                                       std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Vector u(3);
  for (Index c = 0; c < 3; ++c) u(c) = unit(rng);
  for (Index t = 0; t < burn_in; ++t) u = rk4_step(model, u, dt);
  return u;
}

/// Uniform angle in [-max_angle, max_angle], angular velocity in [-max_velocity, max_velocity].
inline Vector pendulum_initial_condition(double max_velocity, std::mt19937_64& rng,
                                         double max_angle = std::numbers::pi) {
  std::uniform_real_distribution<double> angle(-max_angle, max_angle);
  std::uniform_real_distribution<double> velocity(-max_velocity, max_velocity);
  Vector u(2);
  u(0) = angle(rng);
  u(1) = velocity(rng);
  return u;
}

/// Per-component affine standardization.
struct Normalizer {
  Vector mean;
  Vector std;

  static Normalizer identity(Index phase_dim) {
    return {Vector::Zero(phase_dim), Vector::Ones(phase_dim)};
  }

  /// Fits per-component mean and (population) std over all steps of all trajectories.
  static Normalizer fit(const std::vector<Trajectory>& batch) {
    if (batch.empty()) throw Error(ErrorCode::InsufficientData, "normalizer needs data");
    const Index phi = batch.front().phase_dim;
    Vector sum = Vector::Zero(phi);
    double count = 0.0;
    for (const auto& traj : batch) {
      for (Index t = 0; t < traj.steps; ++t) sum += traj.state(t);
      count += static_cast<double>(traj.steps);
    }
    const Vector mean = sum / count;
    Vector sq = Vector::Zero(phi);
    for (const auto& traj : batch) {
      for (Index t = 0; t < traj.steps; ++t) sq += (traj.state(t) - mean).cwiseAbs2();
    }
    Normalizer out{mean, (sq / count).cwiseSqrt()};
    for (Index c = 0; c < phi; ++c) {
      if (!(out.std(c) > 0.0)) out.std(c) = 1.0;
    }
    return out;
  }

  Index phase_dim() const noexcept { return mean.size(); }

  Vector normalize_state(const Vector& u) const { return (u - mean).cwiseQuotient(std); }
  Vector denormalize_state(const Vector& u) const { return mean + std.cwiseProduct(u); }

  Trajectory normalize(const Trajectory& traj) const {
    Trajectory out(traj.phase_dim, traj.steps);
    for (Index t = 0; t < traj.steps; ++t) out.state(t) = normalize_state(traj.state(t));
    return out;
  }

  Trajectory denormalize(const Trajectory& traj) const {
    Trajectory out(traj.phase_dim, traj.steps);
    for (Index t = 0; t < traj.steps; ++t) out.state(t) = denormalize_state(traj.state(t));
    return out;
  }

  /// Flat per-slot scale for a trajectory of `steps` steps.
  Vector tiled_std(Index steps) const { return std.replicate(steps, 1); }
  Vector tiled_mean(Index steps) const { return mean.replicate(steps, 1); }
};

/// The same ODE written in normalized coordinates v = (u - mean) / std.
inline DynamicalModel normalized_model(const DynamicalModel& model, const Normalizer& norm) {
  DynamicalModel m = model;
  m.name = model.name;
  const Vector mean = norm.mean, scale = norm.std;
  auto drift = model.drift;
  auto jac = model.jacobian;
  m.drift = [=](const Vector& v) -> Vector {
    return drift(mean + scale.cwiseProduct(v)).cwiseQuotient(scale);
  };
  m.jacobian = [=](const Vector& v) -> Matrix {
    return scale.cwiseInverse().asDiagonal() * jac(mean + scale.cwiseProduct(v)) *
           scale.asDiagonal();
  };
  return m;
}

}  // namespace incda

#endif  // INCDA_DYNAMICS_HPP_
