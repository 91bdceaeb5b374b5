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

// Experiment orchestration behind the `incda` CLI. A run directory holds
//
//   data/         trajectories, observations, first guesses, first-guess prior
//   checkpoints/  trained priors and resumable optimizer states
//   logs/         training logs
//   evaluation/   per-sample errors, method table, traces, dumps, timing
//   report/       aggregated summary and per-figure tables
//
// All states are stored in physical units; everything the estimators see
// (truths, observations, first guesses, reconstructions) is in coordinates
// normalized by the training-split statistics.

#ifndef INCDA_HARNESS_HPP_
#define INCDA_HARNESS_HPP_

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "incda/fourdvar.hpp"
#include "incda/gaussian_map.hpp"
#include "incda/io.hpp"
#include "incda/neural_prior.hpp"
#include "incda/observation.hpp"
#include "incda/parallel.hpp"
#include "incda/sampler.hpp"
#include "incda/training.hpp"

namespace incda::harness {

using io::Json;
namespace fs = std::filesystem;

enum class System { Pendulum, Lorenz63 };

struct ObservationSettings {
  std::vector<Index> components;
  double fraction = 0.25;
  double noise_std = 0.05;  // normalized units
  bool keep_endpoints = true;
};

struct Geometry {
  std::string name;
  ObservationSettings obs;
};

struct ExperimentConfig {
  System system = System::Lorenz63;
  std::uint64_t seed = 1;
  std::string output_dir = "runs/lorenz63";

  // dynamics
  double sigma = 10.0, rho = 28.0, beta = 8.0 / 3.0;
  double omega2 = 1.0;

  // simulation
  Index steps = 32;
  double dt = 0.025;
  double process_noise_std = 0.15811388300841897;  // sqrt(dt), physical units
  Index burn_in = 1000;
  double init_angle_max = std::numbers::pi;  // pendulum
  double init_velocity_max = 1.5;             // pendulum

  ObservationSettings observation{{0}, 0.09375, 0.05, true};
  Index train_size = 4096;
  Index test_size = 512;

  // first guess: "moment" (empirical trajectory moments) or "linear" (pendulum only)
  std::string first_guess = "moment";
  double first_guess_process_noise = 1e-2;  // physical variance per step, linear prior

  // 4D-Var and the hybrid refinement
  std::vector<double> fourdvar_process_noise{0.025, 0.025, 0.025};  // physical variances
  std::string fourdvar_background = "empirical";  // or "initial-law" (pendulum)
  int fourdvar_max_iters = 50;
  double fourdvar_rel_tol = 1e-8;
  double hybrid_threshold = 0.05;
  int hybrid_max_iters = 100;
  Index hybrid_samples = 128;

  // sampler
  int schedule_levels = 5;
  bool include_unit_level = true;
  bool one_shot = false;  // single level s = 1: train and predict with one application
  UpdateRule update_rule = UpdateRule::ColdDiffusion;

  NeuralPriorShape network;
  TrainConfig training;
  int checkpoint_every = 25;
  bool train_unconditional = true;

  int timing_repeats = 5;
  Index dump_samples = 4;
  std::vector<Geometry> versatility;

  Index phase_dim() const { return system == System::Lorenz63 ? 3 : 2; }
  Index state_dim() const { return phase_dim() * steps; }

  DynamicalModel model() const {
    return system == System::Lorenz63 ? lorenz63(sigma, rho, beta) : pendulum(omega2);
  }

  TemperatureSchedule schedule() const {
    return one_shot ? TemperatureSchedule::one_shot()
                    : TemperatureSchedule::regular(schedule_levels, include_unit_level);
  }
};

inline std::string to_string(System s) { return s == System::Lorenz63 ? "lorenz63" : "pendulum"; }

// ---------------------------------------------------------------- config parsing

namespace detail {

[[noreturn]] inline void invalid(const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); }

/// Reads keys out of one JSON object and rejects any key nobody asked for.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) invalid(path_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const Json::exception&) {
      invalid(path_ + "." + key + " has the wrong type");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  Section child(const char* key) {
    seen_.insert(key);
    static const Json empty = Json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, path_ + "." + key);
  }

  const Json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) invalid("unknown key " + path_ + "." + item.key());
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_observation(Section s, ObservationSettings& obs) {
  s.get("components", obs.components);
  s.get("fraction", obs.fraction);
  s.get("noise_std", obs.noise_std);
  s.get("keep_endpoints", obs.keep_endpoints);
  s.finish();
}

inline void check(bool ok, const std::string& what) {
  if (!ok) invalid(what);
}

inline void check_observation(const ObservationSettings& obs, Index phi, const std::string& where) {
  check(!obs.components.empty(), where + ".components must be non-empty");
  for (Index c : obs.components) check(c >= 0 && c < phi, where + ".components out of range");
  check(obs.fraction > 0.0 && obs.fraction <= 1.0, where + ".fraction must lie in (0, 1]");
  check(obs.noise_std > 0.0 && std::isfinite(obs.noise_std), where + ".noise_std must be > 0");
}

}  // namespace detail

/// Cross-field range checks; throws InvalidConfig.
inline void validate(const ExperimentConfig& c) {
  using detail::check;
  const Index phi = c.phase_dim();
  check(c.steps >= 2 && c.steps <= 4096, "simulation.steps must lie in [2, 4096]");
  check(c.dt > 0.0 && std::isfinite(c.dt), "simulation.dt must be > 0");
  check(c.process_noise_std >= 0.0, "simulation.process_noise_std must be >= 0");
  check(c.burn_in >= 0, "simulation.burn_in must be >= 0");
  check(c.init_velocity_max >= 0.0, "simulation.init_velocity_max must be >= 0");
  check(c.init_angle_max > 0.0 && c.init_angle_max <= std::numbers::pi,
        "simulation.init_angle_max must lie in (0, pi]");
  check(c.omega2 > 0.0 && c.sigma > 0.0 && c.rho > 0.0 && c.beta > 0.0, "dynamics parameters must be > 0");
  detail::check_observation(c.observation, phi, "observation");
  check(c.train_size >= 2, "data.train_size must be >= 2");
  check(c.test_size >= 1, "data.test_size must be >= 1");
  check(c.first_guess == "moment" || c.first_guess == "linear", "first_guess.method must be moment or linear");
  check(c.first_guess != "linear" || c.system == System::Pendulum, "first_guess.method linear needs the pendulum");
  check(c.first_guess_process_noise > 0.0, "first_guess.process_noise must be > 0");
  check(static_cast<Index>(c.fourdvar_process_noise.size()) == phi, "fourdvar.process_noise needs one entry per component");
  for (double q : c.fourdvar_process_noise) check(q > 0.0 && std::isfinite(q), "fourdvar.process_noise entries must be > 0");
  check(c.fourdvar_background == "empirical" || c.fourdvar_background == "initial-law",
        "fourdvar.background must be empirical or initial-law");
  check(c.fourdvar_background != "initial-law" || c.system == System::Pendulum,
        "fourdvar.background initial-law needs the pendulum");
  check(c.fourdvar_max_iters >= 1, "fourdvar.max_iters must be >= 1");
  check(c.fourdvar_rel_tol >= 0.0, "fourdvar.rel_tol must be >= 0");
  check(c.hybrid_threshold >= 0.0, "fourdvar.hybrid_threshold must be >= 0");
  check(c.hybrid_max_iters >= 1, "fourdvar.hybrid_max_iters must be >= 1");
  check(c.hybrid_samples >= 0, "fourdvar.hybrid_samples must be >= 0");
  check(c.schedule_levels >= 1 && c.schedule_levels <= 1000, "schedule.levels must lie in [1, 1000]");
  check(c.network.width >= 1 && c.network.depth >= 2, "network.width >= 1 and network.depth >= 2");
  check(c.network.embed_dim >= 2 && c.network.embed_dim % 2 == 0, "network.embed_dim must be even and >= 2");
  check(c.network.diag_floor > 0.0, "network.diag_floor must be > 0");
  check(c.network.final_scale > 0.0, "network.final_scale must be > 0");
  check(c.training.epochs >= 0, "training.epochs must be >= 0");
  check(c.training.batch_size >= 1, "training.batch_size must be >= 1");
  check(c.training.lr > 0.0, "training.lr must be > 0");
  check(c.training.lr_final_fraction > 0.0 && c.training.lr_final_fraction <= 1.0,
        "training.lr_final_fraction must lie in (0, 1]");
  check(c.training.validation_fraction >= 0.0 && c.training.validation_fraction < 1.0,
        "training.validation_fraction must lie in [0, 1)");
  check(c.training.patience >= 0, "training.patience must be >= 0");
  check(c.checkpoint_every >= 1, "training.checkpoint_every must be >= 1");
  check(c.timing_repeats >= 1, "evaluation.timing_repeats must be >= 1");
  check(c.dump_samples >= 0, "evaluation.dump_samples must be >= 0");
  for (const auto& g : c.versatility) {
    check(!g.name.empty(), "evaluation.versatility entries need a name");
    detail::check_observation(g.obs, phi, "evaluation.versatility." + g.name);
  }
  check(!c.output_dir.empty(), "output_dir must be non-empty");
}

/// Defaults for `system`; Lorenz values match the member initializers.
inline ExperimentConfig default_config(System system) {
  ExperimentConfig c;
  c.system = system;
  if (system == System::Pendulum) {
    c.output_dir = "runs/pendulum";
    c.steps = 100;
    c.dt = 0.1;
    c.process_noise_std = 0.0;
    c.observation = {{0}, 0.1, 0.01, true};
    c.first_guess = "linear";
    c.fourdvar_process_noise = {1e-2, 1e-2};
    c.fourdvar_background = "initial-law";
    c.network.phase_dim = 2;
    c.network.steps = 100;
    c.one_shot = true;
  }
  return c;
}

inline ExperimentConfig config_from_json(const Json& doc) {
  using detail::Section;
  if (!doc.is_object()) detail::invalid("config must be a JSON object");
  if (!doc.contains("system") || !doc.at("system").is_string()) detail::invalid("system is required");
  const auto sys = doc.at("system").get<std::string>();
  if (sys != "lorenz63" && sys != "pendulum") detail::invalid("unknown system " + sys);
  ExperimentConfig c = default_config(sys == "lorenz63" ? System::Lorenz63 : System::Pendulum);

  Section root(doc, "config");
  std::string ignored;
  root.get("system", ignored);
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);
  {
    auto s = root.child("dynamics");
    s.get("sigma", c.sigma);
    s.get("rho", c.rho);
    s.get("beta", c.beta);
    s.get("omega2", c.omega2);
    s.finish();
  }
  {
    auto s = root.child("simulation");
    s.get("steps", c.steps);
    s.get("dt", c.dt);
    s.get("process_noise_std", c.process_noise_std);
    s.get("burn_in", c.burn_in);
    s.get("init_angle_max", c.init_angle_max);
    s.get("init_velocity_max", c.init_velocity_max);
    s.finish();
  }
  detail::read_observation(root.child("observation"), c.observation);
  {
    auto s = root.child("data");
    s.get("train_size", c.train_size);
    s.get("test_size", c.test_size);
    s.finish();
  }
  {
    auto s = root.child("first_guess");
    s.get("method", c.first_guess);
    s.get("process_noise", c.first_guess_process_noise);
    s.finish();
  }
  {
    auto s = root.child("fourdvar");
    s.get("process_noise", c.fourdvar_process_noise);
    s.get("background", c.fourdvar_background);
    s.get("max_iters", c.fourdvar_max_iters);
    s.get("rel_tol", c.fourdvar_rel_tol);
    s.get("hybrid_threshold", c.hybrid_threshold);
    s.get("hybrid_max_iters", c.hybrid_max_iters);
    s.get("hybrid_samples", c.hybrid_samples);
    s.finish();
  }
  {
    auto s = root.child("schedule");
    s.get("levels", c.schedule_levels);
    s.get("include_unit_level", c.include_unit_level);
    s.get("one_shot", c.one_shot);
    std::string rule = to_string(c.update_rule);
    s.get("update_rule", rule);
    c.update_rule = update_rule_from_string(rule);
    s.finish();
  }
  {
    auto s = root.child("network");
    s.get("width", c.network.width);
    s.get("depth", c.network.depth);
    s.get("embed_dim", c.network.embed_dim);
    s.get("diag_floor", c.network.diag_floor);
    s.get("final_scale", c.network.final_scale);
    s.finish();
  }
  {
    auto s = root.child("training");
    s.get("epochs", c.training.epochs);
    s.get("batch_size", c.training.batch_size);
    s.get("lr", c.training.lr);
    s.get("lr_final_fraction", c.training.lr_final_fraction);
    s.get("validation_fraction", c.training.validation_fraction);
    s.get("patience", c.training.patience);
    s.get("checkpoint_every", c.checkpoint_every);
    s.get("unconditional", c.train_unconditional);
    s.finish();
  }
  {
    auto s = root.child("evaluation");
    s.get("timing_repeats", c.timing_repeats);
    s.get("dump_samples", c.dump_samples);
    if (s.has("versatility")) {
      const Json& list = s.raw("versatility");
      if (!list.is_array()) detail::invalid("evaluation.versatility must be an array");
      for (const auto& item : list) {
        Geometry g;
        g.obs = c.observation;
        Section gs(item, "evaluation.versatility[]");
        gs.get("name", g.name);
        gs.get("components", g.obs.components);
        gs.get("fraction", g.obs.fraction);
        gs.get("noise_std", g.obs.noise_std);
        gs.get("keep_endpoints", g.obs.keep_endpoints);
        gs.finish();
        c.versatility.push_back(std::move(g));
      }
    }
    s.finish();
  }
  root.finish();
  c.network.phase_dim = c.phase_dim();
  c.network.steps = c.steps;
  validate(c);
  return c;
}

/// Any failure to read or parse the file is reported as InvalidConfig.
inline ExperimentConfig load_config(const fs::path& path) {
  Json doc;
  try {
    doc = io::read_json(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  return config_from_json(doc);
}

inline Json config_to_json(const ExperimentConfig& c) {
  auto obs_json = [](const ObservationSettings& o) {
    return Json{{"components", o.components}, {"fraction", o.fraction},
                {"noise_std", o.noise_std}, {"keep_endpoints", o.keep_endpoints}};
  };
  Json vers = Json::array();
  for (const auto& g : c.versatility) {
    Json item = obs_json(g.obs);
    item["name"] = g.name;
    vers.push_back(item);
  }
  Json dynamics = c.system == System::Lorenz63
                      ? Json{{"sigma", c.sigma}, {"rho", c.rho}, {"beta", c.beta}}
                      : Json{{"omega2", c.omega2}};
  return {
      {"system", to_string(c.system)},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"dynamics", dynamics},
      {"simulation", {{"steps", c.steps}, {"dt", c.dt}, {"process_noise_std", c.process_noise_std},
                      {"burn_in", c.burn_in}, {"init_angle_max", c.init_angle_max},
                      {"init_velocity_max", c.init_velocity_max}}},
      {"observation", obs_json(c.observation)},
      {"data", {{"train_size", c.train_size}, {"test_size", c.test_size}}},
      {"first_guess", {{"method", c.first_guess}, {"process_noise", c.first_guess_process_noise}}},
      {"fourdvar", {{"process_noise", c.fourdvar_process_noise}, {"background", c.fourdvar_background},
                    {"max_iters", c.fourdvar_max_iters}, {"rel_tol", c.fourdvar_rel_tol},
                    {"hybrid_threshold", c.hybrid_threshold}, {"hybrid_max_iters", c.hybrid_max_iters},
                    {"hybrid_samples", c.hybrid_samples}}},
      {"schedule", {{"levels", c.schedule_levels}, {"include_unit_level", c.include_unit_level},
                    {"one_shot", c.one_shot},
                    {"update_rule", to_string(c.update_rule)}}},
      {"network", {{"width", c.network.width}, {"depth", c.network.depth},
                   {"embed_dim", c.network.embed_dim}, {"diag_floor", c.network.diag_floor},
                   {"final_scale", c.network.final_scale}}},
      {"training", {{"epochs", c.training.epochs}, {"batch_size", c.training.batch_size},
                    {"lr", c.training.lr}, {"lr_final_fraction", c.training.lr_final_fraction},
                    {"validation_fraction", c.training.validation_fraction},
                    {"patience", c.training.patience}, {"checkpoint_every", c.checkpoint_every},
                    {"unconditional", c.train_unconditional}}},
      {"evaluation", {{"timing_repeats", c.timing_repeats}, {"dump_samples", c.dump_samples},
                      {"versatility", vers}}},
  };
}

// ---------------------------------------------------------------- run layout

struct RunPaths {
  fs::path root;
  fs::path trajectories() const { return root / "data" / "trajectories.csv"; }
  fs::path observations() const { return root / "data" / "observations.csv"; }
  fs::path first_guess() const { return root / "data" / "first_guess.csv"; }
  fs::path first_guess_prior() const { return root / "data" / "first_guess_prior.json"; }
  fs::path checkpoint(const std::string& tag) const { return root / "checkpoints" / (tag + ".json"); }
  fs::path train_state(const std::string& tag) const { return root / "checkpoints" / (tag + "_state.json"); }
  fs::path train_log(const std::string& tag) const { return root / "logs" / ("train_" + tag + ".csv"); }
  fs::path evaluation() const { return root / "evaluation"; }
  fs::path report() const { return root / "report"; }
};

/// Independent RNG stream per (purpose, item).
inline std::uint64_t stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t item) {
  return incda::detail::mix_seed(incda::detail::mix_seed(seed, tag), item);
}

namespace tag {
inline constexpr std::uint64_t kInitialCondition = 1, kSimulationNoise = 2, kProcess = 3,
                               kObservationNoise = 4, kNeuralInit = 10, kNeuralShuffle = 11,
                               kUncondInit = 12, kUncondShuffle = 13, kGeometryProcess = 100,
                               kGeometryNoise = 200;
}

// ---------------------------------------------------------------- generate

struct DatasetSummary {
  Index train = 0, test = 0, dim = 0;
};

inline DatasetSummary cmd_generate(const ExperimentConfig& cfg) {
  validate(cfg);
  const RunPaths paths{cfg.output_dir};
  const auto model = cfg.model();
  const Index total = cfg.train_size + cfg.test_size;
  std::vector<Trajectory> physical(static_cast<std::size_t>(total));
  std::vector<Index> ids(static_cast<std::size_t>(total));
  parallel_for(static_cast<std::size_t>(total), [&](std::size_t n) {
    const auto id = static_cast<std::uint64_t>(n);
    std::mt19937_64 rng(stream(cfg.seed, tag::kInitialCondition, id));
    const Vector u0 = cfg.system == System::Lorenz63
                          ? lorenz_initial_condition(model, cfg.dt, cfg.burn_in, rng)
                          : pendulum_initial_condition(cfg.init_velocity_max, rng, cfg.init_angle_max);
    physical[n] = simulate(model, u0, cfg.steps, cfg.dt, cfg.process_noise_std,
                           stream(cfg.seed, tag::kSimulationNoise, id));
    ids[n] = static_cast<Index>(n);
  });
  for (const auto& traj : physical) {
    if (!traj.values.allFinite()) throw Error(ErrorCode::NonFiniteLoss, "simulation diverged");
  }
  const std::vector<Trajectory> train(physical.begin(), physical.begin() + cfg.train_size);
  const Normalizer norm = Normalizer::fit(train);

  std::vector<io::ObservationRecord> records(static_cast<std::size_t>(total));
  for (Index n = 0; n < total; ++n) {
    const auto id = static_cast<std::uint64_t>(n);
    const Vector x = norm.normalize(physical[static_cast<std::size_t>(n)]).values;
    auto proc = sample_process(cfg.phase_dim(), cfg.steps, cfg.observation.components,
                               cfg.observation.fraction, cfg.observation.noise_std,
                               stream(cfg.seed, tag::kProcess, id), cfg.observation.keep_endpoints);
    Vector y = observe(proc, x, stream(cfg.seed, tag::kObservationNoise, id));
    records[static_cast<std::size_t>(n)] = {n, std::move(proc), std::move(y)};
  }

  const auto m = cfg.model();
  Json params = cfg.system == System::Lorenz63
                    ? Json{{"sigma", cfg.sigma}, {"rho", cfg.rho}, {"beta", cfg.beta}}
                    : Json{{"omega2", cfg.omega2}};
  io::write_trajectories(paths.trajectories(), physical, ids,
                         {{"model", m.name}, {"params", params}, {"dt", cfg.dt},
                          {"process_noise_std", cfg.process_noise_std}, {"seed", cfg.seed},
                          {"units", "physical"}, {"normalizer", io::normalizer_to_json(norm)},
                          {"normalizer_fit_split", "train"},
                          {"train_ids", {0, cfg.train_size}}, {"test_ids", {cfg.train_size, total}}});
  io::write_observations(paths.observations(), records,
                         {{"seed", cfg.seed}, {"units", "normalized"},
                          {"components", cfg.observation.components},
                          {"fraction", cfg.observation.fraction}});
  return {cfg.train_size, cfg.test_size, cfg.state_dim()};
}

// ---------------------------------------------------------------- dataset loading

struct Dataset {
  Normalizer normalizer;
  Index phase_dim = 0, steps = 0;
  Index train_size = 0, test_size = 0;
  std::vector<Vector> x;                      // normalized truths, by id
  std::vector<io::ObservationRecord> obs;     // by id
  std::vector<Vector> z0;                     // normalized first guesses, by id (may be empty)

  Index dim() const { return phase_dim * steps; }
  Index size() const { return train_size + test_size; }

  Sample sample(Index id) const {
    const auto k = static_cast<std::size_t>(id);
    return {id, x[k], obs[k].proc, obs[k].y, z0.empty() ? Vector() : z0[k]};
  }
};

inline Dataset load_dataset(const ExperimentConfig& cfg, bool with_first_guess) {
  const RunPaths paths{cfg.output_dir};
  Dataset ds;
  const auto traj = io::read_trajectories(paths.trajectories());
  ds.normalizer = io::normalizer_from_json(traj.meta.at("normalizer"));
  ds.phase_dim = traj.meta.at("phase_dim").get<Index>();
  ds.steps = traj.meta.at("steps").get<Index>();
  ds.train_size = traj.meta.at("train_ids").at(1).get<Index>();
  ds.test_size = traj.meta.at("test_ids").at(1).get<Index>() - ds.train_size;
  if (ds.phase_dim != cfg.phase_dim() || ds.steps != cfg.steps) {
    throw Error(ErrorCode::InvalidConfig, "dataset shape disagrees with the config");
  }
  const auto total = static_cast<std::size_t>(ds.size());
  if (traj.ids.size() != total) throw Error(ErrorCode::IoError, "trajectory count mismatch");
  ds.x.resize(total);
  for (std::size_t n = 0; n < total; ++n) {
    if (traj.ids[n] != static_cast<Index>(n)) throw Error(ErrorCode::IoError, "trajectory ids must be 0..N-1");
    ds.x[n] = ds.normalizer.normalize(traj.trajectories[n]).values;
  }
  auto obs = io::read_observations(paths.observations());
  if (obs.records.size() != total) throw Error(ErrorCode::IoError, "observation count mismatch");
  ds.obs = std::move(obs.records);
  for (std::size_t n = 0; n < total; ++n) {
    if (ds.obs[n].sample_id != static_cast<Index>(n)) throw Error(ErrorCode::IoError, "observation ids must be 0..N-1");
  }
  if (with_first_guess) {
    const auto fg = io::read_trajectories(paths.first_guess());
    if (fg.ids.size() != total) throw Error(ErrorCode::IoError, "first-guess count mismatch");
    ds.z0.resize(total);
    for (std::size_t n = 0; n < total; ++n) ds.z0[n] = fg.trajectories[n].values;
  }
  return ds;
}

// ---------------------------------------------------------------- first guess

/// The Gaussian trajectory prior behind z0, in normalized coordinates.
inline DenseGaussianPrior build_first_guess_prior(const ExperimentConfig& cfg, const Dataset& ds) {
  if (cfg.first_guess == "linear") {
    Vector init_mean = Vector::Zero(2);
    Matrix init_cov = Matrix::Zero(2, 2);
    init_cov(0, 0) = cfg.init_angle_max * cfg.init_angle_max / 3.0;
    init_cov(1, 1) = cfg.init_velocity_max * cfg.init_velocity_max / 3.0;
    const auto prior = build_linear_pendulum_prior(cfg.steps, cfg.dt, init_mean, init_cov,
                                                   cfg.first_guess_process_noise * Matrix::Identity(2, 2),
                                                   cfg.omega2);
    return normalize_prior(prior, ds.normalizer, cfg.steps);
  }
  std::vector<Vector> train(ds.x.begin(), ds.x.begin() + ds.train_size);
  return build_moment_prior(train);
}

inline void cmd_first_guess(const ExperimentConfig& cfg) {
  validate(cfg);
  const RunPaths paths{cfg.output_dir};
  const Dataset ds = load_dataset(cfg, false);
  const auto prior = build_first_guess_prior(cfg, ds);
  std::vector<Trajectory> guesses(static_cast<std::size_t>(ds.size()));
  std::vector<Index> ids(guesses.size());
  parallel_for(guesses.size(), [&](std::size_t n) {
    const auto& rec = ds.obs[n];
    guesses[n] = Trajectory(ds.phase_dim, ds.steps, map_dense(rec.y, rec.proc, prior));
    ids[n] = static_cast<Index>(n);
  });
  Json fit_ids = Json::array();
  if (cfg.first_guess == "moment") {
    for (Index id = 0; id < ds.train_size; ++id) fit_ids.push_back(id);
  }
  io::write_trajectories(paths.first_guess(), guesses, ids,
                         {{"units", "normalized"}, {"method", cfg.first_guess}, {"fit_ids", fit_ids}});
  io::save_gaussian_prior(paths.first_guess_prior(), prior,
                          {{"method", cfg.first_guess}, {"units", "normalized"}, {"fit_ids", fit_ids}});
}

// ---------------------------------------------------------------- train

enum class MethodSet { All, FourDVar, Neural, Unconditional, Hybrid };

inline MethodSet method_set_from_string(const std::string& s) {
  if (s == "all") return MethodSet::All;
  if (s == "4dvar") return MethodSet::FourDVar;
  if (s == "neural") return MethodSet::Neural;
  if (s == "uncond") return MethodSet::Unconditional;
  if (s == "hybrid") return MethodSet::Hybrid;
  throw Error(ErrorCode::InvalidConfig, "unknown method " + s);
}

inline bool wants_neural(MethodSet m) {
  return m == MethodSet::All || m == MethodSet::Neural || m == MethodSet::Hybrid;
}
inline bool wants_unconditional(MethodSet m) {
  return m == MethodSet::All || m == MethodSet::Unconditional;
}

struct TrainOptions {
  MethodSet methods = MethodSet::All;
  int stop_at_epoch = -1;  // < 0 trains to config.training.epochs; used to simulate interruption
};

namespace detail {

inline std::vector<Sample> training_samples(const Dataset& ds) {
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(ds.train_size));
  for (Index id = 0; id < ds.train_size; ++id) out.push_back(ds.sample(id));
  return out;
}

inline void train_one(const ExperimentConfig& cfg, const Dataset& ds, const std::vector<Sample>& samples,
                      const std::string& label, bool unconditional, int stop_at_epoch) {
  const RunPaths paths{cfg.output_dir};
  const std::uint64_t init_seed = stream(cfg.seed, unconditional ? tag::kUncondInit : tag::kNeuralInit, 0);
  const std::uint64_t shuffle_seed =
      stream(cfg.seed, unconditional ? tag::kUncondShuffle : tag::kNeuralShuffle, 0);
  TrainConfig tc = cfg.training;
  tc.use_observations = !unconditional;

  TrainState state;
  const auto state_path = paths.train_state(label);
  if (fs::exists(state_path)) {
    Json extra;
    state = io::load_train_state(state_path, &extra);
    const Json now = config_to_json(cfg);
    if (extra.value("config", Json()) != now["training"] || extra.value("network", Json()) != now["network"] ||
        extra.value("schedule", Json()) != now["schedule"]) {
      throw Error(ErrorCode::InvalidConfig, "checkpoint " + state_path.string() +
                                                " was written with different training settings");
    }
  } else {
    NeuralPrior init = make_neural_prior(cfg.network, init_seed);
    init.normalizer = ds.normalizer;
    state = start_training(std::move(init), tc);
  }
  const auto sched = cfg.schedule();
  const int target = stop_at_epoch >= 0 ? std::min(stop_at_epoch, tc.epochs) : tc.epochs;
  const Json extra{{"config", config_to_json(cfg)["training"]},
                   {"network", config_to_json(cfg)["network"]},
                   {"schedule", config_to_json(cfg)["schedule"]}};
  while (state.epoch < target && !state.stopped_early) {
    const int until = std::min(target, state.epoch + cfg.checkpoint_every);
    continue_training(state, samples, sched, tc, shuffle_seed, until);
    io::save_train_state(state_path, state, init_seed, extra);
  }
  if (!fs::exists(state_path)) io::save_train_state(state_path, state, init_seed, extra);
  io::write_train_log(paths.train_log(label), state.log);
  NeuralPrior best = state.prior;
  best.unpack(state.best_theta);
  io::save_prior(paths.checkpoint(label), best, init_seed,
                 {{"epochs_completed", state.epoch}, {"stopped_early", state.stopped_early},
                  {"unconditional", unconditional}});
}

}  // namespace detail

inline void cmd_train(const ExperimentConfig& cfg, const TrainOptions& opts = {}) {
  validate(cfg);
  const Dataset ds = load_dataset(cfg, true);
  const auto samples = detail::training_samples(ds);
  if (wants_neural(opts.methods)) detail::train_one(cfg, ds, samples, "neural", false, opts.stop_at_epoch);
  if (wants_unconditional(opts.methods) && cfg.train_unconditional) {
    detail::train_one(cfg, ds, samples, "unconditional", true, opts.stop_at_epoch);
  }
}

// ---------------------------------------------------------------- evaluate

/// Weak-constraint cost in normalized coordinates.
inline WeakConstraintCost build_fourdvar_cost(const ExperimentConfig& cfg, const Dataset& ds) {
  const Index phi = cfg.phase_dim();
  const Vector scale = ds.normalizer.std;
  Vector q(phi);
  for (Index c = 0; c < phi; ++c) q(c) = cfg.fourdvar_process_noise[static_cast<std::size_t>(c)] / (scale(c) * scale(c));
  Vector xb;
  Matrix b;
  if (cfg.fourdvar_background == "initial-law") {
    xb = ds.normalizer.normalize_state(Vector::Zero(phi));
    b = Matrix::Zero(phi, phi);
    b(0, 0) = cfg.init_angle_max * cfg.init_angle_max / 3.0 / (scale(0) * scale(0));
    b(1, 1) = cfg.init_velocity_max * cfg.init_velocity_max / 3.0 / (scale(1) * scale(1));
  } else {
    std::vector<Vector> first;
    for (Index id = 0; id < ds.train_size; ++id) first.push_back(ds.x[static_cast<std::size_t>(id)].head(phi));
    const auto moments = build_moment_prior(first);
    xb = moments.mean;
    b = moments.cov;
  }
  return {normalized_model(cfg.model(), ds.normalizer), cfg.dt, q, xb, b};
}

inline double rmse(const Vector& estimate, const Vector& truth) {
  return (estimate - truth).norm() / std::sqrt(static_cast<double>(truth.size()));
}

/// Accepted steps whose full objective failed to decrease, recomputed from the iterates.
inline int monotonicity_violations(const WeakConstraintCost& cost, const ObservationProcess& proc,
                                   const Vector& y, const std::vector<Vector>& iterates) {
  int bad = 0;
  for (std::size_t k = 1; k < iterates.size(); ++k) {
    if (!(full_objective(cost, proc, y, iterates[k]) < full_objective(cost, proc, y, iterates[k - 1]))) ++bad;
  }
  return bad;
}

struct MethodOutcome {
  bool present = false;
  double rmse = 0.0;
  int iterations = 0;
  bool reached = false;  // 4D-Var paths: objective below the hybrid tolerance
  double final_objective = std::numeric_limits<double>::quiet_NaN();
  int violations = 0;
  ReconstructionResult result;
};

inline const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names{"first_guess", "4dvar", "neural", "unconditional",
                                              "hybrid_neural", "hybrid_gaussian"};
  return names;
}

struct MethodReport {
  std::string method;
  Index n = 0;
  double rmse_mean = 0.0;
  double rmse_std = 0.0;
  double iterations_mean = 0.0;
  double iterations_median = 0.0;
  double reached_fraction = 0.0;
  double relative_time = std::numeric_limits<double>::quiet_NaN();
};

struct TimingRow {
  std::string method;
  double seconds_median = 0.0;
  double relative_time = 0.0;
};

struct EvaluationResult {
  std::vector<MethodReport> methods;
  std::vector<TimingRow> timing;
  int monotonicity_violations = 0;
  Index fourdvar_runs = 0;
  double hybrid_median_neural = std::numeric_limits<double>::quiet_NaN();
  double hybrid_median_gaussian = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::pair<std::string, double>> versatility;  // geometry -> mean neural RMSE
};

struct EvaluateOptions {
  MethodSet methods = MethodSet::All;
  bool timing = true;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double std = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return {mean, std};
}

namespace detail {

struct Evaluator {
  const ExperimentConfig& cfg;
  const Dataset& ds;
  WeakConstraintCost cost;
  TemperatureSchedule sched;
  const NeuralPrior* neural = nullptr;
  const NeuralPrior* uncond = nullptr;

  FourDVarOptions fourdvar_opts() const {
    FourDVarOptions o;
    o.max_iters = cfg.fourdvar_max_iters;
    o.rel_tol = cfg.fourdvar_rel_tol;
    return o;
  }

  FourDVarOptions hybrid_opts() const {
    FourDVarOptions o;
    o.max_iters = cfg.hybrid_max_iters;
    o.rel_tol = cfg.fourdvar_rel_tol;
    return o;
  }

  ReconstructionResult run_fourdvar(const Sample& s) const {
    const auto start = std::chrono::steady_clock::now();
    auto trace = run_weak_4dvar(s.y, s.proc, s.z0, cost, fourdvar_opts());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return from_trace(std::move(trace), "4dvar", secs);
  }
  ReconstructionResult run_neural(const Sample& s) const {
    return incremental_assimilate(*neural, s.y, s.proc, s.z0, sched, cfg.update_rule);
  }
  ReconstructionResult run_uncond(const Sample& s) const {
    return unconditional_restore(*uncond, s.z0, sched, cfg.update_rule);
  }
};

inline void fill_fourdvar(MethodOutcome& out, ReconstructionResult r, const Evaluator& ev, const Sample& s) {
  out.present = true;
  out.rmse = rmse(r.estimate, s.x);
  out.iterations = r.iterations;
  out.final_objective = r.objectives.back();
  out.reached = out.final_objective < hybrid_tolerance(s.proc, ev.cfg.hybrid_threshold);
  out.violations = monotonicity_violations(ev.cost, s.proc, s.y, r.iterates);
  out.result = std::move(r);
}

inline void fill_plain(MethodOutcome& out, ReconstructionResult r, const Sample& s) {
  out.present = true;
  out.rmse = rmse(r.estimate, s.x);
  out.iterations = r.iterations;
  out.result = std::move(r);
}

}  // namespace detail

/**
 * Runs the selected methods on the test split and writes evaluation/.
 * Errors and iteration counts are deterministic; wall times go to a
 * separate timing.csv.
 */
inline EvaluationResult cmd_evaluate(const ExperimentConfig& cfg, const EvaluateOptions& opts = {}) {
  validate(cfg);
  const RunPaths paths{cfg.output_dir};
  const Dataset ds = load_dataset(cfg, true);
  const bool do_4dvar = opts.methods == MethodSet::All || opts.methods == MethodSet::FourDVar;
  const bool do_neural = wants_neural(opts.methods);
  const bool do_uncond = wants_unconditional(opts.methods) && cfg.train_unconditional;
  const bool do_hybrid = opts.methods == MethodSet::All || opts.methods == MethodSet::Hybrid;

  NeuralPrior neural, uncond;
  if (do_neural) neural = io::load_prior(paths.checkpoint("neural"));
  if (do_uncond) uncond = io::load_prior(paths.checkpoint("unconditional"));
  detail::Evaluator ev{cfg, ds, build_fourdvar_cost(cfg, ds), cfg.schedule(),
                       do_neural ? &neural : nullptr, do_uncond ? &uncond : nullptr};

  std::vector<Sample> test;
  for (Index id = ds.train_size; id < ds.size(); ++id) test.push_back(ds.sample(id));
  const auto names = method_names();
  std::vector<std::vector<MethodOutcome>> outcomes(test.size(), std::vector<MethodOutcome>(names.size()));
  const Index hybrid_count = std::min<Index>(cfg.hybrid_samples, static_cast<Index>(test.size()));

  parallel_for(test.size(), [&](std::size_t n) {
    const Sample& s = test[n];
    auto& row = outcomes[n];
    ReconstructionResult fg;
    fg.estimate = s.z0;
    fg.iterates = {s.z0};
    fg.method = "first_guess";
    detail::fill_plain(row[0], std::move(fg), s);
    if (do_4dvar) detail::fill_fourdvar(row[1], ev.run_fourdvar(s), ev, s);
    if (do_neural) detail::fill_plain(row[2], ev.run_neural(s), s);
    if (do_uncond) detail::fill_plain(row[3], ev.run_uncond(s), s);
    if (do_hybrid && static_cast<Index>(n) < hybrid_count) {
      detail::fill_fourdvar(row[4], hybrid_refine(row[2].result.estimate, s.y, s.proc, ev.cost,
                                                  cfg.hybrid_threshold, ev.hybrid_opts()), ev, s);
      detail::fill_fourdvar(row[5], hybrid_refine(s.z0, s.y, s.proc, ev.cost, cfg.hybrid_threshold,
                                                  ev.hybrid_opts()), ev, s);
    }
  });

  EvaluationResult result;
  const fs::path dir = paths.evaluation();

  // Per-sample table.
  {
    auto out = io::open_out(dir / "per_sample.csv");
    out << "sample_id,method,rmse,iterations,reached_threshold,final_objective,monotonicity_violations\n";
    for (std::size_t n = 0; n < test.size(); ++n) {
      for (std::size_t k = 0; k < names.size(); ++k) {
        const auto& o = outcomes[n][k];
        if (!o.present) continue;
        out << test[n].id << ',' << names[k] << ',' << io::fmt(o.rmse) << ',' << o.iterations << ','
            << (o.reached ? 1 : 0) << ',' << io::fmt(o.final_objective) << ',' << o.violations << '\n';
        if (!std::isnan(o.final_objective)) {
          result.monotonicity_violations += o.violations;
          ++result.fourdvar_runs;
        }
      }
    }
  }

  // Aggregates.
  for (std::size_t k = 0; k < names.size(); ++k) {
    std::vector<double> errs, iters;
    double reached = 0.0;
    for (std::size_t n = 0; n < test.size(); ++n) {
      const auto& o = outcomes[n][k];
      if (!o.present) continue;
      errs.push_back(o.rmse);
      iters.push_back(o.iterations);
      reached += o.reached ? 1.0 : 0.0;
    }
    if (errs.empty()) continue;
    MethodReport rep;
    rep.method = names[k];
    rep.n = static_cast<Index>(errs.size());
    std::tie(rep.rmse_mean, rep.rmse_std) = mean_std(errs);
    rep.iterations_mean = mean_std(iters).first;
    rep.iterations_median = median(iters);
    rep.reached_fraction = reached / static_cast<double>(errs.size());
    result.methods.push_back(rep);
    if (names[k] == "hybrid_neural") result.hybrid_median_neural = rep.iterations_median;
    if (names[k] == "hybrid_gaussian") result.hybrid_median_gaussian = rep.iterations_median;
  }

  // Iteration traces of every 4D-Var path.
  {
    auto out = io::open_out(dir / "traces.csv");
    out << "sample_id,method,iter,objective,alpha,lambda\n";
    for (std::size_t n = 0; n < test.size(); ++n) {
      for (std::size_t k = 0; k < names.size(); ++k) {
        const auto& o = outcomes[n][k];
        if (!o.present || o.result.objectives.empty()) continue;
        io::write_trace_rows(out, o.result.objectives, o.result.alphas, o.result.lambdas,
                             std::to_string(test[n].id) + "," + names[k] + ",");
      }
    }
  }

  // Reconstruction dumps for a few samples; "truth" and "observed" rows anchor the plots.
  {
    auto out = io::open_out(dir / "reconstructions.csv");
    out << io::kReconstructionHeader << '\n';
    const auto count = std::min<std::size_t>(static_cast<std::size_t>(cfg.dump_samples), test.size());
    for (std::size_t n = 0; n < count; ++n) {
      const Sample& s = test[n];
      io::write_reconstruction_rows(out, s.id, "truth", {s.x}, ds.phase_dim);
      const auto& idx = s.proc.indices();
      for (std::size_t j = 0; j < idx.size(); ++j) {
        out << s.id << ",observed,0," << idx[j] / ds.phase_dim << ',' << idx[j] % ds.phase_dim << ','
            << io::fmt(s.y(static_cast<Index>(j))) << '\n';
      }
      for (std::size_t k = 0; k < names.size(); ++k) {
        const auto& o = outcomes[n][k];
        if (o.present) io::write_reconstruction_rows(out, s.id, names[k], o.result.iterates, ds.phase_dim);
      }
    }
  }

  // Versatility: same theta, observation geometries never used in training.
  if (do_neural && !cfg.versatility.empty()) {
    const auto fg_prior = io::load_gaussian_prior(paths.first_guess_prior());
    auto out = io::open_out(dir / "versatility.csv");
    out << "geometry,m_mean,rmse_mean,rmse_std,relative_change\n";
    std::vector<double> base;
    for (std::size_t n = 0; n < test.size(); ++n) base.push_back(outcomes[n][2].rmse);
    const auto [base_mean, base_std] = mean_std(base);
    double base_m = 0.0;
    for (const auto& s : test) base_m += static_cast<double>(s.proc.size());
    base_m /= static_cast<double>(test.size());
    out << "training," << io::fmt(base_m) << ',' << io::fmt(base_mean) << ',' << io::fmt(base_std) << ",0\n";
    result.versatility.emplace_back("training", base_mean);
    for (std::size_t g = 0; g < cfg.versatility.size(); ++g) {
      const auto& geo = cfg.versatility[g].obs;
      std::vector<double> errs(test.size()), ms(test.size());
      parallel_for(test.size(), [&](std::size_t n) {
        const auto id = static_cast<std::uint64_t>(test[n].id);
        Sample s = test[n];
        s.proc = sample_process(ds.phase_dim, ds.steps, geo.components, geo.fraction, geo.noise_std,
                                stream(cfg.seed, tag::kGeometryProcess + g, id), geo.keep_endpoints);
        s.y = observe(s.proc, s.x, stream(cfg.seed, tag::kGeometryNoise + g, id));
        s.z0 = map_dense(s.y, s.proc, fg_prior);
        errs[n] = rmse(ev.run_neural(s).estimate, s.x);
        ms[n] = static_cast<double>(s.proc.size());
      });
      const auto [mean, std] = mean_std(errs);
      out << cfg.versatility[g].name << ',' << io::fmt(mean_std(ms).first) << ',' << io::fmt(mean) << ','
          << io::fmt(std) << ',' << io::fmt(mean / base_mean - 1.0) << '\n';
      result.versatility.emplace_back(cfg.versatility[g].name, mean);
    }
  }

  // Timing: median of repeated single-threaded passes over the whole test split.
  if (opts.timing) {
    std::vector<std::pair<std::string, std::function<void(const Sample&)>>> timed;
    if (do_4dvar) timed.emplace_back("4dvar", [&](const Sample& s) { (void)ev.run_fourdvar(s); });
    if (do_neural) timed.emplace_back("neural", [&](const Sample& s) { (void)ev.run_neural(s); });
    if (do_uncond) timed.emplace_back("unconditional", [&](const Sample& s) { (void)ev.run_uncond(s); });
    for (auto& [name, fn] : timed) {
      std::vector<double> secs;
      for (int r = 0; r < cfg.timing_repeats; ++r) {
        const auto start = std::chrono::steady_clock::now();
        for (const auto& s : test) fn(s);
        secs.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
      }
      result.timing.push_back({name, median(secs), 0.0});
    }
    double fastest = std::numeric_limits<double>::infinity();
    for (const auto& t : result.timing) fastest = std::min(fastest, t.seconds_median);
    for (auto& t : result.timing) t.relative_time = t.seconds_median / fastest;
    for (auto& rep : result.methods) {
      for (const auto& t : result.timing) {
        if (t.method == rep.method) rep.relative_time = t.relative_time;
      }
    }
    auto out = io::open_out(dir / "timing.csv");
    out << "method,seconds_median,relative_time,repeats,samples\n";
    for (const auto& t : result.timing) {
      out << t.method << ',' << io::fmt(t.seconds_median) << ',' << io::fmt(t.relative_time) << ','
          << cfg.timing_repeats << ',' << test.size() << '\n';
    }
  }

  {
    auto out = io::open_out(dir / "methods.csv");
    out << "method,n,rmse_mean,rmse_std,iterations_mean,iterations_median,reached_fraction\n";
    for (const auto& r : result.methods) {
      out << r.method << ',' << r.n << ',' << io::fmt(r.rmse_mean) << ',' << io::fmt(r.rmse_std) << ','
          << io::fmt(r.iterations_mean) << ',' << io::fmt(r.iterations_median) << ','
          << io::fmt(r.reached_fraction) << '\n';
    }
  }
  io::write_json(dir / "summary.json",
                 {{"monotonicity_violations", result.monotonicity_violations},
                  {"fourdvar_runs", result.fourdvar_runs},
                  {"hybrid_samples", hybrid_count},
                  {"update_rule", to_string(cfg.update_rule)},
                  {"schedule", cfg.schedule().levels()}});
  return result;
}

// ---------------------------------------------------------------- report

struct ReportResult {
  std::vector<MethodReport> methods;
};

/// Aggregates evaluation/ into report/summary.{csv,txt} and per-figure tables.
inline ReportResult cmd_report(const ExperimentConfig& cfg) {
  const RunPaths paths{cfg.output_dir};
  const fs::path per_sample = paths.evaluation() / "per_sample.csv";
  if (!fs::exists(per_sample)) throw Error(ErrorCode::EmptyResults, "no evaluation results in " + paths.evaluation().string());
  const auto table = io::read_csv(per_sample);
  if (table.rows.empty()) throw Error(ErrorCode::EmptyResults, per_sample.string() + " has no rows");

  std::map<std::string, std::vector<double>> errs, iters, reached;
  std::vector<std::string> order;
  const auto c_m = table.column("method"), c_r = table.column("rmse"), c_i = table.column("iterations"),
             c_t = table.column("reached_threshold");
  for (const auto& row : table.rows) {
    if (!errs.count(row[c_m])) order.push_back(row[c_m]);
    errs[row[c_m]].push_back(io::to_double(row[c_r]));
    iters[row[c_m]].push_back(static_cast<double>(io::to_int(row[c_i])));
    reached[row[c_m]].push_back(static_cast<double>(io::to_int(row[c_t])));
  }
  std::map<std::string, double> rel;
  if (fs::exists(paths.evaluation() / "timing.csv")) {
    const auto timing = io::read_csv(paths.evaluation() / "timing.csv");
    for (const auto& row : timing.rows) rel[row[timing.column("method")]] = io::to_double(row[timing.column("relative_time")]);
  }

  ReportResult result;
  for (const auto& m : order) {
    MethodReport r;
    r.method = m;
    r.n = static_cast<Index>(errs[m].size());
    std::tie(r.rmse_mean, r.rmse_std) = mean_std(errs[m]);
    r.iterations_mean = mean_std(iters[m]).first;
    r.iterations_median = median(iters[m]);
    r.reached_fraction = mean_std(reached[m]).first;
    if (rel.count(m)) r.relative_time = rel[m];
    result.methods.push_back(r);
  }

  const fs::path dir = paths.report();
  {
    auto out = io::open_out(dir / "summary.csv");
    out << "method,n,rmse_mean,rmse_std,iterations_mean,iterations_median,reached_fraction,relative_time\n";
    for (const auto& r : result.methods) {
      out << r.method << ',' << r.n << ',' << io::fmt(r.rmse_mean) << ',' << io::fmt(r.rmse_std) << ','
          << io::fmt(r.iterations_mean) << ',' << io::fmt(r.iterations_median) << ','
          << io::fmt(r.reached_fraction) << ',';
      if (!std::isnan(r.relative_time)) out << io::fmt(r.relative_time);
      out << '\n';
    }
  }
  {
    auto out = io::open_out(dir / "summary.txt");
    char line[160];
    std::snprintf(line, sizeof line, "%-16s %6s %10s %10s %10s %10s\n", "method", "n", "rmse", "std",
                  "iters(med)", "rel.time");
    out << line;
    for (const auto& r : result.methods) {
      char rt[32] = "-";
      if (!std::isnan(r.relative_time)) std::snprintf(rt, sizeof rt, "%.2f", r.relative_time);
      std::snprintf(line, sizeof line, "%-16s %6lld %10.4f %10.4f %10.1f %10s\n", r.method.c_str(),
                    static_cast<long long>(r.n), r.rmse_mean, r.rmse_std, r.iterations_median, rt);
      out << line;
    }
  }
  // Per-figure tables: reconstructions by method, and the hybrid convergence traces.
  const fs::path recon = paths.evaluation() / "reconstructions.csv";
  if (fs::exists(recon)) {
    const auto t = io::read_csv(recon);
    auto out = io::open_out(dir / "figure_reconstructions.csv");
    auto out_h = io::open_out(dir / "figure_hybrid_reconstructions.csv");
    out << io::kReconstructionHeader << '\n';
    out_h << io::kReconstructionHeader << '\n';
    const auto cm = t.column("method");
    for (const auto& row : t.rows) {
      const bool hybrid = row[cm].rfind("hybrid", 0) == 0;
      std::string joined;
      for (std::size_t c = 0; c < row.size(); ++c) joined += (c ? "," : "") + row[c];
      (hybrid ? out_h : out) << joined << '\n';
    }
  }
  const fs::path traces = paths.evaluation() / "traces.csv";
  if (fs::exists(traces)) {
    const auto t = io::read_csv(traces);
    auto out = io::open_out(dir / "figure_hybrid_traces.csv");
    out << "sample_id,method,iter,objective\n";
    const auto cs = t.column("sample_id"), cm = t.column("method"), ci = t.column("iter"), co = t.column("objective");
    for (const auto& row : t.rows) {
      if (row[cm].rfind("hybrid", 0) == 0) out << row[cs] << ',' << row[cm] << ',' << row[ci] << ',' << row[co] << '\n';
    }
  }
  return result;
}

/// Exit status for a failure: 2 invalid config, 3 numerical failure, 1 otherwise.
inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig: return 2;
    case ErrorCode::NotPositiveDefinite:
    case ErrorCode::SingularInnovation:
    case ErrorCode::LineSearchFailure:
    case ErrorCode::NonFiniteLoss: return 3;
    default: return 1;
  }
}

}  // namespace incda::harness

#endif  // INCDA_HARNESS_HPP_
