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

// Acceptance run: one PASS/FAIL line per criterion, exit status 0 iff all pass.
// Criteria 4-10 train and evaluate the shipped configurations from scratch.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "incda/harness.hpp"
#include "test_util.hpp"

namespace {

using namespace incda;
using namespace incda::harness;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------- per-sample table access

struct Row {
  double rmse = 0.0;
  int iterations = 0;
  bool reached = false;
  int violations = 0;
};

/// method -> sample_id -> row.
using PerSample = std::map<std::string, std::map<Index, Row>>;

PerSample read_per_sample(const fs::path& run) {
  const auto t = io::read_csv(run / "evaluation" / "per_sample.csv");
  const auto cs = t.column("sample_id"), cm = t.column("method"), cr = t.column("rmse"),
             ci = t.column("iterations"), ct = t.column("reached_threshold"),
             cv = t.column("monotonicity_violations");
  PerSample out;
  for (const auto& r : t.rows) {
    out[r[cm]][io::to_int(r[cs])] = {io::to_double(r[cr]), static_cast<int>(io::to_int(r[ci])),
                                     io::to_int(r[ct]) != 0, static_cast<int>(io::to_int(r[cv]))};
  }
  return out;
}

double mean_rmse(const PerSample& ps, const std::string& method) {
  double s = 0.0;
  for (const auto& [id, r] : ps.at(method)) s += r.rmse;
  return s / static_cast<double>(ps.at(method).size());
}

std::map<std::string, double> read_relative_times(const fs::path& run) {
  const auto t = io::read_csv(run / "evaluation" / "timing.csv");
  std::map<std::string, double> out;
  for (const auto& r : t.rows) out[r[t.column("method")]] = io::to_double(r[t.column("relative_time")]);
  return out;
}

// ---------------------------------------------------------------- pipeline

void run_pipeline(const ExperimentConfig& cfg, bool timing) {
  const auto stage = [](const char* name, const std::function<void()>& f) {
    const auto t0 = Clock::now();
    f();
    std::printf("  %-12s %8.1f s\n", name, seconds_since(t0));
    std::fflush(stdout);
  };
  std::printf("pipeline %s -> %s\n", to_string(cfg.system).c_str(), cfg.output_dir.c_str());
  stage("generate", [&] { cmd_generate(cfg); });
  stage("first-guess", [&] { cmd_first_guess(cfg); });
  stage("train", [&] { cmd_train(cfg); });
  stage("evaluate", [&] { cmd_evaluate(cfg, {MethodSet::All, timing}); });
  stage("report", [&] { cmd_report(cfg); });
}

ExperimentConfig shipped(const std::string& name, const fs::path& out) {
  auto cfg = load_config(fs::path(INCDA_SOURCE_DIR) / "configs" / name);
  cfg.output_dir = out.string();
  return cfg;
}

// ---------------------------------------------------------------- criteria

Verdict band_solver_oracle() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  double solve_seconds = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index d = 1 + static_cast<Index>(rng() % 256);
    const Index b = std::min<Index>(static_cast<Index>(rng() % 9), d - 1);
    const BandMatrix a = testing::random_spd_band(d, b, rng);
    const Vector rhs = testing::gaussian_vector(d, rng);
    const auto t0 = Clock::now();
    const Vector x = band_solve(band_cholesky(a), rhs);
    solve_seconds += seconds_since(t0);
    const Vector oracle = a.to_dense().partialPivLu().solve(rhs);
    worst = std::max(worst, testing::relative_error(x, oracle));
  }
  return {worst < 1e-10 && solve_seconds < 1.0,
          format("100 systems, worst relative error %.2e, band solves %.3f s", worst, solve_seconds)};
}

Verdict gradient_suite() {
  std::mt19937_64 rng(202);
  std::vector<std::pair<std::string, double>> errs;
  Index max_params = 0;

  {  // grad_U, Lorenz, d = 15
    Vector xb(3);
    xb << 0.0, 0.0, 25.0;
    const WeakConstraintCost cost{lorenz63(), 0.025, Vector::Constant(3, 0.025), xb, Matrix::Identity(3, 3) / 64.0};
    const Vector x = simulate(cost.model, xb + testing::random_vector(3, rng, 5.0), 5, 0.025, 0.1, 3).values;
    const Vector fd = testing::finite_difference([&](const Vector& v) { return cost_U(cost, v); }, x, 1e-5);
    errs.emplace_back("grad_U", testing::relative_error(grad_U(cost, x), fd));
  }
  {  // mlp_backward
    auto net = make_mlp({3, 8, 8, 2}, rng);
    max_params = std::max(max_params, net.parameter_count());
    const Matrix batch = Matrix::Random(3, 4);
    const Matrix probe = Matrix::Random(2, 4);
    MLPCache cache;
    mlp_forward(net, batch, &cache);
    const auto grads = mlp_backward(net, cache, probe);
    MLPParams work = net;
    const Vector fd = testing::finite_difference(
        [&](const Vector& t) {
          work.unpack(t);
          return mlp_forward(work, batch).cwiseProduct(probe).sum();
        },
        net.pack());
    errs.emplace_back("mlp_backward", testing::relative_error(grads.params.pack(), fd));
  }

  NeuralPriorShape shape;
  shape.phase_dim = 2;
  shape.steps = 3;
  shape.width = 3;
  shape.depth = 2;
  shape.embed_dim = 2;
  auto prior = make_neural_prior(shape, 7);
  prior.unpack(prior.pack() + testing::random_vector(prior.parameter_count(), rng, 0.3));
  max_params = std::max(max_params, prior.parameter_count());
  NeuralPrior work = prior;
  const Index d = prior.dim();

  {  // assimilate_vjp
    const Vector z = testing::random_vector(d, rng);
    const auto proc = sample_process(2, 3, {0, 1}, 0.5, 0.3, 9);
    const Vector y = testing::random_vector(proc.size(), rng);
    const Vector seed = testing::random_vector(d, rng);
    const Vector fd = testing::finite_difference(
        [&](const Vector& t) {
          work.unpack(t);
          return neural_assimilate(work, z, y, proc, 0.6).dot(seed);
        },
        prior.pack());
    errs.emplace_back("assimilate_vjp", testing::relative_error(assimilate_vjp(prior, z, y, proc, 0.6, seed), fd));
  }
  {  // both training losses
    std::vector<Sample> samples;
    for (int n = 0; n < 3; ++n) {
      Sample s;
      s.id = n;
      s.x = testing::random_vector(d, rng);
      s.z0 = s.x + testing::random_vector(d, rng, 0.5);
      s.proc = sample_process(2, 3, {0}, 0.5, 0.3, 20 + static_cast<std::uint64_t>(n));
      s.y = observe(s.proc, s.x, 40 + static_cast<std::uint64_t>(n));
      samples.push_back(std::move(s));
    }
    const auto sched = TemperatureSchedule::regular(2, true);
    const Vector fd_one = testing::finite_difference(
        [&](const Vector& t) {
          work.unpack(t);
          return one_shot_loss(work, samples).loss;
        },
        prior.pack());
    errs.emplace_back("one_shot_loss", testing::relative_error(one_shot_loss(prior, samples).grad, fd_one));
    const Vector fd_multi = testing::finite_difference(
        [&](const Vector& t) {
          work.unpack(t);
          return multi_temperature_loss(work, samples, sched).loss;
        },
        prior.pack());
    errs.emplace_back("multi_temperature_loss",
                      testing::relative_error(multi_temperature_loss(prior, samples, sched).grad, fd_multi));
  }

  bool ok = max_params <= 200;
  std::string detail = format("max parameters %lld;", static_cast<long long>(max_params));
  for (const auto& [name, e] : errs) {
    ok = ok && e < 1e-4;
    detail += format(" %s %.1e", name.c_str(), e);
  }
  return {ok, detail};
}

Verdict linear_gaussian_exactness() {
  const Index steps = 30;
  const double dt = 0.1;
  Matrix init_cov = Matrix::Zero(2, 2);
  init_cov.diagonal() << 4.0, 0.25;
  const Matrix q = 0.01 * Matrix::Identity(2, 2);
  const auto prior = build_linear_pendulum_prior(steps, dt, Vector::Zero(2), init_cov, q);
  const WeakConstraintCost cost{linearized_pendulum(), dt, q.diagonal(), Vector::Zero(2), init_cov};
  FourDVarOptions opts;
  opts.max_iters = 1;
  opts.lambda0 = 0.0;
  opts.rel_tol = 0.0;
  std::mt19937_64 rng(303);
  double worst = 0.0;
  bool unit_steps = true;
  for (int trial = 0; trial < 10; ++trial) {
    const auto proc = sample_process(2, steps, {0}, 0.2, 0.1, 500 + static_cast<std::uint64_t>(trial));
    const Vector y = testing::gaussian_vector(proc.size(), rng);
    const Vector z0 = testing::random_vector(2 * steps, rng, 2.0);
    const auto trace = run_weak_4dvar(y, proc, z0, cost, opts);
    unit_steps = unit_steps && trace.iterations == 1 && trace.alphas.front() == 1.0;
    worst = std::max(worst, testing::relative_error(trace.iterates.at(1), map_dense(y, proc, prior)));
  }
  return {unit_steps && worst < 1e-8,
          format("10 random problems, one unit step each: %s, worst relative error %.2e",
                 unit_steps ? "yes" : "no", worst)};
}

/// One-sided paired t statistic of b - a.
double paired_t(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) diff[i] = b[i] - a[i];
  const auto [m, s] = mean_std(diff);
  return m / (s / std::sqrt(static_cast<double>(diff.size())));
}

Verdict lorenz_regime(const PerSample& ps) {
  std::vector<double> neural, uncond;
  for (const auto& [id, r] : ps.at("neural")) {
    neural.push_back(r.rmse);
    uncond.push_back(ps.at("unconditional").at(id).rmse);
  }
  const double t = paired_t(neural, uncond);
  // Student t 0.95 quantile for > 500 degrees of freedom.
  const bool paired_ok = neural.size() >= 512 && t > 1.648;
  const std::vector<std::pair<std::string, double>> targets{{"neural", 0.5}, {"4dvar", 0.9}, {"unconditional", 1.1}};
  bool bands = true;
  std::string detail = format("n %zu, paired t %.2f;", neural.size(), t);
  for (const auto& [m, ref] : targets) {
    const double e = mean_rmse(ps, m);
    const bool inside = e >= 0.5 * ref && e <= 2.0 * ref;
    bands = bands && inside;
    detail += format(" %s %.3f (band [%.2f, %.2f]%s)", m.c_str(), e, 0.5 * ref, 2.0 * ref, inside ? "" : " OUT");
  }
  if (!paired_ok) detail += " paired test OUT";
  return {paired_ok && bands, detail};
}

Verdict pendulum_regime(const PerSample& ps) {
  bool ok = true;
  std::string detail;
  for (const char* m : {"neural", "4dvar", "unconditional"}) {
    const double e = mean_rmse(ps, m);
    ok = ok && e <= 0.25;
    detail += format("%s %.3f ", m, e);
  }
  const double neural = mean_rmse(ps, "neural");
  ok = ok && neural >= 0.06 && neural <= 0.24;
  return {ok, detail + "(neural band [0.06, 0.24])"};
}

Verdict runtime_ordering(const std::vector<std::pair<std::string, fs::path>>& runs) {
  bool ok = true;
  std::string detail;
  for (const auto& [name, run] : runs) {
    const auto rel = read_relative_times(run);
    const double speedup = rel.at("4dvar") / rel.at("neural");
    ok = ok && speedup >= 2.0 && rel.at("unconditional") == 1.0;
    detail += format("%s: 4dvar %.2f neural %.2f uncond %.2f (speedup %.1fx); ", name.c_str(), rel.at("4dvar"),
                     rel.at("neural"), rel.at("unconditional"), speedup);
  }
  return {ok, detail};
}

Verdict hybrid_savings(const PerSample& ps, int cap) {
  // Runs that never reach the threshold count as censored at the cap.
  auto censored = [&](const Row& r) { return static_cast<double>(r.reached ? r.iterations : cap); };
  std::vector<double> from_neural, from_gauss;
  int fewer = 0;
  for (const auto& [id, r] : ps.at("hybrid_neural")) {
    const Row& g = ps.at("hybrid_gaussian").at(id);
    from_neural.push_back(censored(r));
    from_gauss.push_back(censored(g));
    fewer += censored(r) < censored(g);
  }
  const double mn = median(from_neural), mg = median(from_gauss);
  const auto n = from_neural.size();
  return {n >= 100 && mn <= 0.5 * mg,
          format("n %zu, median iterations neural start %.1f, Gaussian start %.1f, strictly fewer on %.0f%%",
                 n, mn, mg, 100.0 * fewer / static_cast<double>(n))};
}

Verdict monotonicity(const std::vector<fs::path>& runs) {
  int runs_audited = 0, violations = 0;
  for (const auto& run : runs) {
    for (const auto& [method, rows] : read_per_sample(run)) {
      if (method != "4dvar" && method.rfind("hybrid", 0) != 0) continue;
      for (const auto& [id, r] : rows) {
        ++runs_audited;
        violations += r.violations;
      }
    }
  }
  return {violations == 0 && runs_audited > 0,
          format("%d 4D-Var runs audited, %d violating steps", runs_audited, violations)};
}

/// Every CSV and checkpoint blob, relative path -> bytes.
std::map<std::string, std::string> numeric_outputs(const fs::path& run) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(run)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension();
    if (ext != ".csv" && ext != ".bin") continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    out[fs::relative(e.path(), run).string()] = ss.str();
  }
  return out;
}

Verdict determinism(const fs::path& work) {
  std::vector<std::map<std::string, std::string>> outputs;
  for (const char* sub : {"determinism_a", "determinism_b"}) {
    // Wall-clock timing is the one intentionally non-reproducible output; it is skipped here.
    run_pipeline(shipped("smoke.json", work / sub), false);
    outputs.push_back(numeric_outputs(work / sub));
  }
  std::size_t differing = 0;
  std::string first;
  for (const auto& [name, bytes] : outputs[0]) {
    const auto it = outputs[1].find(name);
    if (it == outputs[1].end() || it->second != bytes) {
      if (differing++ == 0) first = name;
    }
  }
  const bool same_set = outputs[0].size() == outputs[1].size();
  return {same_set && differing == 0 && !outputs[0].empty(),
          format("%zu files compared, %zu differ%s%s", outputs[0].size(), differing,
                 differing ? ", first " : "", first.c_str())};
}

Verdict versatility(const fs::path& run) {
  const auto t = io::read_csv(run / "evaluation" / "versatility.csv");
  const auto cg = t.column("geometry"), cm = t.column("m_mean"), cc = t.column("relative_change");
  int unseen = 0;
  bool ok = true;
  std::string detail;
  for (const auto& r : t.rows) {
    if (r[cg] == "training") continue;
    ++unseen;
    const double change = io::to_double(r[cc]);
    ok = ok && change < 0.5;
    detail += format("%s (m %.2f) %+.1f%%; ", r[cg].c_str(), io::to_double(r[cm]), 100.0 * change);
  }
  return {ok && unseen >= 3, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"incda acceptance run"};
  std::string work_arg = "acceptance_work";
  bool reuse = false;
  app.add_option("--work", work_arg, "scratch directory for pipeline runs");
  app.add_flag("--reuse", reuse, "keep finished runs in the scratch directory instead of starting over");
  CLI11_PARSE(app, argc, argv);
  const fs::path work = fs::absolute(work_arg);
  if (!reuse) fs::remove_all(work);
  fs::create_directories(work);

  std::vector<std::pair<int, Verdict>> verdicts;
  auto record = [&](int id, const std::function<Verdict()>& f) {
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = f();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    std::printf("criterion %d %s (%.1f s): %s\n", id, v.pass ? "PASS" : "FAIL", seconds_since(t0),
                v.detail.c_str());
    std::fflush(stdout);
    verdicts.emplace_back(id, v);
  };

  record(1, band_solver_oracle);
  record(2, gradient_suite);
  record(3, linear_gaussian_exactness);

  const auto lorenz = shipped("lorenz63.json", work / "lorenz63");
  const auto pend = shipped("pendulum.json", work / "pendulum");
  bool pipelines_ok = true;
  for (const auto* cfg : {&lorenz, &pend}) {
    try {
      if (!(reuse && fs::exists(fs::path(cfg->output_dir) / "report" / "summary.csv"))) run_pipeline(*cfg, true);
    } catch (const std::exception& e) {
      std::printf("pipeline %s failed: %s\n", to_string(cfg->system).c_str(), e.what());
      pipelines_ok = false;
    }
  }
  const fs::path lr = lorenz.output_dir, pr = pend.output_dir;
  auto need_pipelines = [&](const std::function<Verdict()>& f) {
    return [&, f] { return pipelines_ok ? f() : Verdict{false, "pipeline failed"}; };
  };
  record(4, need_pipelines([&] { return lorenz_regime(read_per_sample(lr)); }));
  record(5, need_pipelines([&] { return pendulum_regime(read_per_sample(pr)); }));
  record(6, need_pipelines([&] { return runtime_ordering({{"lorenz63", lr}, {"pendulum", pr}}); }));
  record(7, need_pipelines([&] { return hybrid_savings(read_per_sample(lr), lorenz.hybrid_max_iters); }));
  record(8, need_pipelines([&] { return monotonicity({lr, pr}); }));
  record(9, [&] { return determinism(work); });
  record(10, need_pipelines([&] { return versatility(lr); }));

  int failed = 0;
  std::ofstream summary(work / "acceptance.txt");
  for (const auto& [id, v] : verdicts) {
    summary << "criterion " << id << ' ' << (v.pass ? "PASS" : "FAIL") << ": " << v.detail << '\n';
    failed += v.pass ? 0 : 1;
  }
  std::printf("%zu criteria, %d failed\n", verdicts.size(), failed);
  return failed == 0 ? 0 : 1;
}
