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

// incda generate|first-guess|train|evaluate|report --config <path> [options]
//
// Exit status: 0 success, 2 invalid config, 3 numerical failure, 1 other errors.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <optional>
#include <string>
#include <utility>

#include "CLI11.hpp"

#include "incda/harness.hpp"

namespace {

using namespace incda;
using namespace incda::harness;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> update_rule;
  std::string method = "all";
};

ExperimentConfig resolve(const Options& opts) {
  ExperimentConfig cfg = load_config(opts.config);
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.out) cfg.output_dir = *opts.out;
  if (opts.update_rule) cfg.update_rule = update_rule_from_string(*opts.update_rule);
  validate(cfg);
  return cfg;
}

void print_methods(const std::vector<MethodReport>& methods) {
  std::printf("%-16s %6s %10s %10s %10s %10s\n", "method", "n", "rmse", "std", "iters(med)", "rel.time");
  for (const auto& r : methods) {
    std::printf("%-16s %6lld %10.4f %10.4f %10.1f %10.2f\n", r.method.c_str(),
                static_cast<long long>(r.n), r.rmse_mean, r.rmse_std, r.iterations_median, r.relative_time);
  }
}

int run(const std::string& command, const Options& opts) {
  const ExperimentConfig cfg = resolve(opts);
  const MethodSet methods = method_set_from_string(opts.method);
  if (command == "generate") {
    const auto s = cmd_generate(cfg);
    std::printf("generated %lld train + %lld test trajectories, d = %lld, in %s\n",
                static_cast<long long>(s.train), static_cast<long long>(s.test),
                static_cast<long long>(s.dim), cfg.output_dir.c_str());
  } else if (command == "first-guess") {
    cmd_first_guess(cfg);
    std::printf("first guesses (%s prior) written to %s/data\n", cfg.first_guess.c_str(), cfg.output_dir.c_str());
  } else if (command == "train") {
    cmd_train(cfg, {methods, -1});
    std::printf("checkpoints written to %s/checkpoints\n", cfg.output_dir.c_str());
  } else if (command == "evaluate") {
    const auto res = cmd_evaluate(cfg, {methods, true});
    print_methods(res.methods);
    std::printf("monotonicity violations: %d over %lld 4D-Var runs\n", res.monotonicity_violations,
                static_cast<long long>(res.fourdvar_runs));
  } else if (command == "report") {
    print_methods(cmd_report(cfg).methods);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incremental neural and variational data assimilation experiments"};
  app.require_subcommand(1);
  Options opts;
  const std::pair<const char*, const char*> commands[] = {
      {"generate", "simulate trajectories and observations"},
      {"first-guess", "fit the Gaussian prior and write first guesses"},
      {"train", "train the neural and unconditional priors"},
      {"evaluate", "run every method on the test split"},
      {"report", "aggregate evaluation outputs into tables"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opts.config, "experiment JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", opts.seed, "override the config seed");
    sub->add_option("--out", opts.out, "override the output directory");
    sub->add_option("--update-rule", opts.update_rule, "sampler update rule")
        ->check(CLI::IsMember({"cold-diffusion", "paper-literal"}));
    sub->add_option("--method", opts.method, "methods to train or evaluate")
        ->check(CLI::IsMember({"all", "4dvar", "neural", "uncond", "hybrid"}));
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // A missing or unreadable config file is an invalid config.
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, opts);
  } catch (const incda::Error& e) {
    std::fprintf(stderr, "incda %s: %s\n", command.c_str(), e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "incda %s: %s\n", command.c_str(), e.what());
    return 1;
  }
}
