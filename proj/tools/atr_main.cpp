// Command-line front end: training runs, skill and sequential evaluation,
// prior sampling, symbolic planning, episode-log replay and gradient checks.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "atr/harness.hpp"

namespace {

using namespace atr;
using nlohmann::json;

template <typename T>
void override_from(const CLI::App* cmd, const std::string& name, T& out) {
  const CLI::Option* opt = cmd->get_option_no_throw(name);
  if (opt != nullptr && opt->count() > 0) out = opt->as<T>();
}

harness::ExperimentConfig resolve_config(const std::string& config_path,
                                         const CLI::App* cmd) {
  harness::ExperimentConfig cfg;
  if (!config_path.empty()) cfg = harness::load_config_file(config_path);
  override_from(cmd, "--seed", cfg.seed);
  override_from(cmd, "--mode", cfg.mode);
  override_from(cmd, "--out", cfg.out_dir);
  override_from(cmd, "--iterations", cfg.iterations);
  harness::is_uniform_mode(cfg);  // validates the mode string
  return cfg;
}

int cmd_train(const std::string& config_path, const CLI::App* cmd) {
  const harness::ExperimentConfig cfg = resolve_config(config_path, cmd);
  std::cout << "mode=" << cfg.mode << " seed=" << cfg.seed
            << " iterations=" << cfg.iterations << " out=" << cfg.out_dir
            << "\n";
  const harness::TrainState st = harness::run_experiment(cfg);
  if (!st.metrics.empty()) {
    const harness::MetricsRow& last = st.metrics.back();
    std::cout << "final eval success:";
    for (int k = 0; k < task::kNumSkills; ++k) {
      std::cout << " " << task::skill_name(static_cast<task::Skill>(k)) << "="
                << last.eval_success[k];
    }
    std::cout << "\n";
  }
  std::cout << "metrics: " << cfg.out_dir << "/metrics.csv\n"
            << "checkpoint: " << cfg.out_dir << "/checkpoint.bin\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& suite_path,
             int episodes, bool oracle, std::uint64_t seed) {
  const std::string path =
      suite_path.empty() ? harness::default_eval_suite_path() : suite_path;
  const harness::EvalSuite suite = harness::load_eval_suite(path);
  std::array<double, task::kNumSkills> rates{};
  if (oracle) {
    const world::WorldConfig wcfg;
    for (int k = 0; k < task::kNumSkills; ++k) {
      int successes = 0;
      for (int e = 0; e < episodes; ++e) {
        const task::TaskParam& w = suite.tasks[k][e % suite.tasks[k].size()];
        Rng rng(derive_seed(seed, 0x0eef, static_cast<std::uint64_t>(k),
                            static_cast<std::uint64_t>(e)));
        world::WorldState ws;
        try {
          ws = world::instantiate(w, rng, wcfg);
        } catch (const world::InstantiationInfeasible&) {
          continue;
        }
        const task::SkillContext& c = w.contexts[0];
        world::execute_primitive(ws, c, policy::oracle_action(ws, c));
        if (world::success(ws, c)) ++successes;
      }
      rates[k] = static_cast<double>(successes) / episodes;
    }
  } else {
    if (checkpoint.empty()) {
      std::cerr << "eval: need --checkpoint or --oracle\n";
      return 1;
    }
    harness::TrainState st = harness::load_checkpoint(checkpoint);
    st.cfg.seed = seed;
    rates = harness::evaluate_skills(st, suite, episodes, 0xe0a1);
  }
  std::cout << "episodes per skill: " << episodes
            << (oracle ? " (oracle policies)" : "") << "\n";
  for (int k = 0; k < task::kNumSkills; ++k) {
    std::cout << task::skill_name(static_cast<task::Skill>(k)) << ": "
              << rates[k] << "\n";
  }
  return 0;
}

int cmd_seq_eval(const std::string& checkpoint, const std::string& bench_path,
                 int trials, bool oracle, std::uint64_t seed) {
  const std::string path =
      bench_path.empty() ? harness::default_benchmarks_path() : bench_path;
  const std::vector<harness::SeqBenchmark> benches =
      harness::load_benchmarks(path);
  harness::TrainState st;
  const harness::TrainState* stp = nullptr;
  if (!oracle) {
    if (checkpoint.empty()) {
      std::cerr << "seq-eval: need --checkpoint or --oracle\n";
      return 1;
    }
    st = harness::load_checkpoint(checkpoint);
    stp = &st;
  }
  std::cout << "trials per family: " << trials
            << (oracle ? " (oracle policies)" : "") << "\n";
  for (const harness::SeqBenchmark& b : benches) {
    const harness::SeqResult r =
        harness::run_sequential_eval(stp, b, trials, oracle, seed);
    std::cout << b.name << ": " << r.successes << "/" << r.trials
              << " success, mean steps on success " << r.mean_steps_on_success
              << "\n";
  }
  return 0;
}

int cmd_sample(const std::string& config_path, const CLI::App* cmd, int n) {
  const harness::ExperimentConfig cfg = resolve_config(config_path, cmd);
  Rng rng(derive_seed(cfg.seed, 0x5a3));
  for (int i = 0; i < n; ++i) {
    const task::TaskParam w = task::sample_prior(rng, cfg.prior);
    std::cout << task::to_json(w) << "\n";
  }
  return 0;
}

sym::Goal goal_from_json(const json& j) {
  sym::Goal goal;
  for (const json& jg : j) {
    task::Relation r;
    r.kind = task::relation_from_name(jg.at("kind").get<std::string>());
    r.src = jg.at("src").get<int>();
    r.dst = jg.value("dst", -1);
    goal.push_back(r);
  }
  return goal;
}

void print_plan(const std::vector<task::SkillContext>& steps) {
  if (steps.empty()) {
    std::cout << "goal already satisfied (empty plan)\n";
    return;
  }
  for (std::size_t s = 0; s < steps.size(); ++s) {
    std::cout << (s + 1) << ": " << task::skill_name(steps[s].skill) << "("
              << steps[s].i << ", " << steps[s].j << ")\n";
  }
}

int cmd_plan(const std::string& bench_name, const std::string& bench_path,
             const std::string& task_path, const std::string& goal_path,
             std::uint64_t seed) {
  const world::WorldConfig wcfg;
  task::TaskParam w;
  std::vector<world::SpawnZone> zones;
  sym::Goal goal;
  if (!bench_name.empty()) {
    const std::string path =
        bench_path.empty() ? harness::default_benchmarks_path() : bench_path;
    bool found = false;
    for (harness::SeqBenchmark& b : harness::load_benchmarks(path)) {
      if (b.name == bench_name) {
        w = b.w;
        zones = b.zones;
        goal = b.goal;
        found = true;
        break;
      }
    }
    if (!found) {
      std::cerr << "plan: no benchmark named `" << bench_name << "` in "
                << path << "\n";
      return 1;
    }
  } else {
    if (task_path.empty() || goal_path.empty()) {
      std::cerr << "plan: need either --benchmark or both --task and --goal\n";
      return 1;
    }
    std::ifstream tin(task_path);
    if (!tin) {
      std::cerr << "plan: cannot open " << task_path << "\n";
      return 1;
    }
    std::stringstream ss;
    ss << tin.rdbuf();
    w = task::from_json(ss.str());
    std::ifstream gin(goal_path);
    if (!gin) {
      std::cerr << "plan: cannot open " << goal_path << "\n";
      return 1;
    }
    json jg;
    gin >> jg;
    goal = goal_from_json(jg);
  }
  Rng rng(derive_seed(seed, 0x91a2));
  const world::WorldState ws =
      zones.empty() ? world::instantiate(w, rng, wcfg)
                    : world::instantiate_zoned(w, zones, rng, wcfg);
  const sym::SceneGraph g = sym::extract_scene_graph(ws);
  try {
    print_plan(sym::plan(g, goal, 10));
  } catch (const sym::NoPlanFound&) {
    std::cout << "no plan within 10 steps\n";
    return 1;
  }
  return 0;
}

int cmd_replay(const std::string& log_path, const std::string& config_path) {
  world::WorldConfig wcfg;
  if (!config_path.empty()) {
    wcfg = harness::load_config_file(config_path).world;
  }
  std::ifstream in(log_path);
  if (!in) {
    std::cerr << "replay: cannot open " << log_path << "\n";
    return 1;
  }
  long checked = 0, mismatches = 0, line_no = 0;
  long current_iteration = -1;
  bool current_infeasible = false;
  world::WorldState ws;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      std::cerr << "replay: bad JSON on line " << line_no << ": " << e.what()
                << "\n";
      return 1;
    }
    const long it = j.at("iteration").get<long>();
    if (it != current_iteration) {
      current_iteration = it;
      const task::TaskParam w = task::from_json(j.at("task").dump());
      Rng inst_rng(j.at("inst_seed").get<std::uint64_t>());
      current_infeasible = false;
      try {
        ws = world::instantiate(w, inst_rng, wcfg);
      } catch (const world::InstantiationInfeasible&) {
        current_infeasible = true;
      }
      if (current_infeasible != j.at("infeasible").get<bool>()) {
        std::cerr << "replay: feasibility mismatch at iteration " << it
                  << "\n";
        ++mismatches;
      }
    }
    ++checked;
    double replayed = 0.0;
    if (j.at("executed").get<bool>() && !current_infeasible) {
      task::SkillContext c;
      c.skill = task::skill_from_name(j.at("skill").get<std::string>());
      c.i = j.at("i").get<int>();
      c.j = j.at("j").get<int>();
      const auto av = j.at("action").get<std::vector<double>>();
      const world::Action a = world::Action::from_vector(
          Eigen::Map<const Eigen::VectorXd>(av.data(), av.size()));
      world::execute_primitive(ws, c, a);
      replayed = world::success(ws, c) ? 1.0 : 0.0;
    }
    if (replayed != j.at("reward").get<double>()) {
      std::cerr << "replay: reward mismatch at iteration " << it << " line "
                << line_no << " (logged " << j.at("reward").get<double>()
                << ", replayed " << replayed << ")\n";
      ++mismatches;
    }
  }
  std::cout << "replayed " << checked << " episodes, " << mismatches
            << " mismatches\n";
  return mismatches == 0 ? 0 : 1;
}

int cmd_gradcheck(int trials, std::uint64_t seed, int coords_per_trial) {
  task::PriorConfig prior;
  double max_rel = 0.0, max_abs = 0.0;
  long checked = 0, kinks = 0;
  for (int trial = 0; trial < trials; ++trial) {
    // Encoder + value head on a small task batch.
    {
      Rng rng(derive_seed(seed, 0x6c1, static_cast<std::uint64_t>(trial)));
      sampler::TaskEncoder m = sampler::make_model(rng);
      std::vector<task::TaskParam> tasks;
      for (int i = 0; i < 3; ++i) tasks.push_back(task::sample_prior(rng, prior));
      std::vector<const task::TaskParam*> ptrs;
      for (const task::TaskParam& w : tasks) ptrs.push_back(&w);
      Eigen::VectorXd rewards(3);
      for (int i = 0; i < 3; ++i) rewards[i] = rng.uniform();
      const sampler::ValueLossReport base = sampler::value_loss(m, ptrs, rewards);
      std::vector<int> coords;
      for (int c = 0; c < coords_per_trial; ++c) {
        coords.push_back(static_cast<int>(
            rng.uniform_index(m.params.values.size())));
      }
      const nn::LossFn f = [&](const nn::ParamVector& p) {
        sampler::TaskEncoder probe;
        probe.params = p;
        const sampler::ValueLossReport r = sampler::value_loss(probe, ptrs, rewards);
        return nn::LossEval{r.loss, r.relu_sig};
      };
      const nn::FdReport rep =
          nn::finite_diff_check(m.params, f, base.grad, 1e-5, coords);
      max_rel = std::max(max_rel, rep.max_rel_err);
      max_abs = std::max(max_abs, rep.max_abs_err);
      checked += rep.n_checked;
      kinks += rep.n_kink_skipped;
    }
    // Gaussian policy head on a random cloning batch.
    {
      Rng rng(derive_seed(seed, 0x6c2, static_cast<std::uint64_t>(trial)));
      const task::Skill skill = static_cast<task::Skill>(trial % task::kNumSkills);
      policy::PolicyModel pm = policy::make_policy(skill, rng);
      policy::BcBatch batch;
      const int kBatch = 4;
      batch.features.resize(policy::kFeatureDim, kBatch);
      batch.actions.resize(policy::kActionDim, kBatch);
      for (int col = 0; col < kBatch; ++col) {
        for (int r = 0; r < policy::kFeatureDim; ++r) {
          batch.features(r, col) = rng.normal();
        }
        for (int r = 0; r < policy::kActionDim; ++r) {
          batch.actions(r, col) = rng.uniform(-0.5, 0.5);
        }
      }
      const policy::BcLossReport base = policy::bc_loss(pm, batch);
      std::vector<int> coords;
      for (int c = 0; c < coords_per_trial; ++c) {
        coords.push_back(static_cast<int>(
            rng.uniform_index(pm.params.values.size())));
      }
      const nn::LossFn f = [&](const nn::ParamVector& p) {
        policy::PolicyModel probe = pm;
        probe.params = p;
        const policy::BcLossReport r = policy::bc_loss(probe, batch);
        return nn::LossEval{r.loss, r.relu_sig};
      };
      const nn::FdReport rep =
          nn::finite_diff_check(pm.params, f, base.grad, 1e-5, coords);
      max_rel = std::max(max_rel, rep.max_rel_err);
      max_abs = std::max(max_abs, rep.max_abs_err);
      checked += rep.n_checked;
      kinks += rep.n_kink_skipped;
    }
  }
  std::cout << "gradcheck: " << trials << " encoder+value and " << trials
            << " policy instances, " << checked << " coordinates checked ("
            << kinks << " kink-skipped)\n"
            << "max relative error " << max_rel << ", max absolute error "
            << max_abs << "\n";
  const bool ok = max_rel < 1e-4;
  std::cout << (ok ? "PASS" : "FAIL") << " (threshold 1e-4)\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Procedural tabletop manipulation: task generation, skill training "
      "and symbolic sequencing"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string config_path, checkpoint, suite_path, bench_path, bench_name;
  std::string task_path, goal_path, log_path;
  std::uint64_t seed = 1;
  int episodes = 50, trials = 200, n_samples = 10, gc_trials = 100;
  int gc_coords = 60;
  bool oracle = false;

  CLI::App* train = app.add_subcommand("train", "Run a training experiment");
  train->add_option("--config", config_path, "JSON config file");
  train->add_option("--seed", seed, "Random seed override");
  train->add_option("--mode", "Sampler mode")
      ->check(CLI::IsMember(
          {"atr", "uniform", "feasibility-only", "diversity-only"}));
  train->add_option("--out", "Output directory override");
  train->add_option("--iterations", "Iteration count override")
      ->check(CLI::PositiveNumber);

  CLI::App* ev = app.add_subcommand("eval", "Evaluate per-skill success");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate");
  ev->add_option("--suite", suite_path, "Evaluation suite JSON");
  ev->add_option("--episodes", episodes, "Episodes per skill")
      ->check(CLI::PositiveNumber);
  ev->add_flag("--oracle", oracle, "Use analytic oracle policies");
  ev->add_option("--seed", seed, "Random seed");

  CLI::App* seq = app.add_subcommand("seq-eval", "Closed-loop benchmarks");
  seq->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate");
  seq->add_option("--benchmarks", bench_path, "Benchmark definition JSON");
  seq->add_option("--trials", trials, "Trials per family")
      ->check(CLI::PositiveNumber);
  seq->add_flag("--oracle", oracle, "Use analytic oracle policies");
  seq->add_option("--seed", seed, "Random seed");

  CLI::App* sample = app.add_subcommand("sample", "Print prior task samples");
  sample->add_option("--config", config_path, "JSON config file");
  sample->add_option("--n", n_samples, "Number of tasks")
      ->check(CLI::PositiveNumber);
  sample->add_option("--seed", seed, "Random seed override");

  CLI::App* plan = app.add_subcommand("plan", "Plan for a benchmark or task");
  plan->add_option("--benchmark", bench_name, "Benchmark family name");
  plan->add_option("--benchmarks", bench_path, "Benchmark definition JSON");
  plan->add_option("--task", task_path, "Task JSON file");
  plan->add_option("--goal", goal_path, "Goal JSON file (relation array)");
  plan->add_option("--seed", seed, "Random seed");

  CLI::App* replay = app.add_subcommand("replay", "Re-verify an episode log");
  replay->add_option("--log", log_path, "episodes.jsonl to verify")
      ->required();
  replay->add_option("--config", config_path, "JSON config file");

  CLI::App* gc = app.add_subcommand("gradcheck",
                                    "Finite-difference gradient check");
  gc->add_option("--trials", gc_trials, "Model instances per family")
      ->check(CLI::PositiveNumber);
  gc->add_option("--coords", gc_coords, "Coordinates checked per instance")
      ->check(CLI::PositiveNumber);
  gc->add_option("--seed", seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help() << "\n";
    return 2;
  }

  try {
    if (train->parsed()) return cmd_train(config_path, train);
    if (ev->parsed()) {
      return cmd_eval(checkpoint, suite_path, episodes, oracle, seed);
    }
    if (seq->parsed()) {
      return cmd_seq_eval(checkpoint, bench_path, trials, oracle, seed);
    }
    if (sample->parsed()) return cmd_sample(config_path, sample, n_samples);
    if (plan->parsed()) {
      return cmd_plan(bench_name, bench_path, task_path, goal_path, seed);
    }
    if (replay->parsed()) return cmd_replay(log_path, config_path);
    if (gc->parsed()) return cmd_gradcheck(gc_trials, seed, gc_coords);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << app.help() << "\n";
  return 2;
}
