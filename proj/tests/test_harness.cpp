#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "atr/harness.hpp"
#include "doctest.h"

using namespace atr;
using namespace atr::harness;

namespace {

ExperimentConfig tiny_config(std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.seed = seed;
  cfg.iterations = 160;
  cfg.eval_interval = 80;
  cfg.eval_episodes = 2;
  cfg.batch_size = 16;
  cfg.sampler.warmup = 20;
  cfg.sampler.subset_m = 32;
  cfg.sampler.n_candidates = 8;
  return cfg;
}

std::string rows_csv(const TrainState& st) {
  std::ostringstream out;
  for (const MetricsRow& r : st.metrics) out << metrics_row_csv(r) << "\n";
  return out.str();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() / ("atr_test_" + tag);
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("config json round-trips through text") {
  ExperimentConfig cfg = tiny_config(7);
  cfg.mode = "diversity-only";
  cfg.out_dir = "/tmp/somewhere";
  cfg.sampler.beta = 0.25;
  cfg.prior.p_on = 0.4;
  const ExperimentConfig back = config_from_json(config_to_json(cfg));
  CHECK(config_hash(back) == config_hash(cfg));
  CHECK(back.mode == "diversity-only");
  CHECK(back.sampler.beta == 0.25);
  CHECK(back.prior.p_on == 0.4);
}

TEST_CASE("config parsing rejects junk") {
  CHECK_THROWS_AS((void)config_from_json("{\"sede\": 3}"), ConfigError);
  CHECK_THROWS_AS((void)config_from_json("{\"mode\": \"greedy\"}"),
                  ConfigError);
  CHECK_THROWS_AS((void)config_from_json("not json at all"), ConfigError);
  // Partial configs inherit defaults for everything unstated.
  const ExperimentConfig cfg = config_from_json("{\"seed\": 9}");
  CHECK(cfg.seed == 9);
  CHECK(cfg.iterations == 10000);
}

TEST_CASE("config hash separates distinct experiments") {
  const ExperimentConfig base = tiny_config(1);
  ExperimentConfig other = base;
  other.seed = 2;
  CHECK(config_hash(base) != config_hash(other));
  other = base;
  other.mode = "uniform";
  CHECK(config_hash(base) != config_hash(other));
  other = base;
  other.sampler.epsilon = 0.2;
  CHECK(config_hash(base) != config_hash(other));
  CHECK(config_hash(base) == config_hash(tiny_config(1)));
}

TEST_CASE("mode strings map onto sampler behavior") {
  ExperimentConfig cfg;
  cfg.mode = "uniform";
  CHECK(is_uniform_mode(cfg));
  cfg.mode = "atr";
  CHECK_FALSE(is_uniform_mode(cfg));
  CHECK(score_mode(cfg) == sampler::ScoreMode::kAtr);
  cfg.mode = "feasibility-only";
  CHECK(score_mode(cfg) == sampler::ScoreMode::kFeasibilityOnly);
  cfg.mode = "diversity-only";
  CHECK(score_mode(cfg) == sampler::ScoreMode::kDiversityOnly);
}

TEST_CASE("the bundled evaluation suite is complete and well-typed") {
  const EvalSuite suite = load_eval_suite(default_eval_suite_path());
  for (int s = 0; s < task::kNumSkills; ++s) {
    REQUIRE(suite.tasks[s].size() == 5);
    for (const task::TaskParam& w : suite.tasks[s]) {
      REQUIRE(w.contexts.size() == 1);
      CHECK(w.contexts[0].skill == static_cast<task::Skill>(s));
      CHECK_NOTHROW(task::validate(w));
    }
  }
}

TEST_CASE("metrics rows line up with the header") {
  const std::string header = metrics_header();
  MetricsRow row;
  row.iteration = 42;
  const std::string csv = metrics_row_csv(row);
  const auto count_fields = [](const std::string& s) {
    return 1 + std::count(s.begin(), s.end(), ',');
  };
  CHECK(count_fields(header) == count_fields(csv));
  CHECK(csv.substr(0, 3) == "42,");
}

TEST_CASE("training twice from one seed gives identical metrics") {
  const EvalSuite suite = load_eval_suite(default_eval_suite_path());
  const ExperimentConfig cfg = tiny_config(11);
  TrainState a = make_train_state(cfg);
  TrainState b = make_train_state(cfg);
  train(a, suite, cfg.iterations);
  train(b, suite, cfg.iterations);
  REQUIRE(!a.metrics.empty());
  CHECK(rows_csv(a) == rows_csv(b));
  CHECK(a.buffer.total_pushed() == cfg.iterations);  // one episode per step
}

TEST_CASE("checkpoints are byte-stable and resume exactly") {
  TempDir tmp("ckpt");
  const EvalSuite suite = load_eval_suite(default_eval_suite_path());
  const ExperimentConfig cfg = tiny_config(13);

  // Uninterrupted reference run.
  TrainState ref = make_train_state(cfg);
  train(ref, suite, cfg.iterations);

  // Interrupted at the midpoint, checkpointed, reloaded, resumed.
  TrainState half = make_train_state(cfg);
  train(half, suite, cfg.iterations / 2);
  const std::string ck = (tmp.path / "mid.bin").string();
  save_checkpoint(half, ck);
  TrainState resumed = load_checkpoint(ck);
  CHECK(resumed.iteration == cfg.iterations / 2);
  train(resumed, suite, cfg.iterations);
  CHECK(rows_csv(resumed) == rows_csv(ref));

  // save -> load -> save is the identity on the file bytes.
  const std::string ck2 = (tmp.path / "mid2.bin").string();
  save_checkpoint(load_checkpoint(ck), ck2);
  CHECK(slurp(ck) == slurp(ck2));

  // A corrupted file is rejected rather than half-read.
  std::string bytes = slurp(ck);
  bytes[0] ^= 0x5a;
  {
    std::ofstream out(tmp.path / "bad.bin", std::ios::binary);
    out << bytes;
  }
  CHECK_THROWS_AS((void)load_checkpoint((tmp.path / "bad.bin").string()),
                  CheckpointError);
}

TEST_CASE("evaluation leaves training state untouched") {
  const EvalSuite suite = load_eval_suite(default_eval_suite_path());
  const ExperimentConfig cfg = tiny_config(17);
  TrainState st = make_train_state(cfg);
  train(st, suite, 60);

  const Eigen::VectorXd model_before = st.model.params.values;
  const Eigen::VectorXd policy_before = st.policies[0].params.values;
  const int buf_before = st.buffer.size();
  const long pushed_before = st.buffer.total_pushed();

  const auto r1 = evaluate_skills(st, suite, 3, 123);
  const auto r2 = evaluate_skills(st, suite, 3, 123);
  const auto r3 = evaluate_skills(st, suite, 3, 456);

  CHECK(r1 == r2);  // same tag, same outcome
  (void)r3;         // different tag must at least not crash or mutate
  CHECK(st.model.params.values == model_before);
  CHECK(st.policies[0].params.values == policy_before);
  CHECK(st.buffer.size() == buf_before);
  CHECK(st.buffer.total_pushed() == pushed_before);
  for (double v : r1) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("the run directory contains the full experiment record") {
  TempDir tmp("rundir");
  ExperimentConfig cfg = tiny_config(19);
  cfg.iterations = 60;
  cfg.eval_interval = 30;
  cfg.out_dir = (tmp.path / "run").string();
  const TrainState st = run_experiment(cfg);
  CHECK(st.iteration == 60);
  for (const char* name : {"metrics.csv", "episodes.jsonl", "selections.jsonl",
                           "checkpoint.bin", "summary.json"}) {
    CHECK(std::filesystem::exists(tmp.path / "run" / name));
  }
  const std::string metrics = slurp((tmp.path / "run" / "metrics.csv").string());
  CHECK(metrics.rfind(metrics_header(), 0) == 0);
}

TEST_CASE("scripted control solves every bundled benchmark") {
  const auto benches = load_benchmarks(default_benchmarks_path());
  REQUIRE(benches.size() == 3);
  for (const SeqBenchmark& b : benches) {
    const SeqResult r = run_sequential_eval(nullptr, b, 20, true, 5);
    CHECK(r.trials == 20);
    CHECK(r.successes == 20);
    CHECK(r.mean_steps_on_success >= 1.0);
    CHECK(r.mean_steps_on_success <= 10.0);
  }
}
