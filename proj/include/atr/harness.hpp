#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "atr/policy.hpp"
#include "atr/sampler.hpp"
#include "atr/symbolic.hpp"
#include "atr/task.hpp"
#include "atr/world.hpp"

namespace atr::harness {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  std::uint64_t seed = 1;
  int iterations = 10000;
  int eval_interval = 1000;
  int eval_episodes = 50;  // per skill per evaluation
  int batch_size = 128;
  double lr = 3e-4;
  // atr | uniform | feasibility-only | diversity-only
  std::string mode = "atr";
  std::string out_dir = "out";
  int buffer_capacity = 10000;
  std::string eval_suite;  // empty -> bundled default
  sampler::SamplerConfig sampler;
  world::WorldConfig world;
  task::PriorConfig prior;
};

ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);
std::uint64_t config_hash(const ExperimentConfig& cfg);
// Maps cfg.mode to a sampler scoring mode ("uniform" has none).
bool is_uniform_mode(const ExperimentConfig& cfg);
sampler::ScoreMode score_mode(const ExperimentConfig& cfg);

std::string default_eval_suite_path();
std::string default_benchmarks_path();

// ---------------------------------------------------------------------------
// Evaluation suite (fixed single-step tasks per skill)
// ---------------------------------------------------------------------------

struct EvalSuite {
  std::array<std::vector<task::TaskParam>, task::kNumSkills> tasks;
};
EvalSuite load_eval_suite(const std::string& path);

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct MetricsRow {
  int iteration = 0;
  std::array<double, task::kNumSkills> eval_success{};
  double value_loss = -1.0;  // -1 until the first update
  std::array<double, task::kNumSkills> bc_loss{-1.0, -1.0, -1.0, -1.0};
  double mean_novelty = -1.0;
  double reward_frac = 0.0;  // successes / episodes since the previous row
};
std::string metrics_header();
std::string metrics_row_csv(const MetricsRow& row);

// ---------------------------------------------------------------------------
// Training state
// ---------------------------------------------------------------------------

struct TrainState {
  ExperimentConfig cfg;
  sampler::TaskEncoder model;
  std::vector<policy::PolicyModel> policies;  // one per skill
  sampler::ReplayBuffer buffer{10000};
  int iteration = 0;
  double last_value_loss = -1.0;
  std::array<double, task::kNumSkills> last_bc_loss{-1.0, -1.0, -1.0, -1.0};
  double last_mean_novelty = -1.0;
  long window_episodes = 0;
  long window_successes = 0;
  std::vector<MetricsRow> metrics;
};

TrainState make_train_state(const ExperimentConfig& cfg);

struct TrainLogs {
  std::ostream* episodes = nullptr;    // JSON lines, one per skill episode
  std::ostream* selections = nullptr;  // JSON lines, one per sampler decision
};

// Advances training to iteration `until` (exclusive upper bound). All
// per-iteration randomness derives from (seed, stream, iteration), so resuming
// from a checkpoint reproduces an uninterrupted run exactly.
void train(TrainState& st, const EvalSuite& suite, int until,
           const TrainLogs& logs = {});

// Frozen-policy evaluation on the fixed suite; mutates nothing. The tag keeps
// different evaluation rounds on distinct random streams.
std::array<double, task::kNumSkills> evaluate_skills(const TrainState& st,
                                                     const EvalSuite& suite,
                                                     int episodes_per_skill,
                                                     std::uint64_t tag);

// ---------------------------------------------------------------------------
// Checkpoints (binary, byte-stable; save -> load -> save is the identity)
// ---------------------------------------------------------------------------

void save_checkpoint(const TrainState& st, const std::string& path);
TrainState load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Sequential benchmarks
// ---------------------------------------------------------------------------

struct SeqBenchmark {
  std::string name;
  task::TaskParam w;
  std::vector<world::SpawnZone> zones;
  sym::Goal goal;
};
std::vector<SeqBenchmark> load_benchmarks(const std::string& path);

struct SeqResult {
  int trials = 0;
  int successes = 0;
  double mean_steps_on_success = 0.0;
};

// Closed-loop: extract scene, plan, execute the first skill, repeat; success
// iff the goal holds within 10 executed skills. `st` may be null when
// use_oracle is true.
SeqResult run_sequential_eval(const TrainState* st, const SeqBenchmark& bench,
                              int trials, bool use_oracle, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Full experiment: train, then write metrics.csv, episodes.jsonl,
// selections.jsonl, checkpoint.bin and summary.json into cfg.out_dir.
// ---------------------------------------------------------------------------

TrainState run_experiment(const ExperimentConfig& cfg);

}  // namespace atr::harness
