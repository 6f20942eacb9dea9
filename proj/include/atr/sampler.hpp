#pragma once

#include <Eigen/Core>
#include <deque>
#include <stdexcept>
#include <vector>

#include "atr/nn.hpp"
#include "atr/rng.hpp"
#include "atr/task.hpp"

namespace atr::sampler {

inline constexpr int kEmbedDim = 64;
inline constexpr int kPhiDim = 16;

struct InsufficientData : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Relational task encoder + value head (one shared parameter vector)
// ---------------------------------------------------------------------------

struct TaskEncoder {
  nn::ParamVector params;
  nn::AdamState adam;
};

TaskEncoder make_model(Rng& rng, double lr = 3e-4);

// 64-d embedding of a task: per-entity 16-d encoders, relation and context
// terms summed in an attribute-canonical order (so embeddings are exactly
// invariant to edge order and object relabeling), fused by one 64-d layer.
Eigen::VectorXd encode(const TaskEncoder& m, const task::TaskParam& w);

// Sigmoid feasibility estimate V(phi(w)) in (0, 1).
double value(const TaskEncoder& m, const task::TaskParam& w);

// Tape evaluation of the value-head MSE on a task batch: loss, ReLU sign
// signature (for kink filtering in finite-difference checks) and the
// analytic parameter gradient.
struct ValueLossReport {
  double loss = 0.0;
  std::uint64_t relu_sig = 0;
  Eigen::VectorXd grad;
};
ValueLossReport value_loss(const TaskEncoder& m,
                           const std::vector<const task::TaskParam*>& tasks,
                           const Eigen::VectorXd& rewards);

// One Adam step on mean squared error against rewards; returns pre-step loss.
double value_update(TaskEncoder& m,
                    const std::vector<const task::TaskParam*>& tasks,
                    const Eigen::VectorXd& rewards);

// ---------------------------------------------------------------------------
// Novelty machinery
// ---------------------------------------------------------------------------

// Exact Euclidean distance to the K-th nearest neighbor (1-based: K=1 is the
// closest point). Throws InsufficientData when the subset has fewer than K.
double knn_distance(const Eigen::VectorXd& query,
                    const std::vector<Eigen::VectorXd>& subset, int K);

// Particle density estimate K / (m * V_K), with V_K the volume of the dim-
// dimensional ball of radius d. Returns +infinity at d == 0. Diagnostic only.
double density_estimate(double d, int K, int m, int dim);

// ---------------------------------------------------------------------------
// Replay buffer
// ---------------------------------------------------------------------------

struct Episode {
  task::TaskParam w;
  task::SkillContext context;
  Eigen::VectorXd features;  // empty unless the skill was executed
  Eigen::VectorXd action;    // empty unless the skill was executed
  double reward = 0.0;
  bool executed = false;  // observation featurized and an action applied
  bool acted = false;     // the primitive changed the world (valid grasp/contact)
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity = 10000);

  void push(Episode e);
  int size() const { return static_cast<int>(items_.size()); }
  int capacity() const { return capacity_; }
  long total_pushed() const { return total_pushed_; }
  const Episode& at(int idx) const { return items_[idx]; }

  // Uniform sample of `count` distinct indices (count <= size).
  std::vector<int> sample_indices(Rng& rng, int count) const;

  void set_total_pushed(long n) { total_pushed_ = n; }

 private:
  int capacity_;
  long total_pushed_ = 0;
  std::deque<Episode> items_;  // FIFO: front is oldest
};

// ---------------------------------------------------------------------------
// Scoring and selection
// ---------------------------------------------------------------------------

enum class ScoreMode { kAtr, kFeasibilityOnly, kDiversityOnly };

struct SamplerConfig {
  double beta = 0.1;
  int k = 5;
  int subset_m = 512;
  int n_candidates = 64;
  double epsilon = 0.1;
  int warmup = 50;  // effective threshold is max(warmup, k)
  ScoreMode mode = ScoreMode::kAtr;
};

struct SelectionRecord {
  int chosen_index = -1;
  bool warmup_branch = false;
  bool epsilon_branch = false;
  std::vector<double> scores;
  std::vector<double> novelty;  // KNN distance per candidate
  double chosen_score = 0.0;
};

// Ranking score f(w) for one candidate given embeddings of the comparison
// subset: value term plus beta-weighted KNN distance (mode selects terms).
double score(const TaskEncoder& m, const task::TaskParam& w,
             const std::vector<Eigen::VectorXd>& subset_embeddings,
             const SamplerConfig& cfg);

// Picks one candidate: uniformly during warm-up (buffer smaller than
// max(warmup, k)), otherwise epsilon-uniform / softmax over scores. The
// comparison subset (min(subset_m, buffer size) episodes) is drawn once per
// call. A SelectionRecord is filled when given.
const task::TaskParam& select_task(const TaskEncoder& m,
                                   const std::vector<task::TaskParam>& cands,
                                   const ReplayBuffer& buffer,
                                   const SamplerConfig& cfg, Rng& rng,
                                   SelectionRecord* record = nullptr);

}  // namespace atr::sampler
