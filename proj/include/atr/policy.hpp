#pragma once

#include <Eigen/Core>
#include <stdexcept>

#include "atr/nn.hpp"
#include "atr/rng.hpp"
#include "atr/task.hpp"
#include "atr/world.hpp"

namespace atr::policy {

inline constexpr int kFeatureDim = 36;  // 16 per object + 4 pair features
inline constexpr int kActionDim = 6;

struct EmptyMask : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Per-pair features from an observation: for each of i and j, the masked
// point centroid (3), bounding extents (3), kind one-hot (6), a reachability
// flag (1), top-surface height (1), footprint half-diagonal (1), and radial
// distance from the base (1) — then the centroid displacement j-i (3) and a
// horizontal clearance estimate between the two (1). Throws EmptyMask when a
// target has no visible points.
Eigen::VectorXd featurize(const world::Observation& obs,
                          const task::SkillContext& c);

struct PolicyModel {
  task::Skill skill = task::Skill::kPlaceOnto;
  nn::MlpSpec spec;
  nn::ParamVector params;
  nn::AdamState adam;
};

// 36 -> 64 -> 64 -> 12 MLP; output rows [0,6) are the action mean, rows
// [6,12) the log standard deviations (biases initialized to -1).
PolicyModel make_policy(task::Skill skill, Rng& rng, double lr = 3e-4);

enum class ActMode { kSample, kMean };

// Samples (or takes the mean of) the policy's Gaussian head; components are
// clamped to the action box. Mean mode consumes no randomness.
world::Action act(const PolicyModel& m, const Eigen::VectorXd& features,
                  ActMode mode, Rng& rng);

struct BcBatch {
  Eigen::MatrixXd features;  // kFeatureDim x B
  Eigen::MatrixXd actions;   // kActionDim x B
};

// One Adam step on the mean Gaussian negative log-likelihood; returns the
// pre-step loss.
double bc_update(PolicyModel& m, const BcBatch& batch);

// Tape evaluation of the cloning loss: loss, ReLU sign signature (for kink
// filtering in finite-difference checks) and the analytic parameter gradient.
struct BcLossReport {
  double loss = 0.0;
  std::uint64_t relu_sig = 0;
  Eigen::VectorXd grad;
};
BcLossReport bc_loss(const PolicyModel& m, const BcBatch& batch);

// Scripted expert acting from ground-truth state; used to bootstrap learning
// signal checks and sequential-evaluation references.
world::Action oracle_action(const world::WorldState& s,
                            const task::SkillContext& c);

}  // namespace atr::policy
