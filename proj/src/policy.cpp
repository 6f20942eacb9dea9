#include "atr/policy.hpp"

#include <algorithm>
#include <cmath>

namespace atr::policy {

using task::ObjectKind;
using task::RelationKind;
using task::Skill;
using task::SkillContext;
using world::Action;
using world::Body;
using world::WorldState;

namespace {

// 16 scalar features describing one observed object.
void object_features(const world::Observation& obs, int id, double* out) {
  if (id < 0 || id >= static_cast<int>(obs.points.size())) {
    throw std::invalid_argument("featurize: unknown object id " +
                                std::to_string(id));
  }
  const Eigen::Matrix3Xd& pts = obs.points[id];
  if (pts.cols() == 0) {
    throw EmptyMask("object " + std::to_string(id) + " has no visible points");
  }
  const Eigen::Vector3d centroid = pts.rowwise().mean();
  const Eigen::Vector3d lo = pts.rowwise().minCoeff();
  const Eigen::Vector3d hi = pts.rowwise().maxCoeff();
  const Eigen::Vector3d ext = hi - lo;
  int k = 0;
  for (int a = 0; a < 3; ++a) out[k++] = centroid[a];
  for (int a = 0; a < 3; ++a) out[k++] = ext[a];
  for (int a = 0; a < task::kNumKinds; ++a) {
    out[k++] = obs.kinds[id] == static_cast<ObjectKind>(a) ? 1.0 : 0.0;
  }
  bool reachable = id == 0;  // the table is always within reach
  for (const task::Relation& r : obs.relations) {
    if (r.kind == RelationKind::kInWorkspace && r.src == id) reachable = true;
  }
  out[k++] = reachable ? 1.0 : 0.0;
  out[k++] = centroid[2] + 0.5 * ext[2];              // top-surface height
  out[k++] = 0.5 * std::hypot(ext[0], ext[1]);        // footprint half-diag
  out[k++] = std::hypot(centroid[0], centroid[1]);    // radial distance
}

Eigen::Vector3d masked_centroid(const world::Observation& obs, int id) {
  return obs.points[id].rowwise().mean();
}

}  // namespace

Eigen::VectorXd featurize(const world::Observation& obs,
                          const SkillContext& c) {
  Eigen::VectorXd f(kFeatureDim);
  object_features(obs, c.i, f.data());
  object_features(obs, c.j, f.data() + 16);
  const Eigen::Vector3d ci = masked_centroid(obs, c.i);
  const Eigen::Vector3d cj = masked_centroid(obs, c.j);
  f[32] = cj[0] - ci[0];
  f[33] = cj[1] - ci[1];
  f[34] = cj[2] - ci[2];
  const double half_i = f[14];
  const double half_j = f[30];
  f[35] = std::hypot(f[32], f[33]) - half_i - half_j;
  return f;
}

PolicyModel make_policy(Skill skill, Rng& rng, double lr) {
  PolicyModel m;
  m.skill = skill;
  m.spec.widths = {kFeatureDim, 64, 64, 2 * kActionDim};
  m.params = nn::ParamVector::zeros(nn::mlp_layout(m.spec));
  nn::init_params(m.params, rng);
  // Output layer starts near zero so initial action means sit at the origin
  // of the relative-offset action space instead of inheriting an arbitrary
  // feature-dependent bias from the random hidden layers.
  m.params.mat("l2.W") *= 0.01;
  // Start with a moderate exploration scale: log-std outputs near -1.
  m.params.mat("l2.b").col(0).tail(kActionDim).setConstant(-1.0);
  m.adam = nn::make_adam(m.params.layout.total(), lr);
  return m;
}

Action act(const PolicyModel& m, const Eigen::VectorXd& features, ActMode mode,
           Rng& rng) {
  if (features.size() != kFeatureDim) {
    throw std::invalid_argument("act: feature vector must be 36-d");
  }
  const Eigen::MatrixXd out = nn::mlp_forward(m.params, m.spec, features);
  Eigen::VectorXd a = out.col(0).head(kActionDim);
  if (mode == ActMode::kSample) {
    for (int d = 0; d < kActionDim; ++d) {
      const double ls = std::min(nn::kLogStdMax,
                                 std::max(nn::kLogStdMin,
                                          out(kActionDim + d, 0)));
      a[d] += std::exp(ls) * rng.normal();
    }
  }
  return Action::from_vector(a);
}

BcLossReport bc_loss(const PolicyModel& m, const BcBatch& batch) {
  if (batch.features.rows() != kFeatureDim ||
      batch.actions.rows() != kActionDim ||
      batch.features.cols() != batch.actions.cols() ||
      batch.features.cols() == 0) {
    throw std::invalid_argument("bc_loss: malformed batch");
  }
  nn::Tape t(m.params);
  const nn::Tape::Id x = t.input(batch.features);
  const nn::Tape::Id head = nn::tape_mlp(t, m.spec, x);
  const nn::Tape::Id mean = t.slice_rows(head, 0, kActionDim);
  const nn::Tape::Id log_std = t.slice_rows(head, kActionDim, kActionDim);
  const nn::Tape::Id loss = t.gaussian_nll(mean, log_std, batch.actions);
  BcLossReport report;
  report.loss = t.scalar(loss);
  report.grad = t.grad(loss);
  report.relu_sig = t.relu_signature();
  return report;
}

double bc_update(PolicyModel& m, const BcBatch& batch) {
  const BcLossReport report = bc_loss(m, batch);
  nn::adam_step(m.params, m.adam, report.grad);
  return report.loss;
}

// ---------------------------------------------------------------------------
// Scripted experts
// ---------------------------------------------------------------------------

namespace {

Action oracle_place_onto(const WorldState& s, const SkillContext& c) {
  const Body& bi = s.bodies[c.i];
  const Body& bj = s.bodies[c.j];
  return Action::clamped({0.0, 0.0, 0.5 * bi.size[2]},
                         {0.0, 0.0, bj.size[2]});
}

Action oracle_place_nextto(const WorldState& s, const SkillContext& c) {
  const Body& bi = s.bodies[c.i];
  const Body& bj = s.bodies[c.j];
  const double cardinal_gap = 0.05;
  const double diagonal_gap = 0.035;  // per-axis; total stays within the band
  const double dx = bj.hx() + bi.hx();
  const double dy = bj.hy() + bi.hy();
  const std::array<std::pair<double, double>, 8> offsets = {{
      {dx + cardinal_gap, 0.0},
      {0.0, dy + cardinal_gap},
      {-(dx + cardinal_gap), 0.0},
      {0.0, -(dy + cardinal_gap)},
      {dx + diagonal_gap, dy + diagonal_gap},
      {-(dx + diagonal_gap), dy + diagonal_gap},
      {dx + diagonal_gap, -(dy + diagonal_gap)},
      {-(dx + diagonal_gap), -(dy + diagonal_gap)},
  }};
  for (const auto& [ox, oy] : offsets) {
    if (std::abs(ox) > 0.5 || std::abs(oy) > 0.5) continue;
    Body cand = bi;
    cand.x = bj.x + ox;
    cand.y = bj.y + oy;
    cand.z = world::kTableTop;
    bool free = std::abs(cand.x) + cand.hx() <= 1.0 &&
                std::abs(cand.y) + cand.hy() <= 1.0;
    for (const Body& other : s.bodies) {
      if (!free) break;
      if (other.id == c.i) continue;
      if (world::bodies_overlap(s.cfg, cand, other)) free = false;
    }
    if (free) {
      return Action::clamped({0.0, 0.0, 0.5 * bi.size[2]}, {ox, oy, 0.0});
    }
  }
  return Action::clamped({0.0, 0.0, 0.5 * bi.size[2]},
                         {dx + cardinal_gap, 0.0, 0.0});
}

Action oracle_push_under(const WorldState& s, const SkillContext& c) {
  const Body& bi = s.bodies[c.i];
  return Action::clamped({0.0, 0.0, 0.25 * bi.size[2]}, {0.0, 0.0, 0.0});
}

Action oracle_pull_with(const WorldState& s, const SkillContext& c) {
  const Body& bi = s.bodies[c.i];
  const Body& bj = s.bodies[c.j];
  // Grasp the rear tip of the handle (maximum head extension) and catch the
  // target at the footprint point nearest the base.
  const Eigen::Vector3d pj(-0.5 * bj.size[0], 0.0, 0.5 * bj.size[2]);
  Eigen::Vector3d pi;
  pi[0] = std::min(bi.hx(), std::max(-bi.hx(), -bi.x));
  pi[1] = std::min(bi.hy(), std::max(-bi.hy(), -bi.y));
  pi[2] = 0.25 * bi.size[2];
  return Action::clamped(pi, pj);
}

}  // namespace

Action oracle_action(const WorldState& s, const SkillContext& c) {
  if (c.i < 0 || c.i >= static_cast<int>(s.bodies.size()) || c.j < 0 ||
      c.j >= static_cast<int>(s.bodies.size())) {
    throw world::UnknownObject("oracle: context references unknown object");
  }
  switch (c.skill) {
    case Skill::kPlaceOnto:
      return oracle_place_onto(s, c);
    case Skill::kPlaceNextto:
      return oracle_place_nextto(s, c);
    case Skill::kPushUnder:
      return oracle_push_under(s, c);
    case Skill::kPullWith:
      return oracle_pull_with(s, c);
  }
  throw world::UnknownSkill("oracle: unknown skill");
}

}  // namespace atr::policy
