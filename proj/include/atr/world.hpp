#pragma once

#include <Eigen/Core>
#include <optional>
#include <set>
#include <stdexcept>
#include <vector>

#include "atr/rng.hpp"
#include "atr/task.hpp"

namespace atr::world {

// ---------------------------------------------------------------------------
// Configuration (all distances in meters)
// ---------------------------------------------------------------------------

struct WorldConfig {
  double reach_radius = 0.8;          // workspace disk radius around the base
  double rack_clearance = 0.6;        // fraction of rack height under the slab
  double pull_spawn_max = 1.15;       // outer radius for out-of-reach spawns
  double pull_stop_offset = 0.05;     // pulled objects stop at reach - offset
  double hook_engage_slack = 0.05;
  double hook_handle_frac = 0.5;      // rear fraction of hook length graspable
  double sweep_step = 0.002;          // discrete step for push/pull motion
  double grasp_band_lo = 0.2;         // grasp height band, fraction of height
  double grasp_band_hi = 0.8;
  double contact_band_hi = 1.0;       // push contact band upper fraction
  double nextto_gap_lo = 0.01;
  double nextto_gap_hi = 0.10;
  double spawn_margin = 0.02;
  int max_spawn_attempts = 200;
  int points_per_object = 128;
  double camera_distance = 2.0;
};

inline constexpr double kTableTop = 0.4;

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

struct Body {
  int id = 0;
  task::ObjectKind kind = task::ObjectKind::kBox;
  Eigen::Vector3d size = Eigen::Vector3d::Zero();  // x extent, y extent, height
  double x = 0.0, y = 0.0;  // footprint center
  double z = 0.0;           // bottom height

  double top() const { return z + size[2]; }
  double hx() const { return 0.5 * size[0]; }
  double hy() const { return 0.5 * size[1]; }
};

struct WorldState {
  WorldConfig cfg;
  std::vector<Body> bodies;        // indexed by object id
  std::set<int> spawned_outside;   // ids spawned beyond the workspace
};

// A skill action: two positions relative to the poses of the two target
// objects. Components are clamped to [-0.5, 0.5] on construction.
struct Action {
  Eigen::Vector3d p_i = Eigen::Vector3d::Zero();
  Eigen::Vector3d p_j = Eigen::Vector3d::Zero();

  static Action clamped(const Eigen::Vector3d& pi, const Eigen::Vector3d& pj);
  static Action from_vector(const Eigen::VectorXd& v6);
  Eigen::VectorXd to_vector() const;
};

struct Observation {
  // Per object id: noisy surface points (3 x count) and exact instance masks
  // expressed as per-object point ownership.
  std::vector<Eigen::Matrix3Xd> points;
  std::vector<task::ObjectKind> kinds;
  std::vector<task::Relation> relations;  // perceived relational state
};

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct InstantiationInfeasible : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnknownObject : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnknownSkill : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvariantViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Geometry helpers (exposed for tests)
// ---------------------------------------------------------------------------

// Open-interval overlap of the two bodies' solid volumes. A rack's solid
// volume is its top slab (the space beneath is open).
bool bodies_overlap(const WorldConfig& cfg, const Body& a, const Body& b);
// True if a's footprint rectangle lies fully inside b's.
bool footprint_inside(const Body& a, const Body& b);
bool footprint_inside_at(const Body& a, double x, double y, const Body& b);
// Euclidean distance between the two full bounding boxes (0 when touching
// or overlapping).
double bbox_distance(const Body& a, const Body& b);

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Places objects per the task's initial relations: unconstrained objects
// uniformly over the workspace disk, pulled objects in the out-of-reach ring,
// hooks referenced by pull contexts fully inside the workspace. Throws
// InstantiationInfeasible when no collision-free placement is found.
WorldState instantiate(const task::TaskParam& w, Rng& rng,
                       const WorldConfig& cfg = {});

// Zone-constrained variant used by sequential benchmarks: listed objects are
// placed uniformly within their rectangle (still collision-checked).
struct SpawnZone {
  int id = 0;
  double x_lo = 0, x_hi = 0, y_lo = 0, y_hi = 0;
};
WorldState instantiate_zoned(const task::TaskParam& w,
                             const std::vector<SpawnZone>& zones, Rng& rng,
                             const WorldConfig& cfg = {});

// Renders noisy surface point sets from a camera on a sphere around the table
// center. Noise values are always drawn (then scaled by env.noise_scale) so
// observation streams align across noise settings. Points occluded by a rack
// slab are dropped.
Observation observe(const WorldState& s, const task::EnvParams& env, Rng& rng);

// Applies one skill; invalid grasps, unreachable targets and colliding
// placements leave the state unchanged. Returns false when the action was a
// no-op. Throws UnknownObject / UnknownSkill on malformed contexts.
bool execute_primitive(WorldState& s, const task::SkillContext& c,
                       const Action& a);

// Geometric success test for a skill in the current state.
bool success(const WorldState& s, const task::SkillContext& c);

// Centroid within the closed workspace disk.
bool in_workspace(const WorldState& s, int id);

// Geometric relational state: on / under / nextto / inworkspace (the table
// never appears as a relation source and has no inworkspace atom).
std::vector<task::Relation> relations(const WorldState& s);

// Throws InvariantViolation on interpenetration, floating objects, or bodies
// off the table.
void check_invariants(const WorldState& s);

}  // namespace atr::world
