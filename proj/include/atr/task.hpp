#pragma once

#include <Eigen/Core>
#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "atr/rng.hpp"

namespace atr::task {

// ---------------------------------------------------------------------------
// Core vocabulary
// ---------------------------------------------------------------------------

enum class ObjectKind : int {
  kTable = 0,
  kRack = 1,
  kContainer = 2,
  kHook = 3,
  kBox = 4,
  kCan = 5,
};
inline constexpr int kNumKinds = 6;

enum class Skill : int {
  kPlaceOnto = 0,
  kPlaceNextto = 1,
  kPushUnder = 2,
  kPullWith = 3,
};
inline constexpr int kNumSkills = 4;

enum class RelationKind : int {
  kOn = 0,
  kUnder = 1,
  kNextto = 2,
  kInWorkspace = 3,  // unary: dst is ignored (-1)
};

const char* kind_name(ObjectKind k);
const char* skill_name(Skill s);
const char* relation_name(RelationKind r);
ObjectKind kind_from_name(const std::string& s);
Skill skill_from_name(const std::string& s);
RelationKind relation_from_name(const std::string& s);

struct ObjectSpec {
  int id = 0;
  ObjectKind kind = ObjectKind::kBox;
  Eigen::Vector3d size = Eigen::Vector3d::Zero();  // (x extent, y extent, height)
};

struct Relation {
  RelationKind kind = RelationKind::kOn;
  int src = 0;
  int dst = -1;

  friend bool operator==(const Relation& a, const Relation& b) {
    return a.kind == b.kind && a.src == b.src && a.dst == b.dst;
  }
  friend auto operator<=>(const Relation& a, const Relation& b) = default;
};

struct SkillContext {
  Skill skill = Skill::kPlaceOnto;
  int i = 1;  // manipulated object (never the table)
  int j = 0;  // reference object

  friend bool operator==(const SkillContext& a, const SkillContext& b) = default;
};

struct EnvParams {
  double camera_yaw = 0.0;    // [-pi, pi]
  double camera_pitch = 0.7;  // [0.2, 1.2] rad above horizon
  double noise_scale = 0.0;   // [0, 0.01] m
};

// A task parameterization: objects, initial relations, skill contexts to
// attempt, and environment parameters.
struct TaskParam {
  std::vector<ObjectSpec> objects;      // objects[0] is always the table
  std::vector<Relation> init_relations;
  std::vector<SkillContext> contexts;
  EnvParams env;
};

// ---------------------------------------------------------------------------
// Limits and fixed geometry
// ---------------------------------------------------------------------------

inline constexpr int kMaxObjects = 6;   // including the table
inline constexpr int kMinObjects = 2;
inline constexpr int kMaxRelations = 8;
inline constexpr int kMaxContexts = 4;
inline constexpr double kTableSize[3] = {2.0, 2.0, 0.4};

// Fixed-width canonical vector layout:
//   [0,6)    per-slot presence flags
//   [6,30)   per-slot (kind+1, sx, sy, sz)
//   [30,54)  8 relation slots, each (relkind+1, src, dst)
//   [54,66)  4 context slots, each (skill+1, i, j)
//   [66,69)  camera_yaw, camera_pitch, noise_scale
inline constexpr int kSerializedWidth = 69;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SerializeOverflow : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Prior configuration
// ---------------------------------------------------------------------------

struct SizeRange {
  Eigen::Vector3d lo = Eigen::Vector3d::Zero();
  Eigen::Vector3d hi = Eigen::Vector3d::Zero();
};

struct PriorConfig {
  // Probability of each total object count in {2,3,4,5,6} (table included).
  std::array<double, 5> object_count_probs = {0.2, 0.2, 0.2, 0.2, 0.2};
  // Relative weight of each non-table kind: rack, container, hook, box, can.
  std::array<double, 5> kind_weights = {1.0, 1.0, 1.0, 1.0, 1.0};
  // Per-object chance of an initial stacking / adjacency relation.
  double p_on = 0.25;
  double p_nextto = 0.15;
  // Skill mix for sampled contexts.
  std::array<double, 4> skill_mix = {0.25, 0.25, 0.25, 0.25};
  // Probability that a push-under / pull-with context picks a rack / hook as
  // its reference object when one exists.
  double tool_bias = 0.9;
  int contexts_per_task = 1;
  // Size ranges indexed by ObjectKind (table entry unused; table is fixed).
  std::array<SizeRange, kNumKinds> size_ranges = default_size_ranges();

  static std::array<SizeRange, kNumKinds> default_size_ranges();
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Throws ValidationError with a specific message on the first violated rule.
void validate(const TaskParam& w);

// Fixed-width numeric encoding; injective on valid tasks. Throws
// SerializeOverflow if relations or contexts exceed the layout capacity.
Eigen::VectorXd canonical_serialize(const TaskParam& w);

// Inverse of canonical_serialize on vectors it produced.
TaskParam canonical_deserialize(const Eigen::VectorXd& v);

// Draws a valid task from the configured prior.
TaskParam sample_prior(Rng& rng, const PriorConfig& cfg);

// JSON round-trip (schema documented in README).
std::string to_json(const TaskParam& w);
TaskParam from_json(const std::string& text);

// FNV-1a over the canonical serialization bytes; used for dedup and digests.
std::uint64_t task_hash(const TaskParam& w);

}  // namespace atr::task
