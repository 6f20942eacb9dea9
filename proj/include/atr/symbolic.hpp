#pragma once

#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <vector>

#include "atr/task.hpp"
#include "atr/world.hpp"

namespace atr::sym {

// A relational scene graph: object attributes plus ground relation atoms.
struct SceneGraph {
  std::map<int, task::ObjectKind> kinds;
  std::vector<task::Relation> edges;
};

struct NoPlanFound : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Goal = std::vector<task::Relation>;
using AtomSet = std::set<task::Relation>;

// Ground-truth extraction from a world state.
SceneGraph extract_scene_graph(const world::WorldState& s);
// Extraction from an observation's perceived relations.
SceneGraph scene_from_observation(const world::Observation& obs);

bool goal_satisfied(const SceneGraph& g, const Goal& goal);

// True when the skill's preconditions hold in `atoms` (closed world):
//   place-onto(i,j):   inworkspace(i), inworkspace(j), nothing on i
//   place-nextto(i,j): inworkspace(i), inworkspace(j)
//   push-under(i,j):   inworkspace(i), j is a rack
//   pull-with(i,j):    j is a hook, inworkspace(j), NOT inworkspace(i)
bool action_applicable(const SceneGraph& g, const AtomSet& atoms,
                       const task::SkillContext& c);

// Add-only effects; returns atoms plus the action's additions.
AtomSet apply_action(const AtomSet& atoms, const task::SkillContext& c);

// Breadth-first search over grounded skills, restricted to actions whose
// effects are relevant to the goal (backward closure). Expansion follows
// (skill, i, j) lexicographic order, so among shortest plans the returned one
// is deterministic. The start state is augmented with inworkspace(table).
// Throws NoPlanFound beyond max_depth.
std::vector<task::SkillContext> plan(const SceneGraph& start, const Goal& goal,
                                     int max_depth = 10);

// Reference planner: iterative-deepening DFS over the full grounded action
// set with a depth-aware transposition table. Used to validate optimality.
std::optional<std::vector<task::SkillContext>> plan_iddfs(
    const SceneGraph& start, const Goal& goal, int max_depth = 10);

// Fast one-sided unsolvability screen. Computes the closure of atoms addable
// when negative preconditions are ignored; since effects only ever add atoms,
// every reachable state is a subset of that closure, so a goal atom outside it
// is unreachable by any action sequence of any length. Returns true only in
// that provably-unsolvable case. A false result is inconclusive: ordering
// conflicts the ignored preconditions would catch (e.g. two objects each
// required on top of the other) can still make the goal unreachable.
bool provably_unsolvable(const SceneGraph& start, const Goal& goal);

}  // namespace atr::sym
