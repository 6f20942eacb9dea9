#include "atr/symbolic.hpp"

#include <algorithm>
#include <deque>
#include <functional>

namespace atr::sym {

using task::ObjectKind;
using task::Relation;
using task::RelationKind;
using task::Skill;
using task::SkillContext;

SceneGraph extract_scene_graph(const world::WorldState& s) {
  SceneGraph g;
  for (const world::Body& b : s.bodies) g.kinds[b.id] = b.kind;
  g.edges = world::relations(s);
  return g;
}

SceneGraph scene_from_observation(const world::Observation& obs) {
  SceneGraph g;
  for (std::size_t id = 0; id < obs.kinds.size(); ++id) {
    g.kinds[static_cast<int>(id)] = obs.kinds[id];
  }
  g.edges = obs.relations;
  return g;
}

bool goal_satisfied(const SceneGraph& g, const Goal& goal) {
  for (const Relation& want : goal) {
    if (std::find(g.edges.begin(), g.edges.end(), want) == g.edges.end()) {
      return false;
    }
  }
  return true;
}

namespace {

Relation iw(int id) { return {RelationKind::kInWorkspace, id, -1}; }

AtomSet start_atoms(const SceneGraph& g) {
  AtomSet atoms(g.edges.begin(), g.edges.end());
  atoms.insert(iw(0));  // the table is always within reach
  return atoms;
}

bool nothing_on(const AtomSet& atoms, int id) {
  for (const Relation& r : atoms) {
    if (r.kind == RelationKind::kOn && r.dst == id) return false;
  }
  return true;
}

std::vector<Relation> action_adds(const SkillContext& c) {
  switch (c.skill) {
    case Skill::kPlaceOnto:
      return {{RelationKind::kOn, c.i, c.j}};
    case Skill::kPlaceNextto:
      return {{RelationKind::kNextto, c.i, c.j},
              {RelationKind::kOn, c.i, 0}};
    case Skill::kPushUnder:
      return {{RelationKind::kUnder, c.i, c.j}};
    case Skill::kPullWith:
      return {iw(c.i)};
  }
  return {};
}

std::vector<SkillContext> ground_actions(const SceneGraph& g) {
  std::vector<int> ids;
  for (const auto& [id, kind] : g.kinds) {
    (void)kind;
    ids.push_back(id);
  }
  std::sort(ids.begin(), ids.end());
  std::vector<SkillContext> actions;
  for (int sk = 0; sk < task::kNumSkills; ++sk) {
    for (int i : ids) {
      if (i == 0) continue;
      for (int j : ids) {
        if (j == i) continue;
        actions.push_back({static_cast<Skill>(sk), i, j});
      }
    }
  }
  return actions;
}

std::vector<Relation> positive_preconditions(const SkillContext& c) {
  switch (c.skill) {
    case Skill::kPlaceOnto:
    case Skill::kPlaceNextto:
      return {iw(c.i), iw(c.j)};
    case Skill::kPushUnder:
      return {iw(c.i)};
    case Skill::kPullWith:
      return {iw(c.j)};
  }
  return {};
}

// Applicability with negative preconditions dropped (the nothing-on check of
// place-onto and the out-of-workspace check of pull-with). Only kind gates and
// positive atom preconditions remain, so the induced closure over-approximates
// every reachable atom set. Ids come from ground_actions and always exist.
bool relaxed_applicable(const SceneGraph& g, const AtomSet& atoms,
                        const SkillContext& c) {
  switch (c.skill) {
    case Skill::kPlaceOnto:
      return atoms.count(iw(c.i)) && atoms.count(iw(c.j));
    case Skill::kPlaceNextto:
      return c.j != 0 && atoms.count(iw(c.i)) && atoms.count(iw(c.j));
    case Skill::kPushUnder:
      return g.kinds.at(c.j) == ObjectKind::kRack && atoms.count(iw(c.i));
    case Skill::kPullWith:
      return g.kinds.at(c.j) == ObjectKind::kHook && atoms.count(iw(c.j));
  }
  return false;
}

}  // namespace

bool action_applicable(const SceneGraph& g, const AtomSet& atoms,
                       const SkillContext& c) {
  auto kind_of = [&](int id) {
    auto it = g.kinds.find(id);
    if (it == g.kinds.end()) {
      throw std::invalid_argument("action references unknown object " +
                                  std::to_string(id));
    }
    return it->second;
  };
  if (c.i == c.j || c.i == 0) return false;
  kind_of(c.i);
  switch (c.skill) {
    case Skill::kPlaceOnto:
      return atoms.count(iw(c.i)) && atoms.count(iw(c.j)) &&
             nothing_on(atoms, c.i);
    case Skill::kPlaceNextto:
      return atoms.count(iw(c.i)) && atoms.count(iw(c.j)) && c.j != 0;
    case Skill::kPushUnder:
      return atoms.count(iw(c.i)) && kind_of(c.j) == ObjectKind::kRack;
    case Skill::kPullWith:
      return kind_of(c.j) == ObjectKind::kHook && atoms.count(iw(c.j)) &&
             atoms.count(iw(c.i)) == 0;
  }
  return false;
}

AtomSet apply_action(const AtomSet& atoms, const SkillContext& c) {
  AtomSet next = atoms;
  for (const Relation& r : action_adds(c)) next.insert(r);
  return next;
}

std::vector<SkillContext> plan(const SceneGraph& start, const Goal& goal,
                               int max_depth) {
  const AtomSet init = start_atoms(start);
  Goal goal_atoms = goal;

  // Backward relevance closure: an action matters only if it adds a needed
  // atom; its own positive preconditions become needed in turn. With add-only
  // effects, dropping irrelevant actions preserves optimality.
  const std::vector<SkillContext> all_actions = ground_actions(start);
  AtomSet needed(goal_atoms.begin(), goal_atoms.end());
  bool grew = true;
  while (grew) {
    grew = false;
    for (const SkillContext& c : all_actions) {
      bool relevant = false;
      for (const Relation& add : action_adds(c)) {
        if (needed.count(add)) {
          relevant = true;
          break;
        }
      }
      if (!relevant) continue;
      for (const Relation& pre : positive_preconditions(c)) {
        if (needed.insert(pre).second) grew = true;
      }
    }
  }
  std::vector<SkillContext> actions;
  for (const SkillContext& c : all_actions) {
    for (const Relation& add : action_adds(c)) {
      if (needed.count(add)) {
        actions.push_back(c);
        break;
      }
    }
  }

  auto satisfied = [&](const AtomSet& atoms) {
    for (const Relation& want : goal_atoms) {
      if (!atoms.count(want)) return false;
    }
    return true;
  };

  if (satisfied(init)) return {};

  struct BfsNode {
    AtomSet atoms;
    int parent = -1;
    SkillContext via;
    int depth = 0;
  };
  std::vector<BfsNode> nodes;
  std::set<AtomSet> visited;
  nodes.push_back({init, -1, {}, 0});
  visited.insert(init);
  std::deque<int> frontier{0};

  while (!frontier.empty()) {
    const int cur = frontier.front();
    frontier.pop_front();
    if (nodes[cur].depth >= max_depth) continue;
    for (const SkillContext& c : actions) {
      if (!action_applicable(start, nodes[cur].atoms, c)) continue;
      AtomSet next = apply_action(nodes[cur].atoms, c);
      if (next == nodes[cur].atoms) continue;  // no progress
      if (!visited.insert(next).second) continue;
      nodes.push_back({std::move(next), cur, c, nodes[cur].depth + 1});
      const int idx = static_cast<int>(nodes.size()) - 1;
      if (satisfied(nodes[idx].atoms)) {
        std::vector<SkillContext> steps;
        for (int k = idx; k > 0; k = nodes[k].parent) {
          steps.push_back(nodes[k].via);
        }
        std::reverse(steps.begin(), steps.end());
        return steps;
      }
      frontier.push_back(idx);
    }
  }
  throw NoPlanFound("no plan within depth " + std::to_string(max_depth));
}

std::optional<std::vector<SkillContext>> plan_iddfs(const SceneGraph& start,
                                                    const Goal& goal,
                                                    int max_depth) {
  const AtomSet init = start_atoms(start);
  const std::vector<SkillContext> actions = ground_actions(start);
  auto satisfied = [&](const AtomSet& atoms) {
    for (const Relation& want : goal) {
      if (!atoms.count(want)) return false;
    }
    return true;
  };

  for (int limit = 0; limit <= max_depth; ++limit) {
    // Transposition table: states already searched with at least this much
    // remaining budget need not be revisited.
    std::map<AtomSet, int> searched;
    std::vector<SkillContext> path;
    std::function<bool(const AtomSet&, int)> dfs =
        [&](const AtomSet& atoms, int remaining) -> bool {
      if (satisfied(atoms)) return true;
      if (remaining == 0) return false;
      auto it = searched.find(atoms);
      if (it != searched.end() && it->second >= remaining) return false;
      searched[atoms] = remaining;
      for (const SkillContext& c : actions) {
        if (!action_applicable(start, atoms, c)) continue;
        AtomSet next = apply_action(atoms, c);
        if (next == atoms) continue;
        path.push_back(c);
        if (dfs(next, remaining - 1)) return true;
        path.pop_back();
      }
      return false;
    };
    if (dfs(init, limit)) return path;
  }
  return std::nullopt;
}

bool provably_unsolvable(const SceneGraph& start, const Goal& goal) {
  AtomSet atoms = start_atoms(start);
  const std::vector<SkillContext> actions = ground_actions(start);
  bool grew = true;
  while (grew) {
    grew = false;
    for (const SkillContext& c : actions) {
      if (!relaxed_applicable(start, atoms, c)) continue;
      for (const Relation& r : action_adds(c)) {
        if (atoms.insert(r).second) grew = true;
      }
    }
  }
  for (const Relation& want : goal) {
    if (!atoms.count(want)) return true;
  }
  return false;
}

}  // namespace atr::sym
