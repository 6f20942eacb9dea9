#include "atr/task.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include "json.hpp"

namespace atr::task {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Names
// ---------------------------------------------------------------------------

const char* kind_name(ObjectKind k) {
  switch (k) {
    case ObjectKind::kTable: return "table";
    case ObjectKind::kRack: return "rack";
    case ObjectKind::kContainer: return "container";
    case ObjectKind::kHook: return "hook";
    case ObjectKind::kBox: return "box";
    case ObjectKind::kCan: return "can";
  }
  throw std::runtime_error("unknown object kind");
}

const char* skill_name(Skill s) {
  switch (s) {
    case Skill::kPlaceOnto: return "place-onto";
    case Skill::kPlaceNextto: return "place-nextto";
    case Skill::kPushUnder: return "push-under";
    case Skill::kPullWith: return "pull-with";
  }
  throw std::runtime_error("unknown skill");
}

const char* relation_name(RelationKind r) {
  switch (r) {
    case RelationKind::kOn: return "on";
    case RelationKind::kUnder: return "under";
    case RelationKind::kNextto: return "nextto";
    case RelationKind::kInWorkspace: return "inworkspace";
  }
  throw std::runtime_error("unknown relation kind");
}

ObjectKind kind_from_name(const std::string& s) {
  for (int k = 0; k < kNumKinds; ++k) {
    if (s == kind_name(static_cast<ObjectKind>(k))) {
      return static_cast<ObjectKind>(k);
    }
  }
  throw ValidationError("unknown object kind name: " + s);
}

Skill skill_from_name(const std::string& s) {
  for (int k = 0; k < kNumSkills; ++k) {
    if (s == skill_name(static_cast<Skill>(k))) return static_cast<Skill>(k);
  }
  throw ValidationError("unknown skill name: " + s);
}

RelationKind relation_from_name(const std::string& s) {
  for (int k = 0; k < 4; ++k) {
    if (s == relation_name(static_cast<RelationKind>(k))) {
      return static_cast<RelationKind>(k);
    }
  }
  throw ValidationError("unknown relation name: " + s);
}

// ---------------------------------------------------------------------------
// Prior defaults
// ---------------------------------------------------------------------------

std::array<SizeRange, kNumKinds> PriorConfig::default_size_ranges() {
  std::array<SizeRange, kNumKinds> r{};
  auto set = [&](ObjectKind k, double lx, double hx, double ly, double hy,
                 double lz, double hz) {
    r[static_cast<int>(k)].lo = Eigen::Vector3d(lx, ly, lz);
    r[static_cast<int>(k)].hi = Eigen::Vector3d(hx, hy, hz);
  };
  set(ObjectKind::kTable, kTableSize[0], kTableSize[0], kTableSize[1],
      kTableSize[1], kTableSize[2], kTableSize[2]);
  set(ObjectKind::kRack, 0.40, 0.60, 0.36, 0.56, 0.34, 0.52);
  set(ObjectKind::kContainer, 0.20, 0.40, 0.20, 0.40, 0.06, 0.16);
  set(ObjectKind::kHook, 0.50, 0.70, 0.10, 0.20, 0.18, 0.30);
  set(ObjectKind::kBox, 0.08, 0.30, 0.08, 0.30, 0.06, 0.40);
  set(ObjectKind::kCan, 0.08, 0.22, 0.08, 0.22, 0.10, 0.35);
  return r;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

void validate(const TaskParam& w) {
  const int n = static_cast<int>(w.objects.size());
  if (n < kMinObjects || n > kMaxObjects) {
    throw ValidationError("object count must be in [2,6], got " +
                          std::to_string(n));
  }
  for (int idx = 0; idx < n; ++idx) {
    const ObjectSpec& o = w.objects[idx];
    if (o.id != idx) {
      throw ValidationError("object ids must be contiguous starting at 0");
    }
    if ((idx == 0) != (o.kind == ObjectKind::kTable)) {
      throw ValidationError("object 0 must be the table and only object 0");
    }
    for (int a = 0; a < 3; ++a) {
      if (!(o.size[a] > 0.0) || !(o.size[a] <= 2.0)) {
        throw ValidationError("object size components must be in (0, 2]");
      }
    }
  }
  auto check_id = [&](int id, const char* what) {
    if (id < 0 || id >= n) {
      throw ValidationError(std::string(what) + " references unknown id " +
                            std::to_string(id));
    }
  };
  if (static_cast<int>(w.init_relations.size()) > kMaxRelations) {
    throw ValidationError("too many initial relations (max 8)");
  }
  std::set<int> on_src;
  for (const Relation& r : w.init_relations) {
    check_id(r.src, "relation src");
    if (r.kind != RelationKind::kInWorkspace) {
      check_id(r.dst, "relation dst");
      if (r.src == r.dst) throw ValidationError("self-relation not allowed");
    }
    if (r.kind == RelationKind::kOn) {
      if (r.src == 0) throw ValidationError("the table cannot be on anything");
      if (!on_src.insert(r.src).second) {
        throw ValidationError("object supported by more than one surface");
      }
    }
  }
  // `on` edges must be acyclic (forest).
  for (const Relation& r : w.init_relations) {
    if (r.kind != RelationKind::kOn) continue;
    int cur = r.dst;
    int hops = 0;
    while (cur != 0 && hops++ <= n) {
      int next = -1;
      for (const Relation& q : w.init_relations) {
        if (q.kind == RelationKind::kOn && q.src == cur) {
          next = q.dst;
          break;
        }
      }
      if (next == r.src) throw ValidationError("cycle in `on` relations");
      if (next < 0) break;
      cur = next;
    }
  }
  if (w.contexts.empty() ||
      static_cast<int>(w.contexts.size()) > kMaxContexts) {
    throw ValidationError("context count must be in [1,4]");
  }
  for (const SkillContext& c : w.contexts) {
    check_id(c.i, "context i");
    check_id(c.j, "context j");
    if (c.i == 0) throw ValidationError("context i must not be the table");
    if (c.i == c.j) throw ValidationError("context i and j must differ");
  }
  if (!(w.env.camera_yaw >= -M_PI && w.env.camera_yaw <= M_PI)) {
    throw ValidationError("camera_yaw must be in [-pi, pi]");
  }
  if (!(w.env.camera_pitch >= 0.2 && w.env.camera_pitch <= 1.2)) {
    throw ValidationError("camera_pitch must be in [0.2, 1.2]");
  }
  if (!(w.env.noise_scale >= 0.0 && w.env.noise_scale <= 0.01)) {
    throw ValidationError("noise_scale must be in [0, 0.01]");
  }
}

// ---------------------------------------------------------------------------
// Canonical serialization
// ---------------------------------------------------------------------------

Eigen::VectorXd canonical_serialize(const TaskParam& w) {
  if (static_cast<int>(w.init_relations.size()) > kMaxRelations) {
    throw SerializeOverflow("more than 8 relations cannot be serialized");
  }
  if (static_cast<int>(w.contexts.size()) > kMaxContexts) {
    throw SerializeOverflow("more than 4 contexts cannot be serialized");
  }
  if (static_cast<int>(w.objects.size()) > kMaxObjects) {
    throw SerializeOverflow("more than 6 objects cannot be serialized");
  }
  Eigen::VectorXd v = Eigen::VectorXd::Zero(kSerializedWidth);
  for (std::size_t s = 0; s < w.objects.size(); ++s) {
    const ObjectSpec& o = w.objects[s];
    v[static_cast<int>(s)] = 1.0;
    const int base = 6 + 4 * static_cast<int>(s);
    v[base] = static_cast<double>(static_cast<int>(o.kind)) + 1.0;
    v[base + 1] = o.size[0];
    v[base + 2] = o.size[1];
    v[base + 3] = o.size[2];
  }
  for (std::size_t r = 0; r < w.init_relations.size(); ++r) {
    const Relation& rel = w.init_relations[r];
    const int base = 30 + 3 * static_cast<int>(r);
    v[base] = static_cast<double>(static_cast<int>(rel.kind)) + 1.0;
    v[base + 1] = static_cast<double>(rel.src);
    v[base + 2] = static_cast<double>(rel.dst);
  }
  for (std::size_t c = 0; c < w.contexts.size(); ++c) {
    const SkillContext& ctx = w.contexts[c];
    const int base = 54 + 3 * static_cast<int>(c);
    v[base] = static_cast<double>(static_cast<int>(ctx.skill)) + 1.0;
    v[base + 1] = static_cast<double>(ctx.i);
    v[base + 2] = static_cast<double>(ctx.j);
  }
  v[66] = w.env.camera_yaw;
  v[67] = w.env.camera_pitch;
  v[68] = w.env.noise_scale;
  return v;
}

TaskParam canonical_deserialize(const Eigen::VectorXd& v) {
  if (v.size() != kSerializedWidth) {
    throw ValidationError("serialized vector has wrong width");
  }
  TaskParam w;
  for (int s = 0; s < kMaxObjects; ++s) {
    if (v[s] == 0.0) continue;
    const int base = 6 + 4 * s;
    ObjectSpec o;
    o.id = s;
    o.kind = static_cast<ObjectKind>(static_cast<int>(v[base]) - 1);
    o.size = Eigen::Vector3d(v[base + 1], v[base + 2], v[base + 3]);
    w.objects.push_back(o);
  }
  for (int r = 0; r < kMaxRelations; ++r) {
    const int base = 30 + 3 * r;
    if (v[base] == 0.0) continue;
    Relation rel;
    rel.kind = static_cast<RelationKind>(static_cast<int>(v[base]) - 1);
    rel.src = static_cast<int>(v[base + 1]);
    rel.dst = static_cast<int>(v[base + 2]);
    w.init_relations.push_back(rel);
  }
  for (int c = 0; c < kMaxContexts; ++c) {
    const int base = 54 + 3 * c;
    if (v[base] == 0.0) continue;
    SkillContext ctx;
    ctx.skill = static_cast<Skill>(static_cast<int>(v[base]) - 1);
    ctx.i = static_cast<int>(v[base + 1]);
    ctx.j = static_cast<int>(v[base + 2]);
    w.contexts.push_back(ctx);
  }
  w.env.camera_yaw = v[66];
  w.env.camera_pitch = v[67];
  w.env.noise_scale = v[68];
  return w;
}

std::uint64_t task_hash(const TaskParam& w) {
  Eigen::VectorXd v = canonical_serialize(w);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const unsigned char* bytes =
      reinterpret_cast<const unsigned char*>(v.data());
  for (std::size_t i = 0; i < sizeof(double) * kSerializedWidth; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Prior sampling
// ---------------------------------------------------------------------------

namespace {

int sample_categorical(Rng& rng, const double* probs, int n) {
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += probs[i];
  double u = rng.uniform() * total;
  for (int i = 0; i < n; ++i) {
    u -= probs[i];
    if (u < 0.0) return i;
  }
  return n - 1;
}

Eigen::Vector3d sample_size(Rng& rng, ObjectKind kind, const PriorConfig& cfg) {
  const SizeRange& r = cfg.size_ranges[static_cast<int>(kind)];
  Eigen::Vector3d s;
  for (int a = 0; a < 3; ++a) s[a] = rng.uniform(r.lo[a], r.hi[a]);
  if (kind == ObjectKind::kCan) s[1] = s[0];  // cylindrical: square footprint
  return s;
}

}  // namespace

TaskParam sample_prior(Rng& rng, const PriorConfig& cfg) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    TaskParam w;
    const int n =
        kMinObjects + sample_categorical(rng, cfg.object_count_probs.data(),
                                         static_cast<int>(
                                             cfg.object_count_probs.size()));
    w.objects.push_back(
        {0, ObjectKind::kTable,
         Eigen::Vector3d(kTableSize[0], kTableSize[1], kTableSize[2])});
    for (int id = 1; id < n; ++id) {
      const int kind_i =
          1 + sample_categorical(rng, cfg.kind_weights.data(),
                                 static_cast<int>(cfg.kind_weights.size()));
      const ObjectKind kind = static_cast<ObjectKind>(kind_i);
      w.objects.push_back({id, kind, sample_size(rng, kind, cfg)});
    }

    // Initial relations: each non-table object independently gets at most one
    // placement relation, referencing a lower-id object so the result is a
    // forest with a well-defined placement order.
    for (int id = 1; id < n; ++id) {
      const double u = rng.uniform();
      if (u < cfg.p_on) {
        // Support candidates: the table or any lower-id non-hook object whose
        // top can plausibly hold something (footprint at least as large).
        std::vector<int> cands;
        for (int j = 0; j < id; ++j) {
          if (j == 0) continue;
          const ObjectSpec& sup = w.objects[j];
          const ObjectSpec& obj = w.objects[id];
          if (sup.kind == ObjectKind::kHook) continue;
          if (sup.size[0] >= obj.size[0] && sup.size[1] >= obj.size[1]) {
            cands.push_back(j);
          }
        }
        if (!cands.empty()) {
          const int j = cands[rng.uniform_index(cands.size())];
          w.init_relations.push_back({RelationKind::kOn, id, j});
        }
      } else if (u < cfg.p_on + cfg.p_nextto && id >= 2) {
        const int j = 1 + static_cast<int>(rng.uniform_index(
                              static_cast<std::uint64_t>(id - 1)));
        w.init_relations.push_back({RelationKind::kNextto, id, j});
      }
    }

    // Skill contexts. The skill is drawn from the configured mix regardless
    // of object count; contexts that end up structurally doomed (a push
    // reference that is not a rack, a two-object pull) are kept as-is — the
    // prior guarantees syntactic validity only, and learning which contexts
    // are feasible is the task sampler's job.
    const int n_ctx = std::min(cfg.contexts_per_task, kMaxContexts);
    for (int c = 0; c < n_ctx; ++c) {
      SkillContext ctx;
      ctx.skill = static_cast<Skill>(
          sample_categorical(rng, cfg.skill_mix.data(), kNumSkills));
      ctx.i = 1 + static_cast<int>(rng.uniform_index(
                      static_cast<std::uint64_t>(n - 1)));
      // Reference object: biased toward the kind the skill needs.
      ObjectKind wanted = ObjectKind::kTable;
      if (ctx.skill == Skill::kPushUnder) wanted = ObjectKind::kRack;
      if (ctx.skill == Skill::kPullWith) wanted = ObjectKind::kHook;
      std::vector<int> preferred, fallback;
      for (int j = 1; j < n; ++j) {
        if (j == ctx.i) continue;
        fallback.push_back(j);
        if (wanted != ObjectKind::kTable && w.objects[j].kind == wanted) {
          preferred.push_back(j);
        }
      }
      if (!preferred.empty() && rng.bernoulli(cfg.tool_bias)) {
        ctx.j = preferred[rng.uniform_index(preferred.size())];
      } else if (!fallback.empty()) {
        ctx.j = fallback[rng.uniform_index(fallback.size())];
      } else {
        // Two-object tasks have no other movable: the table is the only
        // possible reference (feasible for place-onto alone).
        ctx.j = 0;
      }
      w.contexts.push_back(ctx);
    }

    // Drop initial relations that would already satisfy a context's goal
    // (the corresponding episode would reward a no-op and teach nothing) or
    // that would override a spawn position mandated by a context: a pull
    // target must start in the outer ring and a pull tool within reach, so a
    // relation dictating either subject's placement makes the context
    // unwinnable or stacks bodies onto an object the primitive drags away.
    w.init_relations.erase(
        std::remove_if(
            w.init_relations.begin(), w.init_relations.end(),
            [&](const Relation& rel) {
              for (const SkillContext& ctx : w.contexts) {
                if (ctx.skill == Skill::kPlaceOnto &&
                    rel.kind == RelationKind::kOn && rel.src == ctx.i &&
                    rel.dst == ctx.j) {
                  return true;
                }
                if (ctx.skill == Skill::kPlaceNextto &&
                    rel.kind == RelationKind::kNextto &&
                    ((rel.src == ctx.i && rel.dst == ctx.j) ||
                     (rel.src == ctx.j && rel.dst == ctx.i))) {
                  return true;
                }
                if (ctx.skill == Skill::kPullWith &&
                    (rel.src == ctx.i || rel.src == ctx.j ||
                     (rel.kind == RelationKind::kOn && rel.dst == ctx.i))) {
                  return true;
                }
              }
              return false;
            }),
        w.init_relations.end());

    w.env.camera_yaw = rng.uniform(-M_PI, M_PI);
    w.env.camera_pitch = rng.uniform(0.2, 1.2);
    w.env.noise_scale = rng.uniform(0.0, 0.01);

    try {
      validate(w);
      return w;
    } catch (const ValidationError&) {
      continue;  // resample; construction above should always validate
    }
  }
  throw std::runtime_error("prior sampling failed to produce a valid task");
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

std::string to_json(const TaskParam& w) {
  json j;
  j["objects"] = json::array();
  for (const ObjectSpec& o : w.objects) {
    j["objects"].push_back({{"id", o.id},
                            {"kind", kind_name(o.kind)},
                            {"size", {o.size[0], o.size[1], o.size[2]}}});
  }
  j["init_relations"] = json::array();
  for (const Relation& r : w.init_relations) {
    j["init_relations"].push_back(
        {{"kind", relation_name(r.kind)}, {"src", r.src}, {"dst", r.dst}});
  }
  j["contexts"] = json::array();
  for (const SkillContext& c : w.contexts) {
    j["contexts"].push_back(
        {{"skill", skill_name(c.skill)}, {"i", c.i}, {"j", c.j}});
  }
  j["env"] = {{"camera_yaw", w.env.camera_yaw},
              {"camera_pitch", w.env.camera_pitch},
              {"noise_scale", w.env.noise_scale}};
  return j.dump();
}

TaskParam from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("task JSON parse error: ") + e.what());
  }
  TaskParam w;
  try {
    for (const auto& jo : j.at("objects")) {
      ObjectSpec o;
      o.id = jo.at("id").get<int>();
      o.kind = kind_from_name(jo.at("kind").get<std::string>());
      const auto& s = jo.at("size");
      o.size = Eigen::Vector3d(s.at(0).get<double>(), s.at(1).get<double>(),
                               s.at(2).get<double>());
      w.objects.push_back(o);
    }
    for (const auto& jr : j.value("init_relations", json::array())) {
      Relation r;
      r.kind = relation_from_name(jr.at("kind").get<std::string>());
      r.src = jr.at("src").get<int>();
      r.dst = jr.at("dst").get<int>();
      w.init_relations.push_back(r);
    }
    for (const auto& jc : j.at("contexts")) {
      SkillContext c;
      c.skill = skill_from_name(jc.at("skill").get<std::string>());
      c.i = jc.at("i").get<int>();
      c.j = jc.at("j").get<int>();
      w.contexts.push_back(c);
    }
    const auto& je = j.at("env");
    w.env.camera_yaw = je.at("camera_yaw").get<double>();
    w.env.camera_pitch = je.at("camera_pitch").get<double>();
    w.env.noise_scale = je.at("noise_scale").get<double>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("task JSON schema error: ") + e.what());
  }
  validate(w);
  return w;
}

}  // namespace atr::task
