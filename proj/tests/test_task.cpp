#include <map>
#include <set>
#include <string>

#include "atr/task.hpp"
#include "doctest.h"

using namespace atr::task;
using atr::Rng;

namespace {

TaskParam minimal_task() {
  TaskParam w;
  w.objects.push_back({0, ObjectKind::kTable,
                       Eigen::Vector3d(kTableSize[0], kTableSize[1],
                                       kTableSize[2])});
  w.objects.push_back({1, ObjectKind::kBox, Eigen::Vector3d(0.2, 0.2, 0.2)});
  w.contexts.push_back({Skill::kPlaceOnto, 1, 0});
  return w;
}

}  // namespace

TEST_CASE("prior sampling is a pure function of the seed") {
  PriorConfig cfg;
  Rng a(123), b(123);
  for (int i = 0; i < 50; ++i) {
    const TaskParam wa = sample_prior(a, cfg);
    const TaskParam wb = sample_prior(b, cfg);
    CHECK(to_json(wa) == to_json(wb));
  }
}

TEST_CASE("prior samples always validate") {
  PriorConfig cfg;
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const TaskParam w = sample_prior(rng, cfg);
    CHECK_NOTHROW(validate(w));
    REQUIRE(!w.objects.empty());
    CHECK(w.objects[0].kind == ObjectKind::kTable);
    CHECK(w.objects.size() >= 2);
    CHECK(w.objects.size() <= 6);
    REQUIRE(!w.contexts.empty());
    for (const SkillContext& c : w.contexts) {
      CHECK(c.i != 0);  // the table is never manipulated
      CHECK(c.i != c.j);
    }
  }
}

TEST_CASE("object-count histogram matches the configured prior") {
  PriorConfig cfg;
  Rng rng(99);
  const int n = 10000;
  std::map<int, int> counts;
  for (int i = 0; i < n; ++i) {
    counts[static_cast<int>(sample_prior(rng, cfg).objects.size())]++;
  }
  double chi2 = 0.0;
  for (int k = 2; k <= 6; ++k) {
    const double expect = n * cfg.object_count_probs[k - 2];
    const double diff = counts[k] - expect;
    chi2 += diff * diff / expect;
  }
  // 4 degrees of freedom, p = 0.01 critical value.
  CHECK(chi2 < 13.2767);
}

TEST_CASE("validation rejects a context acting on itself") {
  TaskParam w = minimal_task();
  w.objects.push_back({2, ObjectKind::kCan, Eigen::Vector3d(0.1, 0.1, 0.2)});
  w.contexts[0] = {Skill::kPlaceOnto, 2, 2};
  CHECK_THROWS_AS(validate(w), ValidationError);
}

TEST_CASE("validation rejects dangling object references") {
  TaskParam w = minimal_task();
  w.contexts[0].j = 9;
  CHECK_THROWS_AS(validate(w), ValidationError);
  TaskParam w2 = minimal_task();
  w2.init_relations.push_back({RelationKind::kOn, 1, 5});
  CHECK_THROWS_AS(validate(w2), ValidationError);
}

TEST_CASE("validation rejects support cycles") {
  TaskParam w = minimal_task();
  w.objects.push_back({2, ObjectKind::kBox, Eigen::Vector3d(0.2, 0.2, 0.2)});
  w.init_relations.push_back({RelationKind::kOn, 1, 2});
  w.init_relations.push_back({RelationKind::kOn, 2, 1});
  CHECK_THROWS_AS(validate(w), ValidationError);
}

TEST_CASE("validation rejects a manipulated table") {
  TaskParam w = minimal_task();
  w.contexts[0] = {Skill::kPlaceOnto, 0, 1};
  CHECK_THROWS_AS(validate(w), ValidationError);
}

TEST_CASE("canonical serialization round-trips") {
  PriorConfig cfg;
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    const TaskParam w = sample_prior(rng, cfg);
    const Eigen::VectorXd v = canonical_serialize(w);
    REQUIRE(v.size() == kSerializedWidth);
    const TaskParam back = canonical_deserialize(v);
    CHECK(to_json(back) == to_json(w));
  }
}

TEST_CASE("canonical serialization is injective over prior samples") {
  PriorConfig cfg;
  Rng rng(17);
  std::map<std::uint64_t, std::string> seen;
  int collisions = 0;
  for (int i = 0; i < 10000; ++i) {
    const TaskParam w = sample_prior(rng, cfg);
    const std::uint64_t h = task_hash(w);
    const std::string repr = to_json(w);
    auto it = seen.find(h);
    if (it != seen.end() && it->second != repr) ++collisions;
    seen.emplace(h, repr);
  }
  CHECK(collisions == 0);
}

TEST_CASE("serialization overflow raises a dedicated error") {
  TaskParam w = minimal_task();
  for (int r = 0; r < kMaxRelations + 1; ++r) {
    w.init_relations.push_back({RelationKind::kNextto, 1, 0});
  }
  CHECK_THROWS_AS(canonical_serialize(w), SerializeOverflow);
}

TEST_CASE("json round-trip preserves every field") {
  PriorConfig cfg;
  Rng rng(23);
  for (int i = 0; i < 200; ++i) {
    const TaskParam w = sample_prior(rng, cfg);
    const TaskParam back = from_json(to_json(w));
    REQUIRE(back.objects.size() == w.objects.size());
    for (std::size_t k = 0; k < w.objects.size(); ++k) {
      CHECK(back.objects[k].id == w.objects[k].id);
      CHECK(back.objects[k].kind == w.objects[k].kind);
      CHECK(back.objects[k].size == w.objects[k].size);
    }
    CHECK(back.init_relations == w.init_relations);
    REQUIRE(back.contexts.size() == w.contexts.size());
    for (std::size_t k = 0; k < w.contexts.size(); ++k) {
      CHECK(back.contexts[k] == w.contexts[k]);
    }
    CHECK(back.env.camera_yaw == doctest::Approx(w.env.camera_yaw));
    CHECK(back.env.camera_pitch == doctest::Approx(w.env.camera_pitch));
    CHECK(back.env.noise_scale == doctest::Approx(w.env.noise_scale));
  }
}

TEST_CASE("kind and skill names round-trip") {
  for (int k = 0; k < kNumKinds; ++k) {
    const ObjectKind kind = static_cast<ObjectKind>(k);
    CHECK(kind_from_name(kind_name(kind)) == kind);
  }
  for (int s = 0; s < kNumSkills; ++s) {
    const Skill skill = static_cast<Skill>(s);
    CHECK(skill_from_name(skill_name(skill)) == skill);
  }
}

TEST_CASE("a two-object prior task can only reference the table") {
  PriorConfig cfg;
  Rng rng(31);
  int n2 = 0;
  for (int i = 0; i < 2000 && n2 < 50; ++i) {
    const TaskParam w = sample_prior(rng, cfg);
    if (w.objects.size() != 2) continue;
    ++n2;
    for (const SkillContext& c : w.contexts) {
      CHECK(c.i == 1);
      CHECK(c.j == 0);
    }
  }
  CHECK(n2 == 50);
}
