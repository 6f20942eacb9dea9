#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "atr/sampler.hpp"
#include "atr/task.hpp"
#include "doctest.h"

using namespace atr;
using namespace atr::sampler;
using namespace atr::task;

namespace {

std::vector<TaskParam> sample_tasks(int n, std::uint64_t seed) {
  PriorConfig prior;
  Rng rng(seed);
  std::vector<TaskParam> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(sample_prior(rng, prior));
  return out;
}

// Consistently relabels movable objects by `perm` (perm[old_id] == new_id,
// with perm[0] == 0): slots, relation endpoints and context arguments all
// move together, so the task is the same graph with new vertex names.
TaskParam relabel(const TaskParam& w, const std::vector<int>& perm) {
  TaskParam out = w;
  for (const ObjectSpec& o : w.objects) {
    ObjectSpec moved = o;
    moved.id = perm[o.id];
    out.objects[moved.id] = moved;
  }
  for (auto& r : out.init_relations) {
    r.src = perm[r.src];
    r.dst = perm[r.dst];
  }
  for (auto& c : out.contexts) {
    c.i = perm[c.i];
    c.j = perm[c.j];
  }
  return out;
}

ReplayBuffer warmed_buffer(int n, std::uint64_t seed, double reward = 0.0) {
  ReplayBuffer buf(10000);
  for (const TaskParam& w : sample_tasks(n, seed)) {
    Episode e;
    e.w = w;
    e.context = w.contexts.front();
    e.reward = reward;
    buf.push(std::move(e));
  }
  return buf;
}

}  // namespace

TEST_CASE("embeddings are deterministic 64-d vectors") {
  Rng rng(2);
  const TaskEncoder m = make_model(rng);
  const auto tasks = sample_tasks(20, 77);
  for (const TaskParam& w : tasks) {
    const Eigen::VectorXd a = encode(m, w);
    const Eigen::VectorXd b = encode(m, w);
    REQUIRE(a.size() == kEmbedDim);
    CHECK(a == b);
    CHECK(a.allFinite());
  }
}

TEST_CASE("embedding ignores the order edges are listed in") {
  Rng rng(2);
  const TaskEncoder m = make_model(rng);
  Rng shuffle_rng(99);
  int with_edges = 0;
  for (const TaskParam& w : sample_tasks(200, 50)) {
    TaskParam shuffled = w;
    for (int pass = 0; pass < 3; ++pass) {
      for (int i = static_cast<int>(shuffled.init_relations.size()) - 1; i > 0;
           --i) {
        std::swap(shuffled.init_relations[i],
                  shuffled.init_relations[shuffle_rng.uniform_index(i + 1)]);
      }
      std::reverse(shuffled.contexts.begin(), shuffled.contexts.end());
      // Bitwise identical, not merely close.
      CHECK(encode(m, w) == encode(m, shuffled));
    }
    if (w.init_relations.size() > 1) ++with_edges;
  }
  CHECK(with_edges > 8);  // the check must have actually exercised shuffles
}

TEST_CASE("embedding ignores consistent object renaming") {
  Rng rng(2);
  const TaskEncoder m = make_model(rng);
  Rng perm_rng(4);
  for (const TaskParam& w : sample_tasks(200, 51)) {
    const int n = static_cast<int>(w.objects.size());
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 1; --i) {  // table stays vertex 0
      std::swap(perm[i], perm[1 + perm_rng.uniform_index(i)]);
    }
    const TaskParam renamed = relabel(w, perm);
    CHECK(encode(m, w) == encode(m, renamed));
  }
}

TEST_CASE("feasibility estimates live strictly inside (0,1)") {
  Rng rng(2);
  TaskEncoder m = make_model(rng);
  for (const TaskParam& w : sample_tasks(50, 52)) {
    const double v = value(m, w);
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  // All-zero parameters give the sigmoid midpoint exactly.
  m.params.values.setZero();
  CHECK(value(m, sample_tasks(1, 53)[0]) == 0.5);
}

TEST_CASE("value head fits a constant-reward batch") {
  Rng rng(6);
  TaskEncoder m = make_model(rng);
  const auto tasks = sample_tasks(8, 54);
  std::vector<const TaskParam*> ptrs;
  for (const TaskParam& w : tasks) ptrs.push_back(&w);
  const Eigen::VectorXd rewards = Eigen::VectorXd::Ones(8);

  const double first = value_update(m, ptrs, rewards);
  double last = first;
  for (int step = 0; step < 499; ++step) last = value_update(m, ptrs, rewards);
  CHECK(last < first);
  for (const TaskParam& w : tasks) {
    CHECK(value(m, w) > 0.95);
  }
}

TEST_CASE("value loss gradient matches finite differences") {
  Rng rng(8);
  TaskEncoder m = make_model(rng);
  const auto tasks = sample_tasks(4, 55);
  std::vector<const TaskParam*> ptrs;
  for (const TaskParam& w : tasks) ptrs.push_back(&w);
  Eigen::VectorXd rewards(4);
  rewards << 1.0, 0.0, 1.0, 0.0;

  const ValueLossReport rep = value_loss(m, ptrs, rewards);
  REQUIRE(rep.grad.size() == m.params.values.size());
  std::vector<int> coords;
  for (int i = 0; i < rep.grad.size(); i += 131) coords.push_back(i);
  const nn::LossFn f = [&](const nn::ParamVector& q) {
    TaskEncoder probe = m;
    probe.params = q;
    const ValueLossReport r = value_loss(probe, ptrs, rewards);
    return nn::LossEval{r.loss, r.relu_sig};
  };
  const nn::FdReport fd =
      nn::finite_diff_check(m.params, f, rep.grad, 1e-5, coords);
  CHECK(fd.n_checked > 0);
  CHECK(fd.max_rel_err < 1e-4);
}

TEST_CASE("kth-neighbor distances agree with a full sort") {
  Rng rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const int dim = 1 + static_cast<int>(rng.uniform_index(24));
    const int n = 1 + static_cast<int>(rng.uniform_index(40));
    std::vector<Eigen::VectorXd> subset(n);
    for (auto& v : subset) {
      v = Eigen::VectorXd::Zero(dim);
      for (int d = 0; d < dim; ++d) v[d] = rng.uniform(-2.0, 2.0);
    }
    Eigen::VectorXd q = Eigen::VectorXd::Zero(dim);
    for (int d = 0; d < dim; ++d) q[d] = rng.uniform(-2.0, 2.0);
    const int K = 1 + static_cast<int>(rng.uniform_index(n));

    std::vector<double> dists;
    for (const auto& v : subset) dists.push_back((v - q).norm());
    std::sort(dists.begin(), dists.end());
    CHECK(knn_distance(q, subset, K) == dists[K - 1]);
  }
}

TEST_CASE("kth-neighbor distance edge cases") {
  const Eigen::VectorXd q = Eigen::VectorXd::Zero(3);
  std::vector<Eigen::VectorXd> subset;
  subset.push_back(Eigen::Vector3d(1.0, 0.0, 0.0));
  CHECK(knn_distance(q, subset, 1) == 1.0);
  subset.push_back(Eigen::Vector3d(0.0, 0.0, 0.0));  // duplicate of the query
  CHECK(knn_distance(q, subset, 1) == 0.0);
  CHECK(knn_distance(q, subset, 2) == 1.0);
  CHECK_THROWS_AS((void)knn_distance(q, subset, 3), InsufficientData);
  CHECK_THROWS_AS((void)knn_distance(q, subset, 0), std::invalid_argument);
}

TEST_CASE("density estimates follow the ball-volume law") {
  CHECK(std::isinf(density_estimate(0.0, 5, 100, 16)));
  // 2-d: volume of the radius-d disk is pi d^2.
  const double d = 0.37;
  CHECK(density_estimate(d, 5, 100, 2) ==
        doctest::Approx(5.0 / (100.0 * M_PI * d * d)).epsilon(1e-12));
  // Halving the radius multiplies the estimate by 2^dim.
  for (int dim : {1, 2, 8, 16}) {
    const double ratio =
        density_estimate(0.5, 3, 50, dim) / density_estimate(1.0, 3, 50, dim);
    CHECK(ratio == doctest::Approx(std::pow(2.0, dim)).epsilon(1e-9));
  }
}

TEST_CASE("replay buffer evicts oldest first") {
  ReplayBuffer buf(3);
  for (int i = 0; i < 5; ++i) {
    Episode e;
    e.reward = i;
    buf.push(std::move(e));
  }
  CHECK(buf.size() == 3);
  CHECK(buf.capacity() == 3);
  CHECK(buf.total_pushed() == 5);
  CHECK(buf.at(0).reward == 2.0);
  CHECK(buf.at(1).reward == 3.0);
  CHECK(buf.at(2).reward == 4.0);

  ReplayBuffer tiny(1);
  for (int i = 0; i < 4; ++i) {
    Episode e;
    e.reward = 10 + i;
    tiny.push(std::move(e));
  }
  CHECK(tiny.size() == 1);
  CHECK(tiny.at(0).reward == 13.0);
}

TEST_CASE("index sampling is distinct, in range and unbiased") {
  ReplayBuffer buf(100);
  for (int i = 0; i < 8; ++i) buf.push(Episode{});
  Rng rng(12);

  // count == size returns every index exactly once.
  std::vector<int> all = buf.sample_indices(rng, 8);
  std::sort(all.begin(), all.end());
  for (int i = 0; i < 8; ++i) CHECK(all[i] == i);

  std::vector<int> hits(8, 0);
  for (int t = 0; t < 4000; ++t) {
    const std::vector<int> idx = buf.sample_indices(rng, 3);
    CHECK(idx.size() == 3);
    std::vector<int> sorted = idx;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
    for (int v : idx) {
      REQUIRE(v >= 0);
      REQUIRE(v < 8);
      ++hits[v];
    }
  }
  // 12000 draws over 8 cells, expected 1500 each; chi-square df=7.
  double chi2 = 0.0;
  for (int h : hits) chi2 += (h - 1500.0) * (h - 1500.0) / 1500.0;
  CHECK(chi2 < 24.32);  // 0.1% tail
}

TEST_CASE("selection falls back to uniform while the buffer is cold") {
  Rng rng(3);
  const TaskEncoder m = make_model(rng);
  const auto cands = sample_tasks(6, 60);
  ReplayBuffer buf = warmed_buffer(49, 61);  // below the 50-episode threshold
  SamplerConfig cfg;
  std::vector<int> hits(6, 0);
  for (int t = 0; t < 3000; ++t) {
    SelectionRecord rec;
    const TaskParam& w = select_task(m, cands, buf, cfg, rng, &rec);
    CHECK(rec.warmup_branch);
    CHECK(&w == &cands[rec.chosen_index]);
    ++hits[rec.chosen_index];
  }
  double chi2 = 0.0;
  for (int h : hits) chi2 += (h - 500.0) * (h - 500.0) / 500.0;
  CHECK(chi2 < 20.52);  // df=5, 0.1% tail
}

TEST_CASE("selection record is a faithful trace") {
  Rng rng(3);
  const TaskEncoder m = make_model(rng);
  const auto cands = sample_tasks(6, 62);
  ReplayBuffer buf = warmed_buffer(80, 63);
  SamplerConfig cfg;
  cfg.epsilon = 0.0;  // force the scored branch
  for (int t = 0; t < 20; ++t) {
    SelectionRecord rec;
    const TaskParam& w = select_task(m, cands, buf, cfg, rng, &rec);
    CHECK_FALSE(rec.warmup_branch);
    CHECK_FALSE(rec.epsilon_branch);
    REQUIRE(rec.scores.size() == cands.size());
    REQUIRE(rec.novelty.size() == cands.size());
    REQUIRE(rec.chosen_index >= 0);
    REQUIRE(rec.chosen_index < static_cast<int>(cands.size()));
    CHECK(&w == &cands[rec.chosen_index]);
    CHECK(rec.chosen_score == rec.scores[rec.chosen_index]);
    for (double d : rec.novelty) CHECK(d >= 0.0);
  }
}

TEST_CASE("scores decompose into value and novelty terms") {
  Rng rng(3);
  const TaskEncoder m = make_model(rng);
  const auto tasks = sample_tasks(24, 64);
  std::vector<Eigen::VectorXd> subset;
  for (int i = 4; i < 24; ++i) subset.push_back(encode(m, tasks[i]));

  SamplerConfig atr, feas, div;
  feas.mode = ScoreMode::kFeasibilityOnly;
  div.mode = ScoreMode::kDiversityOnly;
  for (int i = 0; i < 4; ++i) {
    const double s_atr = score(m, tasks[i], subset, atr);
    const double s_feas = score(m, tasks[i], subset, feas);
    const double s_div = score(m, tasks[i], subset, div);
    CHECK(s_feas == doctest::Approx(value(m, tasks[i])).epsilon(1e-12));
    const double nov = knn_distance(encode(m, tasks[i]), subset, atr.k);
    CHECK(s_div == doctest::Approx(atr.beta * nov).epsilon(1e-12));
    CHECK(s_atr == doctest::Approx(s_feas + s_div).epsilon(1e-12));
  }
}

TEST_CASE("exploration rate tracks the configured epsilon") {
  Rng rng(3);
  const TaskEncoder m = make_model(rng);
  const auto cands = sample_tasks(6, 65);
  ReplayBuffer buf = warmed_buffer(60, 66);
  SamplerConfig cfg;

  cfg.epsilon = 0.0;
  for (int t = 0; t < 200; ++t) {
    SelectionRecord rec;
    select_task(m, cands, buf, cfg, rng, &rec);
    CHECK_FALSE(rec.epsilon_branch);
  }
  cfg.epsilon = 1.0;
  for (int t = 0; t < 200; ++t) {
    SelectionRecord rec;
    select_task(m, cands, buf, cfg, rng, &rec);
    CHECK(rec.epsilon_branch);
  }
  cfg.epsilon = 0.1;
  int eps_hits = 0;
  const int trials = 2500;
  for (int t = 0; t < trials; ++t) {
    SelectionRecord rec;
    select_task(m, cands, buf, cfg, rng, &rec);
    if (rec.epsilon_branch) ++eps_hits;
  }
  const double frac = static_cast<double>(eps_hits) / trials;
  CHECK(frac > 0.07);   // ~5 sigma around 0.1
  CHECK(frac < 0.13);
}

TEST_CASE("selection is reproducible from the seed") {
  Rng init(3);
  const TaskEncoder m = make_model(init);
  const auto cands = sample_tasks(8, 67);
  ReplayBuffer buf = warmed_buffer(70, 68);
  SamplerConfig cfg;
  std::vector<int> first, second;
  {
    Rng rng(424242);
    for (int t = 0; t < 50; ++t) {
      SelectionRecord rec;
      select_task(m, cands, buf, cfg, rng, &rec);
      first.push_back(rec.chosen_index);
    }
  }
  {
    Rng rng(424242);
    for (int t = 0; t < 50; ++t) {
      SelectionRecord rec;
      select_task(m, cands, buf, cfg, rng, &rec);
      second.push_back(rec.chosen_index);
    }
  }
  CHECK(first == second);
}
