#include "atr/sampler.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace atr::sampler {

using nn::Mat;
using nn::Vec;
using task::Relation;
using task::SkillContext;
using task::TaskParam;

namespace {

// ---------------------------------------------------------------------------
// Encoder definition, written once over an abstract backend so the plain
// evaluation path and the differentiation path cannot diverge.
// ---------------------------------------------------------------------------

struct EvalBackend {
  const nn::ParamVector& p;
  using H = Vec;
  H constant(const Vec& v) const { return v; }
  H dense(const std::string& layer, const H& x) const {
    return p.mat(layer + ".W") * x + Vec(p.mat(layer + ".b").col(0));
  }
  H relu(const H& x) const { return x.cwiseMax(0.0); }
  H concat(const std::vector<H>& xs) const {
    Eigen::Index n = 0;
    for (const H& x : xs) n += x.size();
    H out(n);
    Eigen::Index at = 0;
    for (const H& x : xs) {
      out.segment(at, x.size()) = x;
      at += x.size();
    }
    return out;
  }
  H sum(const std::vector<H>& xs) const {
    H out = xs.at(0);
    for (std::size_t k = 1; k < xs.size(); ++k) out += xs[k];
    return out;
  }
  H zeros(int n) const { return Vec::Zero(n); }
};

struct TapeBackend {
  nn::Tape& t;
  using H = nn::Tape::Id;
  H constant(const Vec& v) const { return t.input(v); }
  H dense(const std::string& layer, H x) const { return t.dense(layer, x); }
  H relu(H x) const { return t.relu(x); }
  H concat(const std::vector<H>& xs) const { return t.concat_rows(xs); }
  H sum(const std::vector<H>& xs) const { return t.sum(xs); }
  H zeros(int n) const { return t.input(Mat::Zero(n, 1)); }
};

using AttrKey = std::array<double, 4>;

AttrKey attr_key(const task::ObjectSpec& o) {
  return {static_cast<double>(static_cast<int>(o.kind)), o.size[0], o.size[1],
          o.size[2]};
}

Vec object_input(const task::ObjectSpec& o) {
  Vec v = Vec::Zero(9);
  v[static_cast<int>(o.kind)] = 1.0;
  v.tail(3) = o.size;
  return v;
}

Vec relation_input(task::RelationKind k) {
  Vec v = Vec::Zero(4);
  v[static_cast<int>(k)] = 1.0;
  return v;
}

Vec skill_input(task::Skill s) {
  Vec v = Vec::Zero(4);
  v[static_cast<int>(s)] = 1.0;
  return v;
}

template <class B>
typename B::H embed_impl(const B& b, const TaskParam& w) {
  using H = typename B::H;
  const int n = static_cast<int>(w.objects.size());

  std::vector<H> phi_obj(n);
  for (int id = 0; id < n; ++id) {
    phi_obj[id] = b.relu(b.dense("enc.obj", b.constant(object_input(
                                                w.objects[id]))));
  }

  // Aggregations run in attribute-sorted order, which makes the embedding
  // exactly invariant to object relabeling and edge permutation: equal sort
  // keys imply bitwise-equal summands.
  std::vector<int> obj_order(n);
  for (int i = 0; i < n; ++i) obj_order[i] = i;
  std::sort(obj_order.begin(), obj_order.end(), [&](int a, int c) {
    return attr_key(w.objects[a]) < attr_key(w.objects[c]);
  });
  std::vector<H> obj_terms;
  for (int id : obj_order) obj_terms.push_back(phi_obj[id]);
  H obj_agg = b.sum(obj_terms);

  using EdgeKey = std::array<double, 9>;
  auto edge_key = [&](const Relation& r) {
    EdgeKey k{};
    k[0] = static_cast<double>(static_cast<int>(r.kind));
    const AttrKey src = attr_key(w.objects[r.src]);
    std::copy(src.begin(), src.end(), k.begin() + 1);
    if (r.dst >= 0) {
      const AttrKey dst = attr_key(w.objects[r.dst]);
      std::copy(dst.begin(), dst.end(), k.begin() + 5);
    }
    return k;
  };
  std::vector<int> edge_order(w.init_relations.size());
  for (std::size_t i = 0; i < edge_order.size(); ++i) {
    edge_order[i] = static_cast<int>(i);
  }
  std::sort(edge_order.begin(), edge_order.end(), [&](int a, int c) {
    return edge_key(w.init_relations[a]) < edge_key(w.init_relations[c]);
  });
  H edge_agg = b.zeros(kPhiDim);
  if (!edge_order.empty()) {
    std::vector<H> terms;
    for (int ei : edge_order) {
      const Relation& r = w.init_relations[ei];
      H phi_e = b.relu(b.dense("enc.rel", b.constant(relation_input(r.kind))));
      H dst = r.dst >= 0 ? phi_obj[r.dst] : b.zeros(kPhiDim);
      H pair = b.concat({phi_e, phi_obj[r.src], dst});
      terms.push_back(
          b.dense("enc.edge2", b.relu(b.dense("enc.edge1", pair))));
    }
    edge_agg = b.sum(terms);
  }

  using CtxKey = std::array<double, 9>;
  auto ctx_key = [&](const SkillContext& c) {
    CtxKey k{};
    k[0] = static_cast<double>(static_cast<int>(c.skill));
    const AttrKey a = attr_key(w.objects[c.i]);
    const AttrKey b2 = attr_key(w.objects[c.j]);
    std::copy(a.begin(), a.end(), k.begin() + 1);
    std::copy(b2.begin(), b2.end(), k.begin() + 5);
    return k;
  };
  std::vector<int> ctx_order(w.contexts.size());
  for (std::size_t i = 0; i < ctx_order.size(); ++i) {
    ctx_order[i] = static_cast<int>(i);
  }
  std::sort(ctx_order.begin(), ctx_order.end(), [&](int a, int c) {
    return ctx_key(w.contexts[a]) < ctx_key(w.contexts[c]);
  });
  std::vector<H> ctx_terms;
  for (int ci : ctx_order) {
    const SkillContext& c = w.contexts[ci];
    H phi_k =
        b.relu(b.dense("enc.skill", b.constant(skill_input(c.skill))));
    H trip = b.concat({phi_k, phi_obj[c.i], phi_obj[c.j]});
    ctx_terms.push_back(
        b.dense("enc.ctx2", b.relu(b.dense("enc.ctx1", trip))));
  }
  H ctx_agg = b.sum(ctx_terms);

  Vec u(3);
  u << w.env.camera_yaw, w.env.camera_pitch, w.env.noise_scale;
  H phi_u = b.relu(b.dense("enc.env", b.constant(u)));

  return b.dense("enc.fuse", b.concat({obj_agg, edge_agg, ctx_agg, phi_u}));
}

double value_from_embedding(const TaskEncoder& m, const Vec& emb) {
  const EvalBackend b{m.params};
  const Vec h = b.relu(b.dense("value.l0", emb));
  const double logit = b.dense("value.l1", h)[0];
  return 1.0 / (1.0 + std::exp(-logit));
}

}  // namespace

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

TaskEncoder make_model(Rng& rng, double lr) {
  nn::ParamLayout layout;
  layout.add("enc.obj.W", kPhiDim, 9);
  layout.add("enc.obj.b", kPhiDim);
  layout.add("enc.rel.W", kPhiDim, 4);
  layout.add("enc.rel.b", kPhiDim);
  layout.add("enc.skill.W", kPhiDim, 4);
  layout.add("enc.skill.b", kPhiDim);
  layout.add("enc.env.W", kPhiDim, 3);
  layout.add("enc.env.b", kPhiDim);
  layout.add("enc.edge1.W", 32, 3 * kPhiDim);
  layout.add("enc.edge1.b", 32);
  layout.add("enc.edge2.W", kPhiDim, 32);
  layout.add("enc.edge2.b", kPhiDim);
  layout.add("enc.ctx1.W", 32, 3 * kPhiDim);
  layout.add("enc.ctx1.b", 32);
  layout.add("enc.ctx2.W", kPhiDim, 32);
  layout.add("enc.ctx2.b", kPhiDim);
  layout.add("enc.fuse.W", kEmbedDim, 4 * kPhiDim);
  layout.add("enc.fuse.b", kEmbedDim);
  layout.add("value.l0.W", kEmbedDim, kEmbedDim);
  layout.add("value.l0.b", kEmbedDim);
  layout.add("value.l1.W", 1, kEmbedDim);
  layout.add("value.l1.b", 1);

  TaskEncoder m;
  m.params = nn::ParamVector::zeros(std::move(layout));
  nn::init_params(m.params, rng);
  m.adam = nn::make_adam(m.params.layout.total(), lr);
  return m;
}

Vec encode(const TaskEncoder& m, const TaskParam& w) {
  const EvalBackend b{m.params};
  return embed_impl(b, w);
}

double value(const TaskEncoder& m, const TaskParam& w) {
  return value_from_embedding(m, encode(m, w));
}

ValueLossReport value_loss(const TaskEncoder& m,
                           const std::vector<const TaskParam*>& tasks,
                           const Eigen::VectorXd& rewards) {
  if (tasks.empty() || rewards.size() != static_cast<Eigen::Index>(
                                             tasks.size())) {
    throw std::invalid_argument("value_loss: malformed batch");
  }
  nn::Tape t(m.params);
  const TapeBackend b{t};
  std::vector<nn::Tape::Id> outs;
  for (const TaskParam* w : tasks) {
    nn::Tape::Id emb = embed_impl(b, *w);
    nn::Tape::Id h = t.relu(t.dense("value.l0", emb));
    outs.push_back(t.sigmoid(t.dense("value.l1", h)));
  }
  const nn::Tape::Id packed = t.concat_cols(outs);
  Mat target(1, rewards.size());
  target.row(0) = rewards.transpose();
  const nn::Tape::Id loss = t.mean_squared_error(packed, target);
  ValueLossReport report;
  report.loss = t.scalar(loss);
  report.grad = t.grad(loss);
  report.relu_sig = t.relu_signature();
  return report;
}

double value_update(TaskEncoder& m,
                    const std::vector<const TaskParam*>& tasks,
                    const Eigen::VectorXd& rewards) {
  const ValueLossReport report = value_loss(m, tasks, rewards);
  nn::adam_step(m.params, m.adam, report.grad);
  return report.loss;
}

// ---------------------------------------------------------------------------
// Novelty
// ---------------------------------------------------------------------------

double knn_distance(const Vec& query, const std::vector<Vec>& subset, int K) {
  if (K <= 0) throw std::invalid_argument("knn_distance: K must be positive");
  if (static_cast<int>(subset.size()) < K) {
    throw InsufficientData("knn_distance: subset smaller than K");
  }
  std::vector<double> d2(subset.size());
  for (std::size_t i = 0; i < subset.size(); ++i) {
    d2[i] = (subset[i] - query).squaredNorm();
  }
  std::nth_element(d2.begin(), d2.begin() + (K - 1), d2.end());
  return std::sqrt(d2[K - 1]);
}

double density_estimate(double d, int K, int m, int dim) {
  if (d < 0.0 || K <= 0 || m <= 0 || dim <= 0) {
    throw std::invalid_argument("density_estimate: invalid arguments");
  }
  if (d == 0.0) return std::numeric_limits<double>::infinity();
  // log volume of the unit dim-ball, computed in log space for stability.
  const double log_unit =
      0.5 * dim * std::log(M_PI) - std::lgamma(0.5 * dim + 1.0);
  const double log_vk = log_unit + dim * std::log(d);
  return static_cast<double>(K) / (static_cast<double>(m) * std::exp(log_vk));
}

// ---------------------------------------------------------------------------
// Replay buffer
// ---------------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(int capacity) : capacity_(capacity) {
  if (capacity <= 0) {
    throw std::invalid_argument("ReplayBuffer: capacity must be positive");
  }
}

void ReplayBuffer::push(Episode e) {
  if (static_cast<int>(items_.size()) == capacity_) items_.pop_front();
  items_.push_back(std::move(e));
  ++total_pushed_;
}

std::vector<int> ReplayBuffer::sample_indices(Rng& rng, int count) const {
  const int n = size();
  if (count < 0 || count > n) {
    throw std::invalid_argument("sample_indices: count out of range");
  }
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  for (int k = 0; k < count; ++k) {
    const int pick =
        k + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(
                n - k)));
    std::swap(idx[k], idx[pick]);
  }
  idx.resize(count);
  return idx;
}

// ---------------------------------------------------------------------------
// Scoring and selection
// ---------------------------------------------------------------------------

double score(const TaskEncoder& m, const TaskParam& w,
             const std::vector<Vec>& subset_embeddings,
             const SamplerConfig& cfg) {
  const Vec emb = encode(m, w);
  const double d = knn_distance(emb, subset_embeddings, cfg.k);
  switch (cfg.mode) {
    case ScoreMode::kAtr:
      return value_from_embedding(m, emb) + cfg.beta * d;
    case ScoreMode::kFeasibilityOnly:
      return value_from_embedding(m, emb);
    case ScoreMode::kDiversityOnly:
      return cfg.beta * d;
  }
  throw std::invalid_argument("score: unknown mode");
}

const TaskParam& select_task(const TaskEncoder& m,
                             const std::vector<TaskParam>& cands,
                             const ReplayBuffer& buffer,
                             const SamplerConfig& cfg, Rng& rng,
                             SelectionRecord* record) {
  if (cands.empty()) {
    throw std::invalid_argument("select_task: no candidates");
  }
  SelectionRecord local;
  SelectionRecord& rec = record ? *record : local;
  rec = SelectionRecord{};

  const int warm_threshold = std::max(cfg.warmup, cfg.k);
  if (buffer.size() < warm_threshold) {
    rec.warmup_branch = true;
    rec.chosen_index = static_cast<int>(rng.uniform_index(cands.size()));
    return cands[rec.chosen_index];
  }

  const int m_eff = std::min(cfg.subset_m, buffer.size());
  if (m_eff < cfg.k) {
    throw InsufficientData("select_task: buffer smaller than K");
  }
  const std::vector<int> sub_idx = buffer.sample_indices(rng, m_eff);
  std::vector<Vec> sub_embs;
  sub_embs.reserve(sub_idx.size());
  for (int bi : sub_idx) sub_embs.push_back(encode(m, buffer.at(bi).w));

  rec.scores.resize(cands.size());
  rec.novelty.resize(cands.size());
  for (std::size_t ci = 0; ci < cands.size(); ++ci) {
    const Vec emb = encode(m, cands[ci]);
    const double d = knn_distance(emb, sub_embs, cfg.k);
    rec.novelty[ci] = d;
    switch (cfg.mode) {
      case ScoreMode::kAtr:
        rec.scores[ci] = value_from_embedding(m, emb) + cfg.beta * d;
        break;
      case ScoreMode::kFeasibilityOnly:
        rec.scores[ci] = value_from_embedding(m, emb);
        break;
      case ScoreMode::kDiversityOnly:
        rec.scores[ci] = cfg.beta * d;
        break;
    }
  }

  const double u = rng.uniform();
  if (u < cfg.epsilon) {
    rec.epsilon_branch = true;
    rec.chosen_index = static_cast<int>(rng.uniform_index(cands.size()));
  } else {
    // Stable softmax over the ranking scores.
    const double mx = *std::max_element(rec.scores.begin(), rec.scores.end());
    std::vector<double> p(cands.size());
    double total = 0.0;
    for (std::size_t ci = 0; ci < cands.size(); ++ci) {
      p[ci] = std::exp(rec.scores[ci] - mx);
      total += p[ci];
    }
    double draw = rng.uniform() * total;
    int chosen = static_cast<int>(cands.size()) - 1;
    for (std::size_t ci = 0; ci < cands.size(); ++ci) {
      draw -= p[ci];
      if (draw < 0.0) {
        chosen = static_cast<int>(ci);
        break;
      }
    }
    rec.chosen_index = chosen;
  }
  rec.chosen_score = rec.scores[rec.chosen_index];
  return cands[rec.chosen_index];
}

}  // namespace atr::sampler
