#include "atr/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace atr::harness {

using nlohmann::json;
using task::Skill;
using task::SkillContext;
using task::TaskParam;

namespace {

// Random-stream tags: every piece of per-iteration randomness derives from
// (seed, tag, iteration), so training is resumable and byte-reproducible.
constexpr std::uint64_t kInitTag = 1;
constexpr std::uint64_t kCandTag = 2;
constexpr std::uint64_t kSelTag = 3;
constexpr std::uint64_t kInstTag = 4;
constexpr std::uint64_t kObsTag = 5;
constexpr std::uint64_t kUpdTag = 6;
constexpr std::uint64_t kEvalTag = 7;
constexpr std::uint64_t kSeqTag = 8;

std::string source_dir() { return ATR_SOURCE_DIR; }

}  // namespace

std::string default_eval_suite_path() {
  return source_dir() + "/data/eval_suite.json";
}
std::string default_benchmarks_path() {
  return source_dir() + "/data/seq_benchmarks.json";
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

namespace {

void require_known_keys(const json& j, const std::vector<std::string>& known,
                        const std::string& where) {
  for (const auto& [key, val] : j.items()) {
    (void)val;
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown config key `" + key + "` in " + where);
    }
  }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be an object");
  ExperimentConfig cfg;
  require_known_keys(j,
                     {"seed", "iterations", "eval_interval", "eval_episodes",
                      "batch_size", "lr", "mode", "out_dir", "buffer_capacity",
                      "eval_suite", "sampler", "world", "prior"},
                     "root");
  try {
    maybe(j, "seed", cfg.seed);
    maybe(j, "iterations", cfg.iterations);
    maybe(j, "eval_interval", cfg.eval_interval);
    maybe(j, "eval_episodes", cfg.eval_episodes);
    maybe(j, "batch_size", cfg.batch_size);
    maybe(j, "lr", cfg.lr);
    maybe(j, "mode", cfg.mode);
    maybe(j, "out_dir", cfg.out_dir);
    maybe(j, "buffer_capacity", cfg.buffer_capacity);
    maybe(j, "eval_suite", cfg.eval_suite);
    if (j.contains("sampler")) {
      const json& s = j.at("sampler");
      require_known_keys(
          s, {"beta", "k", "subset_m", "n_candidates", "epsilon", "warmup"},
          "sampler");
      maybe(s, "beta", cfg.sampler.beta);
      maybe(s, "k", cfg.sampler.k);
      maybe(s, "subset_m", cfg.sampler.subset_m);
      maybe(s, "n_candidates", cfg.sampler.n_candidates);
      maybe(s, "epsilon", cfg.sampler.epsilon);
      maybe(s, "warmup", cfg.sampler.warmup);
    }
    if (j.contains("world")) {
      const json& ww = j.at("world");
      require_known_keys(ww,
                         {"reach_radius", "rack_clearance", "pull_spawn_max",
                          "points_per_object", "max_spawn_attempts"},
                         "world");
      maybe(ww, "reach_radius", cfg.world.reach_radius);
      maybe(ww, "rack_clearance", cfg.world.rack_clearance);
      maybe(ww, "pull_spawn_max", cfg.world.pull_spawn_max);
      maybe(ww, "points_per_object", cfg.world.points_per_object);
      maybe(ww, "max_spawn_attempts", cfg.world.max_spawn_attempts);
    }
    if (j.contains("prior")) {
      const json& p = j.at("prior");
      require_known_keys(p,
                         {"object_count_probs", "kind_weights", "p_on",
                          "p_nextto", "skill_mix", "tool_bias",
                          "contexts_per_task", "size_ranges"},
                         "prior");
      if (p.contains("object_count_probs")) {
        auto v = p.at("object_count_probs").get<std::vector<double>>();
        if (v.size() != cfg.prior.object_count_probs.size()) {
          throw ConfigError("object_count_probs must have 5 entries");
        }
        std::copy(v.begin(), v.end(), cfg.prior.object_count_probs.begin());
      }
      if (p.contains("kind_weights")) {
        auto v = p.at("kind_weights").get<std::vector<double>>();
        if (v.size() != cfg.prior.kind_weights.size()) {
          throw ConfigError("kind_weights must have 5 entries");
        }
        std::copy(v.begin(), v.end(), cfg.prior.kind_weights.begin());
      }
      maybe(p, "p_on", cfg.prior.p_on);
      maybe(p, "p_nextto", cfg.prior.p_nextto);
      if (p.contains("skill_mix")) {
        auto v = p.at("skill_mix").get<std::vector<double>>();
        if (v.size() != cfg.prior.skill_mix.size()) {
          throw ConfigError("skill_mix must have 4 entries");
        }
        std::copy(v.begin(), v.end(), cfg.prior.skill_mix.begin());
      }
      maybe(p, "tool_bias", cfg.prior.tool_bias);
      maybe(p, "contexts_per_task", cfg.prior.contexts_per_task);
      if (p.contains("size_ranges")) {
        for (const auto& [kname, range] : p.at("size_ranges").items()) {
          const task::ObjectKind kind = task::kind_from_name(kname);
          if (kind == task::ObjectKind::kTable) {
            throw ConfigError("the table size is fixed");
          }
          const auto lo = range.at(0).get<std::vector<double>>();
          const auto hi = range.at(1).get<std::vector<double>>();
          if (lo.size() != 3 || hi.size() != 3) {
            throw ConfigError("size range entries must be 3-vectors");
          }
          task::SizeRange& r = cfg.prior.size_ranges[static_cast<int>(kind)];
          r.lo = Eigen::Vector3d(lo[0], lo[1], lo[2]);
          r.hi = Eigen::Vector3d(hi[0], hi[1], hi[2]);
        }
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config schema error: ") + e.what());
  }
  if (cfg.iterations < 0 || cfg.eval_interval <= 0 || cfg.batch_size <= 0 ||
      cfg.buffer_capacity <= 0 || cfg.eval_episodes <= 0) {
    throw ConfigError("config counts must be positive");
  }
  is_uniform_mode(cfg);  // validates the mode string
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["iterations"] = cfg.iterations;
  j["eval_interval"] = cfg.eval_interval;
  j["eval_episodes"] = cfg.eval_episodes;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["mode"] = cfg.mode;
  j["out_dir"] = cfg.out_dir;
  j["buffer_capacity"] = cfg.buffer_capacity;
  j["eval_suite"] = cfg.eval_suite;
  j["sampler"] = {{"beta", cfg.sampler.beta},
                  {"k", cfg.sampler.k},
                  {"subset_m", cfg.sampler.subset_m},
                  {"n_candidates", cfg.sampler.n_candidates},
                  {"epsilon", cfg.sampler.epsilon},
                  {"warmup", cfg.sampler.warmup}};
  j["world"] = {{"reach_radius", cfg.world.reach_radius},
                {"rack_clearance", cfg.world.rack_clearance},
                {"pull_spawn_max", cfg.world.pull_spawn_max},
                {"points_per_object", cfg.world.points_per_object},
                {"max_spawn_attempts", cfg.world.max_spawn_attempts}};
  json ranges = json::object();
  for (int k = 1; k < task::kNumKinds; ++k) {
    const task::SizeRange& r = cfg.prior.size_ranges[k];
    ranges[task::kind_name(static_cast<task::ObjectKind>(k))] = {
        {r.lo[0], r.lo[1], r.lo[2]}, {r.hi[0], r.hi[1], r.hi[2]}};
  }
  j["prior"] = {
      {"object_count_probs", cfg.prior.object_count_probs},
      {"kind_weights", cfg.prior.kind_weights},
      {"p_on", cfg.prior.p_on},
      {"p_nextto", cfg.prior.p_nextto},
      {"skill_mix", cfg.prior.skill_mix},
      {"tool_bias", cfg.prior.tool_bias},
      {"contexts_per_task", cfg.prior.contexts_per_task},
      {"size_ranges", ranges}};
  return j.dump();
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  const std::string s = config_to_json(cfg);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool is_uniform_mode(const ExperimentConfig& cfg) {
  if (cfg.mode == "uniform") return true;
  score_mode(cfg);
  return false;
}

sampler::ScoreMode score_mode(const ExperimentConfig& cfg) {
  if (cfg.mode == "atr" || cfg.mode == "uniform") {
    return sampler::ScoreMode::kAtr;
  }
  if (cfg.mode == "feasibility-only") {
    return sampler::ScoreMode::kFeasibilityOnly;
  }
  if (cfg.mode == "diversity-only") {
    return sampler::ScoreMode::kDiversityOnly;
  }
  throw ConfigError("unknown mode: " + cfg.mode);
}

// ---------------------------------------------------------------------------
// Eval suite
// ---------------------------------------------------------------------------

EvalSuite load_eval_suite(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open eval suite: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("eval suite parse error: ") + e.what());
  }
  EvalSuite suite;
  for (int k = 0; k < task::kNumSkills; ++k) {
    const char* name = task::skill_name(static_cast<Skill>(k));
    if (!j.at("skills").contains(name)) {
      throw ConfigError(std::string("eval suite missing skill ") + name);
    }
    for (const json& jt : j.at("skills").at(name)) {
      TaskParam w = task::from_json(jt.dump());
      if (w.contexts.size() != 1 ||
          w.contexts[0].skill != static_cast<Skill>(k)) {
        throw ConfigError(
            std::string("eval suite task for ") + name +
            " must have exactly one context of that skill");
      }
      suite.tasks[k].push_back(std::move(w));
    }
    if (suite.tasks[k].empty()) {
      throw ConfigError(std::string("eval suite has no tasks for ") + name);
    }
  }
  return suite;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string metrics_header() {
  return "iteration,succ_place_onto,succ_place_nextto,succ_push_under,"
         "succ_pull_with,value_loss,bc_loss_place_onto,bc_loss_place_nextto,"
         "bc_loss_push_under,bc_loss_pull_with,mean_novelty,reward_frac";
}

std::string metrics_row_csv(const MetricsRow& row) {
  std::ostringstream os;
  os << row.iteration;
  for (double v : row.eval_success) os << "," << fmt_double(v);
  os << "," << fmt_double(row.value_loss);
  for (double v : row.bc_loss) os << "," << fmt_double(v);
  os << "," << fmt_double(row.mean_novelty);
  os << "," << fmt_double(row.reward_frac);
  return os.str();
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TrainState make_train_state(const ExperimentConfig& cfg) {
  TrainState st;
  st.cfg = cfg;
  st.buffer = sampler::ReplayBuffer(cfg.buffer_capacity);
  Rng init_rng(derive_seed(cfg.seed, kInitTag));
  st.model = sampler::make_model(init_rng, cfg.lr);
  for (int k = 0; k < task::kNumSkills; ++k) {
    st.policies.push_back(
        policy::make_policy(static_cast<Skill>(k), init_rng, cfg.lr));
  }
  return st;
}

namespace {

// Uniform sample of `count` distinct values from `pool` (prefix shuffle).
std::vector<int> sample_from(Rng& rng, std::vector<int> pool, int count) {
  for (int k = 0; k < count; ++k) {
    const int pick = k + static_cast<int>(rng.uniform_index(
                             static_cast<std::uint64_t>(pool.size() - k)));
    std::swap(pool[k], pool[pick]);
  }
  pool.resize(count);
  return pool;
}

json action_json(const Eigen::VectorXd& a) {
  json arr = json::array();
  for (Eigen::Index d = 0; d < a.size(); ++d) arr.push_back(a[d]);
  return arr;
}

}  // namespace

void train(TrainState& st, const EvalSuite& suite, int until,
           const TrainLogs& logs) {
  const ExperimentConfig& cfg = st.cfg;
  const bool uniform = is_uniform_mode(cfg);
  sampler::SamplerConfig scfg = cfg.sampler;
  scfg.mode = score_mode(cfg);

  for (int it = st.iteration; it < until; ++it) {
    Rng cand_rng(derive_seed(cfg.seed, kCandTag, static_cast<std::uint64_t>(it)));
    Rng sel_rng(derive_seed(cfg.seed, kSelTag, static_cast<std::uint64_t>(it)));
    Rng inst_rng(derive_seed(cfg.seed, kInstTag, static_cast<std::uint64_t>(it)));
    Rng env_rng(derive_seed(cfg.seed, kObsTag, static_cast<std::uint64_t>(it)));
    Rng upd_rng(derive_seed(cfg.seed, kUpdTag, static_cast<std::uint64_t>(it)));

    // --- task selection -----------------------------------------------
    TaskParam w;
    sampler::SelectionRecord rec;
    if (uniform) {
      w = task::sample_prior(cand_rng, cfg.prior);
    } else {
      std::vector<TaskParam> cands;
      cands.reserve(cfg.sampler.n_candidates);
      for (int c = 0; c < cfg.sampler.n_candidates; ++c) {
        cands.push_back(task::sample_prior(cand_rng, cfg.prior));
      }
      w = select_task(st.model, cands, st.buffer, scfg, sel_rng, &rec);
      if (!rec.novelty.empty()) {
        double total = 0.0;
        for (double d : rec.novelty) total += d;
        st.last_mean_novelty = total / static_cast<double>(rec.novelty.size());
      }
      if (logs.selections) {
        json line = {{"iteration", it},
                     {"chosen_index", rec.chosen_index},
                     {"warmup", rec.warmup_branch},
                     {"epsilon", rec.epsilon_branch},
                     {"chosen_score", rec.chosen_score},
                     {"scores", rec.scores},
                     {"novelty", rec.novelty}};
        (*logs.selections) << line.dump() << "\n";
      }
    }

    // --- rollout --------------------------------------------------------
    const std::uint64_t inst_seed =
        derive_seed(cfg.seed, kInstTag, static_cast<std::uint64_t>(it));
    bool infeasible = false;
    world::WorldState ws;
    try {
      ws = world::instantiate(w, inst_rng, cfg.world);
    } catch (const world::InstantiationInfeasible&) {
      infeasible = true;
    }
    for (const SkillContext& c : w.contexts) {
      sampler::Episode ep;
      ep.w = w;
      ep.context = c;
      double r = 0.0;
      if (!infeasible) {
        const world::Observation obs = world::observe(ws, w.env, env_rng);
        bool have_features = true;
        Eigen::VectorXd feats;
        try {
          feats = policy::featurize(obs, c);
        } catch (const policy::EmptyMask&) {
          have_features = false;
        }
        if (have_features) {
          const world::Action a =
              policy::act(st.policies[static_cast<int>(c.skill)], feats,
                          policy::ActMode::kSample, env_rng);
          ep.acted = world::execute_primitive(ws, c, a);
          r = world::success(ws, c) ? 1.0 : 0.0;
          ep.features = feats;
          ep.action = a.to_vector();
          ep.executed = true;
        }
      }
      ep.reward = r;
      if (logs.episodes) {
        json line = {{"iteration", it},
                     {"task", json::parse(task::to_json(w))},
                     {"inst_seed", inst_seed},
                     {"infeasible", infeasible},
                     {"skill", task::skill_name(c.skill)},
                     {"i", c.i},
                     {"j", c.j},
                     {"executed", ep.executed},
                     {"acted", ep.acted},
                     {"action", ep.executed ? action_json(ep.action)
                                            : json::array()},
                     {"reward", r}};
        (*logs.episodes) << line.dump() << "\n";
      }
      st.buffer.push(std::move(ep));
      st.window_episodes += 1;
      st.window_successes += static_cast<long>(r);
    }

    // --- feasibility-value update (sampler modes only) -------------------
    if (!uniform && st.buffer.size() >= cfg.batch_size) {
      const std::vector<int> idx =
          st.buffer.sample_indices(upd_rng, cfg.batch_size);
      std::vector<const TaskParam*> tasks;
      Eigen::VectorXd rewards(idx.size());
      tasks.reserve(idx.size());
      for (std::size_t b = 0; b < idx.size(); ++b) {
        tasks.push_back(&st.buffer.at(idx[b]).w);
        rewards[static_cast<Eigen::Index>(b)] = st.buffer.at(idx[b]).reward;
      }
      st.last_value_loss = sampler::value_update(st.model, tasks, rewards);
    }

    // --- behavior cloning on successes, one step per skill ---------------
    for (int k = 0; k < task::kNumSkills; ++k) {
      std::vector<int> pool;
      for (int bi = 0; bi < st.buffer.size(); ++bi) {
        const sampler::Episode& e = st.buffer.at(bi);
        if (e.executed && e.acted && e.reward == 1.0 &&
            e.context.skill == static_cast<Skill>(k)) {
          pool.push_back(bi);
        }
      }
      if (pool.empty()) continue;
      std::vector<int> chosen =
          static_cast<int>(pool.size()) > cfg.batch_size
              ? sample_from(upd_rng, pool, cfg.batch_size)
              : pool;
      policy::BcBatch batch;
      batch.features.resize(policy::kFeatureDim, chosen.size());
      batch.actions.resize(policy::kActionDim, chosen.size());
      for (std::size_t b = 0; b < chosen.size(); ++b) {
        batch.features.col(b) = st.buffer.at(chosen[b]).features;
        batch.actions.col(b) = st.buffer.at(chosen[b]).action;
      }
      st.last_bc_loss[k] = policy::bc_update(st.policies[k], batch);
    }

    // --- periodic evaluation ---------------------------------------------
    if ((it + 1) % cfg.eval_interval == 0) {
      MetricsRow row;
      row.iteration = it + 1;
      row.eval_success = evaluate_skills(st, suite, cfg.eval_episodes,
                                         static_cast<std::uint64_t>(it + 1));
      row.value_loss = st.last_value_loss;
      row.bc_loss = st.last_bc_loss;
      row.mean_novelty = st.last_mean_novelty;
      row.reward_frac =
          st.window_episodes > 0
              ? static_cast<double>(st.window_successes) /
                    static_cast<double>(st.window_episodes)
              : 0.0;
      st.metrics.push_back(row);
      st.window_episodes = 0;
      st.window_successes = 0;
    }
    st.iteration = it + 1;
  }
}

std::array<double, task::kNumSkills> evaluate_skills(const TrainState& st,
                                                     const EvalSuite& suite,
                                                     int episodes_per_skill,
                                                     std::uint64_t tag) {
  std::array<double, task::kNumSkills> rates{};
  for (int k = 0; k < task::kNumSkills; ++k) {
    const std::vector<TaskParam>& tasks = suite.tasks[k];
    int successes = 0;
    for (int e = 0; e < episodes_per_skill; ++e) {
      const TaskParam& w = tasks[e % tasks.size()];
      Rng rng(derive_seed(st.cfg.seed, kEvalTag,
                          tag * 64 + static_cast<std::uint64_t>(k),
                          static_cast<std::uint64_t>(e)));
      world::WorldState ws;
      try {
        ws = world::instantiate(w, rng, st.cfg.world);
      } catch (const world::InstantiationInfeasible&) {
        continue;
      }
      const SkillContext& c = w.contexts[0];
      const world::Observation obs = world::observe(ws, w.env, rng);
      Eigen::VectorXd feats;
      try {
        feats = policy::featurize(obs, c);
      } catch (const policy::EmptyMask&) {
        continue;
      }
      const world::Action a = policy::act(
          st.policies[k], feats, policy::ActMode::kSample, rng);
      world::execute_primitive(ws, c, a);
      if (world::success(ws, c)) ++successes;
    }
    rates[k] = static_cast<double>(successes) /
               static_cast<double>(episodes_per_skill);
  }
  return rates;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'A', 'T', 'R', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

struct Writer {
  std::string buf;
  void raw(const void* p, std::size_t n) {
    buf.append(static_cast<const char*>(p), n);
  }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i32(std::int32_t v) { raw(&v, sizeof v); }
  void i64(std::int64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void vec(const Eigen::VectorXd& v) {
    u64(static_cast<std::uint64_t>(v.size()));
    raw(v.data(), sizeof(double) * v.size());
  }
};

struct Reader {
  const std::string& buf;
  std::size_t at = 0;
  void raw(void* p, std::size_t n) {
    if (at + n > buf.size()) throw CheckpointError("checkpoint truncated");
    std::memcpy(p, buf.data() + at, n);
    at += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::int32_t i32() {
    std::int32_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::int64_t i64() {
    std::int64_t v;
    raw(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    if (at + n > buf.size()) throw CheckpointError("checkpoint truncated");
    std::string s(buf.data() + at, n);
    at += n;
    return s;
  }
  Eigen::VectorXd vec() {
    const std::uint64_t n = u64();
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    raw(v.data(), sizeof(double) * n);
    return v;
  }
};

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void write_adam(Writer& wr, const nn::AdamState& s) {
  wr.vec(s.m);
  wr.vec(s.v);
  wr.i64(s.t);
  wr.f64(s.lr);
  wr.f64(s.beta1);
  wr.f64(s.beta2);
  wr.f64(s.eps);
}

void read_adam(Reader& rd, nn::AdamState& s) {
  s.m = rd.vec();
  s.v = rd.vec();
  s.t = rd.i64();
  s.lr = rd.f64();
  s.beta1 = rd.f64();
  s.beta2 = rd.f64();
  s.eps = rd.f64();
}

}  // namespace

void save_checkpoint(const TrainState& st, const std::string& path) {
  Writer wr;
  wr.u32(kVersion);
  wr.u64(config_hash(st.cfg));
  wr.str(config_to_json(st.cfg));
  wr.i64(st.iteration);

  wr.vec(st.model.params.values);
  write_adam(wr, st.model.adam);
  wr.u32(static_cast<std::uint32_t>(st.policies.size()));
  for (const policy::PolicyModel& p : st.policies) {
    wr.vec(p.params.values);
    write_adam(wr, p.adam);
  }

  wr.f64(st.last_value_loss);
  for (double v : st.last_bc_loss) wr.f64(v);
  wr.f64(st.last_mean_novelty);
  wr.i64(st.window_episodes);
  wr.i64(st.window_successes);

  wr.i32(st.buffer.capacity());
  wr.i64(st.buffer.total_pushed());
  wr.i32(st.buffer.size());
  for (int i = 0; i < st.buffer.size(); ++i) {
    const sampler::Episode& e = st.buffer.at(i);
    wr.str(task::to_json(e.w));
    wr.i32(static_cast<int>(e.context.skill));
    wr.i32(e.context.i);
    wr.i32(e.context.j);
    wr.u32(e.executed ? 1 : 0);
    wr.u32(e.acted ? 1 : 0);
    wr.vec(e.features);
    wr.vec(e.action);
    wr.f64(e.reward);
  }

  wr.i32(static_cast<int>(st.metrics.size()));
  for (const MetricsRow& row : st.metrics) {
    wr.i32(row.iteration);
    for (double v : row.eval_success) wr.f64(v);
    wr.f64(row.value_loss);
    for (double v : row.bc_loss) wr.f64(v);
    wr.f64(row.mean_novelty);
    wr.f64(row.reward_frac);
  }

  std::string payload = std::move(wr.buf);
  const std::uint64_t digest = fnv1a(payload);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof kMagic);
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  out.write(reinterpret_cast<const char*>(&digest), sizeof digest);
  if (!out) throw CheckpointError("checkpoint write failed: " + path);
}

TrainState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string all = ss.str();
  if (all.size() < sizeof(kMagic) + sizeof(std::uint64_t) ||
      std::memcmp(all.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("not a checkpoint file: " + path);
  }
  const std::string payload =
      all.substr(sizeof kMagic, all.size() - sizeof kMagic - sizeof(std::uint64_t));
  std::uint64_t stored_digest;
  std::memcpy(&stored_digest, all.data() + all.size() - sizeof stored_digest,
              sizeof stored_digest);
  if (fnv1a(payload) != stored_digest) {
    throw CheckpointError("checkpoint digest mismatch: " + path);
  }

  Reader rd{payload};
  const std::uint32_t version = rd.u32();
  if (version != kVersion) {
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  }
  const std::uint64_t stored_hash = rd.u64();
  const std::string cfg_json = rd.str();
  ExperimentConfig cfg = config_from_json(cfg_json);
  if (config_hash(cfg) != stored_hash) {
    throw CheckpointError("checkpoint config hash mismatch");
  }

  TrainState st = make_train_state(cfg);
  st.iteration = static_cast<int>(rd.i64());

  Eigen::VectorXd model_values = rd.vec();
  if (model_values.size() != st.model.params.values.size()) {
    throw CheckpointError("checkpoint model size mismatch");
  }
  st.model.params.values = model_values;
  read_adam(rd, st.model.adam);
  const std::uint32_t n_policies = rd.u32();
  if (n_policies != st.policies.size()) {
    throw CheckpointError("checkpoint policy count mismatch");
  }
  for (policy::PolicyModel& p : st.policies) {
    Eigen::VectorXd values = rd.vec();
    if (values.size() != p.params.values.size()) {
      throw CheckpointError("checkpoint policy size mismatch");
    }
    p.params.values = values;
    read_adam(rd, p.adam);
  }

  st.last_value_loss = rd.f64();
  for (double& v : st.last_bc_loss) v = rd.f64();
  st.last_mean_novelty = rd.f64();
  st.window_episodes = rd.i64();
  st.window_successes = rd.i64();

  const int capacity = rd.i32();
  if (capacity != cfg.buffer_capacity) {
    throw CheckpointError("checkpoint buffer capacity mismatch");
  }
  const long total_pushed = rd.i64();
  const int n_items = rd.i32();
  for (int i = 0; i < n_items; ++i) {
    sampler::Episode e;
    e.w = task::from_json(rd.str());
    e.context.skill = static_cast<Skill>(rd.i32());
    e.context.i = rd.i32();
    e.context.j = rd.i32();
    e.executed = rd.u32() != 0;
    e.acted = rd.u32() != 0;
    e.features = rd.vec();
    e.action = rd.vec();
    e.reward = rd.f64();
    st.buffer.push(std::move(e));
  }
  st.buffer.set_total_pushed(total_pushed);

  const int n_rows = rd.i32();
  for (int r = 0; r < n_rows; ++r) {
    MetricsRow row;
    row.iteration = rd.i32();
    for (double& v : row.eval_success) v = rd.f64();
    row.value_loss = rd.f64();
    for (double& v : row.bc_loss) v = rd.f64();
    row.mean_novelty = rd.f64();
    row.reward_frac = rd.f64();
    st.metrics.push_back(row);
  }
  if (rd.at != payload.size()) {
    throw CheckpointError("checkpoint has trailing bytes");
  }
  return st;
}

// ---------------------------------------------------------------------------
// Sequential benchmarks
// ---------------------------------------------------------------------------

std::vector<SeqBenchmark> load_benchmarks(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open benchmarks: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("benchmarks parse error: ") + e.what());
  }
  std::vector<SeqBenchmark> out;
  try {
    for (const json& jb : j.at("benchmarks")) {
      SeqBenchmark b;
      b.name = jb.at("name").get<std::string>();
      b.w = task::from_json(jb.at("task").dump());
      for (const json& jz : jb.value("zones", json::array())) {
        world::SpawnZone z;
        z.id = jz.at("id").get<int>();
        z.x_lo = jz.at("x").at(0).get<double>();
        z.x_hi = jz.at("x").at(1).get<double>();
        z.y_lo = jz.at("y").at(0).get<double>();
        z.y_hi = jz.at("y").at(1).get<double>();
        b.zones.push_back(z);
      }
      for (const json& jg : jb.at("goal")) {
        task::Relation r;
        r.kind = task::relation_from_name(jg.at("kind").get<std::string>());
        r.src = jg.at("src").get<int>();
        r.dst = jg.at("dst").get<int>();
        b.goal.push_back(r);
      }
      out.push_back(std::move(b));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("benchmarks schema error: ") + e.what());
  }
  if (out.empty()) throw ConfigError("benchmark file lists no benchmarks");
  return out;
}

SeqResult run_sequential_eval(const TrainState* st, const SeqBenchmark& bench,
                              int trials, bool use_oracle,
                              std::uint64_t seed) {
  if (!use_oracle && st == nullptr) {
    throw std::invalid_argument(
        "run_sequential_eval: need a training state unless using the oracle");
  }
  SeqResult result;
  result.trials = trials;
  long steps_total = 0;
  const world::WorldConfig wcfg = st ? st->cfg.world : world::WorldConfig{};
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(derive_seed(seed, kSeqTag, fnv1a(bench.name),
                        static_cast<std::uint64_t>(trial)));
    world::WorldState ws;
    try {
      ws = world::instantiate_zoned(bench.w, bench.zones, rng, wcfg);
    } catch (const world::InstantiationInfeasible&) {
      continue;
    }
    int steps = 0;
    bool ok = false;
    while (true) {
      const sym::SceneGraph g = sym::extract_scene_graph(ws);
      if (sym::goal_satisfied(g, bench.goal)) {
        ok = true;
        break;
      }
      if (steps >= 10) break;
      std::vector<SkillContext> p;
      try {
        p = sym::plan(g, bench.goal, 10);
      } catch (const sym::NoPlanFound&) {
        break;
      }
      const SkillContext c = p.front();
      bool acted = false;
      world::Action a;
      if (use_oracle) {
        a = policy::oracle_action(ws, c);
        acted = true;
      } else {
        const world::Observation obs = world::observe(ws, bench.w.env, rng);
        try {
          const Eigen::VectorXd feats = policy::featurize(obs, c);
          a = policy::act(st->policies[static_cast<int>(c.skill)], feats,
                          policy::ActMode::kSample, rng);
          acted = true;
        } catch (const policy::EmptyMask&) {
          acted = false;
        }
      }
      if (acted) world::execute_primitive(ws, c, a);
      ++steps;
    }
    if (ok) {
      ++result.successes;
      steps_total += steps;
    }
  }
  result.mean_steps_on_success =
      result.successes > 0
          ? static_cast<double>(steps_total) /
                static_cast<double>(result.successes)
          : 0.0;
  return result;
}

// ---------------------------------------------------------------------------
// Full experiment
// ---------------------------------------------------------------------------

TrainState run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(cfg.out_dir);

  const std::string suite_path =
      cfg.eval_suite.empty() ? default_eval_suite_path() : cfg.eval_suite;
  const EvalSuite suite = load_eval_suite(suite_path);

  TrainState st = make_train_state(cfg);
  std::ofstream episodes(cfg.out_dir + "/episodes.jsonl", std::ios::trunc);
  std::ofstream selections(cfg.out_dir + "/selections.jsonl", std::ios::trunc);
  TrainLogs logs;
  logs.episodes = &episodes;
  logs.selections = &selections;

  train(st, suite, cfg.iterations, logs);

  std::ofstream metrics(cfg.out_dir + "/metrics.csv", std::ios::trunc);
  metrics << metrics_header() << "\n";
  for (const MetricsRow& row : st.metrics) {
    metrics << metrics_row_csv(row) << "\n";
  }
  metrics.close();

  save_checkpoint(st, cfg.out_dir + "/checkpoint.bin");

  const double wall_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  json summary = {{"config_hash", config_hash(cfg)},
                  {"iterations", st.iteration},
                  {"mode", cfg.mode},
                  {"episodes_seen", st.buffer.total_pushed()},
                  {"wall_clock_seconds", wall_s},
                  {"metrics_schema_version", 1}};
  if (!st.metrics.empty()) {
    const MetricsRow& last = st.metrics.back();
    json rates = json::object();
    for (int k = 0; k < task::kNumSkills; ++k) {
      rates[task::skill_name(static_cast<Skill>(k))] = last.eval_success[k];
    }
    summary["final_eval_success"] = rates;
  }
  std::ofstream summary_out(cfg.out_dir + "/summary.json", std::ios::trunc);
  summary_out << summary.dump(2) << "\n";

  return st;
}

}  // namespace atr::harness
