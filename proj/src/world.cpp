#include "atr/world.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace atr::world {

using task::ObjectKind;
using task::Relation;
using task::RelationKind;
using task::Skill;
using task::SkillContext;
using task::TaskParam;

namespace {

double clamp_component(double v) { return std::min(0.5, std::max(-0.5, v)); }

struct ZInterval {
  double lo, hi;
};

// The solid volume a body occupies for collision purposes. A rack is open
// underneath: only its top slab is solid.
ZInterval solid_z(const WorldConfig& cfg, const Body& b) {
  if (b.kind == ObjectKind::kRack) {
    return {b.z + cfg.rack_clearance * b.size[2], b.top()};
  }
  return {b.z, b.top()};
}

bool intervals_overlap(double alo, double ahi, double blo, double bhi) {
  return alo < bhi && blo < ahi;  // open intervals: touching is not overlap
}

bool footprints_overlap(const Body& a, const Body& b) {
  return std::abs(a.x - b.x) < a.hx() + b.hx() &&
         std::abs(a.y - b.y) < a.hy() + b.hy();
}

bool on_table(const Body& b) {
  return std::abs(b.x) + b.hx() <= 0.5 * task::kTableSize[0] + 1e-12 &&
         std::abs(b.y) + b.hy() <= 0.5 * task::kTableSize[1] + 1e-12;
}

const Body& body_at(const WorldState& s, int id) {
  if (id < 0 || id >= static_cast<int>(s.bodies.size())) {
    throw UnknownObject("unknown object id " + std::to_string(id));
  }
  return s.bodies[id];
}

bool collision_free(const WorldState& s, const Body& candidate,
                    const std::set<int>& exclude) {
  for (const Body& other : s.bodies) {
    if (other.id == candidate.id || exclude.count(other.id)) continue;
    if (bodies_overlap(s.cfg, candidate, other)) return false;
  }
  return true;
}

// Highest support surface at (x, y) whose top is at or below drop_z and whose
// top face fully contains the moving body's footprint. The table always
// qualifies when the footprint stays on it. Returns the resting height.
std::optional<double> settle_height(const WorldState& s, const Body& moving,
                                    double x, double y, double drop_z) {
  Body probe = moving;
  probe.x = x;
  probe.y = y;
  if (!on_table(probe)) return std::nullopt;
  double best = kTableTop;
  if (best > drop_z + 1e-9) return std::nullopt;
  for (const Body& b : s.bodies) {
    if (b.id == moving.id || b.id == 0) continue;
    if (b.kind == ObjectKind::kHook) continue;  // too thin to stack on
    if (b.top() <= drop_z + 1e-9 && b.top() > best &&
        footprint_inside_at(moving, x, y, b)) {
      best = b.top();
    }
  }
  return best;
}

bool grasp_on_body(const WorldConfig& cfg, const Body& b,
                   const Eigen::Vector3d& p) {
  return std::abs(p[0]) <= b.hx() + 1e-12 && std::abs(p[1]) <= b.hy() + 1e-12 &&
         p[2] >= cfg.grasp_band_lo * b.size[2] - 1e-12 &&
         p[2] <= cfg.grasp_band_hi * b.size[2] + 1e-12;
}

bool contact_on_body(const WorldConfig& cfg, const Body& b,
                     const Eigen::Vector3d& p) {
  return std::abs(p[0]) <= b.hx() + 1e-12 && std::abs(p[1]) <= b.hy() + 1e-12 &&
         p[2] >= -1e-12 && p[2] <= cfg.contact_band_hi * b.size[2] + 1e-12;
}

// Slides the body from its pose toward (tx, ty) at constant height, stopping
// at the last collision-free sample before an obstruction (or at the exact
// target). Returns the final (x, y).
std::pair<double, double> sweep_to(const WorldState& s, const Body& moving,
                                   double tx, double ty,
                                   const std::set<int>& exclude) {
  const double dx = tx - moving.x;
  const double dy = ty - moving.y;
  const double dist = std::hypot(dx, dy);
  if (dist < 1e-12) return {moving.x, moving.y};
  const double ux = dx / dist, uy = dy / dist;
  auto free_at = [&](double lam) {
    Body probe = moving;
    probe.x = moving.x + ux * lam;
    probe.y = moving.y + uy * lam;
    return on_table(probe) && collision_free(s, probe, exclude);
  };
  double lam_free = 0.0;
  const int n = static_cast<int>(dist / s.cfg.sweep_step);
  bool blocked = false;
  for (int k = 1; k <= n; ++k) {
    const double lam = k * s.cfg.sweep_step;
    if (free_at(lam)) {
      lam_free = lam;
    } else {
      blocked = true;
      break;
    }
  }
  if (!blocked && free_at(dist)) lam_free = dist;
  return {moving.x + ux * lam_free, moving.y + uy * lam_free};
}

}  // namespace

// ---------------------------------------------------------------------------
// Action
// ---------------------------------------------------------------------------

Action Action::clamped(const Eigen::Vector3d& pi, const Eigen::Vector3d& pj) {
  Action a;
  for (int k = 0; k < 3; ++k) {
    a.p_i[k] = clamp_component(pi[k]);
    a.p_j[k] = clamp_component(pj[k]);
  }
  return a;
}

Action Action::from_vector(const Eigen::VectorXd& v6) {
  if (v6.size() != 6) throw std::invalid_argument("action vector must be 6-d");
  return clamped(v6.head<3>(), v6.tail<3>());
}

Eigen::VectorXd Action::to_vector() const {
  Eigen::VectorXd v(6);
  v << p_i, p_j;
  return v;
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

bool bodies_overlap(const WorldConfig& cfg, const Body& a, const Body& b) {
  if (!footprints_overlap(a, b)) return false;
  const ZInterval za = solid_z(cfg, a);
  const ZInterval zb = solid_z(cfg, b);
  return intervals_overlap(za.lo, za.hi, zb.lo, zb.hi);
}

bool footprint_inside(const Body& a, const Body& b) {
  return footprint_inside_at(a, a.x, a.y, b);
}

bool footprint_inside_at(const Body& a, double x, double y, const Body& b) {
  return x - a.hx() >= b.x - b.hx() - 1e-9 &&
         x + a.hx() <= b.x + b.hx() + 1e-9 &&
         y - a.hy() >= b.y - b.hy() - 1e-9 &&
         y + a.hy() <= b.y + b.hy() + 1e-9;
}

double bbox_distance(const Body& a, const Body& b) {
  auto axis_gap = [](double alo, double ahi, double blo, double bhi) {
    return std::max({0.0, blo - ahi, alo - bhi});
  };
  const double gx = axis_gap(a.x - a.hx(), a.x + a.hx(), b.x - b.hx(),
                             b.x + b.hx());
  const double gy = axis_gap(a.y - a.hy(), a.y + a.hy(), b.y - b.hy(),
                             b.y + b.hy());
  const double gz = axis_gap(a.z, a.top(), b.z, b.top());
  return std::sqrt(gx * gx + gy * gy + gz * gz);
}

bool in_workspace(const WorldState& s, int id) {
  const Body& b = body_at(s, id);
  return std::hypot(b.x, b.y) <= s.cfg.reach_radius + 1e-12;
}

// ---------------------------------------------------------------------------
// Instantiation
// ---------------------------------------------------------------------------

namespace {

struct PlacementPlanEntry {
  enum class Mode { kFree, kOn, kNextto, kRing, kHookReach, kZone } mode =
      Mode::kFree;
  int ref = -1;  // support / neighbor id
  SpawnZone zone;
};

WorldState instantiate_impl(const TaskParam& w,
                            const std::vector<SpawnZone>* zones, Rng& rng,
                            const WorldConfig& cfg) {
  task::validate(w);
  WorldState s;
  s.cfg = cfg;
  const int n = static_cast<int>(w.objects.size());
  s.bodies.resize(n);
  for (int id = 0; id < n; ++id) {
    Body b;
    b.id = id;
    b.kind = w.objects[id].kind;
    b.size = w.objects[id].size;
    s.bodies[id] = b;
  }
  s.bodies[0].x = 0.0;
  s.bodies[0].y = 0.0;
  s.bodies[0].z = 0.0;

  // Decide each object's placement mode.
  std::vector<PlacementPlanEntry> plan(n);
  std::set<int> ring_ids, hook_ids;
  for (const SkillContext& c : w.contexts) {
    if (c.skill == Skill::kPullWith) {
      ring_ids.insert(c.i);
      if (s.bodies[c.j].kind == ObjectKind::kHook) hook_ids.insert(c.j);
    }
  }
  for (int id = 1; id < n; ++id) {
    PlacementPlanEntry& e = plan[id];
    for (const Relation& r : w.init_relations) {
      if (r.src == id && r.kind == RelationKind::kOn) {
        e.mode = PlacementPlanEntry::Mode::kOn;
        e.ref = r.dst;
        break;
      }
      if (r.src == id && r.kind == RelationKind::kNextto &&
          e.mode == PlacementPlanEntry::Mode::kFree) {
        e.mode = PlacementPlanEntry::Mode::kNextto;
        e.ref = r.dst;
      }
    }
    if (e.mode == PlacementPlanEntry::Mode::kFree) {
      if (ring_ids.count(id)) {
        e.mode = PlacementPlanEntry::Mode::kRing;
      } else if (hook_ids.count(id)) {
        e.mode = PlacementPlanEntry::Mode::kHookReach;
      }
    }
    if (zones != nullptr) {
      for (const SpawnZone& z : *zones) {
        if (z.id == id) {
          e.mode = PlacementPlanEntry::Mode::kZone;
          e.zone = z;
        }
      }
    }
  }

  std::vector<bool> placed(n, false);
  placed[0] = true;
  int n_placed = 1;
  while (n_placed < n) {
    const int placed_before = n_placed;
    for (int id = 1; id < n; ++id) {
      if (placed[id]) continue;
      const PlacementPlanEntry& e = plan[id];
      if ((e.mode == PlacementPlanEntry::Mode::kOn ||
           e.mode == PlacementPlanEntry::Mode::kNextto) &&
          !placed[e.ref]) {
        continue;
      }
      Body& b = s.bodies[id];
      bool ok = false;
      for (int attempt = 0; attempt < cfg.max_spawn_attempts && !ok;
           ++attempt) {
        Body cand = b;
        cand.z = kTableTop;
        switch (e.mode) {
          case PlacementPlanEntry::Mode::kFree: {
            // Uniform over the workspace disk via rejection from its square.
            double x, y;
            do {
              x = rng.uniform(-cfg.reach_radius, cfg.reach_radius);
              y = rng.uniform(-cfg.reach_radius, cfg.reach_radius);
            } while (std::hypot(x, y) > cfg.reach_radius);
            cand.x = x;
            cand.y = y;
            break;
          }
          case PlacementPlanEntry::Mode::kOn: {
            const Body& sup = s.bodies[e.ref];
            const double mx = sup.hx() - cand.hx();
            const double my = sup.hy() - cand.hy();
            if (mx < 0.0 || my < 0.0) continue;  // does not fit
            cand.x = sup.x + rng.uniform(-mx, mx);
            cand.y = sup.y + rng.uniform(-my, my);
            cand.z = sup.top();
            break;
          }
          case PlacementPlanEntry::Mode::kNextto: {
            const Body& nb = s.bodies[e.ref];
            const int side = static_cast<int>(rng.uniform_index(4));
            const double gap = rng.uniform(cfg.nextto_gap_lo + 0.005,
                                           cfg.nextto_gap_hi - 0.01);
            double lat;
            if (side < 2) {  // +x / -x: lateral along y
              lat = rng.uniform(-(nb.hy() + cand.hy()) + 0.005,
                                (nb.hy() + cand.hy()) - 0.005);
              cand.x = nb.x + (side == 0 ? 1 : -1) *
                                  (nb.hx() + cand.hx() + gap);
              cand.y = nb.y + lat;
            } else {
              lat = rng.uniform(-(nb.hx() + cand.hx()) + 0.005,
                                (nb.hx() + cand.hx()) - 0.005);
              cand.x = nb.x + lat;
              cand.y = nb.y + (side == 2 ? 1 : -1) *
                                  (nb.hy() + cand.hy() + gap);
            }
            break;
          }
          case PlacementPlanEntry::Mode::kRing: {
            const double r_lo = cfg.reach_radius + 1e-6;
            const double r_hi = cfg.pull_spawn_max;
            const double u = rng.uniform();
            const double r = std::sqrt(r_lo * r_lo +
                                       u * (r_hi * r_hi - r_lo * r_lo));
            const double th = rng.uniform(-M_PI, M_PI);
            cand.x = r * std::cos(th);
            cand.y = r * std::sin(th);
            break;
          }
          case PlacementPlanEntry::Mode::kHookReach: {
            const double half_diag = std::hypot(cand.hx(), cand.hy());
            const double radius =
                cfg.reach_radius - half_diag - cfg.spawn_margin;
            if (radius <= 0.0) continue;
            double x, y;
            do {
              x = rng.uniform(-radius, radius);
              y = rng.uniform(-radius, radius);
            } while (std::hypot(x, y) > radius);
            cand.x = x;
            cand.y = y;
            break;
          }
          case PlacementPlanEntry::Mode::kZone: {
            cand.x = rng.uniform(e.zone.x_lo, e.zone.x_hi);
            cand.y = rng.uniform(e.zone.y_lo, e.zone.y_hi);
            break;
          }
        }
        if (!on_table(cand)) continue;
        if (!collision_free(s, cand, {})) continue;
        if (e.mode == PlacementPlanEntry::Mode::kNextto) {
          const double d = bbox_distance(cand, s.bodies[e.ref]);
          if (d < cfg.nextto_gap_lo || d > cfg.nextto_gap_hi) continue;
        }
        b = cand;
        ok = true;
      }
      if (!ok) {
        throw InstantiationInfeasible(
            "no collision-free placement for object " + std::to_string(id));
      }
      if (e.mode == PlacementPlanEntry::Mode::kRing) {
        s.spawned_outside.insert(id);
      }
      placed[id] = true;
      ++n_placed;
    }
    if (n_placed == placed_before) {
      throw InstantiationInfeasible("circular placement constraints");
    }
  }
  check_invariants(s);
  return s;
}

}  // namespace

WorldState instantiate(const TaskParam& w, Rng& rng, const WorldConfig& cfg) {
  return instantiate_impl(w, nullptr, rng, cfg);
}

WorldState instantiate_zoned(const TaskParam& w,
                             const std::vector<SpawnZone>& zones, Rng& rng,
                             const WorldConfig& cfg) {
  return instantiate_impl(w, &zones, rng, cfg);
}

// ---------------------------------------------------------------------------
// Observation
// ---------------------------------------------------------------------------

namespace {

struct Face {
  Eigen::Vector3d corner, edge_u, edge_v, normal;
  double area = 0.0;
};

// The box the sensor sees: a rack presents only its slab.
void sensor_box(const WorldConfig& cfg, const Body& b, Eigen::Vector3d& lo,
                Eigen::Vector3d& hi) {
  const double zlo =
      b.kind == ObjectKind::kRack ? b.z + cfg.rack_clearance * b.size[2] : b.z;
  lo = Eigen::Vector3d(b.x - b.hx(), b.y - b.hy(), zlo);
  hi = Eigen::Vector3d(b.x + b.hx(), b.y + b.hy(), b.top());
}

bool segment_hits_box(const Eigen::Vector3d& p, const Eigen::Vector3d& q,
                      const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
  double tmin = 0.0, tmax = 1.0;
  for (int a = 0; a < 3; ++a) {
    const double d = q[a] - p[a];
    if (std::abs(d) < 1e-15) {
      if (p[a] < lo[a] || p[a] > hi[a]) return false;
      continue;
    }
    double t1 = (lo[a] - p[a]) / d;
    double t2 = (hi[a] - p[a]) / d;
    if (t1 > t2) std::swap(t1, t2);
    tmin = std::max(tmin, t1);
    tmax = std::min(tmax, t2);
    if (tmin > tmax) return false;
  }
  return true;
}

}  // namespace

Observation observe(const WorldState& s, const task::EnvParams& env,
                    Rng& rng) {
  const WorldConfig& cfg = s.cfg;
  const Eigen::Vector3d cam(
      cfg.camera_distance * std::cos(env.camera_pitch) *
          std::cos(env.camera_yaw),
      cfg.camera_distance * std::cos(env.camera_pitch) *
          std::sin(env.camera_yaw),
      kTableTop + cfg.camera_distance * std::sin(env.camera_pitch));

  Observation obs;
  obs.points.resize(s.bodies.size());
  obs.kinds.resize(s.bodies.size());

  // Rack slabs are the only occluders.
  std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>> occluders;
  std::vector<int> occluder_ids;
  for (const Body& b : s.bodies) {
    if (b.kind == ObjectKind::kRack) {
      Eigen::Vector3d lo, hi;
      sensor_box(cfg, b, lo, hi);
      occluders.emplace_back(lo, hi);
      occluder_ids.push_back(b.id);
    }
  }

  for (const Body& b : s.bodies) {
    obs.kinds[b.id] = b.kind;
    Eigen::Vector3d lo, hi;
    sensor_box(cfg, b, lo, hi);
    const Eigen::Vector3d ext = hi - lo;

    std::vector<Face> faces;
    auto add_face = [&](const Eigen::Vector3d& corner,
                        const Eigen::Vector3d& eu, const Eigen::Vector3d& ev,
                        const Eigen::Vector3d& nrm) {
      Face f{corner, eu, ev, nrm, eu.norm() * ev.norm()};
      const Eigen::Vector3d center = corner + 0.5 * eu + 0.5 * ev;
      if (f.area > 1e-12 && nrm.dot(cam - center) > 0.0) faces.push_back(f);
    };
    const Eigen::Vector3d ex(ext[0], 0, 0), ey(0, ext[1], 0), ez(0, 0, ext[2]);
    add_face({lo[0], lo[1], hi[2]}, ex, ey, Eigen::Vector3d(0, 0, 1));   // top
    add_face({hi[0], lo[1], lo[2]}, ey, ez, Eigen::Vector3d(1, 0, 0));   // +x
    add_face({lo[0], lo[1], lo[2]}, ey, ez, Eigen::Vector3d(-1, 0, 0));  // -x
    add_face({lo[0], hi[1], lo[2]}, ex, ez, Eigen::Vector3d(0, 1, 0));   // +y
    add_face({lo[0], lo[1], lo[2]}, ex, ez, Eigen::Vector3d(0, -1, 0));  // -y

    double total_area = 0.0;
    for (const Face& f : faces) total_area += f.area;
    std::vector<int> counts(faces.size(), 0);
    if (!faces.empty() && total_area > 0.0) {
      int assigned = 0;
      std::vector<std::pair<double, int>> fracs;
      for (std::size_t fi = 0; fi < faces.size(); ++fi) {
        const double exact =
            cfg.points_per_object * faces[fi].area / total_area;
        counts[fi] = static_cast<int>(exact);
        assigned += counts[fi];
        fracs.push_back({-(exact - counts[fi]), static_cast<int>(fi)});
      }
      std::sort(fracs.begin(), fracs.end());
      for (int k = 0; k < cfg.points_per_object - assigned; ++k) {
        counts[fracs[k % fracs.size()].second] += 1;
      }
    }

    std::vector<Eigen::Vector3d> kept;
    for (std::size_t fi = 0; fi < faces.size(); ++fi) {
      for (int k = 0; k < counts[fi]; ++k) {
        const double u = rng.uniform();
        const double v = rng.uniform();
        Eigen::Vector3d p =
            faces[fi].corner + u * faces[fi].edge_u + v * faces[fi].edge_v;
        // Noise draws always happen so streams align across noise settings.
        const Eigen::Vector3d noise(rng.normal(), rng.normal(), rng.normal());
        bool occluded = false;
        for (std::size_t oi = 0; oi < occluders.size(); ++oi) {
          if (occluder_ids[oi] == b.id) continue;
          // Lift the ray start slightly toward the camera so points on an
          // occluder's own surface are not self-shadowed.
          const Eigen::Vector3d start = p + 1e-6 * (cam - p);
          if (segment_hits_box(start, cam, occluders[oi].first,
                               occluders[oi].second)) {
            occluded = true;
            break;
          }
        }
        if (!occluded) kept.push_back(p + env.noise_scale * noise);
      }
    }
    Eigen::Matrix3Xd pts(3, kept.size());
    for (std::size_t k = 0; k < kept.size(); ++k) pts.col(k) = kept[k];
    obs.points[b.id] = pts;
  }
  obs.relations = relations(s);
  return obs;
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

bool execute_primitive(WorldState& s, const SkillContext& c, const Action& a) {
  const Body& bi = body_at(s, c.i);
  const Body& bj = body_at(s, c.j);
  if (c.i == 0 || c.i == c.j) return false;

  switch (c.skill) {
    case Skill::kPlaceOnto: {
      if (!grasp_on_body(s.cfg, bi, a.p_i) || !in_workspace(s, c.i)) {
        return false;
      }
      const double tx = bj.x + a.p_j[0];
      const double ty = bj.y + a.p_j[1];
      const double drop_z = bj.z + a.p_j[2];
      const auto z = settle_height(s, bi, tx, ty, drop_z);
      if (!z) return false;
      Body cand = bi;
      cand.x = tx;
      cand.y = ty;
      cand.z = *z;
      if (!collision_free(s, cand, {})) return false;
      s.bodies[c.i] = cand;
      return true;
    }
    case Skill::kPlaceNextto: {
      if (!grasp_on_body(s.cfg, bi, a.p_i) || !in_workspace(s, c.i)) {
        return false;
      }
      Body cand = bi;
      cand.x = bj.x + a.p_j[0];
      cand.y = bj.y + a.p_j[1];
      cand.z = kTableTop;
      if (!on_table(cand)) return false;
      if (!collision_free(s, cand, {})) return false;
      s.bodies[c.i] = cand;
      return true;
    }
    case Skill::kPushUnder: {
      if (!contact_on_body(s.cfg, bi, a.p_i) || !in_workspace(s, c.i)) {
        return false;
      }
      const double tx = bj.x + a.p_j[0];
      const double ty = bj.y + a.p_j[1];
      const auto [fx, fy] = sweep_to(s, bi, tx, ty, {});
      const auto z = settle_height(s, bi, fx, fy, bi.z);
      if (!z) return false;
      Body cand = bi;
      cand.x = fx;
      cand.y = fy;
      cand.z = *z;
      if (!collision_free(s, cand, {})) return false;
      s.bodies[c.i] = cand;
      return true;
    }
    case Skill::kPullWith: {
      if (bj.kind != ObjectKind::kHook) return false;
      const double L = bj.size[0], W = bj.size[1], H = bj.size[2];
      // Grasp must lie on the rear handle section of the hook.
      if (a.p_j[0] < -0.5 * L - 1e-12 ||
          a.p_j[0] > -0.5 * L + s.cfg.hook_handle_frac * L + 1e-12 ||
          std::abs(a.p_j[1]) > 0.5 * W + 1e-12 ||
          a.p_j[2] < s.cfg.grasp_band_lo * H - 1e-12 ||
          a.p_j[2] > s.cfg.grasp_band_hi * H + 1e-12) {
        return false;
      }
      if (std::hypot(bj.x + a.p_j[0], bj.y + a.p_j[1]) >
          s.cfg.reach_radius + 1e-12) {
        return false;
      }
      // Hook head extension from the grasp point to the head tip.
      const double d_head = std::hypot(0.5 * L - a.p_j[0], -a.p_j[1]);
      const double cx = bi.x + a.p_i[0];
      const double cy = bi.y + a.p_i[1];
      if (std::hypot(cx, cy) >
          s.cfg.reach_radius + d_head + s.cfg.hook_engage_slack + 1e-12) {
        return false;
      }
      const double r0 = std::hypot(bi.x, bi.y);
      const double stop_r = s.cfg.reach_radius - s.cfg.pull_stop_offset;
      Body cand = bi;
      if (r0 > stop_r) {
        // The drag path is abstract: the object is deposited at the largest
        // radius at or inside the stop radius where it rests collision-free
        // on its support, rather than halting at the first obstacle on the
        // way (the dragged object may be steered around clutter).
        bool placed = false;
        for (double rr = stop_r; rr >= 0.1; rr -= s.cfg.sweep_step) {
          const double fx = bi.x * (rr / r0);
          const double fy = bi.y * (rr / r0);
          const auto z = settle_height(s, bi, fx, fy, bi.z);
          if (!z) continue;
          Body probe = bi;
          probe.x = fx;
          probe.y = fy;
          probe.z = *z;
          if (collision_free(s, probe, {c.j})) {
            cand = probe;
            placed = true;
            break;
          }
        }
        if (!placed) return false;
      }
      // Return the hook: nudge it away from the base until it rests free.
      Body hook = s.bodies[c.j];
      Body moved = cand;
      auto hook_clear = [&](const Body& h) {
        for (const Body& other : s.bodies) {
          if (other.id == h.id || other.id == moved.id) continue;
          if (bodies_overlap(s.cfg, h, other)) return false;
        }
        return !bodies_overlap(s.cfg, h, moved) && on_table(h);
      };
      if (!hook_clear(hook)) {
        // Nearest clear resting pose over eight fixed directions (radially
        // outward first at each displacement, then the other compass points
        // relative to that axis).
        const double hr = std::hypot(hook.x, hook.y);
        const double ux = hr > 1e-9 ? hook.x / hr : 1.0;
        const double uy = hr > 1e-9 ? hook.y / hr : 0.0;
        const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
        const double dirs[8][2] = {
            {ux, uy},
            {-uy, ux},
            {uy, -ux},
            {-ux, -uy},
            {(ux - uy) * inv_sqrt2, (uy + ux) * inv_sqrt2},
            {(ux + uy) * inv_sqrt2, (uy - ux) * inv_sqrt2},
            {(-ux - uy) * inv_sqrt2, (-uy + ux) * inv_sqrt2},
            {(-ux + uy) * inv_sqrt2, (-uy - ux) * inv_sqrt2}};
        bool found = false;
        for (double lam = s.cfg.sweep_step; lam <= 2.0 && !found;
             lam += s.cfg.sweep_step) {
          for (const auto& d : dirs) {
            Body h2 = hook;
            h2.x = hook.x + d[0] * lam;
            h2.y = hook.y + d[1] * lam;
            if (hook_clear(h2)) {
              hook = h2;
              found = true;
              break;
            }
          }
        }
        if (!found) return false;
      }
      s.bodies[c.i] = cand;
      s.bodies[c.j] = hook;
      return true;
    }
  }
  throw UnknownSkill("unknown skill id " +
                     std::to_string(static_cast<int>(c.skill)));
}

// ---------------------------------------------------------------------------
// Success predicates
// ---------------------------------------------------------------------------

bool success(const WorldState& s, const SkillContext& c) {
  const Body& bi = body_at(s, c.i);
  const Body& bj = body_at(s, c.j);
  switch (c.skill) {
    case Skill::kPlaceOnto:
      return std::abs(bi.z - bj.top()) <= 1e-9 && footprint_inside(bi, bj);
    case Skill::kPlaceNextto: {
      const double d = bbox_distance(bi, bj);
      return d >= s.cfg.nextto_gap_lo - 1e-12 &&
             d <= s.cfg.nextto_gap_hi + 1e-12 &&
             std::abs(bi.z - kTableTop) <= 1e-9 &&
             std::abs(bj.z - kTableTop) <= 1e-9;
    }
    case Skill::kPushUnder:
      return bj.kind == ObjectKind::kRack && footprint_inside(bi, bj) &&
             bi.size[2] < s.cfg.rack_clearance * bj.size[2] &&
             std::abs(bi.z - bj.z) <= 1e-9;
    case Skill::kPullWith:
      return s.spawned_outside.count(c.i) > 0 && in_workspace(s, c.i);
  }
  throw UnknownSkill("unknown skill id " +
                     std::to_string(static_cast<int>(c.skill)));
}

// ---------------------------------------------------------------------------
// Relational extraction
// ---------------------------------------------------------------------------

std::vector<Relation> relations(const WorldState& s) {
  std::vector<Relation> out;
  const int n = static_cast<int>(s.bodies.size());
  for (int i = 1; i < n; ++i) {
    if (in_workspace(s, i)) {
      out.push_back({RelationKind::kInWorkspace, i, -1});
    }
  }
  for (int i = 1; i < n; ++i) {
    const Body& bi = s.bodies[i];
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const Body& bj = s.bodies[j];
      if (std::abs(bi.z - bj.top()) <= 1e-9 && footprint_inside(bi, bj)) {
        out.push_back({RelationKind::kOn, i, j});
      }
      if (j != 0 && bj.kind == ObjectKind::kRack &&
          footprint_inside(bi, bj) && bi.z >= bj.z - 1e-9 &&
          bi.top() <=
              bj.z + s.cfg.rack_clearance * bj.size[2] + 1e-9) {
        out.push_back({RelationKind::kUnder, i, j});
      }
      if (j != 0) {
        const double d = bbox_distance(bi, bj);
        if (d >= s.cfg.nextto_gap_lo - 1e-12 &&
            d <= s.cfg.nextto_gap_hi + 1e-12) {
          out.push_back({RelationKind::kNextto, i, j});
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Invariants
// ---------------------------------------------------------------------------

void check_invariants(const WorldState& s) {
  const int n = static_cast<int>(s.bodies.size());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (bodies_overlap(s.cfg, s.bodies[i], s.bodies[j])) {
        throw InvariantViolation("bodies " + std::to_string(i) + " and " +
                                 std::to_string(j) + " interpenetrate");
      }
    }
  }
  for (int i = 1; i < n; ++i) {
    const Body& b = s.bodies[i];
    if (!on_table(b)) {
      throw InvariantViolation("body " + std::to_string(i) +
                               " extends beyond the table");
    }
    bool supported = std::abs(b.z - kTableTop) <= 1e-9;
    for (int j = 1; j < n && !supported; ++j) {
      if (j == i) continue;
      const Body& sup = s.bodies[j];
      supported = std::abs(b.z - sup.top()) <= 1e-9 &&
                  footprint_inside(b, sup);
    }
    if (!supported) {
      throw InvariantViolation("body " + std::to_string(i) + " is floating");
    }
  }
}

}  // namespace atr::world
