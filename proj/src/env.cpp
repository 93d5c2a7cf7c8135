#include "blockasm/env.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "blockasm/error.hpp"

namespace blockasm {

std::string_view to_string(Status s) {
  switch (s) {
    case Status::running: return "running";
    case Status::done_success: return "done_success";
    case Status::done_terminated: return "done_terminated";
    case Status::done_failed: return "done_failed";
    case Status::done_exhausted: return "done_exhausted";
  }
  return "unknown";
}

std::string_view to_string(Reason r) {
  switch (r) {
    case Reason::none: return "none";
    case Reason::success: return "success";
    case Reason::terminated: return "terminated";
    case Reason::exhausted: return "exhausted";
    case Reason::out_of_bounds: return "out_of_bounds";
    case Reason::overlap: return "overlap";
    case Reason::unstable: return "unstable";
    case Reason::fail_grasp: return "fail_grasp";
    case Reason::fail_place: return "fail_place";
    case Reason::block_unavailable: return "block_unavailable";
  }
  return "unknown";
}

std::string_view to_string(ProxyResult r) {
  switch (r) {
    case ProxyResult::ok: return "ok";
    case ProxyResult::fail_grasp: return "fail_grasp";
    case ProxyResult::fail_place: return "fail_place";
  }
  return "unknown";
}

std::string to_string(const Action& a) {
  if (a.is_terminate()) return "terminate";
  return "place(block=" + std::to_string(a.instance_id()) + ",unit=" + std::to_string(a.unit_index()) +
         ",cell=" + to_string(a.cell()) + ",rot=" + std::to_string(a.rotation().quarter_turns()) + ")";
}

SceneState::SceneState(GridSpec spec, const TargetSpec& tspec, std::vector<BlockInstance> instances,
                       std::shared_ptr<const BlockCatalog> catalog)
    : spec_(std::move(spec)),
      catalog_(std::move(catalog)),
      cells_(spec_.size(), CellState::occupied),
      initial_targets_(spec_.size(), 0),
      instances_(std::move(instances)) {
  if (!catalog_) throw ConfigError("scene state needs a block catalog");
  for (const auto& c : tspec.targets) {
    cells_[flatten(c, spec_)] = CellState::target;
    initial_targets_[flatten(c, spec_)] = 1;
    ++open_targets_;
  }
  for (const auto& c : tspec.nontargets) {
    const auto j = flatten(c, spec_);
    if (cells_[j] == CellState::target) throw ConfigError("cell " + to_string(c) + " is both target and non-target");
    cells_[j] = CellState::nontarget;
    ++open_nontargets_;
  }
  std::set<int> ids;
  for (const auto& inst : instances_) {
    if (!ids.insert(inst.instance_id).second)
      throw ConfigError("duplicate block instance id " + std::to_string(inst.instance_id));
    const auto& type = catalog_->at(inst.type_id);
    if (inst.unit_positions.size() != type.unit_count())
      throw ConfigError("block " + std::to_string(inst.instance_id) + " has the wrong unit count");
  }
}

int SceneState::initial_target_count() const {
  return static_cast<int>(std::count(initial_targets_.begin(), initial_targets_.end(), 1));
}

int SceneState::filled_initial_targets() const {
  int n = 0;
  for (std::size_t j = 0; j < cells_.size(); ++j)
    if (initial_targets_[j] && cells_[j] == CellState::occupied) ++n;
  return n;
}

std::vector<Cell> SceneState::open_targets() const {
  std::vector<Cell> out;
  for (std::size_t j = 0; j < cells_.size(); ++j)
    if (cells_[j] == CellState::target) out.push_back(unflatten(j, spec_));
  return out;
}

std::vector<Cell> SceneState::open_nontargets() const {
  std::vector<Cell> out;
  for (std::size_t j = 0; j < cells_.size(); ++j)
    if (cells_[j] == CellState::nontarget) out.push_back(unflatten(j, spec_));
  return out;
}

const BlockInstance& SceneState::instance(int instance_id) const {
  for (const auto& inst : instances_)
    if (inst.instance_id == instance_id) return inst;
  throw InvalidAction("unknown block instance " + std::to_string(instance_id));
}

BlockInstance& SceneState::mutable_instance(int instance_id) {
  return const_cast<BlockInstance&>(std::as_const(*this).instance(instance_id));
}

std::vector<const BlockInstance*> SceneState::staged() const {
  std::vector<const BlockInstance*> out;
  for (const auto& inst : instances_)
    if (!inst.placed) out.push_back(&inst);
  return out;
}

int SceneState::staged_unit_count() const {
  int n = 0;
  for (const auto& inst : instances_)
    if (!inst.placed) n += static_cast<int>(inst.unit_positions.size());
  return n;
}

int SceneState::staged_block_count() const {
  return static_cast<int>(std::count_if(instances_.begin(), instances_.end(), [](auto& i) { return !i.placed; }));
}

void SceneState::occupy(const Cell& c) {
  auto& s = cells_[flatten(c, spec_)];
  if (s == CellState::target) --open_targets_;
  if (s == CellState::nontarget) --open_nontargets_;
  s = CellState::occupied;
}

void SceneState::mark_occupied(const Cell& c) { occupy(c); }

long long action_space_size(const SceneState& state) {
  return static_cast<long long>(state.staged_unit_count()) *
             (state.num_open_targets() + state.num_open_nontargets()) * 4 +
         1;
}

ResolvedPlacement resolve_block_placement(const SceneState& state, const Action& action) {
  if (action.is_terminate()) throw InvalidAction("terminate has no placement");
  const auto& inst = state.instance(action.instance_id());
  const auto& type = state.catalog().at(inst.type_id);
  const auto n = static_cast<int>(inst.unit_positions.size());
  if (action.unit_index() < 0 || action.unit_index() >= n)
    throw InvalidAction("unit index " + std::to_string(action.unit_index()) + " out of range");

  const double cs = state.spec().cell_size();
  const Vec3& pivot = inst.unit_positions[action.unit_index()];
  ResolvedPlacement out;
  bool inside = true;
  for (const auto& p : inst.unit_positions) {
    const Cell rel{static_cast<int>(std::lround((p.x - pivot.x) / cs)),
                   static_cast<int>(std::lround((p.y - pivot.y) / cs)),
                   static_cast<int>(std::lround((p.z - pivot.z) / cs))};
    const Cell dest = action.cell() + rotate_unit(rel, action.rotation());
    inside = inside && state.spec().contains(dest);
    out.unit_cells.push_back(dest);
  }
  if (!inside) throw OutOfBounds("placement of block " + std::to_string(inst.instance_id) + " leaves the grid");

  out.footprint = out.unit_cells;
  std::sort(out.footprint.begin(), out.footprint.end());
  Cell lo = out.footprint.front();
  for (const auto& c : out.footprint) {
    lo.dx = std::min(lo.dx, c.dx);
    lo.dy = std::min(lo.dy, c.dy);
    lo.dz = std::min(lo.dz, c.dz);
  }
  std::vector<Cell> shape;
  for (const auto& c : out.footprint) shape.push_back(c - lo);
  for (int q = 0; q < 4; ++q) {
    if (rotate_offsets(type.offsets(), Rotation(q)) == shape) {
      out.placement = {type.id(), Rotation(q), lo};
      return out;
    }
  }
  throw InvalidAction("block " + std::to_string(inst.instance_id) + " is not congruent to type '" + type.id() + "'");
}

namespace {

struct P2 {
  double x, y;
};

double cross(const P2& o, const P2& a, const P2& b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

// Counter-clockwise hull (Andrew's monotone chain).
std::vector<P2> convex_hull(std::vector<P2> pts) {
  std::sort(pts.begin(), pts.end(), [](const P2& a, const P2& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  pts.erase(std::unique(pts.begin(), pts.end(), [](const P2& a, const P2& b) { return a.x == b.x && a.y == b.y; }),
            pts.end());
  if (pts.size() < 3) return pts;
  std::vector<P2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

bool strictly_inside(const std::vector<P2>& hull, const P2& p) {
  constexpr double kEps = 1e-9;
  if (hull.size() < 3) return false;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    if (cross(a, b, p) / len <= kEps) return false;
  }
  return true;
}

}  // namespace

bool stability_check(const SceneState& state, std::span<const Cell> footprint, StabilityRule rule) {
  return stable_on(
      footprint, [&](const Cell& c) { return state.spec().contains(c) && state.occupied(c); }, rule);
}

bool stable_on(std::span<const Cell> footprint, const std::function<bool(const Cell&)>& occupied, StabilityRule rule) {
  std::set<Cell> own(footprint.begin(), footprint.end());
  auto supported = [&](const Cell& c) { return c.dz == 0 || occupied({c.dx, c.dy, c.dz - 1}); };

  if (rule == StabilityRule::full_support) {
    for (const auto& c : footprint) {
      if (c.dz == 0) continue;
      const Cell below{c.dx, c.dy, c.dz - 1};
      if (!own.contains(below) && !supported(c)) return false;
    }
    return true;
  }

  std::vector<P2> corners;
  for (const auto& c : footprint) {
    if (!supported(c)) continue;
    for (double sx : {-0.5, 0.5})
      for (double sy : {-0.5, 0.5}) corners.push_back({c.dx + sx, c.dy + sy});
  }
  if (corners.empty()) return false;
  P2 com{0.0, 0.0};
  for (const auto& c : footprint) {
    com.x += c.dx;
    com.y += c.dy;
  }
  com.x /= static_cast<double>(footprint.size());
  com.y /= static_cast<double>(footprint.size());
  return strictly_inside(convex_hull(std::move(corners)), com);
}

ProxyResult feasibility_check(const SceneState& state, const BlockInstance& instance,
                              std::span<const Cell> footprint, Feasibility mode) {
  if (mode == Feasibility::none) return ProxyResult::ok;

  const double cs = state.spec().cell_size();
  const double lateral = cs * (1.0 + 1e-9);
  const double above = cs * 1e-9;
  bool graspable = false;
  for (const auto& u : instance.unit_positions) {
    bool clear = true;
    for (const auto& other : state.instances()) {
      if (other.placed || other.instance_id == instance.instance_id) continue;
      for (const auto& w : other.unit_positions) {
        if (w.z > u.z + above && std::abs(w.x - u.x) <= lateral && std::abs(w.y - u.y) <= lateral) {
          clear = false;
          break;
        }
      }
      if (!clear) break;
    }
    if (clear) {
      graspable = true;
      break;
    }
  }
  if (!graspable) return ProxyResult::fail_grasp;

  for (const auto& c : footprint) {
    for (int z = c.dz + 1; z < state.spec().nz(); ++z) {
      if (state.occupied({c.dx, c.dy, z})) return ProxyResult::fail_place;
    }
  }
  return ProxyResult::ok;
}

StepOutcome apply_step(SceneState& state, const Action& action, const EnvConfig& config) {
  if (!state.running()) throw InvalidState("episode already finished (" + std::string(to_string(state.status())) + ")");
  ++state.step_count_;

  StepOutcome out;
  auto finish = [&](Status status, Reason reason) {
    state.status_ = status;
    state.reason_ = reason;
    out.done = true;
    out.reason = reason;
  };
  auto fail = [&](Reason reason) {
    finish(Status::done_failed, reason);
    out.reward = config.failure_reward;
    return out;
  };

  if (action.is_terminate()) {
    finish(Status::done_terminated, Reason::terminated);
    return out;
  }
  if (!state.spec().contains(action.cell())) throw InvalidAction("target cell " + to_string(action.cell()) + " outside grid");
  const auto& inst = state.instance(action.instance_id());
  if (action.unit_index() < 0 || action.unit_index() >= static_cast<int>(inst.unit_positions.size()))
    throw InvalidAction("unit index " + std::to_string(action.unit_index()) + " out of range");
  if (inst.placed) return fail(Reason::block_unavailable);

  ResolvedPlacement resolved;
  try {
    resolved = resolve_block_placement(state, action);
  } catch (const OutOfBounds&) {
    return fail(Reason::out_of_bounds);
  }
  for (const auto& c : resolved.footprint)
    if (state.occupied(c)) return fail(Reason::overlap);
  switch (feasibility_check(state, inst, resolved.footprint, config.feasibility)) {
    case ProxyResult::fail_grasp: return fail(Reason::fail_grasp);
    case ProxyResult::fail_place: return fail(Reason::fail_place);
    case ProxyResult::ok: break;
  }
  if (!stability_check(state, resolved.footprint, config.stability)) return fail(Reason::unstable);

  const int targets_before = state.num_open_targets();
  const int nontargets_before = state.num_open_nontargets();
  auto& moved = state.mutable_instance(action.instance_id());
  for (std::size_t u = 0; u < resolved.unit_cells.size(); ++u) {
    const auto& c = resolved.unit_cells[u];
    state.occupy(c);
    state.placed_units_.emplace_back(moved.instance_id, c);
    moved.unit_positions[u] = state.spec().center(c);
  }
  moved.placed = true;

  out.reward = config.reward_scale * ((targets_before - state.num_open_targets()) +
                                      (state.num_open_nontargets() - nontargets_before));
  if (state.num_open_targets() == 0) {
    finish(Status::done_success, Reason::success);
    out.reward += config.completion_bonus;
  } else if (state.staged_block_count() == 0) {
    finish(Status::done_exhausted, Reason::exhausted);
  }
  return out;
}

std::pair<SceneState, StepOutcome> step(const SceneState& state, const Action& action, const EnvConfig& config) {
  SceneState next = state;
  auto outcome = apply_step(next, action, config);
  return {std::move(next), outcome};
}

}  // namespace blockasm
