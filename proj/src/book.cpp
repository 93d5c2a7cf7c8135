#include "blockasm/book.hpp"

#include <algorithm>
#include <cmath>

namespace blockasm {

namespace {

Cell min_corner(std::span<const Cell> cells) {
  Cell lo = cells.front();
  for (const auto& c : cells) {
    lo.dx = std::min(lo.dx, c.dx);
    lo.dy = std::min(lo.dy, c.dy);
    lo.dz = std::min(lo.dz, c.dz);
  }
  return lo;
}

}  // namespace

std::vector<Action> ActionBook::actions() const {
  std::vector<Action> out;
  for (const auto& pose : poses)
    if (!pose.claimed) out.insert(out.end(), pose.actions.begin(), pose.actions.end());
  return out;
}

std::size_t ActionBook::action_count() const {
  std::size_t n = 0;
  for (const auto& pose : poses)
    if (!pose.claimed) n += pose.actions.size();
  return n;
}

std::optional<std::size_t> ActionBook::pose_of(const Action& a) const {
  for (std::size_t i = 0; i < poses.size(); ++i) {
    if (poses[i].claimed) continue;
    if (std::find(poses[i].actions.begin(), poses[i].actions.end(), a) != poses[i].actions.end()) return i;
  }
  return std::nullopt;
}

ActionBook expand_book(std::span<const Placement> goal_poses, const SceneState& state) {
  ActionBook book;
  auto staged = state.staged();
  std::sort(staged.begin(), staged.end(), [](auto* a, auto* b) { return a->instance_id < b->instance_id; });
  const double cs = state.spec().cell_size();

  for (const auto& goal : goal_poses) {
    GoalPose pose;
    pose.placement = goal;
    pose.footprint = footprint(goal, state.catalog(), state.spec());
    const Cell goal_lo = min_corner(pose.footprint);

    for (const auto* inst : staged) {
      if (inst->type_id != goal.type_id) continue;
      const auto n = inst->unit_positions.size();
      for (std::size_t u = 0; u < n; ++u) {
        const Vec3& pivot = inst->unit_positions[u];
        std::vector<Cell> rel;
        for (const auto& p : inst->unit_positions) {
          rel.push_back({static_cast<int>(std::lround((p.x - pivot.x) / cs)),
                         static_cast<int>(std::lround((p.y - pivot.y) / cs)),
                         static_cast<int>(std::lround((p.z - pivot.z) / cs))});
        }
        for (int q = 0; q < 4; ++q) {
          std::vector<Cell> turned;
          for (const auto& r : rel) turned.push_back(rotate_unit(r, Rotation(q)));
          const Cell shift = goal_lo - min_corner(turned);
          std::vector<Cell> cells;
          for (const auto& t : turned) cells.push_back(t + shift);
          std::sort(cells.begin(), cells.end());
          if (cells != pose.footprint) continue;
          // The selected unit (offset zero) lands on goal_lo - lo(turned).
          pose.actions.push_back(Action::place(inst->instance_id, static_cast<int>(u), shift, Rotation(q)));
        }
      }
    }
    book.poses.push_back(std::move(pose));
  }
  return book;
}

void update_book(ActionBook& book, int placed_instance, std::span<const Cell> footprint) {
  std::vector<Cell> fp(footprint.begin(), footprint.end());
  std::sort(fp.begin(), fp.end());
  for (auto& pose : book.poses) {
    if (!pose.claimed && pose.footprint == fp) {
      pose.claimed = true;
      pose.actions.clear();
      break;
    }
  }
  for (auto& pose : book.poses) {
    std::erase_if(pose.actions, [&](const Action& a) { return a.instance_id() == placed_instance; });
  }
}

std::vector<Action> legal_mask(const SceneState& state, const ActionBook& book) {
  std::vector<Action> out;
  if (state.running()) {
    for (const auto& pose : book.poses) {
      if (pose.claimed) continue;
      for (const auto& a : pose.actions) {
        if (!state.instance(a.instance_id()).placed) out.push_back(a);
      }
    }
  }
  out.push_back(Action::terminate());
  return out;
}

}  // namespace blockasm
