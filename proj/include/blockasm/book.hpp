#pragma once

#include <optional>
#include <span>
#include <vector>

#include "blockasm/env.hpp"

namespace blockasm {

/// A goal pose from the packing solution and the unit-level actions that
/// move some staged block exactly onto it.
struct GoalPose {
  Placement placement;
  std::vector<Cell> footprint;
  bool claimed = false;
  std::vector<Action> actions;
};

/// The mutable set of allowed placement actions derived from the packing
/// solution.
struct ActionBook {
  std::vector<GoalPose> poses;

  /// Unclaimed actions in pose order.
  std::vector<Action> actions() const;
  std::size_t action_count() const;
  std::optional<std::size_t> pose_of(const Action& a) const;
};

/// For every goal pose, every staged block of the matching type, and every
/// (unit, rotation) binding that lands the block on the pose, one action.
/// Ordered by pose, instance id, unit index, rotation.
ActionBook expand_book(std::span<const Placement> goal_poses, const SceneState& state);

/// Claims the pose matching `footprint` and drops every action that uses the
/// placed block.
void update_book(ActionBook& book, int placed_instance, std::span<const Cell> footprint);

/// Book actions of staged blocks on unclaimed poses, then Terminate.
std::vector<Action> legal_mask(const SceneState& state, const ActionBook& book);

}  // namespace blockasm
