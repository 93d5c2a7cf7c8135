#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "blockasm/blocks.hpp"
#include "blockasm/grid.hpp"

namespace blockasm {

enum class Status : std::uint8_t { running, done_success, done_terminated, done_failed, done_exhausted };

enum class Reason : std::uint8_t {
  none,
  success,
  terminated,
  exhausted,
  out_of_bounds,
  overlap,
  unstable,
  fail_grasp,
  fail_place,
  block_unavailable,
};

enum class Feasibility : std::uint8_t { none, topdown_proxy };

/// full_support: every elevated unit rests on an occupied cell or on a unit of
/// the same block. support_polygon: the block's centre of mass projects
/// strictly inside the convex hull of its supported units.
enum class StabilityRule : std::uint8_t { full_support, support_polygon };

enum class ProxyResult : std::uint8_t { ok, fail_grasp, fail_place };

std::string_view to_string(Status s);
std::string_view to_string(Reason r);
std::string_view to_string(ProxyResult r);

struct EnvConfig {
  double gamma = 0.999;
  double reward_scale = 0.2;
  double failure_reward = -1.0;
  double completion_bonus = 1.0;
  Feasibility feasibility = Feasibility::none;
  StabilityRule stability = StabilityRule::support_polygon;
};

class Action {
 public:
  enum class Kind : std::uint8_t { place, terminate };

  static Action terminate() { return Action(); }
  static Action place(int instance_id, int unit_index, Cell cell, Rotation rotation) {
    Action a;
    a.kind_ = Kind::place;
    a.instance_id_ = instance_id;
    a.unit_index_ = unit_index;
    a.cell_ = cell;
    a.rotation_ = rotation;
    return a;
  }

  bool is_terminate() const { return kind_ == Kind::terminate; }
  int instance_id() const { return instance_id_; }
  int unit_index() const { return unit_index_; }
  const Cell& cell() const { return cell_; }
  Rotation rotation() const { return rotation_; }

  friend bool operator==(const Action&, const Action&) = default;

 private:
  Action() = default;

  Kind kind_ = Kind::terminate;
  int instance_id_ = -1;
  int unit_index_ = -1;
  Cell cell_{};
  Rotation rotation_{};
};

std::string to_string(const Action& a);

struct StepOutcome {
  double reward = 0.0;
  bool done = false;
  Reason reason = Reason::none;
};

enum class CellState : std::uint8_t { target, nontarget, occupied };

/// The assembly MDP state: open target / non-target cells, placed units and
/// the staged (unplaced) blocks.
class SceneState {
 public:
  SceneState() = default;
  SceneState(GridSpec spec, const TargetSpec& tspec, std::vector<BlockInstance> instances,
             std::shared_ptr<const BlockCatalog> catalog);

  const GridSpec& spec() const { return spec_; }
  const BlockCatalog& catalog() const { return *catalog_; }
  const std::shared_ptr<const BlockCatalog>& catalog_ptr() const { return catalog_; }

  CellState cell_state(const Cell& c) const { return cells_[flatten(c, spec_)]; }
  /// True for cells that were targets when the episode started.
  bool initial_target(const Cell& c) const { return initial_targets_[flatten(c, spec_)] != 0; }
  int initial_target_count() const;
  int filled_initial_targets() const;
  bool occupied(const Cell& c) const { return cell_state(c) == CellState::occupied; }
  std::vector<Cell> open_targets() const;
  std::vector<Cell> open_nontargets() const;
  int num_open_targets() const { return open_targets_; }
  int num_open_nontargets() const { return open_nontargets_; }

  const std::vector<BlockInstance>& instances() const { return instances_; }
  const BlockInstance& instance(int instance_id) const;
  std::vector<const BlockInstance*> staged() const;
  int staged_unit_count() const;
  int staged_block_count() const;
  const std::vector<std::pair<int, Cell>>& placed_units() const { return placed_units_; }

  int step_count() const { return step_count_; }
  Status status() const { return status_; }
  Reason reason() const { return reason_; }
  bool running() const { return status_ == Status::running; }

  /// Fills a cell outside any block (pre-built structure, test fixtures).
  void mark_occupied(const Cell& c);

 private:
  friend StepOutcome apply_step(SceneState&, const Action&, const EnvConfig&);

  BlockInstance& mutable_instance(int instance_id);
  void occupy(const Cell& c);

  GridSpec spec_;
  std::shared_ptr<const BlockCatalog> catalog_;
  std::vector<CellState> cells_;
  std::vector<std::uint8_t> initial_targets_;
  int open_targets_ = 0;
  int open_nontargets_ = 0;
  std::vector<BlockInstance> instances_;
  std::vector<std::pair<int, Cell>> placed_units_;
  int step_count_ = 0;
  Status status_ = Status::running;
  Reason reason_ = Reason::none;
};

/// N_U * (N_F + N_E) * 4 + 1
long long action_space_size(const SceneState& state);

struct ResolvedPlacement {
  Placement placement;
  std::vector<Cell> unit_cells;  // destination per unit, instance unit order
  std::vector<Cell> footprint;   // sorted
};

/// Rotates the instance about the vertical axis through the selected unit and
/// moves that unit onto the action's cell. Throws OutOfBounds when a unit
/// leaves the grid and InvalidAction for malformed actions.
ResolvedPlacement resolve_block_placement(const SceneState& state, const Action& action);

/// Stability of a footprint resting on cells for which `occupied` holds.
bool stable_on(std::span<const Cell> footprint, const std::function<bool(const Cell&)>& occupied, StabilityRule rule);

bool stability_check(const SceneState& state, std::span<const Cell> footprint, StabilityRule rule);

ProxyResult feasibility_check(const SceneState& state, const BlockInstance& instance,
                              std::span<const Cell> footprint, Feasibility mode);

/// Applies an action in place. Throws InvalidState on a finished episode.
StepOutcome apply_step(SceneState& state, const Action& action, const EnvConfig& config);

std::pair<SceneState, StepOutcome> step(const SceneState& state, const Action& action, const EnvConfig& config);

}  // namespace blockasm
