#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "blockasm/learner.hpp"

namespace blockasm {

/// A staged block: `position` is the world position of the rotated block's
/// minimum unit centre.
struct StagedBlock {
  int id = 0;
  std::string type;
  Vec3 position;
  Rotation rotation;

  friend bool operator==(const StagedBlock&, const StagedBlock&) = default;
};

/// A scene file. Grid cells not listed as targets are non-targets.
struct Scene {
  GridSpec spec;
  CellSet targets;
  BlockCatalog catalog;
  std::vector<StagedBlock> staged;
  int sides = 1;
  std::uint64_t seed = 0;
  int grid_size = 0;

  friend bool operator==(const Scene&, const Scene&) = default;
};

inline constexpr int kSceneVersion = 1;

struct GenOptions {
  std::uint64_t seed = 0;
  int grid_size = 3;
  int sides = 1;
  int min_blocks = 2;
  int max_blocks = 6;
  int max_distractors = 3;
  double stack_probability = 0.3;
  double bottom_up = 0.5;  // chance a placement must start on the lowest open layer
  int max_retries = 200;
};

/// Packs random stable placements into each side's grid and declares their
/// cells targets. Side s occupies x in [s*(n+1), s*(n+1)+n); the column
/// between two sides is a non-target separator.
Scene gen_scene(const GenOptions& options, const BlockCatalog& catalog = default_catalog());

SceneState initial_state(const Scene& scene);
Task scene_task(const Scene& scene, std::uint64_t node_budget = 5'000'000);

nlohmann::ordered_json scene_to_json(const Scene& scene);
/// Throws ParseError naming the offending field.
Scene scene_from_json(const nlohmann::json& j);

/// Write to a temporary file, then rename.
void write_file_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

void save_scene(const Scene& scene, const std::string& path);
Scene load_scene(const std::string& path);

std::string render_ascii(const SceneState& state);
std::string render_obj(const SceneState& state);

struct EpisodeFile {
  Scene scene;
  std::string policy;
  std::uint64_t seed = 0;
  EnvConfig env;
  EpisodeRecord record;
};

nlohmann::ordered_json episode_to_json(const EpisodeFile& ep);
EpisodeFile episode_from_json(const nlohmann::json& j);
/// Replays the recorded actions from the scene's initial state.
SceneState replay_episode(const EpisodeFile& ep);

nlohmann::ordered_json action_to_json(const Action& a);
Action action_from_json(const nlohmann::json& j);

}  // namespace blockasm
