#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "blockasm/scene.hpp"

namespace blockasm {

/// Exit codes: 0 success, 1 runtime failure, 2 usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Scene files (*.json) of a directory in name order.
std::vector<std::string> scene_files(const std::string& dir);

/// Loads and solves every scene; solving runs on `threads` workers.
std::vector<Task> load_tasks(const std::vector<Scene>& scenes, unsigned threads = 0);

/// Training configuration file: learner fields plus a dataset source.
struct TrainFile {
  TrainConfig config;
  std::string scenes_dir;  // used when set
  GenOptions generate;     // otherwise `dataset.count` scenes from these options
  int dataset_count = 0;
};

TrainFile parse_train_config(const nlohmann::json& j);

}  // namespace blockasm
