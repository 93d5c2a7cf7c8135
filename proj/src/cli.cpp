#include "blockasm/cli.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "blockasm/error.hpp"
#include "blockasm/milp.hpp"

namespace blockasm {

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw UsageError("file not found: " + path);
}

void require_dir(const std::string& path) {
  if (!std::filesystem::is_directory(path)) throw UsageError("directory not found: " + path);
}

Feasibility parse_proxy(const std::string& s) { return s == "on" ? Feasibility::topdown_proxy : Feasibility::none; }

template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers = std::min<std::size_t>(threads, n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex m;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(m);
        if (!error) error = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

nlohmann::ordered_json solution_json(const PackingModel& model, const MilpSolution& sol) {
  nlohmann::ordered_json j;
  j["objective"] = sol.objective;
  j["optimal"] = sol.optimal;
  j["nodes"] = sol.nodes;
  j["columns"] = model.columns.size();
  auto chosen = nlohmann::ordered_json::array();
  int covered = 0;
  for (int idx : sol.chosen) {
    const auto& col = model.columns[idx];
    auto cells = nlohmann::ordered_json::array();
    for (const auto& c : col.footprint) cells.push_back({c.dx, c.dy, c.dz});
    chosen.push_back({{"column", idx},
                      {"type", col.placement.type_id},
                      {"rotation", col.placement.rotation.quarter_turns()},
                      {"anchor", {col.placement.anchor.dx, col.placement.anchor.dy, col.placement.anchor.dz}},
                      {"value", col.value},
                      {"cells", std::move(cells)}});
    covered += col.target_cells;
  }
  j["chosen"] = std::move(chosen);
  j["covered_targets"] = covered;
  return j;
}

std::vector<Scene> load_scene_dir(const std::string& dir) {
  require_dir(dir);
  std::vector<Scene> scenes;
  for (const auto& f : scene_files(dir)) scenes.push_back(load_scene(f));
  if (scenes.empty()) throw UsageError("no scene files in " + dir);
  return scenes;
}

struct PolicyArgs {
  std::string policy = "heur";
  std::string robot_proxy = "off";
  std::string checkpoint;
  std::uint64_t seed = 0;
  int budget = 5;
  double epsilon_search = 0.1;
};

void add_policy_options(CLI::App* cmd, PolicyArgs& a) {
  cmd->add_option("--policy", a.policy, "heur, random, dqn or dqn-mcts")
      ->check(CLI::IsMember({"heur", "random", "dqn", "dqn-mcts"}));
  cmd->add_option("--robot-proxy", a.robot_proxy, "top-down feasibility proxy")->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--checkpoint", a.checkpoint, "Q-network checkpoint");
  cmd->add_option("--seed", a.seed, "policy random seed");
  cmd->add_option("--budget", a.budget, "search budget for dqn-mcts")->check(CLI::PositiveNumber);
  cmd->add_option("--epsilon-search", a.epsilon_search, "exploration inside search")->check(CLI::Range(0.0, 1.0));
}

std::optional<QNetwork> policy_net(const PolicyArgs& a, PolicyKind kind) {
  if (kind != PolicyKind::dqn && kind != PolicyKind::dqn_mcts) return std::nullopt;
  if (a.checkpoint.empty()) throw UsageError("--policy " + a.policy + " requires --checkpoint");
  require_file(a.checkpoint);
  return load_checkpoint(a.checkpoint);
}

int cmd_gen(const std::string& out_dir, int count, int grid_size, int sides, std::uint64_t seed, std::ostream& out) {
  std::filesystem::create_directories(out_dir);
  for (int i = 0; i < count; ++i) {
    GenOptions opt;
    opt.seed = seed + static_cast<std::uint64_t>(i);
    opt.grid_size = grid_size;
    opt.sides = sides;
    std::ostringstream name;
    name << "scene_" << std::setw(5) << std::setfill('0') << i << ".json";
    save_scene(gen_scene(opt), (std::filesystem::path(out_dir) / name.str()).string());
  }
  out << "wrote " << count << " scenes to " << out_dir << "\n";
  return 0;
}

int cmd_milp(const std::string& path, const std::string& dump, std::uint64_t budget, std::ostream& out) {
  require_file(path);
  const Scene scene = load_scene(path);
  const SceneState state = initial_state(scene);
  TargetSpec tspec;
  for (const auto& c : state.open_targets()) tspec.targets.insert(c);
  for (const auto& c : state.open_nontargets()) tspec.nontargets.insert(c);
  Inventory inv;
  for (const auto* inst : state.staged()) ++inv[inst->type_id];
  const auto model = build_model(scene.catalog, inv, tspec, scene.spec);
  if (!dump.empty()) {
    std::ostringstream lp;
    write_lp(model, lp);
    if (dump == "-") {
      out << lp.str();
    } else {
      write_file_atomic(dump, lp.str());
    }
  }
  const auto sol = solve(model, budget);
  out << solution_json(model, sol).dump(2) << "\n";
  return sol.optimal ? 0 : 1;
}

int cmd_play(const std::string& path, const PolicyArgs& a, const std::string& render, const std::string& out_path,
             std::ostream& out) {
  require_file(path);
  const PolicyKind kind = parse_policy_kind(a.policy);
  const auto net = policy_net(a, kind);
  const Scene scene = load_scene(path);
  const Task task = scene_task(scene);
  EnvConfig env;
  env.feasibility = parse_proxy(a.robot_proxy);
  MctsConfig mcts{a.budget, a.epsilon_search};
  const PolicyFn policy = make_policy(kind, net ? &*net : nullptr, env, mcts);
  std::mt19937_64 rng(a.seed);
  const EpisodeRecord rec = run_episode(task, policy, env, rng);

  EpisodeFile ep{scene, std::string(to_string(kind)), a.seed, env, rec};
  const std::string text = episode_to_json(ep).dump(2) + "\n";
  if (!out_path.empty()) write_file_atomic(out_path, text);

  std::ostringstream summary;
  summary << std::setprecision(6) << "status=" << to_string(rec.status) << " reason=" << to_string(rec.reason)
          << " steps=" << rec.actions.size() << " return=" << rec.discounted_return << " filled=" << rec.filled_targets
          << "/" << rec.initial_targets << "\n";
  out << summary.str();
  if (render == "ascii" || render == "obj") {
    const SceneState final_state = replay_episode(ep);
    out << (render == "ascii" ? render_ascii(final_state) : render_obj(final_state));
  } else if (out_path.empty()) {
    out << text;
  }
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& ckpt, const std::string& log_path, int threads,
              std::ostream& out) {
  require_file(config_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(config_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(config_path + ": " + e.what());
  }
  TrainFile tf = parse_train_config(j);
  if (threads > 0) tf.config.threads = static_cast<unsigned>(threads);

  std::vector<Scene> scenes;
  if (!tf.scenes_dir.empty()) {
    scenes = load_scene_dir(tf.scenes_dir);
  } else {
    for (int i = 0; i < tf.dataset_count; ++i) {
      GenOptions opt = tf.generate;
      opt.seed = tf.generate.seed + static_cast<std::uint64_t>(i);
      scenes.push_back(gen_scene(opt));
    }
  }
  const auto tasks = load_tasks(scenes, tf.config.threads);
  const auto result = train(tasks, tf.config);
  save_checkpoint(result.net, ckpt);
  std::ostringstream log;
  write_train_log(log, result.log);
  if (!log_path.empty()) write_file_atomic(log_path, log.str());
  out << "trained " << tf.config.total_steps << " steps over " << result.log.size() << " episodes; checkpoint "
      << ckpt << "\n";
  return 0;
}

int cmd_eval(const std::string& dir, const PolicyArgs& a, const std::string& csv_path, const std::string& json_path,
             int threads, std::ostream& out) {
  const PolicyKind kind = parse_policy_kind(a.policy);
  const auto net = policy_net(a, kind);
  const auto scenes = load_scene_dir(dir);
  const auto tasks = load_tasks(scenes, static_cast<unsigned>(threads));
  EnvConfig env;
  env.feasibility = parse_proxy(a.robot_proxy);
  const MctsConfig mcts{a.budget, a.epsilon_search};
  const auto records =
      evaluate_policy(kind, tasks, net ? &*net : nullptr, env, mcts, a.seed, static_cast<unsigned>(threads));
  std::set<int> sizes;
  for (const auto& s : scenes) sizes.insert(s.grid_size);
  const auto m = compute_metrics(records, std::string(to_string(kind)), sizes.size() == 1 ? *sizes.begin() : 0);
  std::ostringstream csv;
  csv << kMetricsCsvHeader << "\n";
  write_metrics_csv_row(csv, m);
  if (!csv_path.empty()) write_file_atomic(csv_path, csv.str());
  if (!json_path.empty()) write_file_atomic(json_path, metrics_json(m) + "\n");
  out << csv.str();
  return 0;
}

int cmd_show(const std::string& path, const std::string& mode, std::ostream& out) {
  require_file(path);
  nlohmann::json j;
  const std::string text = read_file(path);
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  const SceneState state = j.contains("scene") ? replay_episode(episode_from_json(j)) : initial_state(scene_from_json(j));
  out << (mode == "obj" ? render_obj(state) : render_ascii(state));
  return 0;
}

}  // namespace

std::vector<std::string> scene_files(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<Task> load_tasks(const std::vector<Scene>& scenes, unsigned threads) {
  std::vector<Task> tasks(scenes.size());
  parallel_for(scenes.size(), threads, [&](std::size_t i) { tasks[i] = scene_task(scenes[i]); });
  return tasks;
}

TrainFile parse_train_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  static const std::set<std::string> known = {
      "total_steps", "replay_capacity", "batch_size", "learning_rate", "momentum", "optimizer",
      "grad_clip", "target_sync", "epsilon_start", "epsilon_end", "epsilon_decay_fraction", "learning_starts",
      "train_every", "threads", "seed", "gamma", "robot_proxy", "net", "scenes_dir", "dataset"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown training config key '" + key + "'");

  TrainFile tf;
  auto& c = tf.config;
  try {
    c.total_steps = j.value("total_steps", c.total_steps);
    c.replay_capacity = j.value("replay_capacity", c.replay_capacity);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.momentum = j.value("momentum", c.momentum);
    const auto opt = j.value("optimizer", std::string("sgd"));
    if (opt == "sgd") {
      c.optimizer = Optimizer::sgd_momentum;
    } else if (opt == "adam") {
      c.optimizer = Optimizer::adam;
    } else {
      throw ConfigError("unknown optimizer '" + opt + "'");
    }
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.target_sync = j.value("target_sync", c.target_sync);
    c.epsilon_start = j.value("epsilon_start", c.epsilon_start);
    c.epsilon_end = j.value("epsilon_end", c.epsilon_end);
    c.epsilon_decay_fraction = j.value("epsilon_decay_fraction", c.epsilon_decay_fraction);
    c.learning_starts = j.value("learning_starts", c.learning_starts);
    c.train_every = j.value("train_every", c.train_every);
    c.threads = j.value("threads", c.threads);
    c.seed = j.value("seed", c.seed);
    c.env.gamma = j.value("gamma", c.env.gamma);
    c.env.feasibility = j.value("robot_proxy", false) ? Feasibility::topdown_proxy : Feasibility::none;
    if (j.contains("net")) {
      const auto& n = j["net"];
      c.net.dim = n.value("dim", c.net.dim);
      c.net.heads = n.value("heads", c.net.heads);
      c.net.hidden = n.value("hidden", c.net.hidden);
      c.net.layers = n.value("layers", c.net.layers);
    }
    tf.scenes_dir = j.value("scenes_dir", std::string());
    if (j.contains("dataset")) {
      const auto& d = j["dataset"];
      tf.dataset_count = d.value("count", 0);
      tf.generate.grid_size = d.value("grid_size", tf.generate.grid_size);
      tf.generate.sides = d.value("sides", tf.generate.sides);
      tf.generate.seed = d.value("seed", tf.generate.seed);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  if (tf.scenes_dir.empty() && tf.dataset_count <= 0)
    throw ConfigError("training config needs scenes_dir or dataset.count");
  c.validate();
  return tf;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Block assembly planning with packing-masked Q-learning"};
  app.require_subcommand(1);

  std::string gen_out;
  int gen_count = 1, gen_grid = 3, gen_sides = 1;
  std::uint64_t gen_seed = 0;
  auto* gen = app.add_subcommand("gen", "generate scenes into a directory");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of scenes")->check(CLI::PositiveNumber);
  gen->add_option("--grid-size", gen_grid, "grid size per side")->check(CLI::Range(2, 64));
  gen->add_option("--sides", gen_sides, "target shapes per scene")->check(CLI::IsMember({1, 2}));
  gen->add_option("--seed", gen_seed, "first scene seed");

  std::string milp_scene, milp_dump;
  std::uint64_t milp_budget = kDefaultNodeBudget;
  auto* milp = app.add_subcommand("milp", "solve the packing model of a scene");
  milp->add_option("scene", milp_scene, "scene file")->required();
  milp->add_option("--dump-model", milp_dump, "write the model in LP format ('-' for stdout)");
  milp->add_option("--node-budget", milp_budget, "branch-and-bound node limit");

  std::string play_scene, play_render = "none", play_out;
  PolicyArgs play_args;
  auto* play = app.add_subcommand("play", "run one episode");
  play->add_option("scene", play_scene, "scene file")->required();
  add_policy_options(play, play_args);
  play->add_option("--render", play_render, "ascii, obj or none")->check(CLI::IsMember({"ascii", "obj", "none"}));
  play->add_option("--out", play_out, "episode file");

  std::string train_config, train_ckpt, train_log;
  int train_threads = 0;
  auto* trn = app.add_subcommand("train", "train a Q-network");
  trn->add_option("config", train_config, "training config JSON")->required();
  trn->add_option("--out", train_ckpt, "checkpoint path")->required();
  trn->add_option("--log", train_log, "training log CSV");
  trn->add_option("--threads", train_threads, "gradient workers (overrides the config)")->check(CLI::NonNegativeNumber);

  std::string eval_dir, eval_csv, eval_json;
  int eval_threads = 0;
  PolicyArgs eval_args;
  auto* evl = app.add_subcommand("eval", "evaluate a policy over a scene directory");
  evl->add_option("--scenes", eval_dir, "scene directory")->required();
  add_policy_options(evl, eval_args);
  evl->add_option("--out", eval_csv, "metrics CSV");
  evl->add_option("--json", eval_json, "metrics JSON");
  evl->add_option("--threads", eval_threads, "evaluation workers")->check(CLI::NonNegativeNumber);

  std::string show_file, show_mode = "ascii";
  auto* show = app.add_subcommand("show", "render a scene or episode");
  show->add_option("file", show_file, "scene or episode file")->required();
  show->add_option("--mode", show_mode, "ascii or obj")->check(CLI::IsMember({"ascii", "obj"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen(gen_out, gen_count, gen_grid, gen_sides, gen_seed, out);
    if (*milp) return cmd_milp(milp_scene, milp_dump, milp_budget, out);
    if (*play) return cmd_play(play_scene, play_args, play_render, play_out, out);
    if (*trn) return cmd_train(train_config, train_ckpt, train_log, train_threads, out);
    if (*evl) return cmd_eval(eval_dir, eval_args, eval_csv, eval_json, eval_threads, out);
    if (*show) return cmd_show(show_file, show_mode, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace blockasm
