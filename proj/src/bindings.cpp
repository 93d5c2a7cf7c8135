#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <random>

#include "blockasm/cli.hpp"
#include "blockasm/error.hpp"
#include "blockasm/milp.hpp"
#include "blockasm/scene.hpp"

namespace py = pybind11;
using namespace blockasm;

namespace {

py::dict metrics_dict(const MetricsSummary& m) {
  py::dict d;
  d["policy"] = m.policy;
  d["grid_size"] = m.grid_size;
  d["n"] = m.n;
  d["R"] = m.R;
  d["sem_R"] = m.sem_R;
  d["e"] = m.e;
  d["d"] = m.d;
  d["exhausted"] = m.exhausted;
  d["f"] = m.f;
  d["f_g"] = m.f_g;
  d["f_p"] = m.f_p;
  d["a_bar"] = m.a_bar;
  d["a_bar_corrected"] = m.a_bar_corrected;
  return d;
}

std::optional<QNetwork> net_for(PolicyKind kind, const std::optional<std::string>& checkpoint) {
  if (kind != PolicyKind::dqn && kind != PolicyKind::dqn_mcts) return std::nullopt;
  if (!checkpoint) throw ConfigError("policy " + std::string(to_string(kind)) + " needs a checkpoint");
  return load_checkpoint(*checkpoint);
}

EnvConfig env_for(bool robot_proxy) {
  EnvConfig env;
  env.feasibility = robot_proxy ? Feasibility::topdown_proxy : Feasibility::none;
  return env;
}

py::dict solve_scene(const Scene& scene) {
  const Task task = scene_task(scene);
  py::list poses;
  for (const auto& p : task.goal_poses)
    poses.append(py::make_tuple(p.type_id, p.rotation.quarter_turns(), py::make_tuple(p.anchor.dx, p.anchor.dy, p.anchor.dz)));
  py::dict d;
  d["optimal"] = task.solved;
  d["covered_targets"] = task.milp_targets.size();
  d["poses"] = poses;
  return d;
}

py::dict play(const Scene& scene, const std::string& policy, std::uint64_t seed,
              const std::optional<std::string>& checkpoint, bool robot_proxy, int budget) {
  const PolicyKind kind = parse_policy_kind(policy);
  const auto net = net_for(kind, checkpoint);
  const EnvConfig env = env_for(robot_proxy);
  MctsConfig mcts;
  mcts.budget = budget;
  std::mt19937_64 rng(seed);
  const auto rec = run_episode(scene_task(scene), make_policy(kind, net ? &*net : nullptr, env, mcts), env, rng);
  py::list actions;
  for (const auto& a : rec.actions) actions.append(to_string(a));
  py::dict d;
  d["status"] = std::string(to_string(rec.status));
  d["reason"] = std::string(to_string(rec.reason));
  d["return"] = rec.discounted_return;
  d["rewards"] = rec.rewards;
  d["actions"] = actions;
  d["filled_targets"] = rec.filled_targets;
  d["initial_targets"] = rec.initial_targets;
  EpisodeFile ep{scene, std::string(to_string(kind)), seed, env, rec};
  d["final"] = render_ascii(replay_episode(ep));
  return d;
}

py::dict evaluate(const std::vector<Scene>& scenes, const std::string& policy,
                  const std::optional<std::string>& checkpoint, bool robot_proxy, int budget, std::uint64_t seed,
                  unsigned threads) {
  const PolicyKind kind = parse_policy_kind(policy);
  const auto net = net_for(kind, checkpoint);
  MctsConfig mcts;
  mcts.budget = budget;
  std::vector<EpisodeRecord> records;
  {
    py::gil_scoped_release release;
    const auto tasks = load_tasks(scenes, threads);
    records = evaluate_policy(kind, tasks, net ? &*net : nullptr, env_for(robot_proxy), mcts, seed, threads);
  }
  int grid = scenes.empty() ? 0 : scenes.front().grid_size;
  for (const auto& s : scenes)
    if (s.grid_size != grid) grid = 0;
  return metrics_dict(compute_metrics(records, std::string(to_string(kind)), grid));
}

py::list train_net(const std::vector<Scene>& scenes, const std::string& checkpoint, const std::string& config_json) {
  auto j = nlohmann::json::parse(config_json);
  j["dataset"] = {{"count", 1}};  // the scenes come from the caller
  const TrainFile tf = parse_train_config(j);
  TrainResult result;
  {
    py::gil_scoped_release release;
    const auto tasks = load_tasks(scenes, tf.config.threads);
    result = train(tasks, tf.config);
  }
  save_checkpoint(result.net, checkpoint);
  py::list log;
  for (const auto& row : result.log) log.append(py::make_tuple(row.step, row.episode_return, row.loss, row.epsilon));
  return log;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Block assembly planning: scenes, packing, policies and training";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<InvalidAction>(m, "InvalidAction", base.ptr());
  py::register_exception<InvalidState>(m, "InvalidState", base.ptr());

  py::class_<Scene>(m, "Scene")
      .def_static(
          "generate",
          [](std::uint64_t seed, int grid_size, int sides) {
            GenOptions o;
            o.seed = seed;
            o.grid_size = grid_size;
            o.sides = sides;
            return gen_scene(o);
          },
          py::arg("seed"), py::arg("grid_size") = 3, py::arg("sides") = 1)
      .def_static("load", &load_scene, py::arg("path"))
      .def_static(
          "from_json", [](const std::string& text) { return scene_from_json(nlohmann::json::parse(text)); },
          py::arg("text"))
      .def("save", [](const Scene& s, const std::string& path) { save_scene(s, path); }, py::arg("path"))
      .def("to_json", [](const Scene& s) { return scene_to_json(s).dump(2); })
      .def_property_readonly("shape", [](const Scene& s) { return py::make_tuple(s.spec.nx(), s.spec.ny(), s.spec.nz()); })
      .def_property_readonly("targets",
                             [](const Scene& s) {
                               std::vector<std::tuple<int, int, int>> out;
                               for (const auto& c : s.targets) out.emplace_back(c.dx, c.dy, c.dz);
                               return out;
                             })
      .def_property_readonly("staged_types",
                             [](const Scene& s) {
                               std::vector<std::string> out;
                               for (const auto& b : s.staged) out.push_back(b.type);
                               return out;
                             })
      .def_readonly("sides", &Scene::sides)
      .def_readonly("grid_size", &Scene::grid_size)
      .def("render", [](const Scene& s, const std::string& mode) {
            const auto state = initial_state(s);
            return mode == "obj" ? render_obj(state) : render_ascii(state);
          }, py::arg("mode") = "ascii")
      .def("solve", &solve_scene)
      .def("__eq__", [](const Scene& a, const Scene& b) { return a == b; });

  m.def("play", &play, py::arg("scene"), py::arg("policy") = "heur", py::arg("seed") = 0,
        py::arg("checkpoint") = py::none(), py::arg("robot_proxy") = false, py::arg("budget") = 5);
  m.def("evaluate", &evaluate, py::arg("scenes"), py::arg("policy") = "heur", py::arg("checkpoint") = py::none(),
        py::arg("robot_proxy") = false, py::arg("budget") = 5, py::arg("seed") = 0, py::arg("threads") = 0);
  m.def("train", &train_net, py::arg("scenes"), py::arg("checkpoint"), py::arg("config_json") = "{}",
        "Trains on the given scenes and writes a checkpoint; returns (step, return, loss, epsilon) per episode.");
}
