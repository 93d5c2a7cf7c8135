#include "blockasm/scene.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include "blockasm/error.hpp"

namespace blockasm {

using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Generation

namespace {

int uniform_int(int lo, int hi, std::mt19937_64& rng) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// One side's target shape: cells of a stable packing, in build order.
std::vector<std::string> pack_side(const GridSpec& local, const BlockCatalog& catalog, const GenOptions& opt,
                                   std::mt19937_64& rng, CellSet& cells) {
  const auto ids = catalog.ids();
  std::vector<std::pair<std::string, std::vector<Placement>>> all;
  for (const auto& id : ids) all.emplace_back(id, enumerate_placements(id, catalog, local));

  for (int attempt = 0; attempt < opt.max_retries; ++attempt) {
    const int wanted = uniform_int(opt.min_blocks, opt.max_blocks, rng);
    CellSet occ;
    std::vector<std::string> used;
    for (int k = 0; k < wanted; ++k) {
      std::vector<std::pair<const std::string*, std::vector<std::vector<Cell>>>> options;
      for (const auto& [id, placements] : all) {
        std::vector<std::vector<Cell>> fits;
        for (const auto& p : placements) {
          auto fp = footprint(p, catalog, local);
          if (std::any_of(fp.begin(), fp.end(), [&](const Cell& c) { return occ.contains(c); })) continue;
          if (!stable_on(fp, [&](const Cell& c) { return occ.contains(c); }, StabilityRule::support_polygon)) continue;
          fits.push_back(std::move(fp));
        }
        if (!fits.empty()) options.emplace_back(&id, std::move(fits));
      }
      if (options.empty()) break;
      if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < opt.bottom_up) {
        // Keep only placements whose lowest unit sits on the lowest open layer.
        auto base = [](const std::vector<Cell>& fp) {
          int z = fp.front().dz;
          for (const auto& c : fp) z = std::min(z, c.dz);
          return z;
        };
        int lowest = std::numeric_limits<int>::max();
        for (const auto& [_, fits] : options)
          for (const auto& fp : fits) lowest = std::min(lowest, base(fp));
        for (auto& [_, fits] : options) std::erase_if(fits, [&](const auto& fp) { return base(fp) != lowest; });
        std::erase_if(options, [](const auto& o) { return o.second.empty(); });
      }
      const auto& [id, fits] = options[uniform_int(0, static_cast<int>(options.size()) - 1, rng)];
      const auto& fp = fits[uniform_int(0, static_cast<int>(fits.size()) - 1, rng)];
      occ.insert(fp.begin(), fp.end());
      used.push_back(*id);
    }
    if (static_cast<int>(used.size()) >= opt.min_blocks) {
      cells = std::move(occ);
      return used;
    }
  }
  throw Error("scene generation failed after " + std::to_string(opt.max_retries) + " attempts");
}

}  // namespace

Scene gen_scene(const GenOptions& opt, const BlockCatalog& catalog) {
  if (opt.grid_size < 2) throw ConfigError("grid size must be at least 2");
  if (opt.sides != 1 && opt.sides != 2) throw ConfigError("sides must be 1 or 2");
  if (opt.min_blocks < 1 || opt.max_blocks < opt.min_blocks || opt.max_distractors < 0)
    throw ConfigError("invalid block counts");
  if (catalog.ids().empty()) throw ConfigError("empty block catalog");

  std::mt19937_64 rng(opt.seed);
  const int n = opt.grid_size;
  Scene scene;
  scene.spec = GridSpec(opt.sides == 2 ? 2 * n + 1 : n, 1, n);
  scene.catalog = catalog;
  scene.sides = opt.sides;
  scene.seed = opt.seed;
  scene.grid_size = n;

  const GridSpec local(n, 1, n);
  std::vector<std::string> types;
  for (int s = 0; s < opt.sides; ++s) {
    CellSet cells;
    for (auto& t : pack_side(local, catalog, opt, rng, cells)) types.push_back(std::move(t));
    for (const auto& c : cells) scene.targets.insert({c.dx + s * (n + 1), c.dy, c.dz});
  }
  const auto ids = catalog.ids();
  const int distractors = uniform_int(0, opt.max_distractors, rng);
  for (int k = 0; k < distractors; ++k) types.push_back(ids[uniform_int(0, static_cast<int>(ids.size()) - 1, rng)]);
  std::shuffle(types.begin(), types.end(), rng);

  // Staging row in front of the grid (negative y), optionally stacked.
  struct Slot {
    int x, y, z;
    std::vector<Cell> units;
  };
  std::vector<Slot> slots;
  int cursor = 0;
  for (std::size_t i = 0; i < types.size(); ++i) {
    const Rotation rot(uniform_int(0, 3, rng));
    const auto offsets = rotate_offsets(catalog.at(types[i]).offsets(), rot);
    int ext_x = 0, ext_y = 0;
    for (const auto& o : offsets) {
      ext_x = std::max(ext_x, o.dx + 1);
      ext_y = std::max(ext_y, o.dy + 1);
    }
    Slot slot{cursor, -(1 + ext_y), 0, {}};
    if (!slots.empty() && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < opt.stack_probability) {
      const Slot& base = slots[uniform_int(0, static_cast<int>(slots.size()) - 1, rng)];
      // The stacked block may be deeper than its base; keep it clear of the grid.
      const int y = std::min(base.y, -(1 + ext_y));
      int top = -1;
      for (const auto& other : slots)
        for (const auto& u : other.units)
          for (const auto& o : offsets)
            if (u.dx == base.x + o.dx && u.dy == y + o.dy) top = std::max(top, u.dz);
      if (top >= 0) {
        slot = {base.x, y, top + 1, {}};
      }
    }
    for (const auto& o : offsets) slot.units.push_back({slot.x + o.dx, slot.y + o.dy, slot.z + o.dz});
    cursor = std::max(cursor, slot.x + ext_x + 1);
    slots.push_back(slot);

    const double cs = scene.spec.cell_size();
    const Vec3& o = scene.spec.origin();
    scene.staged.push_back({static_cast<int>(i), types[i], {o.x + slot.x * cs, o.y + slot.y * cs, o.z + slot.z * cs}, rot});
  }
  return scene;
}

SceneState initial_state(const Scene& scene) {
  auto catalog = std::make_shared<const BlockCatalog>(scene.catalog);
  std::vector<BlockInstance> instances;
  for (const auto& b : scene.staged)
    instances.push_back(make_instance(b.id, catalog->at(b.type), b.rotation, b.position, scene.spec.cell_size()));
  return SceneState(scene.spec, targets_with_complement(scene.spec, scene.targets), std::move(instances), catalog);
}

Task scene_task(const Scene& scene, std::uint64_t node_budget) { return make_task(initial_state(scene), node_budget); }

// ---------------------------------------------------------------------------
// JSON

namespace {

[[noreturn]] void field_error(const std::string& path, const std::string& what) {
  throw ParseError("field '" + path + "': " + what);
}

const json& member(const json& j, const std::string& path, const char* key) {
  if (!j.is_object()) field_error(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) field_error(path.empty() ? key : path + "." + key, "missing");
  return *it;
}

std::string join(const std::string& path, const char* key) { return path.empty() ? key : path + "." + key; }

template <typename T>
T as(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    field_error(path, "wrong type");
  }
}

Cell cell_of(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) field_error(path, "expected [dx, dy, dz]");
  return {as<int>(j[0], path + "[0]"), as<int>(j[1], path + "[1]"), as<int>(j[2], path + "[2]")};
}

Vec3 vec_of(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) field_error(path, "expected [x, y, z]");
  return {as<double>(j[0], path + "[0]"), as<double>(j[1], path + "[1]"), as<double>(j[2], path + "[2]")};
}

ordered_json cell_json(const Cell& c) { return ordered_json::array({c.dx, c.dy, c.dz}); }

json parse_text(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const auto upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw ParseError(source + ":" + std::to_string(line) + ": malformed JSON (" + e.what() + ")");
  }
}

}  // namespace

ordered_json scene_to_json(const Scene& scene) {
  ordered_json j;
  j["version"] = kSceneVersion;
  const auto& s = scene.spec;
  j["grid"] = {{"nx", s.nx()},
               {"ny", s.ny()},
               {"nz", s.nz()},
               {"cell_size", s.cell_size()},
               {"origin", {s.origin().x, s.origin().y, s.origin().z}}};
  auto targets = ordered_json::array();
  for (const auto& c : scene.targets) targets.push_back(cell_json(c));
  j["targets"] = std::move(targets);
  ordered_json types = ordered_json::object();
  for (const auto& [id, type] : scene.catalog) {
    auto offs = ordered_json::array();
    for (const auto& o : type.offsets()) offs.push_back(cell_json(o));
    types[id] = std::move(offs);
  }
  j["block_types"] = std::move(types);
  auto staged = ordered_json::array();
  for (const auto& b : scene.staged) {
    staged.push_back({{"id", b.id},
                      {"type", b.type},
                      {"position", {b.position.x, b.position.y, b.position.z}},
                      {"rotation", b.rotation.quarter_turns()}});
  }
  j["staged"] = std::move(staged);
  j["sides"] = scene.sides;
  j["seed"] = scene.seed;
  j["grid_size"] = scene.grid_size;
  return j;
}

Scene scene_from_json(const json& j) {
  const int version = as<int>(member(j, "", "version"), "version");
  if (version != kSceneVersion)
    throw ParseError("unsupported scene version " + std::to_string(version) + " (expected " +
                     std::to_string(kSceneVersion) + ")");
  Scene scene;
  const auto& g = member(j, "", "grid");
  try {
    scene.spec = GridSpec(as<int>(member(g, "grid", "nx"), "grid.nx"), as<int>(member(g, "grid", "ny"), "grid.ny"),
                          as<int>(member(g, "grid", "nz"), "grid.nz"),
                          as<double>(member(g, "grid", "cell_size"), "grid.cell_size"),
                          vec_of(member(g, "grid", "origin"), "grid.origin"));
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    field_error("grid", e.what());
  }

  const auto& targets = member(j, "", "targets");
  if (!targets.is_array()) field_error("targets", "expected an array");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const std::string path = "targets[" + std::to_string(i) + "]";
    const Cell c = cell_of(targets[i], path);
    if (!scene.spec.contains(c)) field_error(path, "cell outside the grid");
    scene.targets.insert(c);
  }

  const auto& types = member(j, "", "block_types");
  if (!types.is_object()) field_error("block_types", "expected an object");
  for (const auto& [id, offs] : types.items()) {
    const std::string path = "block_types." + id;
    if (!offs.is_array()) field_error(path, "expected an array of offsets");
    std::vector<Cell> cells;
    for (std::size_t i = 0; i < offs.size(); ++i) cells.push_back(cell_of(offs[i], path + "[" + std::to_string(i) + "]"));
    try {
      scene.catalog.add(BlockType(id, cells));
    } catch (const Error& e) {
      field_error(path, e.what());
    }
  }

  const auto& staged = member(j, "", "staged");
  if (!staged.is_array()) field_error("staged", "expected an array");
  for (std::size_t i = 0; i < staged.size(); ++i) {
    const std::string path = "staged[" + std::to_string(i) + "]";
    StagedBlock b;
    b.id = as<int>(member(staged[i], path, "id"), join(path, "id"));
    b.type = as<std::string>(member(staged[i], path, "type"), join(path, "type"));
    if (!scene.catalog.contains(b.type)) field_error(join(path, "type"), "unknown block type '" + b.type + "'");
    b.position = vec_of(member(staged[i], path, "position"), join(path, "position"));
    const int rot = as<int>(member(staged[i], path, "rotation"), join(path, "rotation"));
    if (rot < 0 || rot > 3) field_error(join(path, "rotation"), "must be 0..3");
    b.rotation = Rotation(rot);
    scene.staged.push_back(std::move(b));
  }
  scene.sides = j.contains("sides") ? as<int>(j["sides"], "sides") : 1;
  if (scene.sides != 1 && scene.sides != 2) field_error("sides", "must be 1 or 2");
  scene.seed = j.contains("seed") ? as<std::uint64_t>(j["seed"], "seed") : 0;
  scene.grid_size = j.contains("grid_size") ? as<int>(j["grid_size"], "grid_size") : 0;

  SceneState state;
  try {
    state = initial_state(scene);
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(std::string("invalid scene: ") + e.what());
  }
  // Staged units sit outside the grid, at most one per cell-sized slot.
  std::set<std::tuple<long, long, long>> slots;
  for (std::size_t i = 0; i < state.instances().size(); ++i) {
    const std::string path = "staged[" + std::to_string(i) + "].position";
    for (const auto& p : state.instances()[i].unit_positions) {
      if (scene.spec.cell_at(p)) field_error(path, "block overlaps the grid");
      const double cs = scene.spec.cell_size();
      const Vec3& o = scene.spec.origin();
      if (!slots.insert({std::lround((p.x - o.x) / cs), std::lround((p.y - o.y) / cs), std::lround((p.z - o.z) / cs)})
               .second)
        field_error(path, "block overlaps another staged block");
    }
  }
  return scene;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw Error("cannot write " + path);
    os << content;
    if (!os) throw Error("cannot write " + path);
  }
  std::filesystem::rename(tmp, target);
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void save_scene(const Scene& scene, const std::string& path) { write_file_atomic(path, scene_to_json(scene).dump(2) + "\n"); }

Scene load_scene(const std::string& path) {
  try {
    return scene_from_json(parse_text(read_file(path), path));
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    if (msg.starts_with(path)) throw;
    throw ParseError(path + ": " + msg);
  }
}

// ---------------------------------------------------------------------------
// Rendering

std::string render_ascii(const SceneState& state) {
  const auto& s = state.spec();
  std::string out;
  for (int z = s.nz() - 1; z >= 0; --z) {
    out += "z=" + std::to_string(z) + "\n";
    for (int y = 0; y < s.ny(); ++y) {
      for (int x = 0; x < s.nx(); ++x) {
        const Cell c{x, y, z};
        switch (state.cell_state(c)) {
          case CellState::target: out += "·"; break;
          case CellState::nontarget: out += " "; break;
          case CellState::occupied: out += state.initial_target(c) ? "#" : "x"; break;
        }
      }
      out += "\n";
    }
  }
  return out;
}

std::string render_obj(const SceneState& state) {
  const auto& s = state.spec();
  const double h = s.cell_size() / 2.0;
  static constexpr int kFaces[6][4] = {{1, 2, 4, 3}, {5, 7, 8, 6}, {1, 5, 6, 2}, {3, 4, 8, 7}, {1, 3, 7, 5}, {2, 6, 8, 4}};
  std::ostringstream os;
  os << "# occupied cells\n";
  int base = 0;
  for (const auto& c : s.cells()) {
    if (!state.occupied(c)) continue;
    const Vec3 m = s.center(c);
    for (int k = 0; k < 8; ++k) {
      os << "v " << m.x + ((k & 4) ? h : -h) << ' ' << m.y + ((k & 2) ? h : -h) << ' ' << m.z + ((k & 1) ? h : -h)
         << "\n";
    }
    for (const auto& f : kFaces)
      os << "f " << base + f[0] << ' ' << base + f[1] << ' ' << base + f[2] << ' ' << base + f[3] << "\n";
    base += 8;
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Episodes

ordered_json action_to_json(const Action& a) {
  if (a.is_terminate()) return {{"type", "terminate"}};
  return {{"type", "place"},
          {"instance", a.instance_id()},
          {"unit", a.unit_index()},
          {"cell", cell_json(a.cell())},
          {"rotation", a.rotation().quarter_turns()}};
}

Action action_from_json(const json& j) {
  const auto type = as<std::string>(member(j, "action", "type"), "action.type");
  if (type == "terminate") return Action::terminate();
  if (type != "place") field_error("action.type", "unknown action type '" + type + "'");
  const int rot = as<int>(member(j, "action", "rotation"), "action.rotation");
  if (rot < 0 || rot > 3) field_error("action.rotation", "must be 0..3");
  return Action::place(as<int>(member(j, "action", "instance"), "action.instance"),
                       as<int>(member(j, "action", "unit"), "action.unit"),
                       cell_of(member(j, "action", "cell"), "action.cell"), Rotation(rot));
}

namespace {

Status status_from(const std::string& s) {
  for (auto st : {Status::running, Status::done_success, Status::done_terminated, Status::done_failed,
                  Status::done_exhausted})
    if (to_string(st) == s) return st;
  field_error("status", "unknown status '" + s + "'");
}

Reason reason_from(const std::string& s) {
  for (auto r : {Reason::none, Reason::success, Reason::terminated, Reason::exhausted, Reason::out_of_bounds,
                 Reason::overlap, Reason::unstable, Reason::fail_grasp, Reason::fail_place,
                 Reason::block_unavailable})
    if (to_string(r) == s) return r;
  field_error("reason", "unknown reason '" + s + "'");
}

}  // namespace

ordered_json episode_to_json(const EpisodeFile& ep) {
  ordered_json j;
  j["version"] = kSceneVersion;
  j["policy"] = ep.policy;
  j["seed"] = ep.seed;
  j["robot_proxy"] = ep.env.feasibility == Feasibility::topdown_proxy;
  j["stability"] = ep.env.stability == StabilityRule::full_support ? "full_support" : "support_polygon";
  j["scene"] = scene_to_json(ep.scene);
  auto actions = ordered_json::array();
  for (const auto& a : ep.record.actions) actions.push_back(action_to_json(a));
  j["actions"] = std::move(actions);
  j["rewards"] = ep.record.rewards;
  j["status"] = to_string(ep.record.status);
  j["reason"] = to_string(ep.record.reason);
  j["return"] = ep.record.discounted_return;
  j["initial_targets"] = ep.record.initial_targets;
  j["filled_targets"] = ep.record.filled_targets;
  return j;
}

EpisodeFile episode_from_json(const json& j) {
  const int version = as<int>(member(j, "", "version"), "version");
  if (version != kSceneVersion) throw ParseError("unsupported episode version " + std::to_string(version));
  EpisodeFile ep;
  ep.scene = scene_from_json(member(j, "", "scene"));
  ep.policy = as<std::string>(member(j, "", "policy"), "policy");
  ep.seed = as<std::uint64_t>(member(j, "", "seed"), "seed");
  ep.env.feasibility = as<bool>(member(j, "", "robot_proxy"), "robot_proxy") ? Feasibility::topdown_proxy : Feasibility::none;
  const auto stability = as<std::string>(member(j, "", "stability"), "stability");
  if (stability == "full_support") {
    ep.env.stability = StabilityRule::full_support;
  } else if (stability == "support_polygon") {
    ep.env.stability = StabilityRule::support_polygon;
  } else {
    field_error("stability", "unknown rule '" + stability + "'");
  }
  const auto& actions = member(j, "", "actions");
  if (!actions.is_array()) field_error("actions", "expected an array");
  for (const auto& a : actions) ep.record.actions.push_back(action_from_json(a));
  ep.record.rewards = as<std::vector<double>>(member(j, "", "rewards"), "rewards");
  ep.record.status = status_from(as<std::string>(member(j, "", "status"), "status"));
  ep.record.reason = reason_from(as<std::string>(member(j, "", "reason"), "reason"));
  ep.record.discounted_return = as<double>(member(j, "", "return"), "return");
  ep.record.initial_targets = j.value("initial_targets", 0);
  ep.record.filled_targets = j.value("filled_targets", 0);
  return ep;
}

SceneState replay_episode(const EpisodeFile& ep) {
  SceneState state = initial_state(ep.scene);
  for (const auto& a : ep.record.actions) {
    if (!state.running()) throw InvalidState("episode continues after it finished");
    apply_step(state, a, ep.env);
  }
  return state;
}

}  // namespace blockasm
