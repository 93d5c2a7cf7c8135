#include "blockasm/blocks.hpp"

#include <algorithm>
#include <queue>
#include <set>

#include "blockasm/error.hpp"

namespace blockasm {

namespace {

std::vector<Cell> normalized(std::vector<Cell> cells) {
  if (cells.empty()) return cells;
  Cell lo = cells.front();
  for (const auto& c : cells) {
    lo.dx = std::min(lo.dx, c.dx);
    lo.dy = std::min(lo.dy, c.dy);
    lo.dz = std::min(lo.dz, c.dz);
  }
  for (auto& c : cells) c = c - lo;
  return cells;
}

}  // namespace

bool face_connected(std::span<const Cell> cells) {
  if (cells.empty()) return false;
  std::set<Cell> all(cells.begin(), cells.end());
  std::set<Cell> seen{cells.front()};
  std::queue<Cell> open;
  open.push(cells.front());
  static constexpr Cell kSteps[] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  while (!open.empty()) {
    const Cell c = open.front();
    open.pop();
    for (const auto& s : kSteps) {
      const Cell n = c + s;
      if (all.contains(n) && seen.insert(n).second) open.push(n);
    }
  }
  return seen.size() == all.size();
}

BlockType::BlockType(std::string type_id, std::vector<Cell> offsets) : id_(std::move(type_id)) {
  if (id_.empty()) throw ConfigError("block type id must be non-empty");
  if (offsets.empty()) throw ConfigError("block type '" + id_ + "' has no units");
  offsets = normalized(std::move(offsets));
  std::sort(offsets.begin(), offsets.end());
  if (std::adjacent_find(offsets.begin(), offsets.end()) != offsets.end())
    throw ConfigError("block type '" + id_ + "' has duplicate units");
  if (!face_connected(offsets)) throw ConfigError("block type '" + id_ + "' is not face-connected");
  offsets_ = std::move(offsets);
}

void BlockCatalog::add(BlockType type) {
  auto id = type.id();
  types_.insert_or_assign(std::move(id), std::move(type));
}

const BlockType& BlockCatalog::at(const std::string& type_id) const {
  auto it = types_.find(type_id);
  if (it == types_.end()) throw ConfigError("unknown block type '" + type_id + "'");
  return it->second;
}

std::vector<std::string> BlockCatalog::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : types_) out.push_back(id);
  return out;
}

BlockCatalog default_catalog() {
  BlockCatalog cat;
  cat.add(BlockType("cube", {{0, 0, 0}}));
  cat.add(BlockType("bar2", {{0, 0, 0}, {1, 0, 0}}));
  cat.add(BlockType("bar3", {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}}));
  cat.add(BlockType("ltromino", {{0, 0, 0}, {1, 0, 0}, {0, 0, 1}}));
  cat.add(BlockType("square", {{0, 0, 0}, {1, 0, 0}, {0, 0, 1}, {1, 0, 1}}));
  cat.add(BlockType("s4", {{0, 0, 0}, {1, 0, 0}, {1, 0, 1}, {2, 0, 1}}));
  return cat;
}

Rotation::Rotation(int quarter_turns) : q_(quarter_turns) {
  if (quarter_turns < 0 || quarter_turns > 3) throw InvalidAction("rotation must be 0..3 quarter turns");
}

Cell rotate_unit(const Cell& offset, Rotation rotation) {
  Cell c = offset;
  for (int i = 0; i < rotation.quarter_turns(); ++i) c = {-c.dy, c.dx, c.dz};
  return c;
}

std::vector<Cell> rotate_offsets_ordered(std::span<const Cell> offsets, Rotation rotation) {
  std::vector<Cell> out;
  out.reserve(offsets.size());
  for (const auto& o : offsets) out.push_back(rotate_unit(o, rotation));
  return normalized(std::move(out));
}

std::vector<Cell> rotate_offsets(std::span<const Cell> offsets, Rotation rotation) {
  auto out = rotate_offsets_ordered(offsets, rotation);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Cell> footprint(const Placement& p, const BlockCatalog& catalog, const GridSpec& spec) {
  const auto& type = catalog.at(p.type_id);
  auto cells = rotate_offsets(type.offsets(), p.rotation);
  for (auto& c : cells) {
    c = c + p.anchor;
    if (!spec.contains(c))
      throw OutOfBounds("placement of '" + p.type_id + "' at " + to_string(p.anchor) + " leaves the grid");
  }
  return cells;
}

std::vector<Placement> enumerate_placements(const std::string& type_id, const BlockCatalog& catalog,
                                            const GridSpec& spec) {
  const auto& type = catalog.at(type_id);
  std::vector<Placement> out;
  std::set<std::vector<Cell>> seen;
  for (int q = 0; q < 4; ++q) {
    const Rotation rot(q);
    const auto shape = rotate_offsets(type.offsets(), rot);
    Cell extent{};
    for (const auto& c : shape) {
      extent.dx = std::max(extent.dx, c.dx);
      extent.dy = std::max(extent.dy, c.dy);
      extent.dz = std::max(extent.dz, c.dz);
    }
    for (const auto& anchor : spec.cells()) {
      if (!spec.contains(anchor + extent)) continue;
      std::vector<Cell> cells;
      cells.reserve(shape.size());
      for (const auto& c : shape) cells.push_back(c + anchor);
      if (seen.insert(std::move(cells)).second) out.push_back({type_id, rot, anchor});
    }
  }
  return out;
}

std::vector<int> placement_vector(const Placement& p, const BlockCatalog& catalog, const GridSpec& spec) {
  std::vector<int> v(spec.size(), 0);
  for (const auto& c : footprint(p, catalog, spec)) v[flatten(c, spec)] = 1;
  return v;
}

BlockInstance make_instance(int instance_id, const BlockType& type, Rotation rotation, const Vec3& corner,
                            double cell_size) {
  BlockInstance inst;
  inst.instance_id = instance_id;
  inst.type_id = type.id();
  for (const auto& o : rotate_offsets_ordered(type.offsets(), rotation)) {
    inst.unit_positions.push_back(
        {corner.x + o.dx * cell_size, corner.y + o.dy * cell_size, corner.z + o.dz * cell_size});
  }
  return inst;
}

}  // namespace blockasm
