#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "blockasm/grid.hpp"

namespace blockasm {

/// A polycube: a face-connected set of unit offsets, stored sorted and
/// normalized so the component-wise minimum is (0,0,0).
class BlockType {
 public:
  BlockType() = default;
  BlockType(std::string type_id, std::vector<Cell> offsets);

  const std::string& id() const { return id_; }
  const std::vector<Cell>& offsets() const { return offsets_; }
  std::size_t unit_count() const { return offsets_.size(); }

  friend bool operator==(const BlockType&, const BlockType&) = default;

 private:
  std::string id_;
  std::vector<Cell> offsets_;
};

class BlockCatalog {
 public:
  void add(BlockType type);
  const BlockType& at(const std::string& type_id) const;
  bool contains(const std::string& type_id) const { return types_.contains(type_id); }
  std::size_t size() const { return types_.size(); }
  std::vector<std::string> ids() const;

  auto begin() const { return types_.begin(); }
  auto end() const { return types_.end(); }

  friend bool operator==(const BlockCatalog&, const BlockCatalog&) = default;

 private:
  std::map<std::string, BlockType> types_;
};

/// cube, bar2, bar3, ltromino, square, s4. The planar shapes lie in the xz-plane.
BlockCatalog default_catalog();

/// Quarter turns about the upward z-axis.
class Rotation {
 public:
  constexpr Rotation() = default;
  explicit Rotation(int quarter_turns);

  constexpr int quarter_turns() const { return q_; }
  Rotation operator+(Rotation other) const { return Rotation((q_ + other.q_) % 4); }

  friend constexpr auto operator<=>(const Rotation&, const Rotation&) = default;

 private:
  int q_ = 0;
};

struct Placement {
  std::string type_id;
  Rotation rotation;
  Cell anchor;  // receives the rotated block's normalized (0,0,0) unit

  friend auto operator<=>(const Placement&, const Placement&) = default;
};

/// A concrete block in the scene; unit_positions are world coordinates, one
/// per type offset in the type's offset order.
struct BlockInstance {
  int instance_id = 0;
  std::string type_id;
  std::vector<Vec3> unit_positions;
  bool placed = false;

  friend bool operator==(const BlockInstance&, const BlockInstance&) = default;
};

/// Rotates a single offset about the z-axis without renormalizing.
Cell rotate_unit(const Cell& offset, Rotation rotation);

/// Rotated, renormalized and sorted offsets.
std::vector<Cell> rotate_offsets(std::span<const Cell> offsets, Rotation rotation);

/// Rotated offsets in the original unit order, shifted so the minimum is (0,0,0).
std::vector<Cell> rotate_offsets_ordered(std::span<const Cell> offsets, Rotation rotation);

/// Sorted cells covered by a placement. Throws OutOfBounds when any cell
/// leaves the grid.
std::vector<Cell> footprint(const Placement& p, const BlockCatalog& catalog, const GridSpec& spec);

/// Every in-bounds (rotation, anchor) pair with a distinct footprint,
/// rotation-major then by flattened anchor.
std::vector<Placement> enumerate_placements(const std::string& type_id, const BlockCatalog& catalog,
                                            const GridSpec& spec);

std::vector<int> placement_vector(const Placement& p, const BlockCatalog& catalog, const GridSpec& spec);

/// Builds an instance whose rotated block has its minimum corner at `corner`.
BlockInstance make_instance(int instance_id, const BlockType& type, Rotation rotation, const Vec3& corner,
                            double cell_size);

bool face_connected(std::span<const Cell> cells);

}  // namespace blockasm
