#pragma once

#include <compare>
#include <cstddef>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace blockasm {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend bool operator==(const Vec3&, const Vec3&) = default;
};

// Integer grid coordinate. Also used for block unit offsets.
struct Cell {
  int dx = 0;
  int dy = 0;
  int dz = 0;

  friend auto operator<=>(const Cell&, const Cell&) = default;
  friend Cell operator+(Cell a, Cell b) { return {a.dx + b.dx, a.dy + b.dy, a.dz + b.dz}; }
  friend Cell operator-(Cell a, Cell b) { return {a.dx - b.dx, a.dy - b.dy, a.dz - b.dz}; }
};

std::string to_string(const Cell& c);

using CellSet = std::set<Cell>;

/// Voxelized building volume. Cell (0,0,0) is centred at `origin`; cell
/// centres are spaced `cell_size` apart along each axis.
class GridSpec {
 public:
  GridSpec() = default;
  GridSpec(int nx, int ny, int nz, double cell_size = 1.0, Vec3 origin = {});

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  int nz() const { return nz_; }
  double cell_size() const { return cell_size_; }
  const Vec3& origin() const { return origin_; }
  std::size_t size() const { return static_cast<std::size_t>(nx_) * ny_ * nz_; }

  bool contains(const Cell& c) const;
  Vec3 center(const Cell& c) const;

  /// Nearest cell to a world point, if the point lies within half a cell of
  /// that cell's centre on every axis.
  std::optional<Cell> cell_at(const Vec3& p) const;

  /// All cells in flattened order.
  std::vector<Cell> cells() const;

  friend bool operator==(const GridSpec&, const GridSpec&) = default;

 private:
  int nx_ = 1;
  int ny_ = 1;
  int nz_ = 1;
  double cell_size_ = 1.0;
  Vec3 origin_{};
};

/// Target (should be filled) and non-target (should stay empty) cells.
struct TargetSpec {
  CellSet targets;
  CellSet nontargets;

  friend bool operator==(const TargetSpec&, const TargetSpec&) = default;
};

/// j = dx + dy*nx + dz*nx*ny. Throws InvalidCell outside the grid.
std::size_t flatten(const Cell& cell, const GridSpec& spec);
Cell unflatten(std::size_t index, const GridSpec& spec);

/// +1 for targets, -1 for non-targets, 0 for cells in neither set.
std::vector<double> weight_vector(const TargetSpec& tspec, const GridSpec& spec);

TargetSpec classify(const GridSpec& spec, const std::function<bool(const Vec3&)>& inside);

/// Targets only; every other grid cell becomes a non-target.
TargetSpec targets_with_complement(const GridSpec& spec, const CellSet& targets);

bool is_partition(const TargetSpec& tspec, const GridSpec& spec);

}  // namespace blockasm
