#include "blockasm/grid.hpp"

#include <cmath>

#include "blockasm/error.hpp"

namespace blockasm {

std::string to_string(const Cell& c) {
  return "(" + std::to_string(c.dx) + "," + std::to_string(c.dy) + "," + std::to_string(c.dz) + ")";
}

GridSpec::GridSpec(int nx, int ny, int nz, double cell_size, Vec3 origin)
    : nx_(nx), ny_(ny), nz_(nz), cell_size_(cell_size), origin_(origin) {
  if (nx < 1 || ny < 1 || nz < 1) throw ConfigError("grid dimensions must be positive");
  if (!(cell_size > 0.0)) throw ConfigError("cell_size must be positive");
}

bool GridSpec::contains(const Cell& c) const {
  return c.dx >= 0 && c.dx < nx_ && c.dy >= 0 && c.dy < ny_ && c.dz >= 0 && c.dz < nz_;
}

Vec3 GridSpec::center(const Cell& c) const {
  return {origin_.x + c.dx * cell_size_, origin_.y + c.dy * cell_size_, origin_.z + c.dz * cell_size_};
}

std::optional<Cell> GridSpec::cell_at(const Vec3& p) const {
  const double fx = (p.x - origin_.x) / cell_size_;
  const double fy = (p.y - origin_.y) / cell_size_;
  const double fz = (p.z - origin_.z) / cell_size_;
  Cell c{static_cast<int>(std::lround(fx)), static_cast<int>(std::lround(fy)),
         static_cast<int>(std::lround(fz))};
  if (std::abs(fx - c.dx) > 0.5 || std::abs(fy - c.dy) > 0.5 || std::abs(fz - c.dz) > 0.5) return std::nullopt;
  if (!contains(c)) return std::nullopt;
  return c;
}

std::vector<Cell> GridSpec::cells() const {
  std::vector<Cell> out;
  out.reserve(size());
  for (int z = 0; z < nz_; ++z)
    for (int y = 0; y < ny_; ++y)
      for (int x = 0; x < nx_; ++x) out.push_back({x, y, z});
  return out;
}

std::size_t flatten(const Cell& cell, const GridSpec& spec) {
  if (!spec.contains(cell)) throw InvalidCell("cell " + to_string(cell) + " outside grid");
  return static_cast<std::size_t>(cell.dx) + static_cast<std::size_t>(cell.dy) * spec.nx() +
         static_cast<std::size_t>(cell.dz) * spec.nx() * spec.ny();
}

Cell unflatten(std::size_t index, const GridSpec& spec) {
  if (index >= spec.size()) throw InvalidCell("index " + std::to_string(index) + " outside grid");
  const auto plane = static_cast<std::size_t>(spec.nx()) * spec.ny();
  const auto z = index / plane;
  const auto rem = index % plane;
  return {static_cast<int>(rem % spec.nx()), static_cast<int>(rem / spec.nx()), static_cast<int>(z)};
}

std::vector<double> weight_vector(const TargetSpec& tspec, const GridSpec& spec) {
  std::vector<double> c(spec.size(), 0.0);
  for (const auto& cell : tspec.targets) c[flatten(cell, spec)] = 1.0;
  for (const auto& cell : tspec.nontargets) c[flatten(cell, spec)] = -1.0;
  return c;
}

TargetSpec classify(const GridSpec& spec, const std::function<bool(const Vec3&)>& inside) {
  TargetSpec out;
  for (const auto& cell : spec.cells()) {
    if (inside(spec.center(cell)))
      out.targets.insert(cell);
    else
      out.nontargets.insert(cell);
  }
  return out;
}

TargetSpec targets_with_complement(const GridSpec& spec, const CellSet& targets) {
  TargetSpec out;
  for (const auto& cell : targets) {
    if (!spec.contains(cell)) throw InvalidCell("target " + to_string(cell) + " outside grid");
  }
  out.targets = targets;
  for (const auto& cell : spec.cells())
    if (!targets.contains(cell)) out.nontargets.insert(cell);
  return out;
}

bool is_partition(const TargetSpec& tspec, const GridSpec& spec) {
  std::size_t covered = 0;
  for (const auto& c : tspec.targets) {
    if (!spec.contains(c) || tspec.nontargets.contains(c)) return false;
    ++covered;
  }
  for (const auto& c : tspec.nontargets) {
    if (!spec.contains(c)) return false;
    ++covered;
  }
  return covered == spec.size();
}

}  // namespace blockasm
