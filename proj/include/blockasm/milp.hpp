#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "blockasm/blocks.hpp"
#include "blockasm/grid.hpp"

namespace blockasm {

using Inventory = std::map<std::string, int>;

/// One admissible pose of one block type: a binary decision variable.
struct Column {
  Placement placement;
  std::vector<Cell> footprint;
  std::vector<std::size_t> cells;  // flattened footprint
  int value = 0;                   // sum of weights over the footprint
  int target_cells = 0;            // footprint cells with weight +1
};

/// Select columns maximizing total value with pairwise disjoint footprints
/// and at most inventory[type] columns per type.
struct PackingModel {
  GridSpec spec;
  std::vector<Column> columns;
  Inventory inventory;
  std::vector<double> weights;

  int available(const std::string& type_id) const;
};

struct MilpSolution {
  std::vector<int> chosen;  // ascending column indices
  double objective = 0.0;
  bool optimal = false;
  std::uint64_t nodes = 0;
};

inline constexpr std::uint64_t kDefaultNodeBudget = 5'000'000;
inline constexpr std::size_t kBruteForceMaxColumns = 22;

/// Cells in neither the target nor the non-target set count as occupied;
/// columns touching them are dropped.
PackingModel build_model(const BlockCatalog& catalog, const Inventory& inventory, const TargetSpec& tspec,
                         const GridSpec& spec);

/// Exact depth-first branch-and-bound. Among optimal solutions returns the one
/// with the fewest columns, then the lexicographically smallest index set.
MilpSolution solve(const PackingModel& model, std::uint64_t node_budget = kDefaultNodeBudget);

/// Exhaustive enumeration with the same tie-breaking as solve. Test oracle.
MilpSolution brute_force(const PackingModel& model);

/// Value of `chosen` plus the number of open target cells still coverable by
/// a usable column of `frontier` (disjoint from chosen, inventory left).
double upper_bound(const PackingModel& model, std::span<const int> chosen, std::span<const int> frontier);

std::vector<Placement> solution_poses(const MilpSolution& sol, const PackingModel& model);

bool is_feasible(const PackingModel& model, std::span<const int> chosen);

/// CPLEX-LP style text, one constraint per line.
void write_lp(const PackingModel& model, std::ostream& os);

}  // namespace blockasm
