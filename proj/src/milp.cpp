#include "blockasm/milp.hpp"

#include <algorithm>
#include <bit>
#include <numeric>
#include <ostream>

#include "blockasm/error.hpp"

namespace blockasm {

namespace {

class CellBits {
 public:
  explicit CellBits(std::size_t n = 0) : words_((n + 63) / 64, 0) {}

  void set(std::size_t i) { words_[i / 64] |= std::uint64_t{1} << (i % 64); }
  bool intersects(const CellBits& o) const {
    for (std::size_t i = 0; i < words_.size(); ++i)
      if (words_[i] & o.words_[i]) return true;
    return false;
  }
  void merge(const CellBits& o) {
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] |= o.words_[i];
  }
  void remove(const CellBits& o) {
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] &= ~o.words_[i];
  }
  int count() const {
    int n = 0;
    for (auto w : words_) n += std::popcount(w);
    return n;
  }
  void clear() { std::fill(words_.begin(), words_.end(), 0); }

 private:
  std::vector<std::uint64_t> words_;
};

// Columns that can appear in an optimal solution: positive value and a type
// with inventory left. Everything else only lowers the objective or adds a
// column at equal objective.
struct Prepared {
  std::vector<int> index;  // model column index
  std::vector<CellBits> cells;
  std::vector<CellBits> targets;
  std::vector<int> value;
  std::vector<int> type;  // dense type slot
  std::vector<int> capacity;
};

Prepared prepare(const PackingModel& model, const std::vector<int>& order) {
  Prepared p;
  std::map<std::string, int> slot;
  for (int ci : order) {
    const auto& col = model.columns[ci];
    const int avail = model.available(col.placement.type_id);
    if (col.value <= 0 || avail <= 0) continue;
    auto [it, fresh] = slot.try_emplace(col.placement.type_id, static_cast<int>(p.capacity.size()));
    if (fresh) p.capacity.push_back(avail);
    CellBits bits(model.spec.size()), tbits(model.spec.size());
    for (auto c : col.cells) {
      bits.set(c);
      if (model.weights[c] > 0.0) tbits.set(c);
    }
    p.index.push_back(ci);
    p.cells.push_back(std::move(bits));
    p.targets.push_back(std::move(tbits));
    p.value.push_back(col.value);
    p.type.push_back(it->second);
  }
  return p;
}

struct Search {
  const Prepared& p;
  std::uint64_t budget;
  std::uint64_t nodes = 0;
  bool aborted = false;

  CellBits used;
  std::vector<int> type_used;
  std::vector<int> stack;
  int objective = 0;

  // Incumbent, or the exact key to reach in canonical mode.
  int best_obj = 0;
  int best_count = 0;
  std::vector<int> best;
  bool canonical = false;
  bool found = false;

  Search(const Prepared& prep, std::uint64_t node_budget, std::size_t ncells)
      : p(prep), budget(node_budget), used(ncells), type_used(prep.capacity.size(), 0) {}

  bool usable(std::size_t i) const {
    return type_used[p.type[i]] < p.capacity[p.type[i]] && !used.intersects(p.cells[i]);
  }

  int bound(std::size_t from, CellBits& scratch, int& max_value) const {
    scratch.clear();
    max_value = 0;
    for (std::size_t i = from; i < p.index.size(); ++i) {
      if (!usable(i)) continue;
      scratch.merge(p.targets[i]);
      max_value = std::max(max_value, p.value[i]);
    }
    return objective + scratch.count();
  }

  // Fewest additional columns needed to gain `gap` when no column is worth
  // more than max_value.
  static int columns_needed(int gap, int max_value) {
    if (gap <= 0) return 0;
    if (max_value <= 0) return 1 << 28;
    return (gap + max_value - 1) / max_value;
  }

  void run(std::size_t from) {
    if (aborted || found) return;
    if (++nodes > budget) {
      aborted = true;
      return;
    }
    const int count = static_cast<int>(stack.size());
    if (canonical) {
      if (objective == best_obj && count == best_count) {
        best = stack;
        found = true;
        return;
      }
      if (count >= best_count) return;
    } else if (objective > best_obj || (objective == best_obj && count < best_count)) {
      best_obj = objective;
      best_count = count;
      best = stack;
    }

    CellBits scratch(0);
    scratch = used;
    int max_value = 0;
    const int ub = bound(from, scratch, max_value);
    if (ub < best_obj) return;
    if (ub == best_obj || canonical) {
      if (count + columns_needed(best_obj - objective, max_value) >= best_count + (canonical ? 1 : 0)) return;
    }

    for (std::size_t i = from; i < p.index.size(); ++i) {
      if (!usable(i)) continue;
      used.merge(p.cells[i]);
      ++type_used[p.type[i]];
      objective += p.value[i];
      stack.push_back(static_cast<int>(i));
      run(i + 1);
      stack.pop_back();
      objective -= p.value[i];
      --type_used[p.type[i]];
      used.remove(p.cells[i]);
      if (aborted || found) return;
    }
  }
};

std::vector<int> to_model_indices(const Prepared& p, const std::vector<int>& local) {
  std::vector<int> out;
  out.reserve(local.size());
  for (int i : local) out.push_back(p.index[i]);
  std::sort(out.begin(), out.end());
  return out;
}

// True when (obj_a, count_a, set_a) is preferred over (obj_b, count_b, set_b).
bool preferred(int obj_a, const std::vector<int>& a, int obj_b, const std::vector<int>& b) {
  if (obj_a != obj_b) return obj_a > obj_b;
  if (a.size() != b.size()) return a.size() < b.size();
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

}  // namespace

int PackingModel::available(const std::string& type_id) const {
  auto it = inventory.find(type_id);
  return it == inventory.end() ? 0 : it->second;
}

PackingModel build_model(const BlockCatalog& catalog, const Inventory& inventory, const TargetSpec& tspec,
                         const GridSpec& spec) {
  PackingModel model;
  model.spec = spec;
  model.inventory = inventory;
  model.weights = weight_vector(tspec, spec);
  for (const auto& [type_id, count] : inventory) {
    if (count < 0) throw ConfigError("negative inventory for '" + type_id + "'");
    if (!catalog.contains(type_id)) throw ConfigError("unknown block type '" + type_id + "' in inventory");
  }
  for (const auto& [type_id, count] : inventory) {
    for (auto& placement : enumerate_placements(type_id, catalog, spec)) {
      Column col;
      col.footprint = footprint(placement, catalog, spec);
      bool blocked = false;
      for (const auto& c : col.footprint) {
        if (!tspec.targets.contains(c) && !tspec.nontargets.contains(c)) {
          blocked = true;
          break;
        }
        const auto j = flatten(c, spec);
        col.cells.push_back(j);
        col.value += static_cast<int>(model.weights[j]);
        if (model.weights[j] > 0.0) ++col.target_cells;
      }
      if (blocked) continue;
      col.placement = std::move(placement);
      model.columns.push_back(std::move(col));
    }
  }
  return model;
}

MilpSolution solve(const PackingModel& model, std::uint64_t node_budget) {
  MilpSolution sol;
  const auto ncols = static_cast<int>(model.columns.size());

  // Phase 1: find the optimal (objective, column count) key, branching on
  // strong columns first.
  std::vector<int> order(ncols);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const auto& ca = model.columns[a];
    const auto& cb = model.columns[b];
    if (ca.value != cb.value) return ca.value > cb.value;
    return ca.target_cells > cb.target_cells;
  });
  const Prepared strong = prepare(model, order);
  Search first(strong, node_budget, model.spec.size());
  first.run(0);
  sol.nodes = first.nodes;
  sol.objective = first.best_obj;
  sol.chosen = to_model_indices(strong, first.best);
  if (first.aborted) return sol;

  // Phase 2: walk subsets in lexicographic index order and stop at the first
  // one reaching that key.
  std::vector<int> by_index(ncols);
  std::iota(by_index.begin(), by_index.end(), 0);
  const Prepared lex = prepare(model, by_index);
  Search second(lex, node_budget - first.nodes, model.spec.size());
  second.canonical = true;
  second.best_obj = first.best_obj;
  second.best_count = first.best_count;
  second.run(0);
  sol.nodes += second.nodes;
  if (second.found) {
    sol.chosen = to_model_indices(lex, second.best);
    sol.optimal = true;
  }
  return sol;
}

bool is_feasible(const PackingModel& model, std::span<const int> chosen) {
  std::vector<char> used(model.spec.size(), 0);
  std::map<std::string, int> per_type;
  for (int ci : chosen) {
    if (ci < 0 || ci >= static_cast<int>(model.columns.size())) return false;
    const auto& col = model.columns[ci];
    for (auto c : col.cells) {
      if (used[c]) return false;
      used[c] = 1;
    }
    if (++per_type[col.placement.type_id] > model.available(col.placement.type_id)) return false;
  }
  return true;
}

MilpSolution brute_force(const PackingModel& model) {
  const auto n = model.columns.size();
  if (n > kBruteForceMaxColumns)
    throw ConfigError("brute_force supports at most " + std::to_string(kBruteForceMaxColumns) + " columns, got " +
                      std::to_string(n));
  MilpSolution best;
  best.optimal = true;
  std::vector<int> current;
  std::vector<char> used(model.spec.size(), 0);
  std::map<std::string, int> per_type;
  int best_obj = 0;
  int objective = 0;

  // Include/exclude over every column; only infeasible branches are cut.
  auto visit = [&](auto&& self, std::size_t i) -> void {
    ++best.nodes;
    if (i == n) {
      if (preferred(objective, current, best_obj, best.chosen)) {
        best_obj = objective;
        best.chosen = current;
      }
      return;
    }
    const auto& col = model.columns[i];
    bool fits = per_type[col.placement.type_id] < model.available(col.placement.type_id);
    for (auto c : col.cells) fits = fits && !used[c];
    if (fits) {
      for (auto c : col.cells) used[c] = 1;
      ++per_type[col.placement.type_id];
      objective += col.value;
      current.push_back(static_cast<int>(i));
      self(self, i + 1);
      current.pop_back();
      objective -= col.value;
      --per_type[col.placement.type_id];
      for (auto c : col.cells) used[c] = 0;
    }
    self(self, i + 1);
  };
  visit(visit, 0);
  best.objective = best_obj;
  return best;
}

double upper_bound(const PackingModel& model, std::span<const int> chosen, std::span<const int> frontier) {
  std::vector<char> used(model.spec.size(), 0);
  std::map<std::string, int> per_type;
  double objective = 0.0;
  for (int ci : chosen) {
    const auto& col = model.columns.at(ci);
    objective += col.value;
    for (auto c : col.cells) used[c] = 1;
    ++per_type[col.placement.type_id];
  }
  std::vector<char> coverable(model.spec.size(), 0);
  for (int ci : frontier) {
    const auto& col = model.columns.at(ci);
    if (per_type[col.placement.type_id] >= model.available(col.placement.type_id)) continue;
    if (std::any_of(col.cells.begin(), col.cells.end(), [&](auto c) { return used[c] != 0; })) continue;
    for (auto c : col.cells)
      if (model.weights[c] > 0.0) coverable[c] = 1;
  }
  return objective + std::count(coverable.begin(), coverable.end(), 1);
}

std::vector<Placement> solution_poses(const MilpSolution& sol, const PackingModel& model) {
  std::vector<Placement> out;
  for (int ci : sol.chosen) out.push_back(model.columns.at(ci).placement);
  return out;
}

void write_lp(const PackingModel& model, std::ostream& os) {
  os << "\\ packing model " << model.spec.nx() << "x" << model.spec.ny() << "x" << model.spec.nz() << ", "
     << model.columns.size() << " columns\n";
  os << "Maximize\n obj:";
  if (model.columns.empty()) os << " 0 x_none";
  for (std::size_t i = 0; i < model.columns.size(); ++i) {
    const int v = model.columns[i].value;
    os << (v < 0 ? " - " : " + ") << std::abs(v) << " x" << i;
  }
  os << "\nSubject To\n";
  std::vector<std::vector<std::size_t>> by_cell(model.spec.size());
  for (std::size_t i = 0; i < model.columns.size(); ++i)
    for (auto c : model.columns[i].cells) by_cell[c].push_back(i);
  for (std::size_t c = 0; c < by_cell.size(); ++c) {
    if (by_cell[c].size() < 2) continue;
    os << " cell_" << c << ":";
    for (std::size_t k = 0; k < by_cell[c].size(); ++k) os << (k ? " + x" : " x") << by_cell[c][k];
    os << " <= 1\n";
  }
  for (const auto& [type_id, count] : model.inventory) {
    std::vector<std::size_t> cols;
    for (std::size_t i = 0; i < model.columns.size(); ++i)
      if (model.columns[i].placement.type_id == type_id) cols.push_back(i);
    if (cols.empty()) continue;
    os << " inv_" << type_id << ":";
    for (std::size_t k = 0; k < cols.size(); ++k) os << (k ? " + x" : " x") << cols[k];
    os << " <= " << count << "\n";
  }
  os << "Binary\n";
  for (std::size_t i = 0; i < model.columns.size(); ++i) os << " x" << i << "\n";
  os << "End\n";
}

}  // namespace blockasm
