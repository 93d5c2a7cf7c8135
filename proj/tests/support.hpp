#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "blockasm/book.hpp"
#include "blockasm/env.hpp"
#include "blockasm/learner.hpp"
#include "blockasm/policy.hpp"

namespace testing {

using namespace blockasm;

struct Staging {
  int id;
  std::string type;
  int rotation;
  Vec3 corner;
};

inline std::shared_ptr<const BlockCatalog> catalog_ptr() {
  static const auto cat = std::make_shared<const BlockCatalog>(default_catalog());
  return cat;
}

/// State with `targets`, every other cell a non-target, and the listed staged blocks.
inline SceneState make_state(const GridSpec& spec, const CellSet& targets, const std::vector<Staging>& blocks,
                             std::shared_ptr<const BlockCatalog> cat = catalog_ptr()) {
  std::vector<BlockInstance> inst;
  for (const auto& b : blocks)
    inst.push_back(make_instance(b.id, cat->at(b.type), Rotation(b.rotation), b.corner, spec.cell_size()));
  return SceneState(spec, targets_with_complement(spec, targets), std::move(inst), cat);
}

inline CellSet all_cells(const GridSpec& spec) {
  const auto cells = spec.cells();
  return CellSet(cells.begin(), cells.end());
}

inline std::vector<Cell> sorted(std::vector<Cell> cells) {
  std::sort(cells.begin(), cells.end());
  return cells;
}

/// Footprint occupied by a placed instance.
inline std::vector<Cell> placed_cells(const SceneState& s, int id) {
  std::vector<Cell> out;
  for (const auto& [i, c] : s.placed_units())
    if (i == id) out.push_back(c);
  return sorted(out);
}

/// Small random grid, random targets and up to five staged blocks spread
/// along the staging row.
inline SceneState random_state(std::mt19937_64& rng) {
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  const GridSpec g(pick(1, 4), pick(1, 2), pick(1, 3));
  CellSet targets;
  for (const auto& c : g.cells())
    if (pick(0, 1)) targets.insert(c);
  const auto ids = default_catalog().ids();
  std::vector<Staging> blocks;
  const int n = pick(0, 5);
  for (int i = 0; i < n; ++i)
    blocks.push_back({i, ids[pick(0, int(ids.size()) - 1)], pick(0, 3), {double(5 * i), -6.0, 0.0}});
  return make_state(g, targets, blocks);
}

/// Terminate one time in ten, otherwise a uniformly random place action.
inline Action random_action(const SceneState& s, std::mt19937_64& rng) {
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  if (s.instances().empty() || pick(0, 9) == 0) return Action::terminate();
  const auto& inst = s.instances()[pick(0, int(s.instances().size()) - 1)];
  const auto& sp = s.spec();
  return Action::place(inst.instance_id, pick(0, int(inst.unit_positions.size()) - 1),
                       {pick(0, sp.nx() - 1), pick(0, sp.ny() - 1), pick(0, sp.nz() - 1)}, Rotation(pick(0, 3)));
}

// Claims the pose an executed book action landed on.
inline void claim(ActionBook& book, const SceneState& before, const Action& a) {
  if (a.is_terminate()) return;
  const auto r = resolve_block_placement(before, a);
  update_book(book, a.instance_id(), r.footprint);
}

inline double max_allowed_q(const QNetwork& net, const SceneState& s, const std::vector<Action>& allowed) {
  const auto g = build_graph(s);
  const auto q = net.q_values(net.encode(g), candidate_pairs(g, allowed));
  double best = -INFINITY;
  for (const auto& a : allowed) best = std::max(best, q.value_of(g, a));
  return best;
}

// One-step bootstrapped score written out from the env and book primitives.
inline double oracle_score(const SceneState& s, const ActionBook& book, const Action& a, const QNetwork& net,
                           const EnvConfig& env) {
  auto next = s;
  const auto out = apply_step(next, a, env);
  if (next.status() == Status::done_failed) return -1.0;
  if (out.done) return out.reward;
  auto nb = book;
  claim(nb, s, a);
  return out.reward + env.gamma * max_allowed_q(net, next, legal_mask(next, nb));
}

/// Every (unplaced unit, open cell) pair of a graph.
inline std::vector<CandidatePair> all_pairs(const GraphObs& g) {
  std::vector<CandidatePair> out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.roles[i].kind != NodeKind::unplaced_unit) continue;
    for (std::size_t j = 0; j < g.size(); ++j) {
      const auto k = g.roles[j].kind;
      if (k == NodeKind::target_cell || k == NodeKind::nontarget_cell) out.push_back({int(i), int(j)});
    }
  }
  return out;
}

/// Scalar probe for gradient checks: wt * Q_T + sum w(i, r) * Q(i, r).
inline double loss_of(const QNetwork& net, const GraphObs& g, const std::vector<CandidatePair>& pairs,
                      const Eigen::MatrixXd& w, double wt) {
  const auto q = net.q_values(net.encode(g), pairs);
  double s = wt * q.terminate;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    for (int r = 0; r < 4; ++r) s += w(i, r) * q.values[i][r];
  return s;
}

}  // namespace testing
