#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "blockasm/book.hpp"
#include "blockasm/env.hpp"
#include "blockasm/error.hpp"
#include "support.hpp"

using namespace blockasm;
using testing::make_state;
using testing::sorted;
using testing::random_action;
using testing::random_state;
using testing::Staging;

namespace {

const EnvConfig kFull = [] {
  EnvConfig c;
  c.stability = StabilityRule::full_support;
  return c;
}();

const EnvConfig kProxy = [] {
  EnvConfig c;
  c.feasibility = Feasibility::topdown_proxy;
  return c;
}();

Action place(int id, int unit, Cell c, int rot = 0) { return Action::place(id, unit, c, Rotation(rot)); }

// Quarter turn counter-clockwise about +z, applied q times.
Cell turn(Cell c, int q) {
  for (int i = 0; i < q; ++i) c = {-c.dy, c.dx, c.dz};
  return c;
}

// Destination cells computed from the instance's unit positions alone.
std::vector<Cell> expected_cells(const SceneState& s, const Action& a) {
  const auto& inst = s.instance(a.instance_id());
  const double cs = s.spec().cell_size();
  const Vec3 p = inst.unit_positions[a.unit_index()];
  std::vector<Cell> out;
  for (const auto& u : inst.unit_positions) {
    const Cell rel{int(std::lround((u.x - p.x) / cs)), int(std::lround((u.y - p.y) / cs)),
                   int(std::lround((u.z - p.z) / cs))};
    out.push_back(a.cell() + turn(rel, a.rotation().quarter_turns()));
  }
  return sorted(out);
}

}  // namespace

TEST_CASE("default configuration constants") {
  const EnvConfig c;
  CHECK(c.gamma == 0.999);
  CHECK(c.reward_scale == 0.2);
  CHECK(c.failure_reward == -1.0);
  CHECK(c.completion_bonus == 1.0);
  CHECK(c.feasibility == Feasibility::none);
}

TEST_CASE("action space size examples") {
  // Five targets, three non-targets, two bars staged (four units).
  const GridSpec g(8, 1, 1);
  const auto s = make_state(g, {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}, {4, 0, 0}},
                            {{0, "bar2", 0, {0, -2, 0}}, {1, "bar2", 0, {4, -2, 0}}});
  CHECK(s.staged_unit_count() == 4);
  CHECK(s.num_open_targets() == 5);
  CHECK(s.num_open_nontargets() == 3);
  CHECK(action_space_size(s) == 129);

  CHECK(action_space_size(make_state(g, {{0, 0, 0}}, {})) == 1);
  CHECK(action_space_size(make_state(GridSpec(1, 1, 1), {{0, 0, 0}}, {{0, "cube", 0, {0, -2, 0}}})) == 5);
}

TEST_CASE("action space size matches the formula on random states") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto s = random_state(rng);
    const long long nu = s.staged_unit_count();
    CHECK(action_space_size(s) == nu * (s.num_open_targets() + s.num_open_nontargets()) * 4 + 1);
  }
}

TEST_CASE("resolve_block_placement examples") {
  const GridSpec g(3, 1, 3);
  const auto s = make_state(g, {}, {{0, "bar2", 0, {0, -2, 0}}, {1, "cube", 0, {4, -2, 0}}});
  CHECK(resolve_block_placement(s, place(0, 0, {1, 0, 0})).footprint == sorted({{1, 0, 0}, {2, 0, 0}}));
  CHECK(resolve_block_placement(s, place(0, 1, {1, 0, 0})).footprint == sorted({{0, 0, 0}, {1, 0, 0}}));
  for (int r = 0; r < 4; ++r) {
    const auto res = resolve_block_placement(s, place(1, 0, {0, 0, 2}, r));
    CHECK(res.footprint == std::vector<Cell>{{0, 0, 2}});
    CHECK(res.placement.type_id == "cube");
  }
  CHECK_THROWS_AS(resolve_block_placement(s, place(0, 0, {2, 0, 0})), OutOfBounds);
  CHECK_THROWS_AS(resolve_block_placement(s, place(0, 2, {0, 0, 0})), InvalidAction);
  CHECK_THROWS_AS(resolve_block_placement(s, Action::terminate()), InvalidAction);
  CHECK_THROWS_AS(resolve_block_placement(s, place(9, 0, {0, 0, 0})), std::exception);
}

TEST_CASE("resolved placements agree with pivot rotation on random actions") {
  std::mt19937_64 rng(2);
  int resolved = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto s = random_state(rng);
    const auto a = random_action(s, rng);
    if (a.is_terminate()) continue;
    const auto want = expected_cells(s, a);
    const bool inside = std::all_of(want.begin(), want.end(), [&](const Cell& c) { return s.spec().contains(c); });
    if (!inside) {
      CHECK_THROWS_AS(resolve_block_placement(s, a), OutOfBounds);
      continue;
    }
    const auto res = resolve_block_placement(s, a);
    CHECK(res.footprint == want);
    CHECK(sorted(footprint(res.placement, s.catalog(), s.spec())) == want);
    ++resolved;
  }
  CHECK(resolved > 100);
}

TEST_CASE("full support stability examples") {
  const GridSpec g(3, 1, 3);
  auto s = make_state(g, {}, {});
  const std::vector<Cell> ground{{0, 0, 0}, {1, 0, 0}};
  const std::vector<Cell> lifted{{0, 0, 1}};
  CHECK(stability_check(s, ground, StabilityRule::full_support));
  CHECK_FALSE(stability_check(s, lifted, StabilityRule::full_support));
  s.mark_occupied({0, 0, 0});
  CHECK(stability_check(s, lifted, StabilityRule::full_support));
  // A vertical bar supports its own upper unit.
  const std::vector<Cell> column{{1, 0, 0}, {1, 0, 1}};
  CHECK(stability_check(s, column, StabilityRule::full_support));
}

TEST_CASE("support polygon accepts balanced overhangs only") {
  const GridSpec g(3, 1, 3);
  auto s = make_state(g, {}, {});
  s.mark_occupied({1, 0, 0});
  const std::vector<Cell> bar3{{0, 0, 1}, {1, 0, 1}, {2, 0, 1}};
  CHECK(stability_check(s, bar3, StabilityRule::support_polygon));
  CHECK_FALSE(stability_check(s, bar3, StabilityRule::full_support));
  // Centre of mass on the edge of the support is not enough.
  const std::vector<Cell> bar2{{1, 0, 1}, {2, 0, 1}};
  CHECK_FALSE(stability_check(s, bar2, StabilityRule::support_polygon));
  const std::vector<Cell> floating{{0, 0, 2}};
  CHECK_FALSE(stability_check(s, floating, StabilityRule::support_polygon));
}

TEST_CASE("full support implies support polygon") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 3000; ++i) {
    const auto s = random_state(rng);
    const auto a = random_action(s, rng);
    if (a.is_terminate()) continue;
    std::vector<Cell> fp;
    try {
      fp = resolve_block_placement(s, a).footprint;
    } catch (const OutOfBounds&) {
      continue;
    }
    if (stability_check(s, fp, StabilityRule::full_support))
      CHECK(stability_check(s, fp, StabilityRule::support_polygon));
  }
}

TEST_CASE("top-down proxy examples") {
  const GridSpec g(3, 1, 3);
  {
    const auto s = make_state(g, {}, {{0, "cube", 0, {0, -2, 0}}});
    const std::vector<Cell> fp{{0, 0, 0}};
    CHECK(feasibility_check(s, s.instance(0), fp, Feasibility::topdown_proxy) == ProxyResult::ok);
  }
  {
    auto s = make_state(g, {}, {{0, "cube", 0, {0, -2, 0}}});
    s.mark_occupied({1, 0, 2});
    const std::vector<Cell> fp{{1, 0, 0}};
    CHECK(feasibility_check(s, s.instance(0), fp, Feasibility::topdown_proxy) == ProxyResult::fail_place);
    CHECK(feasibility_check(s, s.instance(0), fp, Feasibility::none) == ProxyResult::ok);
  }
  {
    const auto s = make_state(g, {}, {{0, "cube", 0, {0, -2, 0}}, {1, "cube", 0, {0, -2, 1}}});
    const std::vector<Cell> fp{{0, 0, 0}};
    CHECK(feasibility_check(s, s.instance(0), fp, Feasibility::topdown_proxy) == ProxyResult::fail_grasp);
    CHECK(feasibility_check(s, s.instance(1), fp, Feasibility::topdown_proxy) == ProxyResult::ok);
    // Diagonal neighbour one cell away still blocks; two cells away does not.
    const auto d = make_state(g, {}, {{0, "cube", 0, {0, -2, 0}}, {1, "cube", 0, {1, -3, 1}}});
    CHECK(feasibility_check(d, d.instance(0), fp, Feasibility::topdown_proxy) == ProxyResult::fail_grasp);
    const auto f = make_state(g, {}, {{0, "cube", 0, {0, -2, 0}}, {1, "cube", 0, {2, -2, 1}}});
    CHECK(feasibility_check(f, f.instance(0), fp, Feasibility::topdown_proxy) == ProxyResult::ok);
  }
  {
    // Only one unit of the grasped block needs a clear column.
    const auto s = make_state(g, {}, {{0, "bar3", 0, {0, -2, 0}}, {1, "cube", 0, {0, -2, 1}}});
    const std::vector<Cell> fp{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
    CHECK(feasibility_check(s, s.instance(0), fp, Feasibility::topdown_proxy) == ProxyResult::ok);
    const auto t = make_state(g, {}, {{0, "bar2", 0, {0, -2, 0}}, {1, "cube", 0, {0, -2, 1}}});
    const std::vector<Cell> fp2{{0, 0, 0}, {1, 0, 0}};
    CHECK(feasibility_check(t, t.instance(0), fp2, Feasibility::topdown_proxy) == ProxyResult::fail_grasp);
  }
}

TEST_CASE("proxy failures end the episode with their reason") {
  const GridSpec g(3, 1, 3);
  {
    auto s = make_state(g, {{0, 0, 0}}, {{0, "cube", 0, {0, -2, 0}}, {1, "cube", 0, {0, -2, 1}}});
    const auto out = apply_step(s, place(0, 0, {0, 0, 0}), kProxy);
    CHECK(out.reward == -1.0);
    CHECK(out.reason == Reason::fail_grasp);
    CHECK(s.status() == Status::done_failed);
  }
  {
    auto s = make_state(g, {{0, 0, 0}}, {{0, "cube", 0, {0, -2, 0}}});
    s.mark_occupied({0, 0, 1});
    const auto out = apply_step(s, place(0, 0, {0, 0, 0}), kProxy);
    CHECK(out.reason == Reason::fail_place);
    CHECK(s.reason() == Reason::fail_place);
  }
}

TEST_CASE("step reward examples") {
  const GridSpec g(4, 1, 2);
  SUBCASE("two targets") {
    auto s = make_state(g, {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}}, {{0, "bar2", 0, {0, -2, 0}}, {1, "cube", 0, {6, -2, 0}}});
    const auto out = apply_step(s, place(0, 0, {0, 0, 0}), EnvConfig{});
    CHECK(out.reward == doctest::Approx(0.4).epsilon(1e-15));
    CHECK_FALSE(out.done);
    CHECK(s.num_open_targets() == 1);
  }
  SUBCASE("one target one non-target") {
    auto s = make_state(g, {{0, 0, 0}, {2, 0, 0}}, {{0, "bar2", 0, {0, -2, 0}}, {1, "cube", 0, {6, -2, 0}}});
    const auto out = apply_step(s, place(0, 0, {0, 0, 0}), EnvConfig{});
    CHECK(out.reward == 0.0);
    CHECK_FALSE(out.done);
  }
  SUBCASE("last three targets") {
    auto s = make_state(g, {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}}, {{0, "bar3", 0, {0, -2, 0}}, {1, "cube", 0, {6, -2, 0}}});
    const auto out = apply_step(s, place(0, 0, {0, 0, 0}), EnvConfig{});
    CHECK(out.reward == doctest::Approx(1.6).epsilon(1e-15));
    CHECK(out.done);
    CHECK(s.status() == Status::done_success);
    CHECK(out.reason == Reason::success);
  }
  SUBCASE("unstable") {
    auto s = make_state(g, {{0, 0, 1}}, {{0, "cube", 0, {0, -2, 0}}});
    const auto out = apply_step(s, place(0, 0, {0, 0, 1}), EnvConfig{});
    CHECK(out.reward == -1.0);
    CHECK(out.done);
    CHECK(s.status() == Status::done_failed);
    CHECK(out.reason == Reason::unstable);
  }
  SUBCASE("overlap and out of bounds") {
    auto s = make_state(g, {{0, 0, 0}}, {{0, "cube", 0, {0, -2, 0}}});
    s.mark_occupied({3, 0, 0});
    auto o = s;
    CHECK(apply_step(o, place(0, 0, {3, 0, 0}), EnvConfig{}).reason == Reason::overlap);
    auto b = make_state(g, {{0, 0, 0}}, {{0, "bar2", 0, {0, -2, 0}}});
    const auto out = apply_step(b, place(0, 0, {3, 0, 0}), EnvConfig{});
    CHECK(out.reason == Reason::out_of_bounds);
    CHECK(out.reward == -1.0);
  }
  SUBCASE("terminate") {
    auto s = make_state(g, {{0, 0, 0}}, {{0, "cube", 0, {0, -2, 0}}});
    const auto out = apply_step(s, Action::terminate(), EnvConfig{});
    CHECK(out.reward == 0.0);
    CHECK(out.done);
    CHECK(s.status() == Status::done_terminated);
  }
  SUBCASE("exhausted") {
    auto s = make_state(g, {{0, 0, 0}, {1, 0, 0}}, {{0, "cube", 0, {0, -2, 0}}});
    const auto out = apply_step(s, place(0, 0, {0, 0, 0}), EnvConfig{});
    CHECK(out.done);
    CHECK(s.status() == Status::done_exhausted);
    CHECK(out.reward == doctest::Approx(0.2).epsilon(1e-15));
  }
  SUBCASE("placing an already placed block") {
    auto s = make_state(g, {{0, 0, 0}, {1, 0, 0}}, {{0, "cube", 0, {0, -2, 0}}, {1, "cube", 0, {2, -2, 0}}});
    apply_step(s, place(0, 0, {0, 0, 0}), EnvConfig{});
    const auto out = apply_step(s, place(0, 0, {1, 0, 0}), EnvConfig{});
    CHECK(out.reason == Reason::block_unavailable);
    CHECK(out.reward == -1.0);
  }
}

TEST_CASE("acting on a finished episode is an error") {
  auto s = make_state(GridSpec(2, 1, 1), {{0, 0, 0}}, {{0, "cube", 0, {0, -2, 0}}});
  apply_step(s, Action::terminate(), EnvConfig{});
  CHECK_THROWS_AS(apply_step(s, Action::terminate(), EnvConfig{}), InvalidState);
  CHECK_THROWS_AS(step(s, place(0, 0, {0, 0, 0}), EnvConfig{}), InvalidState);
}

TEST_CASE("malformed actions are rejected") {
  auto s = make_state(GridSpec(2, 1, 1), {{0, 0, 0}}, {{0, "cube", 0, {0, -2, 0}}});
  CHECK_THROWS_AS(apply_step(s, place(0, 0, {5, 0, 0}), EnvConfig{}), InvalidAction);
  CHECK_THROWS_AS(apply_step(s, place(0, 3, {0, 0, 0}), EnvConfig{}), InvalidAction);
  CHECK(s.running());
}

TEST_CASE("legal mask examples") {
  const GridSpec g(3, 1, 2);
  auto s = make_state(g, {{0, 0, 0}, {1, 0, 0}}, {{0, "bar2", 0, {0, -2, 0}}, {1, "bar2", 1, {4, -2, 0}}});
  CHECK(legal_mask(s, ActionBook{}) == std::vector<Action>{Action::terminate()});

  const std::vector<Placement> goal{{"bar2", Rotation(0), {0, 0, 0}}};
  auto book = expand_book(goal, s);
  const auto mask = legal_mask(s, book);
  // Two units times two symmetric rotations per block.
  CHECK(mask.size() == 1 + 2 * 4);
  CHECK(mask.back() == Action::terminate());

  const auto res = resolve_block_placement(s, mask.front());
  apply_step(s, mask.front(), EnvConfig{});
  update_book(book, mask.front().instance_id(), res.footprint);
  CHECK(legal_mask(s, book) == std::vector<Action>{Action::terminate()});
}

TEST_CASE("reward telescoping over random rollouts") {
  std::mt19937_64 rng(7);
  for (int ep = 0; ep < 1000; ++ep) {
    auto s = random_state(rng);
    const int f0 = s.num_open_targets();
    const int e0 = s.num_open_nontargets();
    long long units = 0;
    double dyadic_sum = 0.0;
    EnvConfig dyadic;
    dyadic.reward_scale = 0.25;
    bool failed = false;
    while (s.running()) {
      const int f = s.num_open_targets();
      const int e = s.num_open_nontargets();
      const auto a = random_action(s, rng);
      auto copy = s;
      const auto out = apply_step(s, a, EnvConfig{});
      const auto twin = apply_step(copy, a, dyadic);
      if (s.status() == Status::done_failed) {
        CHECK(out.reward == -1.0);
        failed = true;
        break;
      }
      const int k = (f - s.num_open_targets()) + (s.num_open_nontargets() - e);
      const double bonus = s.status() == Status::done_success ? 1.0 : 0.0;
      CHECK(out.reward == 0.2 * k + bonus);
      units += k;
      dyadic_sum += twin.reward - bonus;
    }
    if (failed) continue;
    const long long telescoped = (f0 - s.num_open_targets()) + (s.num_open_nontargets() - e0);
    CHECK(units == telescoped);
    // Multiples of 1/4 add without rounding.
    CHECK(dyadic_sum == 0.25 * double(telescoped));
  }
}

TEST_CASE("occupancy is monotone and transitions are deterministic") {
  std::mt19937_64 rng(11);
  for (int ep = 0; ep < 300; ++ep) {
    auto s = random_state(rng);
    while (s.running()) {
      const auto a = random_action(s, rng);
      const auto [n1, o1] = step(s, a, EnvConfig{});
      const auto [n2, o2] = step(s, a, EnvConfig{});
      CHECK(o1.reward == o2.reward);
      CHECK(o1.done == o2.done);
      CHECK(n1.placed_units() == n2.placed_units());
      CHECK(n1.open_targets() == n2.open_targets());
      CHECK(n1.status() == n2.status());
      CHECK(o1.done == !n1.running());

      const auto t0 = sorted(s.open_targets());
      const auto e0 = sorted(s.open_nontargets());
      const auto t1 = sorted(n1.open_targets());
      const auto e1 = sorted(n1.open_nontargets());
      CHECK(std::includes(t0.begin(), t0.end(), t1.begin(), t1.end()));
      CHECK(std::includes(e0.begin(), e0.end(), e1.begin(), e1.end()));
      CHECK(n1.placed_units().size() >= s.placed_units().size());
      CHECK(std::equal(s.placed_units().begin(), s.placed_units().end(), n1.placed_units().begin()));
      // Open and occupied sets stay disjoint.
      for (const auto& c : t1) CHECK_FALSE(n1.occupied(c));
      s = n1;
    }
  }
}

TEST_CASE("actions outside the book never succeed on invalid geometry") {
  std::mt19937_64 rng(13);
  int failures = 0;
  int successes = 0;
  for (int ep = 0; ep < 2000; ++ep) {
    auto s = random_state(rng);
    if (s.instances().empty()) continue;
    const auto a = random_action(s, rng);
    if (a.is_terminate()) continue;
    // Independent verdict under the full support rule.
    const auto cells = expected_cells(s, a);
    bool valid = std::all_of(cells.begin(), cells.end(), [&](const Cell& c) { return s.spec().contains(c); });
    if (valid) {
      std::set<Cell> own(cells.begin(), cells.end());
      for (const auto& c : cells) {
        valid = valid && !s.occupied(c);
        if (c.dz > 0) {
          const Cell below{c.dx, c.dy, c.dz - 1};
          valid = valid && (own.contains(below) || s.occupied(below));
        }
      }
    }
    const auto out = apply_step(s, a, kFull);
    if (valid) {
      CHECK(s.status() != Status::done_failed);
      CHECK(testing::placed_cells(s, a.instance_id()) == cells);
      ++successes;
    } else {
      CHECK(s.status() == Status::done_failed);
      CHECK(out.reward == -1.0);
      ++failures;
    }
  }
  CHECK(failures > 100);
  CHECK(successes > 100);
}

TEST_CASE("step leaves the input state untouched") {
  const auto s = make_state(GridSpec(3, 1, 1), {{0, 0, 0}, {1, 0, 0}}, {{0, "bar2", 0, {0, -2, 0}}});
  const auto [next, out] = step(s, place(0, 0, {0, 0, 0}), EnvConfig{});
  CHECK(s.running());
  CHECK(s.placed_units().empty());
  CHECK(next.status() == Status::done_success);
  CHECK(out.reward == doctest::Approx(1.4).epsilon(1e-15));
}
