#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "blockasm/book.hpp"
#include "blockasm/error.hpp"
#include "blockasm/policy.hpp"
#include "support.hpp"

using namespace blockasm;
using Eigen::MatrixXd;
using testing::all_pairs;
using testing::loss_of;
using testing::make_state;

namespace {

const NetConfig kSmall{8, 2, 6, 3};

// Straightforward loop implementation of the network, used as a reference.
struct Reference {
  const Parameters& p;

  static std::vector<double> affine_row(const std::vector<double>& x, const MatrixXd& w, const MatrixXd& b) {
    std::vector<double> out(w.rows());
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      double s = b(0, i);
      for (Eigen::Index j = 0; j < w.cols(); ++j) s += w(i, j) * x[j];
      out[i] = s;
    }
    return out;
  }
  static std::vector<double> relu(std::vector<double> v) {
    for (auto& x : v) x = std::max(0.0, x);
    return v;
  }

  std::vector<std::vector<double>> encode(const GraphObs& g) const {
    const auto n = g.size();
    const int d = p.config.dim;
    const int dk = d / p.config.heads;
    std::vector<std::vector<double>> h(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> x(kNodeFeatures);
      for (int f = 0; f < kNodeFeatures; ++f) x[f] = g.features(i, f);
      h[i] = affine_row(x, p.embed_w, p.embed_b);
    }
    const MatrixXd zero_b = MatrixXd::Zero(1, d);
    for (const auto& lp : p.layers) {
      std::vector<std::vector<double>> q(n), k(n), v(n);
      for (std::size_t i = 0; i < n; ++i) {
        q[i] = affine_row(h[i], lp.wq, zero_b);
        k[i] = affine_row(h[i], lp.wk, zero_b);
        v[i] = affine_row(h[i], lp.wv, zero_b);
      }
      std::vector<std::vector<double>> next(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> msg(d, 0.0);
        for (int head = 0; head < p.config.heads; ++head) {
          std::vector<double> w(n, 0.0);
          double total = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            if (!g.edge(i, j)) continue;
            double s = 0.0;
            for (int t = head * dk; t < (head + 1) * dk; ++t) s += q[i][t] * k[j][t];
            w[j] = std::exp(s / std::sqrt(double(dk)));
            total += w[j];
          }
          if (total == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j)
            for (int t = head * dk; t < (head + 1) * dk; ++t) msg[t] += w[j] / total * v[j][t];
        }
        std::vector<double> mid = affine_row(msg, lp.wo, zero_b);
        for (int t = 0; t < d; ++t) mid[t] += h[i][t];
        const auto ff = affine_row(relu(affine_row(mid, lp.ff1_w, lp.ff1_b)), lp.ff2_w, lp.ff2_b);
        next[i] = mid;
        for (int t = 0; t < d; ++t) next[i][t] += ff[t];
      }
      h = std::move(next);
    }
    return h;
  }

  std::array<double, 4> pair(const std::vector<double>& u, const std::vector<double>& c) const {
    std::vector<double> x = u;
    x.insert(x.end(), c.begin(), c.end());
    const auto out = affine_row(relu(affine_row(x, p.pair1_w, p.pair1_b)), p.pair2_w, p.pair2_b);
    return {out[0], out[1], out[2], out[3]};
  }

  double terminate(const std::vector<std::vector<double>>& h) const {
    std::vector<double> mean(p.config.dim, 0.0);
    for (const auto& row : h)
      for (int t = 0; t < p.config.dim; ++t) mean[t] += row[t] / double(h.size());
    return affine_row(relu(affine_row(mean, p.term1_w, p.term1_b)), p.term2_w, p.term2_b)[0];
  }
};

// A state with nodes of all four kinds.
SceneState mixed_state() {
  const GridSpec g(4, 1, 1);
  auto s = make_state(g, {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}}, {{0, "bar2", 0, {0, -2, 0}}, {1, "cube", 0, {4, -2, 0}}});
  apply_step(s, Action::place(1, 0, {2, 0, 0}, Rotation(0)), EnvConfig{});
  return s;
}

GraphObs permuted(const GraphObs& g, const std::vector<std::size_t>& perm) {
  // Node i of the result is node perm[i] of g.
  GraphObs out;
  const auto n = g.size();
  out.features.resize(g.features.rows(), g.features.cols());
  out.adjacency.assign(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    out.features.row(i) = g.features.row(perm[i]);
    out.roles.push_back(g.roles[perm[i]]);
    for (std::size_t j = 0; j < n; ++j) out.adjacency[i * n + j] = g.adjacency[perm[i] * n + perm[j]];
  }
  return out;
}

}  // namespace

TEST_CASE("graph of a staged bar and three open cells") {
  const auto s = make_state(GridSpec(3, 1, 1), {{0, 0, 0}, {1, 0, 0}}, {{0, "bar2", 0, {0, -2, 0}}});
  const auto g = build_graph(s);
  REQUIRE(g.size() == 5);
  CHECK(g.edge(0, 1));
  CHECK(g.edge(1, 0));
  CHECK(g.roles[0].kind == NodeKind::unplaced_unit);
  CHECK(g.roles[2].kind == NodeKind::target_cell);
  CHECK(g.roles[4].kind == NodeKind::nontarget_cell);
  CHECK(g.features(1, 0) == 1.0);
  CHECK(g.features(1, 1) == -2.0);
  CHECK(g.features(4, 0) == 2.0);
  for (std::size_t i = 0; i < 5; ++i) CHECK_FALSE(g.edge(i, i));
}

TEST_CASE("separate staged blocks are not connected") {
  const auto s = make_state(GridSpec(2, 1, 1), {{0, 0, 0}}, {{0, "cube", 0, {0, -2, 0}}, {1, "cube", 0, {2, -2, 0}}});
  const auto g = build_graph(s);
  const int a = g.unit_node(0, 0);
  const int b = g.unit_node(1, 0);
  REQUIRE(a >= 0);
  REQUIRE(b >= 0);
  CHECK_FALSE(g.edge(a, b));
  CHECK_FALSE(g.edge(b, a));
  CHECK(g.edge(a, g.cell_node({0, 0, 0})));
}

TEST_CASE("graph without staged blocks holds only cells") {
  const auto s = make_state(GridSpec(2, 2, 1), {{0, 0, 0}}, {});
  const auto g = build_graph(s);
  CHECK(g.size() == 4);
  for (const auto& r : g.roles) CHECK((r.kind == NodeKind::target_cell || r.kind == NodeKind::nontarget_cell));
}

TEST_CASE("node type encoding") {
  CHECK(node_type_indices(NodeKind::unplaced_unit) == std::array<double, 2>{1, 1});
  CHECK(node_type_indices(NodeKind::placed_unit) == std::array<double, 2>{1, 0});
  CHECK(node_type_indices(NodeKind::target_cell) == std::array<double, 2>{0, 1});
  CHECK(node_type_indices(NodeKind::nontarget_cell) == std::array<double, 2>{0, 0});
}

TEST_CASE("graph structure on random states") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    auto s = testing::random_state(rng);
    for (int k = 0; k < 3 && s.running(); ++k) apply_step(s, testing::random_action(s, rng), EnvConfig{});
    const auto g = build_graph(s);
    CHECK(g.size() == std::size_t(s.staged_unit_count() + int(s.placed_units().size()) + s.num_open_targets() +
                                  s.num_open_nontargets()));
    const auto n = g.size();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(g.edge(i, j) == g.edge(j, i));
        const auto& a = g.roles[i];
        const auto& b = g.roles[j];
        const bool cut = i == j || (a.kind == NodeKind::unplaced_unit && b.kind == NodeKind::unplaced_unit &&
                                    a.instance_id != b.instance_id);
        CHECK(g.edge(i, j) == !cut);
      }
    }
  }
}

TEST_CASE("encoder and heads agree with the loop reference") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const QNetwork net(kSmall, 100 + trial);
    auto s = testing::random_state(rng);
    const auto g = build_graph(s);
    if (g.size() == 0) continue;
    const Reference ref{net.params()};
    const auto want = ref.encode(g);
    const auto got = net.encode(g);
    for (std::size_t i = 0; i < g.size(); ++i)
      for (int t = 0; t < kSmall.dim; ++t) CHECK(got(i, t) == doctest::Approx(want[i][t]).epsilon(1e-12));
    const auto pairs = all_pairs(g);
    const auto q = net.q_values(got, pairs);
    CHECK(q.terminate == doctest::Approx(ref.terminate(want)).epsilon(1e-12));
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto r = ref.pair(want[pairs[i].unit_node], want[pairs[i].cell_node]);
      for (int k = 0; k < 4; ++k) CHECK(q.values[i][k] == doctest::Approx(r[k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("permuting nodes permutes embeddings and keeps the termination value") {
  const QNetwork net(NetConfig{}, 3);
  std::mt19937_64 rng(21);
  const auto g = build_graph(mixed_state());
  const auto base = net.encode(g);
  const double term = net.q_values(base, {}).terminate;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::size_t> perm(g.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto pg = permuted(g, perm);
    const auto emb = net.encode(pg);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, (emb.row(i) - base.row(perm[i])).cwiseAbs().maxCoeff());
    CHECK(worst < 1e-12);
    CHECK(std::abs(net.q_values(emb, {}).terminate - term) < 1e-12);
  }
}

TEST_CASE("zero attention weights leave only the per-node path") {
  QNetwork net(kSmall, 4);
  for (auto& lp : net.params().layers) {
    lp.wq.setZero();
    lp.wk.setZero();
    lp.wv.setZero();
    lp.wo.setZero();
  }
  const auto g = build_graph(mixed_state());
  const auto emb = net.encode(g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    GraphObs single;
    single.features = g.features.row(i);
    single.adjacency = {0};
    single.roles = {g.roles[i]};
    const auto alone = net.encode(single);
    CHECK((emb.row(i) - alone.row(0)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("single node graph") {
  const QNetwork net(kSmall, 8);
  GraphObs g;
  g.features = MatrixXd::Zero(1, kNodeFeatures);
  g.features << 1, 2, 0, 0, 1;
  g.adjacency = {0};
  g.roles = {NodeRole{}};
  const auto emb = net.encode(g);
  const Reference ref{net.params()};
  const auto want = ref.encode(g);
  const auto q = net.q_values(emb, {});
  CHECK(q.terminate == doctest::Approx(ref.terminate(want)).epsilon(1e-12));
  CHECK(q.values.empty());
}

TEST_CASE("q value examples") {
  QNetwork net(kSmall, 12);
  const auto g = build_graph(mixed_state());
  const auto emb = net.encode(g);
  const auto pairs = all_pairs(g);
  REQUIRE(pairs.size() >= 2);
  std::vector<CandidatePair> dup{pairs[0], pairs[1], pairs[0]};
  const auto q = net.q_values(emb, dup);
  CHECK(q.values[0] == q.values[2]);

  net.params().pair1_w.setZero();
  net.params().pair2_w.setZero();
  const auto z = net.q_values(emb, pairs);
  for (const auto& v : z.values)
    for (int r = 0; r < 4; ++r) CHECK(v[r] == net.params().pair2_b(0, r));

  CHECK_THROWS_AS(net.q_values(emb, std::vector<CandidatePair>{{0, 99}}), InvalidAction);
}

TEST_CASE("value lookup by action") {
  const QNetwork net(kSmall, 13);
  const auto s = mixed_state();
  const auto g = build_graph(s);
  const auto a = Action::place(0, 1, {0, 0, 0}, Rotation(2));
  const auto pairs = candidate_pairs(g, std::vector<Action>{a, Action::terminate(), a});
  REQUIRE(pairs.size() == 1);
  const auto q = net.q_values(net.encode(g), pairs);
  CHECK(q.value_of(g, a) == q.values[0][2]);
  CHECK(q.value_of(g, Action::terminate()) == q.terminate);
  CHECK(std::isinf(q.value_of(g, Action::place(0, 0, {0, 0, 0}, Rotation(0)))));
}

TEST_CASE("masked argmax examples") {
  const QNetwork net(kSmall, 14);
  const auto s = mixed_state();
  const auto g = build_graph(s);
  const auto a0 = Action::place(0, 0, {0, 0, 0}, Rotation(0));
  const auto a1 = Action::place(0, 1, {1, 0, 0}, Rotation(0));
  const std::vector<Action> acts{a0, a1, Action::terminate()};
  auto q = net.q_values(net.encode(g), candidate_pairs(g, acts));

  q.values[0][0] = 50.0;
  CHECK(mask_and_argmax(q, g, std::vector<Action>{Action::terminate()}) == Action::terminate());

  q.values[0][0] = 1.0;
  q.values[1][0] = 1.0;
  q.terminate = 0.5;
  CHECK(mask_and_argmax(q, g, acts) == a0);
  CHECK(mask_and_argmax(q, g, std::vector<Action>{a1, a0, Action::terminate()}) == a1);
  q.terminate = 1.0;
  CHECK(mask_and_argmax(q, g, acts) == a0);
  q.terminate = 2.0;
  CHECK(mask_and_argmax(q, g, acts) == Action::terminate());
  CHECK_THROWS_AS(mask_and_argmax(q, g, std::vector<Action>{}), InvalidAction);
}

TEST_CASE("masked argmax ignores values outside the allowed set") {
  const QNetwork net(kSmall, 15);
  std::mt19937_64 rng(16);
  std::normal_distribution<double> noise(0.0, 5.0);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = testing::random_state(rng);
    const auto g = build_graph(s);
    std::vector<Action> every;
    for (const auto& inst : s.instances())
      for (std::size_t u = 0; u < inst.unit_positions.size(); ++u)
        for (const auto& c : s.open_targets())
          for (int r = 0; r < 4; ++r) every.push_back(Action::place(inst.instance_id, int(u), c, Rotation(r)));
    if (every.empty()) continue;
    std::vector<Action> allowed;
    for (const auto& a : every)
      if (rng() % 3 == 0) allowed.push_back(a);
    allowed.push_back(Action::terminate());
    const auto pairs = candidate_pairs(g, every);
    auto q = net.q_values(net.encode(g), pairs);
    const auto before = mask_and_argmax(q, g, allowed);
    for (std::size_t i = 0; i < q.pairs.size(); ++i) {
      for (int r = 0; r < 4; ++r) {
        const auto& role = g.roles[q.pairs[i].unit_node];
        const auto a = Action::place(role.instance_id, role.unit_index, g.roles[q.pairs[i].cell_node].cell, Rotation(r));
        if (std::find(allowed.begin(), allowed.end(), a) == allowed.end()) q.values[i][r] = 1e6 + noise(rng);
      }
    }
    CHECK(mask_and_argmax(q, g, allowed) == before);
    ++checked;
  }
  CHECK(checked > 50);
}

TEST_CASE("backward matches central differences") {
  std::mt19937_64 rng(31);
  const auto s = mixed_state();
  const auto g = build_graph(s);
  REQUIRE(g.size() == 6);
  QNetwork net(kSmall, 32);
  // Non-zero biases so every bias gradient is exercised.
  for (auto& [name, t] : net.params().tensors())
    if (name.find("_b") != std::string::npos) *t = 0.1 * MatrixXd::Random(t->rows(), t->cols());
  const auto pairs = all_pairs(g);
  MatrixXd w(pairs.size(), 4);
  std::normal_distribution<double> nd;
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = nd(rng);
  const double wt = nd(rng);

  const auto pass = net.forward(g, pairs);
  const auto grads = net.backward(pass, w, wt);
  const double h = 1e-5;
  auto gt = grads.tensors();
  auto pt = net.params().tensors();
  for (std::size_t k = 0; k < pt.size(); ++k) {
    MatrixXd& param = *pt[k].second;
    MatrixXd fd(param.rows(), param.cols());
    for (Eigen::Index i = 0; i < param.size(); ++i) {
      const double keep = param(i);
      param(i) = keep + h;
      const double up = loss_of(net, g, pairs, w, wt);
      param(i) = keep - h;
      const double down = loss_of(net, g, pairs, w, wt);
      param(i) = keep;
      fd(i) = (up - down) / (2 * h);
    }
    const double scale = std::max({fd.norm(), gt[k].second->norm(), 1e-8});
    INFO(pt[k].first);
    CHECK((fd - *gt[k].second).norm() / scale < 1e-3);
  }
}

TEST_CASE("backward edge cases") {
  const QNetwork net(kSmall, 40);
  const auto g = build_graph(mixed_state());
  const auto pairs = all_pairs(g);
  const auto pass = net.forward(g, pairs);

  const auto zero = net.backward(pass, MatrixXd::Zero(pairs.size(), 4), 0.0);
  CHECK(zero.squared_norm() == 0.0);

  const auto term = net.backward(pass, MatrixXd::Zero(pairs.size(), 4), 1.0);
  CHECK(term.pair1_w.squaredNorm() == 0.0);
  CHECK(term.pair1_b.squaredNorm() == 0.0);
  CHECK(term.pair2_w.squaredNorm() == 0.0);
  CHECK(term.pair2_b.squaredNorm() == 0.0);
  CHECK(term.term2_b(0, 0) == 1.0);

  CHECK_THROWS_AS(net.backward(ForwardPass{}, MatrixXd::Zero(0, 4), 1.0), InvalidState);
  CHECK_THROWS_AS(net.backward(pass, MatrixXd::Zero(1, 4), 1.0), InvalidState);
}

TEST_CASE("forward is deterministic and finite for large coordinates") {
  const QNetwork net(NetConfig{}, 41);
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> coord(-64.0, 64.0);
  for (int trial = 0; trial < 20; ++trial) {
    GraphObs g;
    const int n = 1 + int(rng() % 12);
    g.features.resize(n, kNodeFeatures);
    for (int i = 0; i < n; ++i) {
      g.features.row(i) << coord(rng), coord(rng), coord(rng), double(rng() % 2), double(rng() % 2);
      g.roles.push_back({NodeKind::target_cell, -1, -1, {i, 0, 0}});
    }
    g.adjacency.assign(n * n, 1);
    for (int i = 0; i < n; ++i) g.adjacency[i * n + i] = 0;
    std::vector<CandidatePair> pairs;
    for (int i = 0; i < n; ++i) pairs.push_back({i, (i + 1) % n});
    const auto a = net.forward(g, pairs);
    const auto b = net.forward(g, pairs);
    CHECK(std::isfinite(a.q.terminate));
    CHECK(a.q.terminate == b.q.terminate);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      CHECK(a.q.values[i] == b.q.values[i]);
      for (double v : a.q.values[i]) CHECK(std::isfinite(v));
    }
  }
}

TEST_CASE("network configuration is validated") {
  CHECK_THROWS_AS(QNetwork(NetConfig{10, 4, 8, 3}, 0), ConfigError);
  CHECK_THROWS_AS(QNetwork(NetConfig{8, 2, 0, 3}, 0), ConfigError);
  const QNetwork net;
  CHECK(net.config() == NetConfig{64, 4, 128, 3});
  CHECK(net.params().layers.size() == 3);
  CHECK(net.params().pair2_w.rows() == 4);
}

TEST_CASE("checkpoints round-trip and reject bad shapes") {
  const auto dir = std::filesystem::temp_directory_path() / "blockasm_policy_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "net.json").string();
  const QNetwork net(kSmall, 50);
  save_checkpoint(net, path);
  const auto back = load_checkpoint(path);
  CHECK(back.config() == net.config());
  auto a = net.params().tensors();
  auto b = back.params().tensors();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(*a[i].second == *b[i].second);
  }

  nlohmann::json j;
  std::ifstream(path) >> j;
  j["tensors"]["embed_w"]["shape"] = {3, 3};
  std::ofstream(dir / "bad.json") << j.dump();
  CHECK_THROWS_AS(load_checkpoint((dir / "bad.json").string()), ParseError);

  std::ofstream(dir / "trunc.json") << R"({"format": "blockasm-qnetwork", "vers)";
  CHECK_THROWS_AS(load_checkpoint((dir / "trunc.json").string()), ParseError);
  CHECK_THROWS_AS(load_checkpoint((dir / "missing.json").string()), Error);
  std::filesystem::remove_all(dir);
}
