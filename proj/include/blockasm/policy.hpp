#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "blockasm/env.hpp"

namespace blockasm {

enum class NodeKind : std::uint8_t { unplaced_unit, placed_unit, target_cell, nontarget_cell };

struct NodeRole {
  NodeKind kind = NodeKind::target_cell;
  int instance_id = -1;  // unit nodes only
  int unit_index = -1;   // unplaced units only
  Cell cell{};           // cell nodes and placed units
};

inline constexpr int kNodeFeatures = 5;

/// Scene graph: one node per staged unit, placed unit, open target and open
/// non-target cell. Features are (x, y, z) in grid units relative to the grid
/// origin followed by two node-type indices.
struct GraphObs {
  Eigen::MatrixXd features;               // N x 5
  std::vector<std::uint8_t> adjacency;    // N x N, row-major
  std::vector<NodeRole> roles;

  std::size_t size() const { return roles.size(); }
  bool edge(std::size_t i, std::size_t j) const { return adjacency[i * size() + j] != 0; }
  int unit_node(int instance_id, int unit_index) const;
  int cell_node(const Cell& c) const;
};

/// Fully connected except between unplaced units of different blocks; no
/// self-edges.
GraphObs build_graph(const SceneState& state);

/// Type indices: (1,1) unplaced unit, (1,0) placed unit, (0,1) target cell,
/// (0,0) non-target cell.
std::array<double, 2> node_type_indices(NodeKind kind);

struct NetConfig {
  int dim = 64;
  int heads = 4;
  int hidden = 128;
  int layers = 3;

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

struct LayerParams {
  Eigen::MatrixXd wq, wk, wv, wo;  // D x D
  Eigen::MatrixXd ff1_w, ff1_b;    // F x D, 1 x F
  Eigen::MatrixXd ff2_w, ff2_b;    // D x F, 1 x D
};

/// Every trainable tensor. Biases are stored as 1 x n rows.
struct Parameters {
  NetConfig config;
  Eigen::MatrixXd embed_w, embed_b;  // D x 5, 1 x D
  std::vector<LayerParams> layers;
  Eigen::MatrixXd pair1_w, pair1_b;  // F x 2D, 1 x F
  Eigen::MatrixXd pair2_w, pair2_b;  // 4 x F, 1 x 4
  Eigen::MatrixXd term1_w, term1_b;  // F x D, 1 x F
  Eigen::MatrixXd term2_w, term2_b;  // 1 x F, 1 x 1

  static Parameters zeros(const NetConfig& config);
  static Parameters glorot(const NetConfig& config, std::mt19937_64& rng);

  std::vector<std::pair<std::string, Eigen::MatrixXd*>> tensors();
  std::vector<std::pair<std::string, const Eigen::MatrixXd*>> tensors() const;

  void add_scaled(const Parameters& other, double scale);
  void scale(double factor);
  double squared_norm() const;
};

struct CandidatePair {
  int unit_node = -1;
  int cell_node = -1;

  friend bool operator==(const CandidatePair&, const CandidatePair&) = default;
};

/// Four rotation values per (unit, cell) candidate plus the termination value.
struct QValues {
  std::vector<CandidatePair> pairs;
  std::vector<std::array<double, 4>> values;
  double terminate = 0.0;

  /// Q of an action, or -infinity when its pair was not evaluated.
  double value_of(const GraphObs& graph, const Action& a) const;
};

/// A forward pass with every intermediate needed by backward().
struct ForwardPass {
  struct LayerTape {
    Eigen::MatrixXd input, q, k, v, message, mid, pre_act;
    std::vector<Eigen::MatrixXd> attention;  // per head, N x N
  };

  bool recorded = false;
  Eigen::MatrixXd features;
  std::vector<std::uint8_t> adjacency;
  std::vector<LayerTape> tape;
  Eigen::MatrixXd embeddings;
  std::vector<CandidatePair> pairs;
  Eigen::MatrixXd pair_input, pair_pre;  // C x 2D, C x F
  Eigen::MatrixXd mean_embedding, term_pre;  // 1 x D, 1 x F
  QValues q;
};

/// Attention message-passing Q-function with a pairwise placement head and a
/// mean-pooled termination head.
class QNetwork {
 public:
  QNetwork() : QNetwork(NetConfig{}, 0) {}
  QNetwork(const NetConfig& config, std::uint64_t seed);
  explicit QNetwork(Parameters params);

  const NetConfig& config() const { return params_.config; }
  const Parameters& params() const { return params_; }
  Parameters& params() { return params_; }

  Eigen::MatrixXd encode(const GraphObs& graph) const;
  QValues q_values(const Eigen::MatrixXd& embeddings, std::span<const CandidatePair> pairs) const;

  ForwardPass forward(const GraphObs& graph, std::span<const CandidatePair> pairs) const;

  /// Exact parameter gradients of a scalar loss given its gradient with
  /// respect to each output (C x 4 pair values and the termination value).
  Parameters backward(const ForwardPass& pass, const Eigen::MatrixXd& d_pairs, double d_terminate) const;

 private:
  Eigen::MatrixXd run_encoder(const GraphObs& graph, ForwardPass* tape) const;

  Parameters params_;
};

/// Distinct (unit node, cell node) pairs of the placement actions, in order
/// of first appearance.
std::vector<CandidatePair> candidate_pairs(const GraphObs& graph, std::span<const Action> actions);

/// Argmax over `allowed` only; ties go to the earlier action.
Action mask_and_argmax(const QValues& q, const GraphObs& graph, std::span<const Action> allowed);

/// Q-value of each allowed action under the network, in the given order.
std::vector<double> action_values(const QNetwork& net, const SceneState& state, std::span<const Action> allowed);

void save_checkpoint(const QNetwork& net, const std::string& path);
QNetwork load_checkpoint(const std::string& path);

}  // namespace blockasm
