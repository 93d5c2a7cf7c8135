#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "blockasm/book.hpp"
#include "blockasm/metrics.hpp"
#include "blockasm/policy.hpp"

namespace blockasm {

/// One training or evaluation scene: the episode-start state and the packing
/// solution that seeds its action book.
struct Task {
  SceneState initial;
  std::vector<Placement> goal_poses;
  CellSet milp_targets;  // initial target cells covered by the goal poses
  bool solved = false;   // packing solution proven optimal
};

/// Builds a task by solving the packing model of `initial`.
Task make_task(SceneState initial, std::uint64_t node_budget = 5'000'000);

/// Huber loss with threshold 1 on d = prediction - target.
struct LossGrad {
  double loss = 0.0;
  double grad = 0.0;
};
LossGrad smooth_l1(double prediction, double target);

/// Uniform over `allowed` with probability epsilon, otherwise the masked argmax.
Action epsilon_greedy(const QValues& q, const GraphObs& graph, std::span<const Action> allowed, double epsilon,
                      std::mt19937_64& rng);

/// r when done, else r + gamma * max of `next_values`.
double td_target(double reward, bool done, std::span<const double> next_values, double gamma);

/// Action stored by graph node indices: pair < 0 means Terminate.
struct ActionRef {
  int pair = -1;
  int rotation = 0;
};

struct Transition {
  std::shared_ptr<const GraphObs> graph;
  CandidatePair pair{};  // unused for Terminate
  ActionRef action;
  double reward = 0.0;
  bool done = false;
  std::shared_ptr<const GraphObs> next_graph;
  std::vector<CandidatePair> next_pairs;
  std::vector<ActionRef> next_allowed;  // Terminate included
  // Target value cache, valid while target_epoch matches.
  mutable double cached_target = 0.0;
  mutable long long target_epoch = -1;
};

/// Max target-network Q over the next state's allowed actions, bootstrapped.
double td_target(const Transition& t, const QNetwork& target, double gamma);

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);
  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& operator[](std::size_t i) const { return items_[i]; }
  /// Indices drawn uniformly with replacement.
  std::vector<std::size_t> sample(std::size_t count, std::mt19937_64& rng) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> items_;
};

enum class Optimizer : std::uint8_t { sgd_momentum, adam };

struct TrainConfig {
  long long total_steps = 50'000;
  std::size_t replay_capacity = 10'000;
  std::size_t batch_size = 16;
  double learning_rate = 1e-4;
  double momentum = 0.9;
  Optimizer optimizer = Optimizer::sgd_momentum;
  double grad_clip = 10.0;
  long long target_sync = 2'000;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  double epsilon_decay_fraction = 0.3;
  long long learning_starts = 500;
  int train_every = 1;
  unsigned threads = 1;  // minibatch gradient workers; results do not depend on it
  std::uint64_t seed = 0;
  NetConfig net;
  EnvConfig env;

  /// Throws ConfigError when a field is out of range.
  void validate() const;
  double epsilon_at(long long step) const;
};

struct TrainLogRow {
  long long step = 0;
  long long episode = 0;
  double episode_return = 0.0;
  double loss = 0.0;
  double epsilon = 0.0;
};

struct TrainResult {
  QNetwork net;
  std::vector<TrainLogRow> log;
};

/// Deep Q-learning over episodes sampled from `tasks`. Bit-reproducible from
/// the config seed.
TrainResult train(std::span<const Task> tasks, const TrainConfig& config,
                  const std::function<void(const TrainLogRow&)>& on_episode = {});

void write_train_log(std::ostream& os, std::span<const TrainLogRow> log);

/// Uniform over allowed placements that are in bounds, collision free and
/// fully supported; Terminate when there are none.
Action heur_policy(const SceneState& state, const ActionBook& book, std::mt19937_64& rng);

/// Uniform over allowed placement actions; Terminate when there are none.
Action random_book_policy(const SceneState& state, const ActionBook& book, std::mt19937_64& rng);

struct MctsConfig {
  int budget = 5;
  double epsilon_search = 0.1;

  void validate() const;
};

/// One-step bootstrapped score of `action`: -1 on failure, r when the episode
/// ends, else r + gamma * max allowed Q of the successor.
double rollout_score(const SceneState& state, const ActionBook& book, const Action& action, const QNetwork& net,
                     const EnvConfig& env);

/// Evaluates up to `budget` distinct root actions chosen epsilon-greedily and
/// returns the best scoring one (ties to the earlier allowed action).
Action mcts_select(const SceneState& state, const ActionBook& book, const QNetwork& net, const EnvConfig& env,
                   const MctsConfig& cfg, std::mt19937_64& rng);

enum class PolicyKind : std::uint8_t { heur, random_book, dqn, dqn_mcts };

std::string_view to_string(PolicyKind k);
/// Accepts heur, random, dqn, dqn-mcts (and underscore spellings).
PolicyKind parse_policy_kind(std::string_view name);

using PolicyFn = std::function<Action(const SceneState&, const ActionBook&, std::mt19937_64&)>;

/// `net` is required for the dqn kinds.
PolicyFn make_policy(PolicyKind kind, const QNetwork* net, const EnvConfig& env, const MctsConfig& mcts = {});

/// Runs one episode to completion with the book seeded from the task.
EpisodeRecord run_episode(const Task& task, const PolicyFn& policy, const EnvConfig& env, std::mt19937_64& rng);

/// Greedy evaluation over every task; episode i uses seed + i. Runs tasks in
/// parallel with `threads` workers (0 = hardware concurrency).
std::vector<EpisodeRecord> evaluate_policy(PolicyKind kind, std::span<const Task> tasks, const QNetwork* net,
                                           const EnvConfig& env, const MctsConfig& mcts = {},
                                           std::uint64_t seed = 0, unsigned threads = 0);

}  // namespace blockasm
