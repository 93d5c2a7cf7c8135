#include "blockasm/learner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "blockasm/error.hpp"
#include "blockasm/milp.hpp"

namespace blockasm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::size_t uniform_index(std::size_t n, std::mt19937_64& rng) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

double uniform01(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

std::vector<Cell> placed_footprint(const SceneState& state, int instance_id) {
  std::vector<Cell> cells;
  for (const auto& [id, cell] : state.placed_units())
    if (id == instance_id) cells.push_back(cell);
  std::sort(cells.begin(), cells.end());
  return cells;
}

// Book bookkeeping after an executed action.
void advance_book(ActionBook& book, const SceneState& after, const Action& a) {
  if (a.is_terminate() || after.status() == Status::done_failed) return;
  update_book(book, a.instance_id(), placed_footprint(after, a.instance_id()));
}

ActionRef action_ref(const GraphObs& graph, std::span<const CandidatePair> pairs, const Action& a) {
  if (a.is_terminate()) return {};
  const CandidatePair key{graph.unit_node(a.instance_id(), a.unit_index()), graph.cell_node(a.cell())};
  const auto it = std::find(pairs.begin(), pairs.end(), key);
  if (it == pairs.end()) throw InvalidAction("action " + to_string(a) + " is not a candidate");
  return {static_cast<int>(it - pairs.begin()), a.rotation().quarter_turns()};
}

Inventory inventory_of(const SceneState& state) {
  Inventory inv;
  for (const auto* inst : state.staged()) ++inv[inst->type_id];
  return inv;
}

}  // namespace

Task make_task(SceneState initial, std::uint64_t node_budget) {
  Task task;
  TargetSpec tspec;
  for (const auto& c : initial.open_targets()) tspec.targets.insert(c);
  for (const auto& c : initial.open_nontargets()) tspec.nontargets.insert(c);
  const auto model = build_model(initial.catalog(), inventory_of(initial), tspec, initial.spec());
  const auto sol = solve(model, node_budget);
  task.goal_poses = solution_poses(sol, model);
  task.solved = sol.optimal;
  for (int idx : sol.chosen)
    for (const auto& c : model.columns[idx].footprint)
      if (tspec.targets.contains(c)) task.milp_targets.insert(c);
  task.initial = std::move(initial);
  return task;
}

LossGrad smooth_l1(double prediction, double target) {
  const double d = prediction - target;
  if (std::abs(d) <= 1.0) return {0.5 * d * d, d};
  return {std::abs(d) - 0.5, d > 0 ? 1.0 : -1.0};
}

Action epsilon_greedy(const QValues& q, const GraphObs& graph, std::span<const Action> allowed, double epsilon,
                      std::mt19937_64& rng) {
  if (allowed.empty()) throw InvalidAction("no allowed actions");
  if (uniform01(rng) < epsilon) return allowed[uniform_index(allowed.size(), rng)];
  return mask_and_argmax(q, graph, allowed);
}

double td_target(double reward, bool done, std::span<const double> next_values, double gamma) {
  if (done || next_values.empty()) return reward;
  return reward + gamma * *std::max_element(next_values.begin(), next_values.end());
}

double td_target(const Transition& t, const QNetwork& target, double gamma) {
  if (t.done) return t.reward;
  const QValues q = target.q_values(target.encode(*t.next_graph), t.next_pairs);
  std::vector<double> values;
  values.reserve(t.next_allowed.size());
  for (const auto& ref : t.next_allowed)
    values.push_back(ref.pair < 0 ? q.terminate : q.values[ref.pair][ref.rotation]);
  return td_target(t.reward, false, values, gamma);
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("replay capacity must be positive");
  items_.reserve(capacity);
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
  } else {
    items_[next_] = std::move(t);
  }
  next_ = (next_ + 1) % capacity_;
}

std::vector<std::size_t> ReplayBuffer::sample(std::size_t count, std::mt19937_64& rng) const {
  if (items_.empty()) throw InvalidState("sampling an empty replay buffer");
  std::vector<std::size_t> out(count);
  for (auto& i : out) i = uniform_index(items_.size(), rng);
  return out;
}

void TrainConfig::validate() const {
  if (total_steps < 0) throw ConfigError("total_steps must be non-negative");
  if (replay_capacity == 0 || batch_size == 0) throw ConfigError("replay capacity and batch size must be positive");
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must lie in [0, 1)");
  if (!(grad_clip > 0)) throw ConfigError("gradient clip must be positive");
  if (target_sync <= 0) throw ConfigError("target sync interval must be positive");
  if (epsilon_start < 0 || epsilon_start > 1 || epsilon_end < 0 || epsilon_end > 1)
    throw ConfigError("epsilon must lie in [0, 1]");
  if (epsilon_decay_fraction < 0 || epsilon_decay_fraction > 1) throw ConfigError("epsilon decay fraction must lie in [0, 1]");
  if (learning_starts < 0 || train_every <= 0) throw ConfigError("invalid update schedule");
  if (threads == 0) throw ConfigError("threads must be positive");
  if (!(env.gamma > 0) || env.gamma > 1) throw ConfigError("gamma must lie in (0, 1]");
}

double TrainConfig::epsilon_at(long long step) const {
  const double decay = epsilon_decay_fraction * static_cast<double>(total_steps);
  if (decay <= 0) return epsilon_end;
  const double frac = static_cast<double>(step) / decay;
  if (frac >= 1.0) return epsilon_end;
  return epsilon_start + frac * (epsilon_end - epsilon_start);
}

namespace {

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, QNetwork net)
      : cfg_(cfg), net_(std::move(net)), target_(net_), replay_(cfg.replay_capacity) {
    if (cfg_.optimizer == Optimizer::sgd_momentum) {
      velocity_ = Parameters::zeros(cfg_.net);
    } else {
      adam_m_ = Parameters::zeros(cfg_.net);
      adam_v_ = Parameters::zeros(cfg_.net);
    }
  }

  ReplayBuffer& replay() { return replay_; }
  const QNetwork& net() const { return net_; }
  QNetwork take_net() { return std::move(net_); }

  void sync_target() {
    target_ = net_;
    ++epoch_;
  }

  double update(std::mt19937_64& rng) {
    const auto batch = replay_.sample(cfg_.batch_size, rng);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    std::vector<Parameters> grads(batch.size());
    std::vector<double> losses(batch.size());

    auto work = [&](std::size_t k) {
      const Transition& t = replay_[batch[k]];
      if (t.target_epoch != epoch_) {
        t.cached_target = td_target(t, target_, cfg_.env.gamma);
        t.target_epoch = epoch_;
      }
      const double y = t.cached_target;
      if (t.action.pair < 0) {
        const ForwardPass pass = net_.forward(*t.graph, {});
        const LossGrad lg = smooth_l1(pass.q.terminate, y);
        losses[k] = lg.loss;
        grads[k] = net_.backward(pass, Eigen::MatrixXd(0, 4), lg.grad * inv_b);
      } else {
        const CandidatePair pair[1] = {t.pair};
        const ForwardPass pass = net_.forward(*t.graph, pair);
        const LossGrad lg = smooth_l1(pass.q.values[0][t.action.rotation], y);
        losses[k] = lg.loss;
        Eigen::MatrixXd d = Eigen::MatrixXd::Zero(1, 4);
        d(0, t.action.rotation) = lg.grad * inv_b;
        grads[k] = net_.backward(pass, d, 0.0);
      }
    };
    run_parallel(batch.size(), work);

    // Reduction order is fixed, so results do not depend on the worker count.
    Parameters total = std::move(grads[0]);
    double loss = losses[0];
    for (std::size_t k = 1; k < batch.size(); ++k) {
      total.add_scaled(grads[k], 1.0);
      loss += losses[k];
    }
    const double norm = std::sqrt(total.squared_norm());
    if (norm > cfg_.grad_clip) total.scale(cfg_.grad_clip / norm);
    apply(total);
    return loss * inv_b;
  }

 private:
  void run_parallel(std::size_t n, const std::function<void(std::size_t)>& work) {
    const std::size_t workers = std::min<std::size_t>(cfg_.threads, n);
    if (workers <= 1) {
      for (std::size_t k = 0; k < n; ++k) work(k);
      return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < n; k = next++) {
          try {
            work(k);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
  }

  void apply(const Parameters& grad) {
    auto params = net_.params().tensors();
    const auto g = grad.tensors();
    if (cfg_.optimizer == Optimizer::sgd_momentum) {
      auto vel = velocity_.tensors();
      for (std::size_t i = 0; i < params.size(); ++i) {
        *vel[i].second = cfg_.momentum * *vel[i].second + *g[i].second;
        *params[i].second -= cfg_.learning_rate * *vel[i].second;
      }
      return;
    }
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++adam_t_;
    const double c1 = 1.0 - std::pow(b1, adam_t_);
    const double c2 = 1.0 - std::pow(b2, adam_t_);
    auto m = adam_m_.tensors();
    auto v = adam_v_.tensors();
    for (std::size_t i = 0; i < params.size(); ++i) {
      *m[i].second = b1 * *m[i].second + (1.0 - b1) * *g[i].second;
      *v[i].second = b2 * *v[i].second + (1.0 - b2) * g[i].second->cwiseAbs2();
      *params[i].second -= (cfg_.learning_rate * (*m[i].second / c1).array() /
                            ((*v[i].second / c2).array().sqrt() + eps))
                               .matrix();
    }
  }

  const TrainConfig& cfg_;
  QNetwork net_;
  QNetwork target_;
  ReplayBuffer replay_;
  long long epoch_ = 0;
  Parameters velocity_, adam_m_, adam_v_;
  int adam_t_ = 0;
};

}  // namespace

TrainResult train(std::span<const Task> tasks, const TrainConfig& config,
                  const std::function<void(const TrainLogRow&)>& on_episode) {
  config.validate();
  if (tasks.empty()) throw ConfigError("training needs at least one scene");
  for (std::size_t i = 0; i < tasks.size(); ++i)
    if (!tasks[i].solved) throw ConfigError("scene " + std::to_string(i) + " has no packing solution");

  std::mt19937_64 rng(config.seed);
  QNetwork init(config.net, rng());
  TrainResult result{init, {}};
  if (config.total_steps == 0) return result;

  Trainer trainer(config, std::move(init));
  long long step = 0;
  long long episode = 0;
  while (step < config.total_steps) {
    const Task& task = tasks[uniform_index(tasks.size(), rng)];
    SceneState state = task.initial;
    ActionBook book = expand_book(task.goal_poses, state);
    auto graph = std::make_shared<const GraphObs>(build_graph(state));
    std::vector<Action> allowed = legal_mask(state, book);
    std::vector<double> rewards;
    double loss_sum = 0.0;
    int loss_count = 0;

    while (state.running() && step < config.total_steps) {
      const double eps = config.epsilon_at(step);
      Action a = Action::terminate();
      if (uniform01(rng) < eps) {
        a = allowed[uniform_index(allowed.size(), rng)];
      } else {
        const auto pairs = candidate_pairs(*graph, allowed);
        const QValues q = trainer.net().q_values(trainer.net().encode(*graph), pairs);
        a = mask_and_argmax(q, *graph, allowed);
      }

      Transition t;
      t.graph = graph;
      if (!a.is_terminate()) {
        t.pair = {graph->unit_node(a.instance_id(), a.unit_index()), graph->cell_node(a.cell())};
        t.action = {0, a.rotation().quarter_turns()};
      }
      const StepOutcome out = apply_step(state, a, config.env);
      advance_book(book, state, a);
      t.reward = out.reward;
      t.done = out.done;
      if (!out.done) {
        graph = std::make_shared<const GraphObs>(build_graph(state));
        allowed = legal_mask(state, book);
        t.next_graph = graph;
        t.next_pairs = candidate_pairs(*graph, allowed);
        for (const auto& na : allowed) t.next_allowed.push_back(action_ref(*graph, t.next_pairs, na));
      }
      trainer.replay().push(std::move(t));
      rewards.push_back(out.reward);
      ++step;

      if (step >= config.learning_starts && step % config.train_every == 0 &&
          trainer.replay().size() >= config.batch_size) {
        loss_sum += trainer.update(rng);
        ++loss_count;
      }
      if (step % config.target_sync == 0) trainer.sync_target();
    }

    TrainLogRow row;
    row.step = step;
    row.episode = episode++;
    row.episode_return = discounted_return(rewards, config.env.gamma);
    row.loss = loss_count > 0 ? loss_sum / loss_count : 0.0;
    row.epsilon = config.epsilon_at(step);
    result.log.push_back(row);
    if (on_episode) on_episode(row);
  }
  result.net = trainer.take_net();
  return result;
}

void write_train_log(std::ostream& os, std::span<const TrainLogRow> log) {
  os << "step,episode,return,loss,epsilon\n";
  for (const auto& r : log) {
    std::ostringstream line;
    line.precision(10);
    line << r.step << ',' << r.episode << ',' << r.episode_return << ',' << r.loss << ',' << r.epsilon;
    os << line.str() << "\n";
  }
}

// ---------------------------------------------------------------------------
// Policies

Action heur_policy(const SceneState& state, const ActionBook& book, std::mt19937_64& rng) {
  std::vector<Action> stable;
  for (const auto& a : legal_mask(state, book)) {
    if (a.is_terminate()) continue;
    ResolvedPlacement r;
    try {
      r = resolve_block_placement(state, a);
    } catch (const OutOfBounds&) {
      continue;
    }
    if (std::any_of(r.footprint.begin(), r.footprint.end(), [&](const Cell& c) { return state.occupied(c); }))
      continue;
    if (!stability_check(state, r.footprint, StabilityRule::full_support)) continue;
    stable.push_back(a);
  }
  if (stable.empty()) return Action::terminate();
  return stable[uniform_index(stable.size(), rng)];
}

Action random_book_policy(const SceneState& state, const ActionBook& book, std::mt19937_64& rng) {
  auto allowed = legal_mask(state, book);
  allowed.pop_back();  // Terminate
  if (allowed.empty()) return Action::terminate();
  return allowed[uniform_index(allowed.size(), rng)];
}

void MctsConfig::validate() const {
  if (budget < 1) throw ConfigError("search budget must be at least 1");
  if (epsilon_search < 0 || epsilon_search > 1) throw ConfigError("search epsilon must lie in [0, 1]");
}

double rollout_score(const SceneState& state, const ActionBook& book, const Action& action, const QNetwork& net,
                     const EnvConfig& env) {
  SceneState next = state;
  const StepOutcome out = apply_step(next, action, env);
  if (next.status() == Status::done_failed) return env.failure_reward;
  if (out.done) return out.reward;
  ActionBook next_book = book;
  advance_book(next_book, next, action);
  const auto allowed = legal_mask(next, next_book);
  const auto values = action_values(net, next, allowed);
  return out.reward + env.gamma * *std::max_element(values.begin(), values.end());
}

Action mcts_select(const SceneState& state, const ActionBook& book, const QNetwork& net, const EnvConfig& env,
                   const MctsConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const auto allowed = legal_mask(state, book);
  if (allowed.size() == 1) return allowed.front();
  const auto q = action_values(net, state, allowed);

  std::vector<std::size_t> untried(allowed.size());
  for (std::size_t i = 0; i < untried.size(); ++i) untried[i] = i;
  std::size_t best = allowed.size();
  double best_score = kNegInf;
  for (int r = 0; r < cfg.budget && !untried.empty(); ++r) {
    std::size_t pick = 0;
    if (uniform01(rng) < cfg.epsilon_search) {
      pick = uniform_index(untried.size(), rng);
    } else {
      for (std::size_t k = 1; k < untried.size(); ++k)
        if (q[untried[k]] > q[untried[pick]]) pick = k;
    }
    const std::size_t idx = untried[pick];
    untried.erase(untried.begin() + static_cast<std::ptrdiff_t>(pick));
    const double score = rollout_score(state, book, allowed[idx], net, env);
    if (best == allowed.size() || score > best_score || (score == best_score && idx < best)) {
      best = idx;
      best_score = score;
    }
  }
  return allowed[best];
}

std::string_view to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::heur: return "heur";
    case PolicyKind::random_book: return "random";
    case PolicyKind::dqn: return "dqn";
    case PolicyKind::dqn_mcts: return "dqn-mcts";
  }
  return "?";
}

PolicyKind parse_policy_kind(std::string_view name) {
  if (name == "heur") return PolicyKind::heur;
  if (name == "random" || name == "random_book" || name == "random-book") return PolicyKind::random_book;
  if (name == "dqn") return PolicyKind::dqn;
  if (name == "dqn-mcts" || name == "dqn_mcts") return PolicyKind::dqn_mcts;
  throw ConfigError("unknown policy '" + std::string(name) + "'");
}

PolicyFn make_policy(PolicyKind kind, const QNetwork* net, const EnvConfig& env, const MctsConfig& mcts) {
  switch (kind) {
    case PolicyKind::heur: return heur_policy;
    case PolicyKind::random_book: return random_book_policy;
    case PolicyKind::dqn:
      if (!net) throw ConfigError("dqn policy needs a network");
      return [net](const SceneState& s, const ActionBook& b, std::mt19937_64&) {
        const auto allowed = legal_mask(s, b);
        const GraphObs graph = build_graph(s);
        const auto pairs = candidate_pairs(graph, allowed);
        return mask_and_argmax(net->q_values(net->encode(graph), pairs), graph, allowed);
      };
    case PolicyKind::dqn_mcts:
      if (!net) throw ConfigError("dqn-mcts policy needs a network");
      mcts.validate();
      return [net, env, mcts](const SceneState& s, const ActionBook& b, std::mt19937_64& rng) {
        return mcts_select(s, b, *net, env, mcts, rng);
      };
  }
  throw ConfigError("unknown policy kind");
}

EpisodeRecord run_episode(const Task& task, const PolicyFn& policy, const EnvConfig& env, std::mt19937_64& rng) {
  SceneState state = task.initial;
  ActionBook book = expand_book(task.goal_poses, state);
  EpisodeRecord rec;
  rec.initial_targets = state.initial_target_count();
  while (state.running()) {
    const Action a = policy(state, book, rng);
    const StepOutcome out = apply_step(state, a, env);
    advance_book(book, state, a);
    rec.actions.push_back(a);
    rec.rewards.push_back(out.reward);
  }
  rec.status = state.status();
  rec.reason = state.reason();
  rec.discounted_return = discounted_return(rec.rewards, env.gamma);
  rec.filled_targets = state.filled_initial_targets();
  rec.milp_targets = static_cast<int>(task.milp_targets.size());
  for (const auto& c : task.milp_targets)
    if (state.occupied(c)) ++rec.filled_milp_targets;
  return rec;
}

std::vector<EpisodeRecord> evaluate_policy(PolicyKind kind, std::span<const Task> tasks, const QNetwork* net,
                                           const EnvConfig& env, const MctsConfig& mcts, std::uint64_t seed,
                                           unsigned threads) {
  if (tasks.empty()) throw ConfigError("no scenes to evaluate");
  const PolicyFn policy = make_policy(kind, net, env, mcts);
  std::vector<EpisodeRecord> out(tasks.size());
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers = std::min<std::size_t>(threads, tasks.size());

  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        std::mt19937_64 rng(seed + i);
        out[i] = run_episode(tasks[i], policy, env, rng);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);
  return out;
}

}  // namespace blockasm
