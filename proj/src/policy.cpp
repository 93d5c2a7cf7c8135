#include "blockasm/policy.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>

#include <nlohmann/json.hpp>

#include "blockasm/error.hpp"

namespace blockasm {

using Eigen::MatrixXd;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

MatrixXd relu(const MatrixXd& x) { return x.cwiseMax(0.0); }

MatrixXd relu_mask(const MatrixXd& pre) { return (pre.array() > 0.0).cast<double>().matrix(); }

MatrixXd affine(const MatrixXd& x, const MatrixXd& w, const MatrixXd& b) {
  MatrixXd out = x * w.transpose();
  out.rowwise() += b.row(0);
  return out;
}

// One product per row, so equal input rows give bit-identical outputs (a
// blocked matrix product rounds rows differently depending on their panel).
MatrixXd affine_rowwise(const MatrixXd& x, const MatrixXd& w, const MatrixXd& b) {
  MatrixXd out(x.rows(), w.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) out.row(r).noalias() = x.row(r) * w.transpose() + b.row(0);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph construction

int GraphObs::unit_node(int instance_id, int unit_index) const {
  for (std::size_t i = 0; i < roles.size(); ++i) {
    const auto& r = roles[i];
    if (r.kind == NodeKind::unplaced_unit && r.instance_id == instance_id && r.unit_index == unit_index)
      return static_cast<int>(i);
  }
  return -1;
}

int GraphObs::cell_node(const Cell& c) const {
  for (std::size_t i = 0; i < roles.size(); ++i) {
    const auto& r = roles[i];
    if ((r.kind == NodeKind::target_cell || r.kind == NodeKind::nontarget_cell) && r.cell == c)
      return static_cast<int>(i);
  }
  return -1;
}

std::array<double, 2> node_type_indices(NodeKind kind) {
  switch (kind) {
    case NodeKind::unplaced_unit: return {1.0, 1.0};
    case NodeKind::placed_unit: return {1.0, 0.0};
    case NodeKind::target_cell: return {0.0, 1.0};
    case NodeKind::nontarget_cell: return {0.0, 0.0};
  }
  return {0.0, 0.0};
}

GraphObs build_graph(const SceneState& state) {
  GraphObs g;
  std::vector<std::array<double, 3>> pos;
  const auto& spec = state.spec();
  const double cs = spec.cell_size();
  const auto& origin = spec.origin();

  for (const auto& inst : state.instances()) {
    if (inst.placed) continue;
    for (std::size_t u = 0; u < inst.unit_positions.size(); ++u) {
      const auto& p = inst.unit_positions[u];
      g.roles.push_back({NodeKind::unplaced_unit, inst.instance_id, static_cast<int>(u), {}});
      pos.push_back({(p.x - origin.x) / cs, (p.y - origin.y) / cs, (p.z - origin.z) / cs});
    }
  }
  for (const auto& [id, cell] : state.placed_units()) {
    g.roles.push_back({NodeKind::placed_unit, id, -1, cell});
    pos.push_back({double(cell.dx), double(cell.dy), double(cell.dz)});
  }
  for (const auto& cell : state.open_targets()) {
    g.roles.push_back({NodeKind::target_cell, -1, -1, cell});
    pos.push_back({double(cell.dx), double(cell.dy), double(cell.dz)});
  }
  for (const auto& cell : state.open_nontargets()) {
    g.roles.push_back({NodeKind::nontarget_cell, -1, -1, cell});
    pos.push_back({double(cell.dx), double(cell.dy), double(cell.dz)});
  }

  const auto n = g.roles.size();
  g.features.resize(static_cast<Eigen::Index>(n), kNodeFeatures);
  for (std::size_t i = 0; i < n; ++i) {
    const auto type = node_type_indices(g.roles[i].kind);
    g.features.row(static_cast<Eigen::Index>(i)) << pos[i][0], pos[i][1], pos[i][2], type[0], type[1];
  }
  g.adjacency.assign(n * n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    g.adjacency[i * n + i] = 0;
    const auto& ri = g.roles[i];
    if (ri.kind != NodeKind::unplaced_unit) continue;
    for (std::size_t j = 0; j < n; ++j) {
      const auto& rj = g.roles[j];
      if (rj.kind == NodeKind::unplaced_unit && rj.instance_id != ri.instance_id) g.adjacency[i * n + j] = 0;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Parameters

Parameters Parameters::zeros(const NetConfig& c) {
  if (c.dim <= 0 || c.heads <= 0 || c.dim % c.heads != 0) throw ConfigError("dim must be a positive multiple of heads");
  if (c.hidden <= 0 || c.layers < 0) throw ConfigError("invalid network size");
  Parameters p;
  p.config = c;
  const int d = c.dim, f = c.hidden;
  p.embed_w = MatrixXd::Zero(d, kNodeFeatures);
  p.embed_b = MatrixXd::Zero(1, d);
  for (int l = 0; l < c.layers; ++l) {
    LayerParams lp;
    lp.wq = lp.wk = lp.wv = lp.wo = MatrixXd::Zero(d, d);
    lp.ff1_w = MatrixXd::Zero(f, d);
    lp.ff1_b = MatrixXd::Zero(1, f);
    lp.ff2_w = MatrixXd::Zero(d, f);
    lp.ff2_b = MatrixXd::Zero(1, d);
    p.layers.push_back(std::move(lp));
  }
  p.pair1_w = MatrixXd::Zero(f, 2 * d);
  p.pair1_b = MatrixXd::Zero(1, f);
  p.pair2_w = MatrixXd::Zero(4, f);
  p.pair2_b = MatrixXd::Zero(1, 4);
  p.term1_w = MatrixXd::Zero(f, d);
  p.term1_b = MatrixXd::Zero(1, f);
  p.term2_w = MatrixXd::Zero(1, f);
  p.term2_b = MatrixXd::Zero(1, 1);
  return p;
}

Parameters Parameters::glorot(const NetConfig& config, std::mt19937_64& rng) {
  Parameters p = zeros(config);
  for (auto& [name, t] : p.tensors()) {
    if (t->rows() == 1 && name.ends_with("_b")) continue;
    const double limit = std::sqrt(6.0 / static_cast<double>(t->rows() + t->cols()));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index i = 0; i < t->size(); ++i) t->data()[i] = dist(rng);
  }
  return p;
}

std::vector<std::pair<std::string, MatrixXd*>> Parameters::tensors() {
  std::vector<std::pair<std::string, MatrixXd*>> out{{"embed_w", &embed_w}, {"embed_b", &embed_b}};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& lp = layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    out.insert(out.end(), {{pre + "wq", &lp.wq},
                           {pre + "wk", &lp.wk},
                           {pre + "wv", &lp.wv},
                           {pre + "wo", &lp.wo},
                           {pre + "ff1_w", &lp.ff1_w},
                           {pre + "ff1_b", &lp.ff1_b},
                           {pre + "ff2_w", &lp.ff2_w},
                           {pre + "ff2_b", &lp.ff2_b}});
  }
  out.insert(out.end(), {{"pair1_w", &pair1_w},
                         {"pair1_b", &pair1_b},
                         {"pair2_w", &pair2_w},
                         {"pair2_b", &pair2_b},
                         {"term1_w", &term1_w},
                         {"term1_b", &term1_b},
                         {"term2_w", &term2_w},
                         {"term2_b", &term2_b}});
  return out;
}

std::vector<std::pair<std::string, const MatrixXd*>> Parameters::tensors() const {
  std::vector<std::pair<std::string, const MatrixXd*>> out;
  for (auto& [name, t] : const_cast<Parameters*>(this)->tensors()) out.emplace_back(name, t);
  return out;
}

void Parameters::add_scaled(const Parameters& other, double s) {
  auto mine = tensors();
  auto theirs = other.tensors();
  for (std::size_t i = 0; i < mine.size(); ++i) *mine[i].second += s * *theirs[i].second;
}

void Parameters::scale(double factor) {
  for (auto& [_, t] : tensors()) *t *= factor;
}

double Parameters::squared_norm() const {
  double s = 0.0;
  for (const auto& [_, t] : tensors()) s += t->squaredNorm();
  return s;
}

// ---------------------------------------------------------------------------
// Network

QNetwork::QNetwork(const NetConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  params_ = Parameters::glorot(config, rng);
}

QNetwork::QNetwork(Parameters params) : params_(std::move(params)) {}

MatrixXd QNetwork::run_encoder(const GraphObs& graph, ForwardPass* tape) const {
  const auto& c = params_.config;
  const auto n = static_cast<Eigen::Index>(graph.size());
  const int dk = c.dim / c.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  MatrixXd h = affine(graph.features, params_.embed_w, params_.embed_b);
  for (const auto& lp : params_.layers) {
    ForwardPass::LayerTape lt;
    MatrixXd q = h * lp.wq.transpose();
    MatrixXd k = h * lp.wk.transpose();
    MatrixXd v = h * lp.wv.transpose();
    MatrixXd message = MatrixXd::Zero(n, c.dim);
    for (int head = 0; head < c.heads; ++head) {
      const auto cols = Eigen::seqN(head * dk, dk);
      MatrixXd scores = q(Eigen::all, cols) * k(Eigen::all, cols).transpose() * scale;
      MatrixXd attn = MatrixXd::Zero(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        double peak = kNegInf;
        for (Eigen::Index j = 0; j < n; ++j)
          if (graph.adjacency[i * n + j]) peak = std::max(peak, scores(i, j));
        if (peak == kNegInf) continue;  // isolated node: zero message
        double total = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
          if (!graph.adjacency[i * n + j]) continue;
          attn(i, j) = std::exp(scores(i, j) - peak);
          total += attn(i, j);
        }
        attn.row(i) /= total;
      }
      message(Eigen::all, cols) = attn * v(Eigen::all, cols);
      if (tape) lt.attention.push_back(std::move(attn));
    }
    MatrixXd mid = h + message * lp.wo.transpose();
    MatrixXd pre = affine(mid, lp.ff1_w, lp.ff1_b);
    MatrixXd out = mid + affine(relu(pre), lp.ff2_w, lp.ff2_b);
    if (tape) {
      lt.input = std::move(h);
      lt.q = std::move(q);
      lt.k = std::move(k);
      lt.v = std::move(v);
      lt.message = std::move(message);
      lt.mid = std::move(mid);
      lt.pre_act = std::move(pre);
      tape->tape.push_back(std::move(lt));
    }
    h = std::move(out);
  }
  return h;
}

MatrixXd QNetwork::encode(const GraphObs& graph) const { return run_encoder(graph, nullptr); }

namespace {

MatrixXd gather_pairs(const MatrixXd& emb, std::span<const CandidatePair> pairs) {
  const auto d = emb.cols();
  MatrixXd x(static_cast<Eigen::Index>(pairs.size()), 2 * d);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    x.row(r).head(d) = emb.row(pairs[i].unit_node);
    x.row(r).tail(d) = emb.row(pairs[i].cell_node);
  }
  return x;
}

MatrixXd mean_rows(const MatrixXd& emb) {
  if (emb.rows() == 0) return MatrixXd::Zero(1, emb.cols());
  return emb.colwise().mean();
}

}  // namespace

QValues QNetwork::q_values(const MatrixXd& embeddings, std::span<const CandidatePair> pairs) const {
  for (const auto& p : pairs) {
    if (p.unit_node < 0 || p.unit_node >= embeddings.rows() || p.cell_node < 0 || p.cell_node >= embeddings.rows())
      throw InvalidAction("candidate pair references a missing node");
  }
  QValues out;
  out.pairs.assign(pairs.begin(), pairs.end());
  const MatrixXd x = gather_pairs(embeddings, pairs);
  const MatrixXd qp =
      affine_rowwise(relu(affine_rowwise(x, params_.pair1_w, params_.pair1_b)), params_.pair2_w, params_.pair2_b);
  out.values.resize(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i)
    for (int r = 0; r < 4; ++r) out.values[i][r] = qp(static_cast<Eigen::Index>(i), r);
  const MatrixXd qt =
      affine(relu(affine(mean_rows(embeddings), params_.term1_w, params_.term1_b)), params_.term2_w, params_.term2_b);
  out.terminate = qt(0, 0);
  return out;
}

ForwardPass QNetwork::forward(const GraphObs& graph, std::span<const CandidatePair> pairs) const {
  ForwardPass pass;
  pass.features = graph.features;
  pass.adjacency = graph.adjacency;
  pass.embeddings = run_encoder(graph, &pass);
  pass.q = q_values(pass.embeddings, pairs);
  pass.pairs = pass.q.pairs;
  pass.pair_input = gather_pairs(pass.embeddings, pairs);
  pass.pair_pre = affine_rowwise(pass.pair_input, params_.pair1_w, params_.pair1_b);
  pass.mean_embedding = mean_rows(pass.embeddings);
  pass.term_pre = affine(pass.mean_embedding, params_.term1_w, params_.term1_b);
  pass.recorded = true;
  return pass;
}

Parameters QNetwork::backward(const ForwardPass& pass, const MatrixXd& d_pairs, double d_terminate) const {
  if (!pass.recorded) throw InvalidState("backward needs a recorded forward pass");
  const auto& c = params_.config;
  const auto n = pass.embeddings.rows();
  const auto d = static_cast<Eigen::Index>(c.dim);
  if (d_pairs.rows() != static_cast<Eigen::Index>(pass.pairs.size()) || (d_pairs.size() > 0 && d_pairs.cols() != 4))
    throw InvalidState("output gradient shape does not match the forward pass");

  Parameters g = Parameters::zeros(c);
  MatrixXd dh = MatrixXd::Zero(n, d);

  // Pair head.
  if (!pass.pairs.empty()) {
    const MatrixXd act = relu(pass.pair_pre);
    g.pair2_w = d_pairs.transpose() * act;
    g.pair2_b = d_pairs.colwise().sum();
    const MatrixXd dpre = (d_pairs * params_.pair2_w).cwiseProduct(relu_mask(pass.pair_pre));
    g.pair1_w = dpre.transpose() * pass.pair_input;
    g.pair1_b = dpre.colwise().sum();
    const MatrixXd dx = dpre * params_.pair1_w;
    for (std::size_t i = 0; i < pass.pairs.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      dh.row(pass.pairs[i].unit_node) += dx.row(r).head(d);
      dh.row(pass.pairs[i].cell_node) += dx.row(r).tail(d);
    }
  }

  // Termination head.
  {
    const MatrixXd act = relu(pass.term_pre);
    g.term2_w = d_terminate * act;
    g.term2_b(0, 0) = d_terminate;
    const MatrixXd dpre = (d_terminate * params_.term2_w).cwiseProduct(relu_mask(pass.term_pre));
    g.term1_w = dpre.transpose() * pass.mean_embedding;
    g.term1_b = dpre;
    if (n > 0) dh.rowwise() += (dpre * params_.term1_w).row(0) / static_cast<double>(n);
  }

  // Encoder layers in reverse.
  const int dk = c.dim / c.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  for (int l = static_cast<int>(params_.layers.size()) - 1; l >= 0; --l) {
    const auto& lp = params_.layers[l];
    const auto& lt = pass.tape[l];
    auto& gl = g.layers[l];

    // out = mid + relu(mid W1^T + b1) W2^T + b2
    const MatrixXd act = relu(lt.pre_act);
    gl.ff2_w = dh.transpose() * act;
    gl.ff2_b = dh.colwise().sum();
    const MatrixXd dpre = (dh * lp.ff2_w).cwiseProduct(relu_mask(lt.pre_act));
    gl.ff1_w = dpre.transpose() * lt.mid;
    gl.ff1_b = dpre.colwise().sum();
    MatrixXd dmid = dh + dpre * lp.ff1_w;

    // mid = input + message Wo^T
    gl.wo = dmid.transpose() * lt.message;
    const MatrixXd dmsg = dmid * lp.wo;
    MatrixXd dq = MatrixXd::Zero(n, d), dk_ = MatrixXd::Zero(n, d), dv = MatrixXd::Zero(n, d);
    for (int head = 0; head < c.heads; ++head) {
      const auto cols = Eigen::seqN(head * dk, dk);
      const MatrixXd& attn = lt.attention[head];
      const MatrixXd dmh = dmsg(Eigen::all, cols);
      dv(Eigen::all, cols) = attn.transpose() * dmh;
      const MatrixXd dattn = dmh * lt.v(Eigen::all, cols).transpose();
      // Softmax rows: dS = A .* (dA - rowsum(dA .* A)); masked entries have A = 0.
      const Eigen::VectorXd inner = dattn.cwiseProduct(attn).rowwise().sum();
      MatrixXd dscores = attn.cwiseProduct(dattn.colwise() - inner);
      dscores *= scale;
      dq(Eigen::all, cols) = dscores * lt.k(Eigen::all, cols);
      dk_(Eigen::all, cols) = dscores.transpose() * lt.q(Eigen::all, cols);
    }
    gl.wq = dq.transpose() * lt.input;
    gl.wk = dk_.transpose() * lt.input;
    gl.wv = dv.transpose() * lt.input;
    dh = dmid + dq * lp.wq + dk_ * lp.wk + dv * lp.wv;
  }

  g.embed_w = dh.transpose() * pass.features;
  g.embed_b = dh.colwise().sum();
  return g;
}

// ---------------------------------------------------------------------------
// Action scoring

double QValues::value_of(const GraphObs& graph, const Action& a) const {
  if (a.is_terminate()) return terminate;
  const CandidatePair key{graph.unit_node(a.instance_id(), a.unit_index()), graph.cell_node(a.cell())};
  for (std::size_t i = 0; i < pairs.size(); ++i)
    if (pairs[i] == key) return values[i][a.rotation().quarter_turns()];
  return kNegInf;
}

std::vector<CandidatePair> candidate_pairs(const GraphObs& graph, std::span<const Action> actions) {
  std::vector<CandidatePair> out;
  for (const auto& a : actions) {
    if (a.is_terminate()) continue;
    const CandidatePair p{graph.unit_node(a.instance_id(), a.unit_index()), graph.cell_node(a.cell())};
    if (p.unit_node < 0 || p.cell_node < 0) throw InvalidAction("action " + to_string(a) + " has no graph nodes");
    if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
  }
  return out;
}

Action mask_and_argmax(const QValues& q, const GraphObs& graph, std::span<const Action> allowed) {
  if (allowed.empty()) throw InvalidAction("no allowed actions");
  std::size_t best = 0;
  double best_value = kNegInf;
  for (std::size_t i = 0; i < allowed.size(); ++i) {
    const double v = q.value_of(graph, allowed[i]);
    if (i == 0 || v > best_value) {
      best = i;
      best_value = v;
    }
  }
  return allowed[best];
}

std::vector<double> action_values(const QNetwork& net, const SceneState& state, std::span<const Action> allowed) {
  const GraphObs graph = build_graph(state);
  const auto pairs = candidate_pairs(graph, allowed);
  const QValues q = net.q_values(net.encode(graph), pairs);
  std::vector<double> out;
  out.reserve(allowed.size());
  for (const auto& a : allowed) out.push_back(q.value_of(graph, a));
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kCheckpointFormat = "blockasm-qnetwork";
constexpr int kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const QNetwork& net, const std::string& path) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  const auto& c = net.config();
  j["config"] = {{"dim", c.dim}, {"heads", c.heads}, {"hidden", c.hidden}, {"layers", c.layers}};
  auto& tensors = j["tensors"];
  tensors = nlohmann::json::object();
  for (const auto& [name, t] : net.params().tensors()) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(t->size()));
    for (Eigen::Index r = 0; r < t->rows(); ++r)
      for (Eigen::Index col = 0; col < t->cols(); ++col) data.push_back((*t)(r, col));
    tensors[name] = {{"shape", {t->rows(), t->cols()}}, {"data", std::move(data)}};
  }
  const std::filesystem::path target(path);
  const auto tmp = target.string() + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw Error("cannot write checkpoint " + path);
    os << j.dump() << "\n";
  }
  std::filesystem::rename(tmp, target);
}

QNetwork load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read checkpoint " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint " + path + ": " + e.what());
  }
  if (j.value("format", "") != kCheckpointFormat) throw ParseError("checkpoint " + path + ": not a Q-network file");
  if (j.value("version", 0) != kCheckpointVersion)
    throw ParseError("checkpoint " + path + ": unsupported version " + std::to_string(j.value("version", 0)));
  try {
    NetConfig c;
    c.dim = j.at("config").at("dim").get<int>();
    c.heads = j.at("config").at("heads").get<int>();
    c.hidden = j.at("config").at("hidden").get<int>();
    c.layers = j.at("config").at("layers").get<int>();
    Parameters p = Parameters::zeros(c);
    for (auto& [name, t] : p.tensors()) {
      const auto& entry = j.at("tensors").at(name);
      const auto shape = entry.at("shape").get<std::vector<Eigen::Index>>();
      if (shape.size() != 2 || shape[0] != t->rows() || shape[1] != t->cols())
        throw ParseError("checkpoint " + path + ": tensor '" + name + "' has the wrong shape");
      const auto data = entry.at("data").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(data.size()) != t->size())
        throw ParseError("checkpoint " + path + ": tensor '" + name + "' has the wrong size");
      std::size_t k = 0;
      for (Eigen::Index r = 0; r < t->rows(); ++r)
        for (Eigen::Index col = 0; col < t->cols(); ++col) (*t)(r, col) = data[k++];
    }
    return QNetwork(std::move(p));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint " + path + ": " + e.what());
  }
}

}  // namespace blockasm
