#include "kgalign/trans_ge.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>

#include "kgalign/layers.hpp"

namespace kgalign {

SubgraphTensors build_subgraph(const KnowledgeGraph& kg, std::vector<EntityId> nodes, std::size_t num_core) {
  SubgraphTensors sub;
  sub.graph = kg.label();
  sub.nodes = std::move(nodes);
  sub.num_core = num_core;
  const std::size_t n = sub.nodes.size();

  std::unordered_map<EntityId, std::uint32_t> local;
  local.reserve(n * 2);
  for (std::uint32_t i = 0; i < n; ++i) local.emplace(sub.nodes[i], i);

  std::map<PredicateId, std::uint32_t> pred_local;
  std::set<std::pair<std::uint32_t, std::uint32_t>> undirected;
  for (std::uint32_t i = 0; i < n; ++i) {
    for (const auto& e : kg.adjacency(sub.nodes[i])) {
      if (e.direction != Direction::Out || e.neighbor == sub.nodes[i]) continue;
      auto it = local.find(e.neighbor);
      if (it == local.end()) continue;
      sub.edges.push_back({i, it->second, e.predicate, e.triple});
      pred_local.emplace(e.predicate, 0);
      undirected.emplace(std::min(i, it->second), std::max(i, it->second));
    }
  }
  std::uint32_t next = 0;
  for (auto& [pred, idx] : pred_local) {
    idx = next++;
    sub.predicates.push_back(pred);
  }
  const std::size_t n_pred = sub.predicates.size();

  std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> adj;
  adj.reserve(undirected.size() * 2);
  for (const auto& [u, v] : undirected) {
    adj.emplace_back(u, v, 1.0);
    adj.emplace_back(v, u, 1.0);
  }
  sub.adjacency = CsrMatrix::from_triplets(n, n, std::move(adj));

  std::vector<double> degree(n, 0.0);
  std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> incidence;
  std::set<std::pair<std::uint32_t, std::uint32_t>> pred_nodes;  // (pred, node)
  for (const auto& e : sub.edges) {
    const std::uint32_t p = pred_local[e.predicate];
    for (std::uint32_t v : {e.head, e.tail}) {
      incidence.emplace_back(v, p, 1.0);
      degree[v] += 1.0;
      pred_nodes.emplace(p, v);
    }
  }
  for (auto& [v, p, w] : incidence) w = 1.0 / degree[v];
  sub.incidence_mean = CsrMatrix::from_triplets(n, n_pred, std::move(incidence));

  std::vector<double> pred_count(n_pred, 0.0);
  for (const auto& [p, v] : pred_nodes) pred_count[p] += 1.0;
  std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> pm;
  for (const auto& [p, v] : pred_nodes) pm.emplace_back(p, v, 1.0 / pred_count[p]);
  sub.predicate_mean = CsrMatrix::from_triplets(n_pred, n, std::move(pm));
  return sub;
}

// ---- HistoricalEmbeddingStore ----------------------------------------------------

HistoricalEmbeddingStore::HistoricalEmbeddingStore(std::size_t dim, std::size_t entities_a, std::size_t entities_b)
    : dim_(dim), a_(dim * entities_a, 0.0), b_(dim * entities_b, 0.0) {}

HistoricalEmbeddingStore::HistoricalEmbeddingStore(const HistoricalEmbeddingStore& other) {
  std::shared_lock lock(*other.mutex_);
  dim_ = other.dim_;
  a_ = other.a_;
  b_ = other.b_;
}

HistoricalEmbeddingStore& HistoricalEmbeddingStore::operator=(const HistoricalEmbeddingStore& other) {
  if (this == &other) return *this;
  HistoricalEmbeddingStore copy(other);
  std::unique_lock lock(*mutex_);
  dim_ = copy.dim_;
  a_ = std::move(copy.a_);
  b_ = std::move(copy.b_);
  return *this;
}

Tensor HistoricalEmbeddingStore::read(GraphLabel g, std::span<const EntityId> ids) const {
  std::shared_lock lock(*mutex_);
  const auto& t = table(g);
  const std::size_t n_rows = t.size() / std::max<std::size_t>(dim_, 1);
  Tensor out(ids.size(), dim_);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= n_rows) {
      throw UnknownEntityError("historical store: unknown entity id " + std::to_string(ids[i]) + " in graph " +
                               std::string(1, to_char(g)));
    }
    std::copy_n(t.data() + ids[i] * dim_, dim_, out.data() + i * dim_);
  }
  return out;
}

void HistoricalEmbeddingStore::write(GraphLabel g, std::span<const EntityId> ids, const Tensor& values) {
  if (values.rows() != ids.size() || values.cols() != dim_) {
    throw ShapeError("historical store: " + std::to_string(ids.size()) + " ids but values " +
                     values.shape_string());
  }
  std::unique_lock lock(*mutex_);
  auto& t = mutable_table(g);
  const std::size_t n_rows = t.size() / std::max<std::size_t>(dim_, 1);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= n_rows) throw UnknownEntityError("historical store: unknown entity id " + std::to_string(ids[i]));
    std::copy_n(values.data() + i * dim_, dim_, t.data() + ids[i] * dim_);
  }
}

bool HistoricalEmbeddingStore::all_finite() const {
  std::shared_lock lock(*mutex_);
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  return finite(a_) && finite(b_);
}

// ---- Trans-GE ------------------------------------------------------------------

void init_trans_ge_parameters(ParameterStore& store, const ModelDims& dims, Rng& rng) {
  store.add("nei.w_dist", xavier_uniform(dims.dim, dims.dim, rng));
  store.add("nei.w_gate", xavier_uniform(dims.dim, dims.dim, rng));
  store.add("nei.w_rel", xavier_uniform(dims.dim, dims.dim, rng));
  for (std::size_t k = 0; k < dims.layers; ++k) {
    const std::string p = "nei.layer" + std::to_string(k);
    init_attention(store, p + ".attn", dims.dim, rng);
    init_layer_norm(store, p + ".ln", dims.dim);
  }
}

Var compute_gate(const CsrMatrix& adjacency, const Var& relation_summary, const ParameterStore& store) {
  return sigmoid(spmm(adjacency, matmul(relation_summary, store.get("nei.w_gate"))));
}

Var approximate_history(GraphLabel g, std::span<const EntityId> ids, const HistoricalEmbeddingStore& store,
                        const ParameterStore& params) {
  return matmul(Var::constant(store.read(g, ids)), params.get("nei.w_dist"));
}

Var update_relations(const Var& gate, const SubgraphTensors& sub, const Var& relations,
                     const ParameterStore& store) {
  Var gate_per_predicate = spmm(sub.predicate_mean, gate);
  return add(relations, mul(gate_per_predicate, matmul(relations, store.get("nei.w_rel"))));
}

NeighborEncoding encode_subgraph(const SubgraphTensors& sub, const HistoricalEmbeddingStore& store,
                                 const ParameterStore& params, const ModelDims& dims, bool capture_attention) {
  const std::size_t n = sub.size();
  NeighborEncoding enc;
  Var x_he = approximate_history(sub.graph, sub.nodes, store, params);

  Var relations;
  Var gate;
  if (sub.predicates.empty()) {
    // No edges: R_in is all zeros.
    gate = compute_gate(sub.adjacency, Var::constant(Tensor(n, dims.dim)), params);
  } else {
    std::vector<std::uint32_t> rows(sub.predicates.begin(), sub.predicates.end());
    relations = gather_rows(params.get(predicate_table(sub.graph)), rows);
    gate = compute_gate(sub.adjacency, spmm(sub.incidence_mean, relations), params);
  }

  const Segment whole{0, n};
  Var x = mul(gate, x_he);
  if (capture_attention) enc.alpha = Tensor(n, n);
  for (std::size_t k = 0; k < dims.layers; ++k) {
    const std::string p = "nei.layer" + std::to_string(k);
    enc.gates.push_back(gate);
    enc.layer_inputs.push_back(x);
    AttentionResult block = attention_block(x, AttentionWeights::from_store(params, p + ".attn"),
                                            LayerNormWeights::from_store(params, p + ".ln"), dims.heads,
                                            std::span<const Segment>(&whole, 1), capture_attention);
    enc.layer_outputs.push_back(block.output);
    if (capture_attention) {
      const Tensor& a = block.alpha.per_segment.front();
      for (std::size_t i = 0; i < a.size(); ++i) enc.alpha[i] += a[i] / static_cast<double>(dims.layers);
    }
    if (k + 1 < dims.layers) {
      if (relations.defined()) {
        relations = update_relations(gate, sub, relations, params);
        gate = compute_gate(sub.adjacency, spmm(sub.incidence_mean, relations), params);
      }
      x = mul(gate, block.output);
    }
  }
  enc.h_nei = enc.layer_outputs.back();
  return enc;
}

void update_store(HistoricalEmbeddingStore& store, const SubgraphTensors& sub, const Tensor& h_nei) {
  if (h_nei.rows() != sub.size()) {
    throw ShapeError("update_store: embedding rows " + std::to_string(h_nei.rows()) + " != sub-graph nodes " +
                     std::to_string(sub.size()));
  }
  Tensor core(sub.num_core, h_nei.cols());
  std::copy_n(h_nei.data(), sub.num_core * h_nei.cols(), core.data());
  store.write(sub.graph, std::span<const EntityId>(sub.nodes.data(), sub.num_core), core);
}

}  // namespace kgalign
