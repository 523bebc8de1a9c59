#pragma once

#include <cstdint>
#include <memory>
#include <shared_mutex>
#include <span>
#include <vector>

#include "kgalign/autograd.hpp"
#include "kgalign/kg.hpp"
#include "kgalign/model.hpp"
#include "kgalign/params.hpp"

namespace kgalign {

// Structural view of a mini-batch sub-graph. Local node i is nodes[i]; the
// first num_core nodes are the batch core, the rest its 1-hop halo.
struct SubgraphTensors {
  struct Edge {
    std::uint32_t head;  // local index
    std::uint32_t tail;  // local index
    PredicateId predicate;
    std::uint32_t triple;  // index into the graph's rel_triples()
  };

  GraphLabel graph = GraphLabel::A;
  std::vector<EntityId> nodes;
  std::size_t num_core = 0;
  CsrMatrix adjacency;               // n x n, symmetric 0/1, zero diagonal
  std::vector<PredicateId> predicates;  // local predicate index -> predicate id
  CsrMatrix incidence_mean;          // n x P, row v averages v's incident edge predicates
  CsrMatrix predicate_mean;          // P x n, row p averages nodes incident to a p-edge
  std::vector<Edge> edges;

  std::size_t size() const { return nodes.size(); }
};

// Builds the tensors over `nodes` using every relationship triple whose
// endpoints are both in `nodes` (self loops ignored).
SubgraphTensors build_subgraph(const KnowledgeGraph& kg, std::vector<EntityId> nodes, std::size_t num_core);

class UnknownEntityError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Per-entity embeddings from earlier iterations (x0), one row per entity
// of each graph. Reads may run concurrently; writes are serialized.
class HistoricalEmbeddingStore {
 public:
  HistoricalEmbeddingStore() = default;
  HistoricalEmbeddingStore(std::size_t dim, std::size_t entities_a, std::size_t entities_b);
  HistoricalEmbeddingStore(const HistoricalEmbeddingStore& other);
  HistoricalEmbeddingStore& operator=(const HistoricalEmbeddingStore& other);

  std::size_t dim() const { return dim_; }
  std::size_t rows(GraphLabel g) const { return table(g).size() / std::max<std::size_t>(dim_, 1); }
  Tensor read(GraphLabel g, std::span<const EntityId> ids) const;
  void write(GraphLabel g, std::span<const EntityId> ids, const Tensor& values);
  const std::vector<double>& table(GraphLabel g) const { return g == GraphLabel::A ? a_ : b_; }
  std::vector<double>& mutable_table(GraphLabel g) { return g == GraphLabel::A ? a_ : b_; }
  std::size_t bytes() const { return (a_.size() + b_.size()) * sizeof(double); }
  bool all_finite() const;

 private:
  std::size_t dim_ = 0;
  std::vector<double> a_, b_;
  mutable std::unique_ptr<std::shared_mutex> mutex_ = std::make_unique<std::shared_mutex>();
};

void init_trans_ge_parameters(ParameterStore& store, const ModelDims& dims, Rng& rng);

// sigmoid(A (R_in W_gate)), n x dim.
Var compute_gate(const CsrMatrix& adjacency, const Var& relation_summary, const ParameterStore& store);

// x0[ids] W_dist; x0 enters as data, so no gradient reaches the store.
Var approximate_history(GraphLabel g, std::span<const EntityId> ids, const HistoricalEmbeddingStore& store,
                        const ParameterStore& params);

// r + gamma_p * (r W_rel), gamma_p the mean gate row over nodes incident to
// a p-edge. Layer-local; the base predicate table is not modified.
Var update_relations(const Var& gate, const SubgraphTensors& sub, const Var& relations,
                     const ParameterStore& store);

struct NeighborEncoding {
  Var h_nei;                       // n x dim, last layer output
  std::vector<Var> layer_inputs;   // gated input of each layer
  std::vector<Var> layer_outputs;  // h^{nei,k}
  std::vector<Var> gates;          // gamma per layer
  Tensor alpha;                    // n x n, averaged over heads and layers (when captured)
};

NeighborEncoding encode_subgraph(const SubgraphTensors& sub, const HistoricalEmbeddingStore& store,
                                 const ParameterStore& params, const ModelDims& dims, bool capture_attention);

// Overwrites x0 rows of the core nodes with their final-layer embeddings.
void update_store(HistoricalEmbeddingStore& store, const SubgraphTensors& sub, const Tensor& h_nei);

}  // namespace kgalign
