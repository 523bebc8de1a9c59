#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "kgalign/attr_agg.hpp"
#include "kgalign/kg.hpp"
#include "kgalign/trans_ge.hpp"

namespace kgalign {

class PartitionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Partition {
  GraphLabel graph = GraphLabel::A;
  std::vector<std::vector<EntityId>> parts;  // each sorted ascending
  std::size_t edge_cut = 0;                  // distinct undirected cross-part pairs
};

using AdjacencyList = std::vector<std::vector<std::uint32_t>>;

// Undirected, deduplicated, self loops dropped.
AdjacencyList undirected_adjacency(const KnowledgeGraph& kg);
std::size_t edge_cut(const AdjacencyList& adj, std::span<const std::uint32_t> assignment);

class Partitioner {
 public:
  virtual ~Partitioner() = default;
  // Returns the part index of each node.
  virtual std::vector<std::uint32_t> assign(const AdjacencyList& adj, std::size_t num_parts,
                                            std::uint64_t rng_seed) const = 0;
};

// Grow-and-refine heuristic. Seeds are picked farthest-first starting from
// the highest-degree node; parts grow by BFS, always extending the smallest
// part, capped at ceil(n/k). One boundary pass then moves nodes whose move
// strictly lowers the cut while sizes stay within +-30% of ceil(n/k).
// Trial 0 breaks ties by id, later trials by a seeded random order; the
// lowest cut wins.
class GreedyPartitioner : public Partitioner {
 public:
  explicit GreedyPartitioner(std::size_t trials = 4) : trials_(trials) {}
  std::vector<std::uint32_t> assign(const AdjacencyList& adj, std::size_t num_parts,
                                    std::uint64_t rng_seed) const override;

 private:
  std::size_t trials_;
};

Partition partition_graph(const KnowledgeGraph& kg, std::size_t num_parts, std::uint64_t rng_seed,
                          const Partitioner& partitioner = GreedyPartitioner());

inline constexpr std::size_t kDefaultCoreSize = 512;
// round(n / core_size), at least 1 and at most n.
std::size_t default_num_parts(std::size_t num_entities, std::size_t core_size = kDefaultCoreSize);

struct MiniBatch {
  GraphLabel graph = GraphLabel::A;
  std::vector<EntityId> core;  // ascending
  std::vector<EntityId> halo;  // ascending, disjoint from core
  AttributeSlotBatch slots;    // core entities only
  SubgraphTensors sub;         // nodes = core then halo
};

MiniBatch assemble_batch(std::span<const EntityId> part, const KnowledgeGraph& kg, std::size_t max_slots);

// One training step's pair of parts. Either side may be absent when the
// two graphs were split into different numbers of parts.
struct PartPair {
  std::optional<std::size_t> a;
  std::optional<std::size_t> b;
};

// Greedy matching on the number of seed pairs spanning (part_a, part_b);
// unmatched parts are then paired by index, the rest left single-sided.
std::vector<PartPair> pair_parts(const Partition& parts_a, const Partition& parts_b,
                                 std::span<const AlignmentPair> seeds, std::size_t entities_a,
                                 std::size_t entities_b);

}  // namespace kgalign
