#include "kgalign/batching.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numeric>
#include <string>

#include "kgalign/rng.hpp"

namespace kgalign {

AdjacencyList undirected_adjacency(const KnowledgeGraph& kg) {
  AdjacencyList adj(kg.num_entities());
  for (EntityId v = 0; v < kg.num_entities(); ++v) adj[v] = kg.neighbors(v);
  return adj;
}

std::size_t edge_cut(const AdjacencyList& adj, std::span<const std::uint32_t> assignment) {
  std::size_t cut = 0;
  for (std::uint32_t u = 0; u < adj.size(); ++u) {
    for (std::uint32_t v : adj[u]) {
      if (u < v && assignment[u] != assignment[v]) ++cut;
    }
  }
  return cut;
}

namespace {

constexpr std::uint32_t kUnassigned = std::numeric_limits<std::uint32_t>::max();
constexpr std::size_t kUnreached = std::numeric_limits<std::size_t>::max();

// rank[v] is the tie-break key: lower rank wins.
std::vector<std::uint32_t> grow_and_refine(const AdjacencyList& adj, std::size_t k,
                                           const std::vector<std::uint32_t>& rank) {
  const std::size_t n = adj.size();
  const std::size_t cap = (n + k - 1) / k;
  std::vector<std::uint32_t> by_rank(n);
  for (std::uint32_t v = 0; v < n; ++v) by_rank[rank[v]] = v;
  auto sorted_neighbors = [&](std::uint32_t v) {
    std::vector<std::uint32_t> nb = adj[v];
    std::sort(nb.begin(), nb.end(), [&](std::uint32_t x, std::uint32_t y) { return rank[x] < rank[y]; });
    return nb;
  };

  // Seeds: highest degree first, then repeatedly the node farthest from all
  // chosen seeds (unreachable counts as farthest), ties by degree then rank.
  std::vector<std::uint32_t> seeds;
  std::vector<std::size_t> dist(n, kUnreached);
  std::vector<bool> is_seed(n, false);
  auto better = [&](std::uint32_t x, std::uint32_t y) {
    if (dist[x] != dist[y]) return dist[x] > dist[y];
    if (adj[x].size() != adj[y].size()) return adj[x].size() > adj[y].size();
    return rank[x] < rank[y];
  };
  while (seeds.size() < k) {
    std::uint32_t best = kUnassigned;
    for (std::uint32_t v : by_rank) {
      if (is_seed[v]) continue;
      if (best == kUnassigned || better(v, best)) best = v;
    }
    seeds.push_back(best);
    is_seed[best] = true;
    std::deque<std::uint32_t> queue{best};
    dist[best] = 0;
    while (!queue.empty()) {
      const std::uint32_t u = queue.front();
      queue.pop_front();
      for (std::uint32_t w : adj[u]) {
        if (dist[w] == kUnreached || dist[w] > dist[u] + 1) {
          dist[w] = dist[u] + 1;
          queue.push_back(w);
        }
      }
    }
  }

  std::vector<std::uint32_t> part(n, kUnassigned);
  std::vector<std::size_t> size(k, 0);
  std::vector<std::deque<std::uint32_t>> frontier(k);
  auto place = [&](std::uint32_t v, std::size_t p) {
    part[v] = static_cast<std::uint32_t>(p);
    ++size[p];
    for (std::uint32_t w : sorted_neighbors(v)) {
      if (part[w] == kUnassigned) frontier[p].push_back(w);
    }
  };
  for (std::size_t p = 0; p < k; ++p) place(seeds[p], p);

  std::size_t remaining = n - k;
  std::size_t scan = 0;  // position in by_rank for leftover pickup
  while (remaining > 0) {
    std::size_t chosen = k;
    for (std::size_t p = 0; p < k; ++p) {
      while (!frontier[p].empty() && part[frontier[p].front()] != kUnassigned) frontier[p].pop_front();
      if (frontier[p].empty() || size[p] >= cap) continue;
      if (chosen == k || size[p] < size[chosen]) chosen = p;
    }
    if (chosen < k) {
      const std::uint32_t v = frontier[chosen].front();
      frontier[chosen].pop_front();
      place(v, chosen);
      --remaining;
      continue;
    }
    // No part can grow: restart from the lowest-rank unassigned node in the
    // part holding most of its neighbors, else the smallest part.
    while (part[by_rank[scan]] != kUnassigned) ++scan;
    const std::uint32_t v = by_rank[scan];
    std::vector<std::size_t> count(k, 0);
    for (std::uint32_t w : adj[v]) {
      if (part[w] != kUnassigned) ++count[part[w]];
    }
    std::size_t target = k;
    for (std::size_t p = 0; p < k; ++p) {
      if (size[p] >= cap || count[p] == 0) continue;
      if (target == k || count[p] > count[target]) target = p;
    }
    if (target == k) {
      target = static_cast<std::size_t>(std::min_element(size.begin(), size.end()) - size.begin());
    }
    place(v, target);
    --remaining;
  }

  const auto upper = static_cast<std::size_t>(std::floor(1.3 * static_cast<double>(cap)));
  const auto lower = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(0.7 * static_cast<double>(cap))));
  std::vector<std::size_t> count(k, 0);
  for (std::uint32_t v : by_rank) {
    const std::uint32_t p = part[v];
    for (std::uint32_t w : adj[v]) ++count[part[w]];
    std::size_t best = k;
    for (std::uint32_t w : adj[v]) {
      const std::uint32_t q = part[w];
      if (q == p || size[q] + 1 > upper) continue;
      if (best == k || count[q] > count[best] || (count[q] == count[best] && q < best)) best = q;
    }
    if (best < k && count[best] > count[p] && size[p] - 1 >= lower) {
      part[v] = static_cast<std::uint32_t>(best);
      --size[p];
      ++size[best];
    }
    for (std::uint32_t w : adj[v]) count[part[w]] = 0;
  }
  return part;
}

}  // namespace

std::vector<std::uint32_t> GreedyPartitioner::assign(const AdjacencyList& adj, std::size_t num_parts,
                                                     std::uint64_t rng_seed) const {
  const std::size_t n = adj.size();
  if (num_parts == 0 || num_parts > n) {
    throw PartitionError("num_parts must be in [1, " + std::to_string(n) + "], got " + std::to_string(num_parts));
  }
  if (num_parts == 1) return std::vector<std::uint32_t>(n, 0);

  std::vector<std::uint32_t> best;
  std::size_t best_cut = 0;
  for (std::size_t t = 0; t < std::max<std::size_t>(trials_, 1); ++t) {
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    if (t > 0) {
      Rng rng(derive_seed(rng_seed, t));
      rng.shuffle(order);
    }
    std::vector<std::uint32_t> rank(n);
    for (std::uint32_t i = 0; i < n; ++i) rank[order[i]] = i;
    auto part = grow_and_refine(adj, num_parts, rank);
    const std::size_t cut = edge_cut(adj, part);
    if (best.empty() || cut < best_cut) {
      best = std::move(part);
      best_cut = cut;
    }
  }
  return best;
}

Partition partition_graph(const KnowledgeGraph& kg, std::size_t num_parts, std::uint64_t rng_seed,
                          const Partitioner& partitioner) {
  const AdjacencyList adj = undirected_adjacency(kg);
  const auto assignment = partitioner.assign(adj, num_parts, rng_seed);
  Partition result;
  result.graph = kg.label();
  result.parts.resize(num_parts);
  for (EntityId v = 0; v < assignment.size(); ++v) result.parts[assignment[v]].push_back(v);
  result.edge_cut = edge_cut(adj, assignment);
  return result;
}

std::size_t default_num_parts(std::size_t num_entities, std::size_t core_size) {
  if (num_entities == 0) return 0;
  const auto k = static_cast<std::size_t>(
      std::llround(static_cast<double>(num_entities) / static_cast<double>(std::max<std::size_t>(core_size, 1))));
  return std::clamp<std::size_t>(k, 1, num_entities);
}

MiniBatch assemble_batch(std::span<const EntityId> part, const KnowledgeGraph& kg, std::size_t max_slots) {
  MiniBatch batch;
  batch.graph = kg.label();
  batch.core.assign(part.begin(), part.end());
  std::sort(batch.core.begin(), batch.core.end());
  std::vector<bool> in_core(kg.num_entities(), false);
  for (EntityId v : batch.core) in_core[v] = true;
  std::vector<bool> in_halo(kg.num_entities(), false);
  for (EntityId v : batch.core) {
    for (const auto& e : kg.adjacency(v)) {
      if (!in_core[e.neighbor] && !in_halo[e.neighbor]) {
        in_halo[e.neighbor] = true;
        batch.halo.push_back(e.neighbor);
      }
    }
  }
  std::sort(batch.halo.begin(), batch.halo.end());
  batch.slots = build_slot_batch(kg, batch.core, max_slots);
  std::vector<EntityId> nodes = batch.core;
  nodes.insert(nodes.end(), batch.halo.begin(), batch.halo.end());
  batch.sub = build_subgraph(kg, std::move(nodes), batch.core.size());
  return batch;
}

std::vector<PartPair> pair_parts(const Partition& parts_a, const Partition& parts_b,
                                 std::span<const AlignmentPair> seeds, std::size_t entities_a,
                                 std::size_t entities_b) {
  std::vector<std::uint32_t> of_a(entities_a, kUnassigned), of_b(entities_b, kUnassigned);
  for (std::uint32_t i = 0; i < parts_a.parts.size(); ++i) {
    for (EntityId v : parts_a.parts[i]) of_a.at(v) = i;
  }
  for (std::uint32_t j = 0; j < parts_b.parts.size(); ++j) {
    for (EntityId v : parts_b.parts[j]) of_b.at(v) = j;
  }
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> counts;
  for (const auto& s : seeds) {
    if (of_a.at(s.a) != kUnassigned && of_b.at(s.b) != kUnassigned) ++counts[{of_a[s.a], of_b[s.b]}];
  }
  std::vector<std::pair<std::pair<std::uint32_t, std::uint32_t>, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) { return x.second > y.second; });

  std::vector<bool> used_a(parts_a.parts.size(), false), used_b(parts_b.parts.size(), false);
  std::vector<PartPair> out;
  for (const auto& [ij, c] : ranked) {
    if (used_a[ij.first] || used_b[ij.second]) continue;
    used_a[ij.first] = used_b[ij.second] = true;
    out.push_back({ij.first, ij.second});
  }
  std::vector<std::size_t> free_a, free_b;
  for (std::size_t i = 0; i < used_a.size(); ++i) {
    if (!used_a[i]) free_a.push_back(i);
  }
  for (std::size_t j = 0; j < used_b.size(); ++j) {
    if (!used_b[j]) free_b.push_back(j);
  }
  for (std::size_t i = 0; i < std::max(free_a.size(), free_b.size()); ++i) {
    PartPair p;
    if (i < free_a.size()) p.a = free_a[i];
    if (i < free_b.size()) p.b = free_b[i];
    out.push_back(p);
  }
  std::stable_sort(out.begin(), out.end(), [](const PartPair& x, const PartPair& y) {
    const auto key = [](const PartPair& p) { return p.a ? *p.a : std::numeric_limits<std::size_t>::max(); };
    return key(x) < key(y);
  });
  return out;
}

}  // namespace kgalign
