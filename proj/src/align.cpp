#include "kgalign/align.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "kgalign/attr_agg.hpp"
#include "kgalign/batching.hpp"

namespace kgalign {

using nlohmann::json;

EntityEmbeddingTable embed_all(const KnowledgeGraph& kg, const ModelView& model, bool capture) {
  NoGradGuard no_grad;
  const ModelDims& dims = model.cfg.dims;
  const std::size_t n = kg.num_entities();
  EntityEmbeddingTable table;
  table.graph = kg.label();
  table.h = Tensor(n, 2 * dims.dim);
  if (capture) {
    table.internals.emplace();
    table.internals->attributes.resize(n);
    table.internals->neighbors.resize(n);
  }
  if (n == 0) return table;

  const Partition partition = partition_graph(kg, resolved_num_parts(model.cfg, n), model.cfg.rng_seed);
  for (const auto& part : partition.parts) {
    const MiniBatch batch = assemble_batch(part, kg, dims.max_slots);
    const AttributeEncoding att = aggregate_attributes(batch.slots, model.params, dims, capture);
    const NeighborEncoding enc = encode_subgraph(batch.sub, model.store, model.params, dims, capture);
    const Tensor& h_att = att.h_att.value();
    const Tensor& h_nei = enc.h_nei.value();
    std::unordered_map<EntityId, std::uint32_t> local;
    if (capture) {
      for (std::uint32_t i = 0; i < batch.sub.nodes.size(); ++i) local.emplace(batch.sub.nodes[i], i);
    }
    for (std::size_t i = 0; i < batch.core.size(); ++i) {
      const EntityId v = batch.core[i];
      auto row = table.h.row(v);
      std::copy(h_att.row(i).begin(), h_att.row(i).end(), row.begin());
      std::copy(h_nei.row(i).begin(), h_nei.row(i).end(), row.begin() + static_cast<std::ptrdiff_t>(dims.dim));
      if (!capture) continue;

      auto& attrs = table.internals->attributes[v];
      for (const auto& [slot, w] : att.importance[i]) {
        attrs.emplace_back(*batch.slots.slots[i][slot].attr_triple, w);
      }
      auto& neighbors = table.internals->neighbors[v];
      double total = 0.0;
      for (EntityId w : kg.neighbors(v)) {
        const double a = enc.alpha(i, local.at(w));
        neighbors.emplace_back(w, a);
        total += a;
      }
      for (auto& [w, a] : neighbors) {
        a = total > 0.0 ? a / total : 1.0 / static_cast<double>(neighbors.size());
      }
    }
  }
  return table;
}

void rebuild_store(const KnowledgeGraph& kg, const ModelView& model, HistoricalEmbeddingStore& store,
                   std::size_t passes) {
  NoGradGuard no_grad;
  const std::size_t n = kg.num_entities();
  if (n == 0) return;
  std::vector<EntityId> ids(n);
  std::iota(ids.begin(), ids.end(), 0u);
  store.write(kg.label(), ids, attribute_embeddings(kg, model.params, model.cfg.dims));
  if (passes == 0) return;
  const Partition partition = partition_graph(kg, resolved_num_parts(model.cfg, n), model.cfg.rng_seed);
  std::vector<MiniBatch> batches;
  for (const auto& part : partition.parts) batches.push_back(assemble_batch(part, kg, model.cfg.dims.max_slots));
  for (std::size_t p = 0; p < passes; ++p) {
    for (const auto& batch : batches) {
      const NeighborEncoding enc = encode_subgraph(batch.sub, store, model.params, model.cfg.dims, false);
      update_store(store, batch.sub, enc.h_nei.value());
    }
  }
}

// ---- prediction ------------------------------------------------------------------

namespace {

double dot(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

double score_from(double xy, double xx, double yy, Metric metric) {
  if (metric == Metric::Cosine) {
    if (xx == 0.0 || yy == 0.0) return 0.0;
    return xy / (std::sqrt(xx) * std::sqrt(yy));
  }
  return -std::sqrt(std::max(0.0, xx + yy - 2.0 * xy));
}

}  // namespace

double similarity(std::span<const double> x, std::span<const double> y, Metric metric) {
  if (metric == Metric::L2) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    return -std::sqrt(s);
  }
  return score_from(dot(x, y), dot(x, x), dot(y, y), metric);
}

std::vector<AlignmentPrediction> predict(const Tensor& table_a, const Tensor& table_b,
                                         std::span<const EntityId> queries, std::span<const EntityId> candidates,
                                         std::size_t k, Metric metric, std::span<const std::optional<EntityId>> gold) {
  if (candidates.empty()) throw std::invalid_argument("predict: empty candidate set");
  if (table_a.cols() != table_b.cols()) {
    throw ShapeError("predict: embedding widths differ: " + table_a.shape_string() + " vs " + table_b.shape_string());
  }
  std::vector<EntityId> cands(candidates.begin(), candidates.end());
  std::sort(cands.begin(), cands.end());
  cands.erase(std::unique(cands.begin(), cands.end()), cands.end());

  std::vector<AlignmentPrediction> out;
  out.reserve(queries.size());
  std::vector<std::pair<EntityId, double>> scored(cands.size());
  auto before = [](const std::pair<EntityId, double>& x, const std::pair<EntityId, double>& y) {
    if (x.second != y.second) return x.second > y.second;
    return x.first < y.first;
  };
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const auto q = table_a.row(queries[qi]);
    for (std::size_t ci = 0; ci < cands.size(); ++ci) {
      scored[ci] = {cands[ci], similarity(q, table_b.row(cands[ci]), metric)};
    }
    AlignmentPrediction p;
    p.query = queries[qi];
    if (qi < gold.size() && gold[qi]) {
      const EntityId g = *gold[qi];
      const double gs = similarity(q, table_b.row(g), metric);
      std::size_t rank = 1;
      for (const auto& s : scored) {
        if (s.first != g && before(s, {g, gs})) ++rank;
      }
      p.gold_rank = rank;
    }
    const std::size_t keep = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(), before);
    p.top.assign(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep));
    out.push_back(std::move(p));
  }
  return out;
}

double hits_at_k(std::span<const std::size_t> gold_ranks, std::size_t k) {
  if (gold_ranks.empty()) return 0.0;
  const auto hits = std::count_if(gold_ranks.begin(), gold_ranks.end(), [k](std::size_t r) { return r <= k; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(gold_ranks.size());
}

std::vector<std::size_t> gold_ranks(std::span<const AlignmentPrediction> predictions) {
  std::vector<std::size_t> ranks;
  for (const auto& p : predictions) {
    if (!p.gold_rank) throw std::invalid_argument("gold_ranks: query without gold");
    ranks.push_back(*p.gold_rank);
  }
  return ranks;
}

std::string format_percent(double value) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << value;
  return s.str();
}

EvalResult evaluate(const EntityEmbeddingTable& a, const EntityEmbeddingTable& b,
                    std::span<const AlignmentPair> pairs, Metric metric, std::size_t keep_top) {
  std::vector<EntityId> queries, candidates;
  std::vector<std::optional<EntityId>> gold;
  for (const auto& p : pairs) {
    queries.push_back(p.a);
    candidates.push_back(p.b);
    gold.emplace_back(p.b);
  }
  EvalResult r;
  if (pairs.empty()) return r;
  r.predictions = predict(a.h, b.h, queries, candidates, keep_top, metric, gold);
  const auto ranks = gold_ranks(r.predictions);
  r.hits1 = hits_at_k(ranks, 1);
  r.hits10 = hits_at_k(ranks, 10);
  return r;
}

// ---- explanations ----------------------------------------------------------------

ExplainedEntity explain_entity(const KnowledgeGraph& kg, const EntityInternals& internals, EntityId v,
                               std::size_t top_n) {
  ExplainedEntity out;
  out.entity = v;
  out.name = kg.entities().name(v);
  out.label = kg.display_name(v);

  for (const auto& [triple, w] : internals.attributes.at(v)) {
    const AttrTriple& t = kg.attr_triples()[triple];
    out.attributes.push_back({kg.predicates().name(t.predicate), t.value, w});
  }
  std::stable_sort(out.attributes.begin(), out.attributes.end(),
                   [](const AttributeItem& x, const AttributeItem& y) { return x.weight > y.weight; });
  if (out.attributes.size() > top_n) out.attributes.resize(top_n);

  for (const auto& [w, weight] : internals.neighbors.at(v)) {
    std::set<PredicateId> relations;
    for (const auto& e : kg.adjacency(v)) {
      if (e.neighbor == w) relations.insert(e.predicate);
    }
    for (PredicateId p : relations) {
      out.neighbors.push_back({kg.predicates().name(p), kg.entities().name(w), kg.display_name(w),
                               weight / static_cast<double>(relations.size())});
    }
  }
  std::stable_sort(out.neighbors.begin(), out.neighbors.end(),
                   [](const NeighborItem& x, const NeighborItem& y) { return x.weight > y.weight; });
  if (out.neighbors.size() > top_n) out.neighbors.resize(top_n);
  return out;
}

Explanation explain(std::size_t pair_id, double score, const KnowledgeGraph& kg_a, const EntityInternals& ia,
                    EntityId a, const KnowledgeGraph& kg_b, const EntityInternals& ib, EntityId b,
                    std::size_t top_n) {
  return {pair_id, score, explain_entity(kg_a, ia, a, top_n), explain_entity(kg_b, ib, b, top_n)};
}

namespace {

json side_to_json(const ExplainedEntity& e) {
  json attrs = json::array();
  for (const auto& a : e.attributes) attrs.push_back(json::array({a.key, a.value, a.weight}));
  json neighbors = json::array();
  for (const auto& n : e.neighbors) neighbors.push_back(json::array({n.relation, n.label, n.weight}));
  return {{"entity", e.name}, {"label", e.label}, {"attributes", attrs}, {"neighbors", neighbors}};
}

}  // namespace

json to_json(const Explanation& e) {
  return {{"pair_id", e.pair_id}, {"score", e.score}, {"a", side_to_json(e.a)}, {"b", side_to_json(e.b)}};
}

double jaccard(const std::vector<std::pair<std::string, std::string>>& x,
               const std::vector<std::pair<std::string, std::string>>& y, const NormalizationMap& map) {
  auto canon = [&](const std::string& s) -> const std::string& {
    auto it = map.find(s);
    return it == map.end() ? s : it->second;
  };
  auto to_set = [&](const std::vector<std::pair<std::string, std::string>>& items) {
    std::set<std::pair<std::string, std::string>> s;
    for (const auto& [u, v] : items) s.emplace(canon(u), canon(v));
    return s;
  };
  const auto sx = to_set(x), sy = to_set(y);
  if (sx.empty() && sy.empty()) return 1.0;
  std::size_t common = 0;
  for (const auto& item : sx) common += sy.count(item);
  return static_cast<double>(common) / static_cast<double>(sx.size() + sy.size() - common);
}

JaccardScores jaccard_explanations(std::span<const Explanation> explanations, const NormalizationMap& map) {
  JaccardScores out;
  if (explanations.empty()) return out;
  using Items = std::vector<std::pair<std::string, std::string>>;
  for (const auto& e : explanations) {
    Items aa, ab, na, nb;
    for (const auto& x : e.a.attributes) aa.emplace_back(x.key, x.value);
    for (const auto& x : e.b.attributes) ab.emplace_back(x.key, x.value);
    for (const auto& x : e.a.neighbors) na.emplace_back(x.relation, x.neighbor);
    for (const auto& x : e.b.neighbors) nb.emplace_back(x.relation, x.neighbor);
    out.attributes += jaccard(aa, ab, map);
    out.neighbors += jaccard(na, nb, map);
  }
  out.attributes /= static_cast<double>(explanations.size());
  out.neighbors /= static_cast<double>(explanations.size());
  return out;
}

NormalizationMap normalization_from_alignment(const KnowledgeGraph& kg_a, const KnowledgeGraph& kg_b,
                                              std::span<const AlignmentPair> alignment,
                                              std::string_view predicate_suffix) {
  NormalizationMap map;
  auto base_key = [&](const std::string& name) {
    if (!predicate_suffix.empty() && name.size() > predicate_suffix.size() && name.ends_with(predicate_suffix)) {
      return name.substr(0, name.size() - predicate_suffix.size());
    }
    return name;
  };
  for (const auto& name : kg_b.predicates().names()) {
    const std::string base = base_key(name);
    if (base != name) map[name] = base;
  }
  for (const auto& p : alignment) {
    const std::string& name_a = kg_a.entities().name(p.a);
    const std::string& name_b = kg_b.entities().name(p.b);
    if (name_a != name_b) map[name_b] = name_a;
    // The i-th literal under a key on one side matches the i-th on the other.
    std::map<std::string, std::vector<const std::string*>> values_a;
    for (std::uint32_t t : kg_a.attributes_of(p.a)) {
      const auto& triple = kg_a.attr_triples()[t];
      values_a[kg_a.predicates().name(triple.predicate)].push_back(&triple.value);
    }
    std::map<std::string, std::size_t> used;
    for (std::uint32_t t : kg_b.attributes_of(p.b)) {
      const auto& triple = kg_b.attr_triples()[t];
      const std::string key = base_key(kg_b.predicates().name(triple.predicate));
      auto it = values_a.find(key);
      if (it == values_a.end()) continue;
      const std::size_t i = used[key]++;
      if (i < it->second.size() && *it->second[i] != triple.value) map[triple.value] = *it->second[i];
    }
  }
  return map;
}

// ---- removal analysis -------------------------------------------------------------

std::vector<RemovalRun> removal_analysis(const Dataset& data, const Checkpoint& ckpt, RemovalKind kind,
                                         const NormalizationMap& map, const RemovalOptions& options) {
  if (options.runs < 2) throw std::invalid_argument("removal_analysis: runs must be at least 2");
  const ModelDims& dims = ckpt.config.dims;
  const auto test = data.seeds.test();
  KnowledgeGraph graphs[2] = {data.a, data.b};
  std::optional<EntityInternals> previous[2];
  std::vector<RemovalRun> report;

  for (std::size_t run = 1; run <= options.runs; ++run) {
    if (run > 1) {
      for (int s = 0; s < 2; ++s) {
        KnowledgeGraph& kg = graphs[s];
        std::vector<bool> keep_attr(kg.attr_triples().size(), true);
        std::vector<bool> keep_rel(kg.rel_triples().size(), true);
        const bool remove_all = run == options.runs;
        for (EntityId v = 0; v < kg.num_entities(); ++v) {
          if (kind == RemovalKind::Attributes) {
            if (remove_all) {
              for (std::uint32_t t : kg.attributes_of(v)) keep_attr[t] = false;
              continue;
            }
            const auto& imp = previous[s]->attributes[v];
            if (imp.empty()) continue;
            const auto top = std::max_element(imp.begin(), imp.end(), [](const auto& x, const auto& y) {
              return x.second < y.second;
            });
            keep_attr[top->first] = false;
          } else {
            if (remove_all) {
              for (const auto& e : kg.adjacency(v)) keep_rel[e.triple] = false;
              continue;
            }
            const auto& nb = previous[s]->neighbors[v];
            if (nb.empty()) continue;
            const auto top = std::max_element(nb.begin(), nb.end(), [](const auto& x, const auto& y) {
              return x.second < y.second;
            });
            for (const auto& e : kg.adjacency(v)) {
              if (e.neighbor == top->first) keep_rel[e.triple] = false;
            }
          }
        }
        kg = kg.filtered(keep_attr, keep_rel);
      }
    }

    HistoricalEmbeddingStore store(dims.dim, graphs[0].num_entities(), graphs[1].num_entities());
    const ModelView model{ckpt.config, ckpt.params, store};
    rebuild_store(graphs[0], model, store, options.refresh_passes);
    rebuild_store(graphs[1], model, store, options.refresh_passes);
    EntityEmbeddingTable ta = embed_all(graphs[0], model, true);
    EntityEmbeddingTable tb = embed_all(graphs[1], model, true);

    RemovalRun r;
    r.run = run;
    r.hits1 = evaluate(ta, tb, test, options.metric, 1).hits1;
    std::vector<Explanation> explanations;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const double score = similarity(ta.h.row(test[i].a), tb.h.row(test[i].b), options.metric);
      explanations.push_back(explain(i, score, graphs[0], *ta.internals, test[i].a, graphs[1], *tb.internals,
                                     test[i].b, options.top_n));
    }
    r.jaccard = jaccard_explanations(explanations, map);
    r.attr_triples_a = graphs[0].attr_triples().size();
    r.attr_triples_b = graphs[1].attr_triples().size();
    r.rel_triples_a = graphs[0].rel_triples().size();
    r.rel_triples_b = graphs[1].rel_triples().size();
    report.push_back(r);
    previous[0] = std::move(ta.internals);
    previous[1] = std::move(tb.internals);
  }
  return report;
}

}  // namespace kgalign
