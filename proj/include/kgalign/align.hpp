#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "kgalign/kg.hpp"
#include "kgalign/training.hpp"

namespace kgalign {

// Read-only view of a trained model.
struct ModelView {
  const TrainConfig& cfg;
  const ParameterStore& params;
  const HistoricalEmbeddingStore& store;
};

inline ModelView view_of(const Checkpoint& c) { return {c.config, c.params, c.store}; }
inline ModelView view_of(const Trainer& t, const TrainConfig& cfg) { return {cfg, t.params(), t.store()}; }

// Attention captured during inference, per entity.
struct EntityInternals {
  // (attribute triple index, importance), ordered by slot.
  std::vector<std::vector<std::pair<std::uint32_t, double>>> attributes;
  // (neighbor, weight): nei attention restricted to true neighbors, renormalized.
  std::vector<std::vector<std::pair<EntityId, double>>> neighbors;
};

struct EntityEmbeddingTable {
  GraphLabel graph = GraphLabel::A;
  Tensor h;  // entities x 2d, [h_att ; h_nei]
  std::optional<EntityInternals> internals;
};

// Inference over the same partition as training; the store is only read.
EntityEmbeddingTable embed_all(const KnowledgeGraph& kg, const ModelView& model, bool capture = false);

// Re-derives x0 for `kg` from the model: x0 <- h_att, then `passes` sweeps
// over all parts writing core rows of the final layer.
void rebuild_store(const KnowledgeGraph& kg, const ModelView& model, HistoricalEmbeddingStore& store,
                   std::size_t passes);

enum class Metric { Cosine, L2 };

struct AlignmentPrediction {
  EntityId query = 0;
  std::vector<std::pair<EntityId, double>> top;  // descending score, ties by ascending id
  std::optional<std::size_t> gold_rank;          // 1-based
};

// Cosine: zero-norm rows score 0. L2: score is the negated distance.
double similarity(std::span<const double> x, std::span<const double> y, Metric metric);

std::vector<AlignmentPrediction> predict(const Tensor& table_a, const Tensor& table_b,
                                         std::span<const EntityId> queries, std::span<const EntityId> candidates,
                                         std::size_t k, Metric metric,
                                         std::span<const std::optional<EntityId>> gold = {});

// 100 * |{rank <= k}| / |ranks|.
double hits_at_k(std::span<const std::size_t> gold_ranks, std::size_t k);
std::vector<std::size_t> gold_ranks(std::span<const AlignmentPrediction> predictions);
std::string format_percent(double value);

struct EvalResult {
  double hits1 = 0.0;
  double hits10 = 0.0;
  std::vector<AlignmentPrediction> predictions;
};

// Queries are the A side of `pairs`, candidates their B side.
EvalResult evaluate(const EntityEmbeddingTable& a, const EntityEmbeddingTable& b,
                    std::span<const AlignmentPair> pairs, Metric metric, std::size_t keep_top = 10);

struct AttributeItem {
  std::string key;
  std::string value;
  double weight = 0.0;
};

struct NeighborItem {
  std::string relation;
  std::string neighbor;  // entity identifier
  std::string label;     // display name
  double weight = 0.0;
};

struct ExplainedEntity {
  EntityId entity = 0;
  std::string name;
  std::string label;
  std::vector<AttributeItem> attributes;
  std::vector<NeighborItem> neighbors;
};

struct Explanation {
  std::size_t pair_id = 0;
  double score = 0.0;
  ExplainedEntity a;
  ExplainedEntity b;
};

inline constexpr std::size_t kDefaultTopN = 5;

// Top-n attribute and neighbor items by weight. Neighbor weight is split
// evenly across the distinct relations joining the two entities.
ExplainedEntity explain_entity(const KnowledgeGraph& kg, const EntityInternals& internals, EntityId v,
                               std::size_t top_n = kDefaultTopN);

Explanation explain(std::size_t pair_id, double score, const KnowledgeGraph& kg_a, const EntityInternals& ia,
                    EntityId a, const KnowledgeGraph& kg_b, const EntityInternals& ib, EntityId b,
                    std::size_t top_n = kDefaultTopN);

nlohmann::json to_json(const Explanation& e);

// Synonym table applied to every component of an item before comparison.
using NormalizationMap = std::map<std::string, std::string>;

double jaccard(const std::vector<std::pair<std::string, std::string>>& x,
               const std::vector<std::pair<std::string, std::string>>& y, const NormalizationMap& map);

struct JaccardScores {
  double attributes = 0.0;
  double neighbors = 0.0;
};

// Mean over explanations of J(a side, b side); attribute items are
// (key, value), neighbor items (relation, neighbor identifier).
JaccardScores jaccard_explanations(std::span<const Explanation> explanations, const NormalizationMap& map);

// Maps B names onto A names given a full alignment: predicates lose
// `predicate_suffix`, entity identifiers map to their counterpart, and
// literals of aligned entities map to the counterpart's literal under the
// same key.
NormalizationMap normalization_from_alignment(const KnowledgeGraph& kg_a, const KnowledgeGraph& kg_b,
                                              std::span<const AlignmentPair> alignment,
                                              std::string_view predicate_suffix);

enum class RemovalKind { Attributes, Neighbors };

struct RemovalRun {
  std::size_t run = 0;  // 1-based
  double hits1 = 0.0;
  JaccardScores jaccard;
  std::size_t attr_triples_a = 0, attr_triples_b = 0;
  std::size_t rel_triples_a = 0, rel_triples_b = 0;
};

struct RemovalOptions {
  std::size_t runs = 5;
  std::size_t top_n = kDefaultTopN;
  std::size_t refresh_passes = 2;
  Metric metric = Metric::Cosine;
};

// Run 1 uses the data as is, runs 2..runs-1 each remove every entity's
// currently top-ranked attribute (or the triples to its top neighbor), and
// the final run removes all of them. The model is not retrained; x0 is
// rebuilt from the modified data before every run. Evaluated on the test
// split.
std::vector<RemovalRun> removal_analysis(const Dataset& data, const Checkpoint& ckpt, RemovalKind kind,
                                         const NormalizationMap& map, const RemovalOptions& options = {});

}  // namespace kgalign
