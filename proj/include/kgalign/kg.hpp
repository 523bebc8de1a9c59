#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace kgalign {

using EntityId = std::uint32_t;
using PredicateId = std::uint32_t;

enum class GraphLabel : char { A = 'A', B = 'B' };

inline char to_char(GraphLabel g) { return static_cast<char>(g); }

// Literals are truncated to this many code points at ingestion.
inline constexpr std::size_t kMaxLiteralCodePoints = 64;

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(what + " at line " + std::to_string(line)), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Dense ids in first-appearance order.
class InternTable {
 public:
  std::uint32_t intern(std::string_view name);
  std::optional<std::uint32_t> find(std::string_view name) const;
  const std::string& name(std::uint32_t id) const { return names_.at(id); }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  // FNV-1a over the ordered names; used to bind checkpoints to data.
  std::uint64_t fingerprint() const;

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

struct RelTriple {
  EntityId head;
  PredicateId predicate;
  EntityId tail;
  bool operator==(const RelTriple&) const = default;
};

struct AttrTriple {
  EntityId head;
  PredicateId predicate;
  std::string value;
  bool operator==(const AttrTriple&) const = default;
};

enum class Direction : std::uint8_t { Out, In };

struct AdjacencyEntry {
  EntityId neighbor;
  PredicateId predicate;
  Direction direction;
  std::uint32_t triple;  // index into rel_triples()
};

enum class TripleKind : std::uint8_t { Relationship, Attribute };

struct TripleRef {
  TripleKind kind;
  std::uint32_t index;
};

class KnowledgeGraphBuilder;

// Immutable once built. Relationship and attribute predicates share one
// intern table; the triple kind tells them apart.
class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;

  GraphLabel label() const { return label_; }
  const InternTable& entities() const { return entities_; }
  const InternTable& predicates() const { return predicates_; }
  std::size_t num_entities() const { return entities_.size(); }
  std::size_t num_predicates() const { return predicates_.size(); }

  const std::vector<RelTriple>& rel_triples() const { return rel_; }
  const std::vector<AttrTriple>& attr_triples() const { return attr_; }
  const std::vector<TripleRef>& triple_order() const { return order_; }

  const std::vector<AdjacencyEntry>& adjacency(EntityId v) const { return adjacency_.at(v); }
  // Attribute triple indices of an entity, in insertion order.
  const std::vector<std::uint32_t>& attributes_of(EntityId v) const { return attrs_of_.at(v); }
  // Distinct undirected neighbors (self loops excluded), ascending.
  std::vector<EntityId> neighbors(EntityId v) const;

  // Same intern tables, with the flagged triples dropped.
  KnowledgeGraph filtered(const std::vector<bool>& keep_attr, const std::vector<bool>& keep_rel) const;

  // Human-readable label: value of the first attribute whose key is "name"
  // or ends with "name"; falls back to the entity identifier.
  std::string display_name(EntityId v) const;

 private:
  friend class KnowledgeGraphBuilder;
  void build_indexes();

  GraphLabel label_ = GraphLabel::A;
  InternTable entities_;
  InternTable predicates_;
  std::vector<RelTriple> rel_;
  std::vector<AttrTriple> attr_;
  std::vector<TripleRef> order_;
  std::vector<std::vector<AdjacencyEntry>> adjacency_;
  std::vector<std::vector<std::uint32_t>> attrs_of_;
};

class KnowledgeGraphBuilder {
 public:
  explicit KnowledgeGraphBuilder(GraphLabel label) { graph_.label_ = label; }

  EntityId entity(std::string_view name) { return graph_.entities_.intern(name); }
  PredicateId predicate(std::string_view name) { return graph_.predicates_.intern(name); }

  // Returns false when the triple is an exact duplicate.
  bool add_relationship(std::string_view head, std::string_view predicate, std::string_view tail);
  bool add_attribute(std::string_view head, std::string_view predicate, std::string_view value);

  KnowledgeGraph build() &&;

 private:
  KnowledgeGraph graph_;
  std::unordered_map<std::string, bool> seen_;
};

// Triple TSV: `head \t predicate \t object \t kind`, kind in {R, A}.
KnowledgeGraph parse_triples(std::istream& in, GraphLabel label);
KnowledgeGraph parse_triples(const std::filesystem::path& path, GraphLabel label);
void write_triples(const KnowledgeGraph& kg, std::ostream& out);
void write_triples(const KnowledgeGraph& kg, const std::filesystem::path& path);

std::string escape_field(std::string_view raw);
std::string unescape_field(std::string_view escaped);
// Keeps at most `max_code_points` UTF-8 code points.
std::string truncate_code_points(std::string_view s, std::size_t max_code_points);
std::vector<char32_t> decode_utf8(std::string_view s);

struct AlignmentPair {
  EntityId a;
  EntityId b;
  bool operator==(const AlignmentPair&) const = default;
};

class SeedAlignment {
 public:
  SeedAlignment() = default;
  SeedAlignment(std::vector<AlignmentPair> pairs, std::vector<bool> is_train)
      : pairs_(std::move(pairs)), is_train_(std::move(is_train)) {}

  const std::vector<AlignmentPair>& pairs() const { return pairs_; }
  const std::vector<bool>& train_flags() const { return is_train_; }
  std::vector<AlignmentPair> train() const;
  std::vector<AlignmentPair> test() const;

 private:
  std::vector<AlignmentPair> pairs_;
  std::vector<bool> is_train_;
};

class SeedAlignmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Lines `entityA \t entityB`. The first round(train_fraction * n) pairs of a
// seeded shuffle are flagged train.
SeedAlignment load_seed_alignment(std::istream& in, const KnowledgeGraph& kg_a, const KnowledgeGraph& kg_b,
                                  double train_fraction, std::uint64_t rng_seed);
SeedAlignment load_seed_alignment(const std::filesystem::path& path, const KnowledgeGraph& kg_a,
                                  const KnowledgeGraph& kg_b, double train_fraction, std::uint64_t rng_seed);
void write_alignment(const std::vector<AlignmentPair>& pairs, const KnowledgeGraph& kg_a,
                     const KnowledgeGraph& kg_b, std::ostream& out);

struct SyntheticConfig {
  std::size_t n_entities = 300;
  std::size_t attr_per_entity = 4;
  double rel_density = 0.02;
  double char_noise = 0.1;
  double rel_dropout = 0.2;
  std::uint64_t rng_seed = 7;
};

struct SyntheticPair {
  KnowledgeGraph a;
  KnowledgeGraph b;
  std::vector<AlignmentPair> gold;
};

// Suffix appended to every predicate name of the cloned graph.
inline constexpr std::string_view kSyntheticPredicateSuffix = "_b";

SyntheticPair gen_synthetic_pair(const SyntheticConfig& cfg);

}  // namespace kgalign
