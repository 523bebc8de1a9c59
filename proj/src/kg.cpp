#include "kgalign/kg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "kgalign/rng.hpp"

namespace kgalign {

// ---- InternTable ------------------------------------------------------------

std::uint32_t InternTable::intern(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it != index_.end()) return it->second;
  const auto id = static_cast<std::uint32_t>(names_.size());
  names_.emplace_back(name);
  index_.emplace(names_.back(), id);
  return id;
}

std::optional<std::uint32_t> InternTable::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::uint64_t InternTable::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 0x100000001b3ULL;
  };
  for (const auto& n : names_) {
    for (unsigned char c : n) mix(c);
    mix(0xff);
  }
  return h;
}

// ---- UTF-8 / escaping -------------------------------------------------------

std::vector<char32_t> decode_utf8(std::string_view s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    char32_t cp = c;
    if (c >= 0xF0 && c < 0xF8) {
      len = 4;
      cp = c & 0x07;
    } else if (c >= 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if (c >= 0xC0) {
      len = 2;
      cp = c & 0x1F;
    }
    if (len > 1 && i + len <= s.size()) {
      for (std::size_t k = 1; k < len; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
    } else {
      len = 1;
      cp = c;  // invalid byte taken as-is
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string truncate_code_points(std::string_view s, std::size_t max_code_points) {
  std::size_t count = 0;
  std::size_t i = 0;
  while (i < s.size() && count < max_code_points) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = c >= 0xF0 ? 4 : c >= 0xE0 ? 3 : c >= 0xC0 ? 2 : 1;
    i = std::min(s.size(), i + len);
    ++count;
  }
  return std::string(s.substr(0, i));
}

std::string escape_field(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  for (char c : raw) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      default: out += c;
    }
  }
  return out;
}

std::string unescape_field(std::string_view escaped) {
  std::string out;
  out.reserve(escaped.size());
  for (std::size_t i = 0; i < escaped.size(); ++i) {
    if (escaped[i] == '\\' && i + 1 < escaped.size()) {
      const char n = escaped[i + 1];
      if (n == 't') { out += '\t'; ++i; continue; }
      if (n == 'n') { out += '\n'; ++i; continue; }
      if (n == '\\') { out += '\\'; ++i; continue; }
    }
    out += escaped[i];
  }
  return out;
}

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

std::string dedup_key(char kind, std::uint32_t h, std::uint32_t p, std::string_view o) {
  std::string key;
  key.reserve(o.size() + 16);
  key += kind;
  key.append(reinterpret_cast<const char*>(&h), sizeof h);
  key.append(reinterpret_cast<const char*>(&p), sizeof p);
  key += o;
  return key;
}

}  // namespace

// ---- KnowledgeGraph -----------------------------------------------------------

bool KnowledgeGraphBuilder::add_relationship(std::string_view head, std::string_view predicate,
                                             std::string_view tail) {
  const EntityId h = entity(head);
  const PredicateId p = this->predicate(predicate);
  const EntityId t = entity(tail);
  std::string tail_key(reinterpret_cast<const char*>(&t), sizeof t);
  if (!seen_.emplace(dedup_key('R', h, p, tail_key), true).second) return false;
  graph_.order_.push_back({TripleKind::Relationship, static_cast<std::uint32_t>(graph_.rel_.size())});
  graph_.rel_.push_back({h, p, t});
  return true;
}

bool KnowledgeGraphBuilder::add_attribute(std::string_view head, std::string_view predicate,
                                          std::string_view value) {
  const EntityId h = entity(head);
  const PredicateId p = this->predicate(predicate);
  std::string literal = truncate_code_points(value, kMaxLiteralCodePoints);
  if (!seen_.emplace(dedup_key('A', h, p, literal), true).second) return false;
  graph_.order_.push_back({TripleKind::Attribute, static_cast<std::uint32_t>(graph_.attr_.size())});
  graph_.attr_.push_back({h, p, std::move(literal)});
  return true;
}

KnowledgeGraph KnowledgeGraphBuilder::build() && {
  graph_.build_indexes();
  return std::move(graph_);
}

void KnowledgeGraph::build_indexes() {
  adjacency_.assign(entities_.size(), {});
  attrs_of_.assign(entities_.size(), {});
  for (std::uint32_t i = 0; i < rel_.size(); ++i) {
    const auto& t = rel_[i];
    adjacency_[t.head].push_back({t.tail, t.predicate, Direction::Out, i});
    adjacency_[t.tail].push_back({t.head, t.predicate, Direction::In, i});
  }
  for (std::uint32_t i = 0; i < attr_.size(); ++i) attrs_of_[attr_[i].head].push_back(i);
}

std::vector<EntityId> KnowledgeGraph::neighbors(EntityId v) const {
  std::vector<EntityId> out;
  for (const auto& e : adjacency_.at(v))
    if (e.neighbor != v) out.push_back(e.neighbor);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

KnowledgeGraph KnowledgeGraph::filtered(const std::vector<bool>& keep_attr,
                                        const std::vector<bool>& keep_rel) const {
  if (keep_attr.size() != attr_.size() || keep_rel.size() != rel_.size()) {
    throw std::invalid_argument("filtered: mask sizes do not match triple counts");
  }
  KnowledgeGraph g;
  g.label_ = label_;
  g.entities_ = entities_;
  g.predicates_ = predicates_;
  std::vector<std::uint32_t> attr_map(attr_.size(), UINT32_MAX), rel_map(rel_.size(), UINT32_MAX);
  for (const auto& ref : order_) {
    if (ref.kind == TripleKind::Attribute && keep_attr[ref.index]) {
      attr_map[ref.index] = static_cast<std::uint32_t>(g.attr_.size());
      g.order_.push_back({TripleKind::Attribute, attr_map[ref.index]});
      g.attr_.push_back(attr_[ref.index]);
    } else if (ref.kind == TripleKind::Relationship && keep_rel[ref.index]) {
      rel_map[ref.index] = static_cast<std::uint32_t>(g.rel_.size());
      g.order_.push_back({TripleKind::Relationship, rel_map[ref.index]});
      g.rel_.push_back(rel_[ref.index]);
    }
  }
  g.build_indexes();
  return g;
}

std::string KnowledgeGraph::display_name(EntityId v) const {
  for (std::uint32_t idx : attrs_of_.at(v)) {
    if (predicates_.name(attr_[idx].predicate).find("name") != std::string::npos) return attr_[idx].value;
  }
  return entities_.name(v);
}

KnowledgeGraph parse_triples(std::istream& in, GraphLabel label) {
  KnowledgeGraphBuilder builder(label);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 4) {
      throw ParseError("malformed triple line: expected 4 fields, got " + std::to_string(fields.size()), line_no);
    }
    const std::string head = unescape_field(fields[0]);
    const std::string pred = unescape_field(fields[1]);
    const std::string obj = unescape_field(fields[2]);
    if (fields[3] == "R") {
      builder.add_relationship(head, pred, obj);
    } else if (fields[3] == "A") {
      builder.add_attribute(head, pred, obj);
    } else {
      throw ParseError("unknown triple kind '" + std::string(fields[3]) + "'", line_no);
    }
  }
  return std::move(builder).build();
}

KnowledgeGraph parse_triples(const std::filesystem::path& path, GraphLabel label) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open triple file: " + path.string());
  return parse_triples(in, label);
}

void write_triples(const KnowledgeGraph& kg, std::ostream& out) {
  const auto& ents = kg.entities();
  const auto& preds = kg.predicates();
  for (const auto& ref : kg.triple_order()) {
    if (ref.kind == TripleKind::Relationship) {
      const auto& t = kg.rel_triples()[ref.index];
      out << escape_field(ents.name(t.head)) << '\t' << escape_field(preds.name(t.predicate)) << '\t'
          << escape_field(ents.name(t.tail)) << "\tR\n";
    } else {
      const auto& t = kg.attr_triples()[ref.index];
      out << escape_field(ents.name(t.head)) << '\t' << escape_field(preds.name(t.predicate)) << '\t'
          << escape_field(t.value) << "\tA\n";
    }
  }
}

void write_triples(const KnowledgeGraph& kg, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write triple file: " + path.string());
  write_triples(kg, out);
}

// ---- SeedAlignment ------------------------------------------------------------

std::vector<AlignmentPair> SeedAlignment::train() const {
  std::vector<AlignmentPair> out;
  for (std::size_t i = 0; i < pairs_.size(); ++i)
    if (is_train_[i]) out.push_back(pairs_[i]);
  return out;
}

std::vector<AlignmentPair> SeedAlignment::test() const {
  std::vector<AlignmentPair> out;
  for (std::size_t i = 0; i < pairs_.size(); ++i)
    if (!is_train_[i]) out.push_back(pairs_[i]);
  return out;
}

SeedAlignment load_seed_alignment(std::istream& in, const KnowledgeGraph& kg_a, const KnowledgeGraph& kg_b,
                                  double train_fraction, std::uint64_t rng_seed) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) {
    throw SeedAlignmentError("train fraction must lie in [0, 1]");
  }
  std::vector<AlignmentPair> pairs;
  std::unordered_set<EntityId> used_a, used_b;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 2) {
      throw SeedAlignmentError("malformed alignment line: expected 2 fields at line " + std::to_string(line_no));
    }
    const auto a = kg_a.entities().find(unescape_field(fields[0]));
    const auto b = kg_b.entities().find(unescape_field(fields[1]));
    if (!a || !b) throw SeedAlignmentError("unknown entity at line " + std::to_string(line_no));
    if (!used_a.insert(*a).second || !used_b.insert(*b).second) {
      throw SeedAlignmentError("duplicate entity across pairs at line " + std::to_string(line_no));
    }
    pairs.push_back({*a, *b});
  }

  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(rng_seed);
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(pairs.size())));
  std::vector<bool> is_train(pairs.size(), false);
  for (std::size_t i = 0; i < n_train; ++i) is_train[order[i]] = true;
  return SeedAlignment(std::move(pairs), std::move(is_train));
}

SeedAlignment load_seed_alignment(const std::filesystem::path& path, const KnowledgeGraph& kg_a,
                                  const KnowledgeGraph& kg_b, double train_fraction, std::uint64_t rng_seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SeedAlignmentError("cannot open alignment file: " + path.string());
  return load_seed_alignment(in, kg_a, kg_b, train_fraction, rng_seed);
}

void write_alignment(const std::vector<AlignmentPair>& pairs, const KnowledgeGraph& kg_a,
                     const KnowledgeGraph& kg_b, std::ostream& out) {
  for (const auto& p : pairs) {
    out << escape_field(kg_a.entities().name(p.a)) << '\t' << escape_field(kg_b.entities().name(p.b)) << '\n';
  }
}

// ---- synthetic pairs ----------------------------------------------------------

namespace {

constexpr std::string_view kNoiseAlphabet = "abcdefghijklmnopqrstuvwxyz0123456789";
constexpr std::string_view kLetters = "abcdefghijklmnopqrstuvwxyz";

const std::vector<std::string>& attribute_key_pool() {
  static const std::vector<std::string> pool = {
      "birth_date", "alias",   "occupation_code", "city",     "founded",  "motto",
      "catalog_id", "website", "nickname",        "postcode", "death_date", "award"};
  return pool;
}

const std::vector<std::string>& relation_names() {
  static const std::vector<std::string> names = {"member_of",  "located_in", "works_with",
                                                 "spouse",     "parent_of",  "influenced_by"};
  return names;
}

std::string random_word(Rng& rng, std::size_t min_len, std::size_t max_len) {
  const std::size_t len = min_len + rng.uniform_index(max_len - min_len + 1);
  std::string w;
  for (std::size_t i = 0; i < len; ++i) w += kLetters[rng.uniform_index(kLetters.size())];
  return w;
}

std::string random_literal(const std::string& key, Rng& rng) {
  if (key == "name") {
    std::string first = random_word(rng, 3, 8), last = random_word(rng, 4, 9);
    first[0] = static_cast<char>(first[0] - 'a' + 'A');
    last[0] = static_cast<char>(last[0] - 'a' + 'A');
    return first + " " + last;
  }
  if (key.find("date") != std::string::npos || key == "founded") {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", 1700 + static_cast<int>(rng.uniform_index(320)),
                  1 + static_cast<int>(rng.uniform_index(12)), 1 + static_cast<int>(rng.uniform_index(28)));
    return buf;
  }
  const std::size_t len = 5 + rng.uniform_index(8);
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s += kNoiseAlphabet[rng.uniform_index(kNoiseAlphabet.size())];
  return s;
}

std::string key_name(std::size_t index) {
  const auto& pool = attribute_key_pool();
  if (index < pool.size()) return pool[index];
  return pool[index % pool.size()] + "_" + std::to_string(index / pool.size());
}

std::string add_char_noise(const std::string& s, double p, Rng& rng) {
  std::string out;
  for (char c : s) {
    if (rng.bernoulli(p)) {
      char r;
      do {
        r = kNoiseAlphabet[rng.uniform_index(kNoiseAlphabet.size())];
      } while (r == c);
      out += r;
    } else {
      out += c;
    }
  }
  return out;
}

}  // namespace

SyntheticPair gen_synthetic_pair(const SyntheticConfig& cfg) {
  if (cfg.n_entities < 2) throw std::invalid_argument("gen_synthetic_pair: n_entities must be >= 2");
  for (double r : {cfg.rel_density, cfg.char_noise, cfg.rel_dropout}) {
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("gen_synthetic_pair: ratios must lie in [0, 1]");
  }
  const std::size_t n = cfg.n_entities;
  Rng base_rng(derive_seed(cfg.rng_seed, 1));
  Rng noise_rng(derive_seed(cfg.rng_seed, 2));

  struct Attr {
    std::string key, value;
  };
  std::vector<std::vector<Attr>> attrs(n);
  const std::size_t extra = cfg.attr_per_entity > 0 ? cfg.attr_per_entity - 1 : 0;
  const std::size_t pool_size = extra + 2;
  for (std::size_t i = 0; i < n; ++i) {
    if (cfg.attr_per_entity == 0) break;
    attrs[i].push_back({"name", random_literal("name", base_rng)});
    std::vector<std::size_t> keys(pool_size);
    for (std::size_t k = 0; k < pool_size; ++k) keys[k] = k;
    base_rng.shuffle(keys);
    keys.resize(extra);
    std::sort(keys.begin(), keys.end());
    for (std::size_t k : keys) {
      const std::string key = key_name(k);
      attrs[i].push_back({key, random_literal(key, base_rng)});
    }
  }

  // Undirected edge set with expected degree rel_density * (n - 1).
  struct Edge {
    std::uint32_t head, tail, rel;
  };
  std::vector<Edge> edges;
  const auto& rels = relation_names();
  const double total_pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  auto push_edge = [&](std::uint32_t u, std::uint32_t v) {
    if (base_rng.bernoulli(0.5)) std::swap(u, v);
    edges.push_back({u, v, static_cast<std::uint32_t>(base_rng.uniform_index(rels.size()))});
  };
  if (total_pairs <= 4.0e6) {
    for (std::uint32_t u = 0; u < n; ++u)
      for (std::uint32_t v = u + 1; v < n; ++v)
        if (base_rng.bernoulli(cfg.rel_density)) push_edge(u, v);
  } else {
    const auto m = static_cast<std::size_t>(std::llround(cfg.rel_density * total_pairs));
    std::unordered_set<std::uint64_t> used;
    while (edges.size() < m) {
      auto u = static_cast<std::uint32_t>(base_rng.uniform_index(n));
      auto v = static_cast<std::uint32_t>(base_rng.uniform_index(n));
      if (u == v) continue;
      const std::uint64_t key = (static_cast<std::uint64_t>(std::min(u, v)) << 32) | std::max(u, v);
      if (!used.insert(key).second) continue;
      push_edge(u, v);
    }
  }

  auto entity_name = [](char side, std::size_t i) { return std::string(1, side) + "/e" + std::to_string(i); };
  const std::string suffix(kSyntheticPredicateSuffix);

  KnowledgeGraphBuilder builder_a(GraphLabel::A), builder_b(GraphLabel::B);
  for (std::size_t i = 0; i < n; ++i) {
    builder_a.entity(entity_name('A', i));
    builder_b.entity(entity_name('B', i));
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& at : attrs[i]) {
      builder_a.add_attribute(entity_name('A', i), at.key, at.value);
      builder_b.add_attribute(entity_name('B', i), at.key + suffix, add_char_noise(at.value, cfg.char_noise, noise_rng));
    }
  }
  for (const auto& e : edges) {
    builder_a.add_relationship(entity_name('A', e.head), rels[e.rel], entity_name('A', e.tail));
    if (!noise_rng.bernoulli(cfg.rel_dropout)) {
      builder_b.add_relationship(entity_name('B', e.head), rels[e.rel] + suffix, entity_name('B', e.tail));
    }
  }

  SyntheticPair out{std::move(builder_a).build(), std::move(builder_b).build(), {}};
  out.gold.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) out.gold.push_back({i, i});
  return out;
}

}  // namespace kgalign
