#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "kgalign/kg.hpp"

using namespace kgalign;
using fixtures::graph_from_tsv;

namespace {

std::string serialize(const KnowledgeGraph& kg) {
  std::ostringstream out;
  write_triples(kg, out);
  return out.str();
}

std::string pairs_tsv(std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += "a" + std::to_string(i) + "\tb" + std::to_string(i) + "\n";
  return s;
}

KnowledgeGraph entities_graph(char prefix, std::size_t n, GraphLabel label) {
  std::string tsv;
  for (std::size_t i = 0; i < n; ++i) tsv += std::string(1, prefix) + std::to_string(i) + "\tname\tx\tA\n";
  return graph_from_tsv(tsv, label);
}

}  // namespace

TEST_CASE("parse_triples") {
  SUBCASE("one relationship") {
    const auto kg = graph_from_tsv("Q1\tspouse\tQ2\tR\n", GraphLabel::A);
    CHECK(kg.num_entities() == 2);
    CHECK(kg.num_predicates() == 1);
    CHECK(kg.rel_triples().size() == 1);
    CHECK(kg.attr_triples().empty());
  }
  SUBCASE("one attribute") {
    const auto kg = graph_from_tsv("Q1\tname\tCarl Ferdinand Cori\tA\n", GraphLabel::A);
    CHECK(kg.num_entities() == 1);
    REQUIRE(kg.attr_triples().size() == 1);
    CHECK(kg.attr_triples()[0].value == "Carl Ferdinand Cori");
    CHECK(kg.display_name(0) == "Carl Ferdinand Cori");
  }
  SUBCASE("duplicate lines collapse") {
    const auto kg = graph_from_tsv("Q1\tspouse\tQ2\tR\nQ1\tspouse\tQ2\tR\n", GraphLabel::A);
    CHECK(kg.rel_triples().size() == 1);
    CHECK(kg.adjacency(0).size() == 1);
  }
  SUBCASE("empty input") {
    const auto kg = graph_from_tsv("", GraphLabel::B);
    CHECK(kg.num_entities() == 0);
    CHECK(kg.label() == GraphLabel::B);
  }
  SUBCASE("wrong field count names the line") {
    try {
      graph_from_tsv("Q1\tspouse\tQ2\tR\nQ1\tspouse\tQ2\n", GraphLabel::A);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
  }
  SUBCASE("unknown kind") {
    CHECK_THROWS_AS(graph_from_tsv("Q1\tspouse\tQ2\tX\n", GraphLabel::A), ParseError);
  }
  SUBCASE("escapes and truncation") {
    const std::string long_value(100, 'x');
    const auto kg = graph_from_tsv("e\tnote\ta\\tb\\nc\tA\ne\tlong\t" + long_value + "\tA\n", GraphLabel::A);
    CHECK(kg.attr_triples()[0].value == "a\tb\nc");
    CHECK(kg.attr_triples()[1].value.size() == kMaxLiteralCodePoints);
    CHECK(truncate_code_points("\xc3\xa9\xc3\xa9\xc3\xa9", 2) == "\xc3\xa9\xc3\xa9");
  }
  SUBCASE("interning in first-appearance order") {
    const auto kg = graph_from_tsv("z\tp\ty\tR\ny\tq\tx\tR\n", GraphLabel::A);
    CHECK(kg.entities().names() == std::vector<std::string>{"z", "y", "x"});
    CHECK(kg.predicates().names() == std::vector<std::string>{"p", "q"});
  }
}

TEST_CASE("graph invariants") {
  const auto kg = fixtures::toy_graph(GraphLabel::A);

  SUBCASE("adjacency has one entry per triple and direction") {
    std::size_t out = 0, in = 0;
    for (EntityId v = 0; v < kg.num_entities(); ++v) {
      for (const auto& e : kg.adjacency(v)) {
        const auto& t = kg.rel_triples()[e.triple];
        if (e.direction == Direction::Out) {
          ++out;
          CHECK(t.head == v);
          CHECK(t.tail == e.neighbor);
        } else {
          ++in;
          CHECK(t.tail == v);
          CHECK(t.head == e.neighbor);
        }
        CHECK(t.predicate == e.predicate);
      }
    }
    CHECK(out == kg.rel_triples().size());
    CHECK(in == kg.rel_triples().size());
  }

  SUBCASE("ids resolve") {
    for (const auto& t : kg.rel_triples()) {
      CHECK(t.head < kg.num_entities());
      CHECK(t.tail < kg.num_entities());
      CHECK(t.predicate < kg.num_predicates());
    }
  }

  SUBCASE("round trip") {
    const std::string text = serialize(kg);
    const auto again = graph_from_tsv(text, GraphLabel::A);
    CHECK(again.entities().names() == kg.entities().names());
    CHECK(again.predicates().names() == kg.predicates().names());
    CHECK(again.rel_triples() == kg.rel_triples());
    CHECK(again.attr_triples() == kg.attr_triples());
    CHECK(serialize(again) == text);
  }

  SUBCASE("neighbors are distinct and sorted") {
    const auto e1 = *kg.entities().find("e1");
    std::vector<EntityId> expected;
    for (const char* n : {"e0", "e2", "e3", "e4"}) expected.push_back(*kg.entities().find(n));
    std::sort(expected.begin(), expected.end());
    CHECK(kg.neighbors(e1) == expected);
  }

  SUBCASE("filtered keeps intern tables") {
    std::vector<bool> keep_attr(kg.attr_triples().size(), false), keep_rel(kg.rel_triples().size(), true);
    keep_rel[0] = false;
    const auto f = kg.filtered(keep_attr, keep_rel);
    CHECK(f.num_entities() == kg.num_entities());
    CHECK(f.entities().fingerprint() == kg.entities().fingerprint());
    CHECK(f.attr_triples().empty());
    CHECK(f.rel_triples().size() == kg.rel_triples().size() - 1);
  }

  SUBCASE("display name falls back to the identifier") {
    CHECK(kg.display_name(*kg.entities().find("e5")) == "e5");
  }
}

TEST_CASE("load_seed_alignment") {
  const auto a = entities_graph('a', 12, GraphLabel::A);
  const auto b = entities_graph('b', 12, GraphLabel::B);

  SUBCASE("exact train fraction") {
    for (std::uint64_t seed : {0u, 1u, 99u}) {
      std::istringstream in(pairs_tsv(10));
      const auto s = load_seed_alignment(in, a, b, 0.3, seed);
      CHECK(s.train().size() == 3);
      CHECK(s.test().size() == 7);
    }
  }
  SUBCASE("same seed same split") {
    std::istringstream in1(pairs_tsv(10)), in2(pairs_tsv(10));
    CHECK(load_seed_alignment(in1, a, b, 0.3, 5).train_flags() ==
          load_seed_alignment(in2, a, b, 0.3, 5).train_flags());
  }
  SUBCASE("train and test are disjoint and cover all pairs") {
    std::istringstream in(pairs_tsv(12));
    const auto s = load_seed_alignment(in, a, b, 0.5, 3);
    auto train = s.train(), test = s.test();
    CHECK(train.size() + test.size() == 12);
    for (const auto& p : train) CHECK(std::find(test.begin(), test.end(), p) == test.end());
  }
  SUBCASE("unknown entity names the line") {
    std::istringstream in("a0\tb0\na1\tnope\n");
    CHECK_THROWS_WITH_AS(load_seed_alignment(in, a, b, 0.3, 0), "unknown entity at line 2", SeedAlignmentError);
  }
  SUBCASE("entity in two pairs") {
    std::istringstream in("a0\tb0\na0\tb1\n");
    CHECK_THROWS_AS(load_seed_alignment(in, a, b, 0.3, 0), SeedAlignmentError);
  }
}

TEST_CASE("gen_synthetic_pair") {
  SUBCASE("zero noise clones the graph") {
    SyntheticConfig cfg;
    cfg.n_entities = 40;
    cfg.char_noise = 0.0;
    cfg.rel_dropout = 0.0;
    cfg.rel_density = 0.1;
    const auto p = gen_synthetic_pair(cfg);
    REQUIRE(p.gold.size() == 40);
    for (std::size_t i = 0; i < 40; ++i) {
      CHECK(p.gold[i].a == i);
      CHECK(p.gold[i].b == i);
    }
    REQUIRE(p.a.rel_triples().size() == p.b.rel_triples().size());
    REQUIRE(p.a.attr_triples().size() == p.b.attr_triples().size());
    const std::string suffix(kSyntheticPredicateSuffix);
    for (std::size_t t = 0; t < p.a.rel_triples().size(); ++t) {
      const auto& x = p.a.rel_triples()[t];
      const auto& y = p.b.rel_triples()[t];
      CHECK(x.head == y.head);
      CHECK(x.tail == y.tail);
      CHECK(p.b.predicates().name(y.predicate) == p.a.predicates().name(x.predicate) + suffix);
    }
    for (std::size_t t = 0; t < p.a.attr_triples().size(); ++t) {
      CHECK(p.a.attr_triples()[t].value == p.b.attr_triples()[t].value);
    }
  }
  SUBCASE("full dropout removes every relationship") {
    SyntheticConfig cfg;
    cfg.n_entities = 30;
    cfg.rel_dropout = 1.0;
    const auto p = gen_synthetic_pair(cfg);
    CHECK(!p.a.rel_triples().empty());
    CHECK(p.b.rel_triples().empty());
  }
  SUBCASE("pure function of the config") {
    SyntheticConfig cfg;
    cfg.n_entities = 50;
    const auto x = gen_synthetic_pair(cfg), y = gen_synthetic_pair(cfg);
    CHECK(serialize(x.a) == serialize(y.a));
    CHECK(serialize(x.b) == serialize(y.b));
  }
  SUBCASE("degenerate config") {
    SyntheticConfig cfg;
    cfg.n_entities = 1;
    CHECK_THROWS_AS(gen_synthetic_pair(cfg), std::invalid_argument);
  }
  SUBCASE("pinned gold statistics for the default pair") {
    // Values printed by tools/measure_synthetic.py on the n=300, seed 7 pair.
    const auto p = gen_synthetic_pair(SyntheticConfig{});
    const std::string suffix(kSyntheticPredicateSuffix);
    double dist = 0.0;
    std::size_t count = 0;
    auto levenshtein = [](const std::string& s, const std::string& t) {
      std::vector<std::size_t> prev(t.size() + 1), cur(t.size() + 1);
      for (std::size_t j = 0; j <= t.size(); ++j) prev[j] = j;
      for (std::size_t i = 1; i <= s.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= t.size(); ++j)
          cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (s[i - 1] != t[j - 1])});
        std::swap(prev, cur);
      }
      return prev[t.size()];
    };
    double degree_diff = 0.0;
    for (const auto& g : p.gold) {
      for (std::uint32_t ta : p.a.attributes_of(g.a)) {
        const auto& x = p.a.attr_triples()[ta];
        for (std::uint32_t tb : p.b.attributes_of(g.b)) {
          const auto& y = p.b.attr_triples()[tb];
          if (p.b.predicates().name(y.predicate) == p.a.predicates().name(x.predicate) + suffix) {
            dist += static_cast<double>(levenshtein(x.value, y.value));
            ++count;
          }
        }
      }
      degree_diff += std::abs(static_cast<double>(p.a.adjacency(g.a).size()) -
                              static_cast<double>(p.b.adjacency(g.b).size()));
    }
    CHECK(dist / static_cast<double>(count) == doctest::Approx(0.985833).epsilon(1e-6));
    CHECK(degree_diff / static_cast<double>(p.gold.size()) == doctest::Approx(1.28).epsilon(1e-9));
  }
}

TEST_CASE("utf8 decoding") {
  CHECK(decode_utf8("a\xc3\xa9\xe2\x82\xac") == std::vector<char32_t>{U'a', U'é', U'€'});
}
