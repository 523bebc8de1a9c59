#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "fixtures.hpp"
#include "kgalign/align.hpp"

using namespace kgalign;
using fixtures::random_tensor;

namespace {

using Items = std::vector<std::pair<std::string, std::string>>;

Dataset small_dataset(std::size_t n) {
  SyntheticConfig syn;
  syn.n_entities = n;
  syn.rel_density = 0.08;
  return fixtures::synthetic_dataset(syn, 0.3, 1);
}

TrainConfig small_config() {
  TrainConfig cfg = fixtures::tiny_config();
  cfg.num_parts = 2;
  cfg.epochs = 3;
  return cfg;
}

// Full scan, highest score first, ties by ascending id.
std::vector<std::pair<EntityId, double>> scan(const Tensor& a, const Tensor& b, EntityId q,
                                              const std::vector<EntityId>& cands, bool cosine) {
  std::vector<std::pair<EntityId, double>> out;
  for (EntityId c : cands) {
    double xy = 0.0, xx = 0.0, yy = 0.0, dd = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
      xy += a(q, j) * b(c, j);
      xx += a(q, j) * a(q, j);
      yy += b(c, j) * b(c, j);
      dd += (a(q, j) - b(c, j)) * (a(q, j) - b(c, j));
    }
    const double s = cosine ? (xx == 0.0 || yy == 0.0 ? 0.0 : xy / std::sqrt(xx * yy)) : -std::sqrt(dd);
    out.emplace_back(c, s);
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
    if (std::abs(x.second - y.second) > 1e-12) return x.second > y.second;
    return x.first < y.first;
  });
  return out;
}

}  // namespace

TEST_CASE("similarity") {
  const std::vector<double> x{3.0, 4.0}, y{6.0, 8.0}, z{0.0, 0.0}, w{-4.0, 3.0};
  CHECK(similarity(x, y, Metric::Cosine) == doctest::Approx(1.0));
  CHECK(similarity(x, w, Metric::Cosine) == doctest::Approx(0.0));
  CHECK(similarity(x, z, Metric::Cosine) == 0.0);
  CHECK(similarity(x, y, Metric::L2) == doctest::Approx(-5.0));
  CHECK(similarity(x, x, Metric::L2) == 0.0);
}

TEST_CASE("predict") {
  SUBCASE("matches a full scan") {
    Rng rng(4);
    for (bool cosine : {true, false}) {
      for (int trial = 0; trial < 5; ++trial) {
        const Tensor a = random_tensor(12, 5, rng), b = random_tensor(15, 5, rng);
        std::vector<EntityId> queries{0, 3, 7, 11}, cands{14, 2, 5, 6, 9, 0, 1, 12};
        const auto got = predict(a, b, queries, cands, 4, cosine ? Metric::Cosine : Metric::L2);
        REQUIRE(got.size() == queries.size());
        for (std::size_t i = 0; i < queries.size(); ++i) {
          const auto expected = scan(a, b, queries[i], cands, cosine);
          REQUIRE(got[i].top.size() == 4);
          for (std::size_t r = 0; r < 4; ++r) {
            CHECK(got[i].top[r].first == expected[r].first);
            CHECK(std::abs(got[i].top[r].second - expected[r].second) <= 1e-12);
          }
        }
      }
    }
  }
  SUBCASE("ties broken by ascending id") {
    const Tensor a(1, 2, {1.0, 0.0});
    const Tensor b(4, 2, {2.0, 0.0, 0.0, 1.0, 1.0, 0.0, 5.0, 0.0});
    const std::vector<EntityId> q{0}, c{3, 1, 2, 0};
    const std::vector<std::optional<EntityId>> gold{EntityId{2}};
    const auto p = predict(a, b, q, c, 4, Metric::Cosine, gold);
    std::vector<EntityId> order;
    for (const auto& [id, s] : p[0].top) order.push_back(id);
    CHECK(order == std::vector<EntityId>{0, 2, 3, 1});
    REQUIRE(p[0].gold_rank);
    CHECK(*p[0].gold_rank == 2);
  }
  SUBCASE("rejects empty candidates and width mismatch") {
    const Tensor a(2, 3), b(2, 4);
    const std::vector<EntityId> q{0}, none, c{0};
    CHECK_THROWS_AS(predict(a, a, q, none, 1, Metric::Cosine), std::invalid_argument);
    CHECK_THROWS_AS(predict(a, b, q, c, 1, Metric::Cosine), ShapeError);
  }
}

TEST_CASE("hits_at_k") {
  Rng rng(6);
  std::vector<std::size_t> ranks(200);
  for (auto& r : ranks) r = 1 + rng.uniform_index(30);
  double last = 0.0;
  for (std::size_t k = 1; k <= 30; ++k) {
    const auto direct = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r <= k; });
    const double h = hits_at_k(ranks, k);
    CHECK(h == doctest::Approx(100.0 * static_cast<double>(direct) / 200.0).epsilon(1e-12));
    CHECK(h >= last);
    last = h;
  }
  CHECK(last == 100.0);
  CHECK(format_percent(94.833333) == "94.83");
  CHECK(format_percent(100.0) == "100.00");
  CHECK(format_percent(0.005) == "0.01");
}

TEST_CASE("embed_all and explanations") {
  const Dataset data = small_dataset(40);
  const TrainConfig cfg = small_config();
  const Checkpoint ckpt = train(cfg, data);
  const auto ta = embed_all(data.a, view_of(ckpt), true);
  const auto tb = embed_all(data.b, view_of(ckpt), true);

  SUBCASE("shape and determinism") {
    CHECK(ta.h.rows() == data.a.num_entities());
    CHECK(ta.h.cols() == 2 * cfg.dims.dim);
    CHECK(ta.h.all_finite());
    CHECK(embed_all(data.a, view_of(ckpt), false).h == ta.h);
  }
  SUBCASE("captured weights are distributions") {
    for (EntityId v = 0; v < data.a.num_entities(); ++v) {
      const auto& attrs = ta.internals->attributes[v];
      CHECK(attrs.size() == std::min(data.a.attributes_of(v).size(), cfg.dims.max_slots));
      if (!attrs.empty()) {
        double s = 0.0;
        for (const auto& [t, w] : attrs) s += w;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
      }
      const auto& nb = ta.internals->neighbors[v];
      CHECK(nb.size() == data.a.neighbors(v).size());
      if (!nb.empty()) {
        double s = 0.0;
        for (const auto& [w, a] : nb) s += a;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
      }
    }
  }
  SUBCASE("explanation json") {
    const auto test = data.seeds.test();
    const auto& p = test[0];
    const double score = similarity(ta.h.row(p.a), tb.h.row(p.b), Metric::Cosine);
    const auto e = explain(0, score, data.a, *ta.internals, p.a, data.b, *tb.internals, p.b, 2);
    CHECK(e.a.attributes.size() <= 2);
    CHECK(e.a.neighbors.size() <= 2);
    for (std::size_t i = 1; i < e.a.attributes.size(); ++i) CHECK(e.a.attributes[i - 1].weight >= e.a.attributes[i].weight);
    const auto j = to_json(e);
    CHECK(j.at("pair_id") == 0);
    CHECK(j.at("score").get<double>() == doctest::Approx(score));
    CHECK(j.at("a").at("entity") == data.a.entities().name(p.a));
    CHECK(j.at("b").at("entity") == data.b.entities().name(p.b));
    for (const auto& item : j.at("a").at("attributes")) {
      CHECK(item.size() == 3);
      CHECK(item[0].is_string());
      CHECK(item[2].is_number());
    }
    for (const auto& item : j.at("a").at("neighbors")) CHECK(item.size() == 3);
  }
  SUBCASE("evaluate agrees with predict") {
    const auto test = data.seeds.test();
    const auto r = evaluate(ta, tb, test, Metric::Cosine);
    const auto ranks = gold_ranks(r.predictions);
    CHECK(r.hits1 == hits_at_k(ranks, 1));
    CHECK(r.hits10 == hits_at_k(ranks, 10));
    CHECK(r.hits1 <= r.hits10);
  }
}

TEST_CASE("explain_entity") {
  const auto kg = fixtures::graph_from_tsv(
      "x\tname\tXavier\tA\n"
      "x\tborn\t1900\tA\n"
      "x\tfield\tart\tA\n"
      "x\tknows\ty\tR\n"
      "y\tmarried\tx\tR\n"
      "x\tknows\tz\tR\n",
      GraphLabel::A);
  const EntityId x = *kg.entities().find("x"), y = *kg.entities().find("y"), z = *kg.entities().find("z");
  EntityInternals in;
  in.attributes.resize(kg.num_entities());
  in.neighbors.resize(kg.num_entities());
  in.attributes[x] = {{0, 0.2}, {1, 0.5}, {2, 0.3}};
  in.neighbors[x] = {{y, 0.8}, {z, 0.2}};

  const auto e = explain_entity(kg, in, x, 5);
  CHECK(e.label == "Xavier");
  REQUIRE(e.attributes.size() == 3);
  CHECK(e.attributes[0].key == "born");
  CHECK(e.attributes[0].value == "1900");
  CHECK(e.attributes[2].key == "name");
  REQUIRE(e.neighbors.size() == 3);
  // Two relations join x and y, so each carries half of its weight.
  CHECK(e.neighbors[0].weight == doctest::Approx(0.4));
  CHECK(e.neighbors[1].weight == doctest::Approx(0.4));
  CHECK(e.neighbors[2].neighbor == "z");
  CHECK(e.neighbors[2].weight == doctest::Approx(0.2));
  CHECK(explain_entity(kg, in, x, 1).attributes.size() == 1);
}

TEST_CASE("jaccard") {
  const NormalizationMap none;
  const Items x{{"name", "Ada"}, {"born", "1815"}}, y{{"born", "1815"}, {"field", "maths"}}, empty;
  SUBCASE("identity, symmetry, range") {
    CHECK(jaccard(x, x, none) == 1.0);
    CHECK(jaccard(x, y, none) == doctest::Approx(1.0 / 3.0));
    CHECK(jaccard(y, x, none) == jaccard(x, y, none));
    Rng rng(2);
    for (int t = 0; t < 50; ++t) {
      Items a, b;
      for (int i = 0; i < 4; ++i) {
        a.emplace_back("k" + std::to_string(rng.uniform_index(3)), "v" + std::to_string(rng.uniform_index(3)));
        b.emplace_back("k" + std::to_string(rng.uniform_index(3)), "v" + std::to_string(rng.uniform_index(3)));
      }
      const double j = jaccard(a, b, none);
      CHECK(j >= 0.0);
      CHECK(j <= 1.0);
      CHECK(j == jaccard(b, a, none));
    }
  }
  SUBCASE("empty sets") {
    CHECK(jaccard(empty, empty, none) == 1.0);
    CHECK(jaccard(x, empty, none) == 0.0);
  }
  SUBCASE("normalization map") {
    const Items b{{"name_b", "Ada L."}, {"born_b", "1815"}};
    CHECK(jaccard(x, b, none) == 0.0);
    const NormalizationMap map{{"name_b", "name"}, {"born_b", "born"}, {"Ada L.", "Ada"}};
    CHECK(jaccard(x, b, map) == 1.0);
  }
}

TEST_CASE("normalization_from_alignment") {
  SyntheticConfig syn;
  syn.n_entities = 30;
  const auto p = gen_synthetic_pair(syn);
  const std::string suffix(kSyntheticPredicateSuffix);
  const auto map = normalization_from_alignment(p.a, p.b, p.gold, suffix);
  for (const auto& name : p.b.predicates().names()) {
    REQUIRE(map.count(name));
    CHECK(map.at(name) + suffix == name);
  }
  for (const auto& g : p.gold) {
    for (std::uint32_t ta : p.a.attributes_of(g.a)) {
      const auto& x = p.a.attr_triples()[ta];
      const std::string key = p.a.predicates().name(x.predicate);
      for (std::uint32_t tb : p.b.attributes_of(g.b)) {
        const auto& y = p.b.attr_triples()[tb];
        if (p.b.predicates().name(y.predicate) != key + suffix) continue;
        const auto it = map.find(y.value);
        CHECK((it == map.end() ? y.value : it->second) == x.value);
      }
    }
  }
}

TEST_CASE("removal_analysis") {
  const Dataset data = small_dataset(40);
  const Checkpoint ckpt = train(small_config(), data);
  const auto map = normalization_from_alignment(data.a, data.b, data.seeds.pairs(), kSyntheticPredicateSuffix);
  RemovalOptions opts;
  opts.runs = 3;

  SUBCASE("attributes") {
    const auto runs = removal_analysis(data, ckpt, RemovalKind::Attributes, map, opts);
    REQUIRE(runs.size() == 3);
    CHECK(runs[0].attr_triples_a == data.a.attr_triples().size());
    CHECK(runs[1].attr_triples_a < runs[0].attr_triples_a);
    CHECK(runs[2].attr_triples_a == 0);
    CHECK(runs[2].rel_triples_a == data.a.rel_triples().size());
    for (const auto& r : runs) {
      CHECK(r.hits1 >= 0.0);
      CHECK(r.hits1 <= 100.0);
      CHECK(r.jaccard.attributes >= 0.0);
      CHECK(r.jaccard.attributes <= 1.0);
    }
  }
  SUBCASE("neighbors") {
    const auto runs = removal_analysis(data, ckpt, RemovalKind::Neighbors, map, opts);
    REQUIRE(runs.size() == 3);
    CHECK(runs[1].rel_triples_b < runs[0].rel_triples_b);
    CHECK(runs[2].rel_triples_a == 0);
    CHECK(runs[2].rel_triples_b == 0);
    CHECK(runs[2].attr_triples_b == data.b.attr_triples().size());
  }
  SUBCASE("needs two runs") {
    opts.runs = 1;
    CHECK_THROWS_AS(removal_analysis(data, ckpt, RemovalKind::Attributes, map, opts), std::invalid_argument);
  }
}
