#include <filesystem>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "fixtures.hpp"
#include "httplib.h"
#include "json.hpp"
#include "kgalign/service.hpp"

using namespace kgalign;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  Dataset data;
  Checkpoint ckpt;
  fs::path dir;

  Fixture() {
    SyntheticConfig syn;
    syn.n_entities = 40;
    syn.rel_density = 0.08;
    data = fixtures::synthetic_dataset(syn, 0.3, 1);
    TrainConfig cfg = fixtures::tiny_config();
    cfg.num_parts = 2;
    ckpt = train(cfg, data);
    dir = fs::temp_directory_path() / "kgalign_test_service";
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Fixture() { fs::remove_all(dir); }

  fs::path log() const { return dir / "decisions.jsonl"; }
};

const Fixture& shared() {
  static Fixture f;
  return f;
}

std::string decision(const std::string& d, const std::string& who, bool confident = true) {
  return json{{"decision", d}, {"annotator", who}, {"confident", confident}}.dump();
}

}  // namespace

TEST_CASE("decision parsing") {
  CHECK(parse_decision("accept") == Decision::Accept);
  CHECK(parse_decision("reject") == Decision::Reject);
  CHECK(parse_decision("unsure") == Decision::Unsure);
  CHECK(!parse_decision("Accept"));
  CHECK(to_string(Decision::Reject) == "reject");
}

TEST_CASE("curation service") {
  const Fixture& f = shared();
  fs::remove(f.log());
  CurationService svc(f.data, f.ckpt, f.log());
  const std::size_t n = f.data.seeds.test().size();
  REQUIRE(svc.pairs().size() == n);

  SUBCASE("list is ordered by ascending score and paged") {
    const auto r = svc.list_pairs("pending", 0, 5);
    CHECK(r.status == 200);
    const json j = json::parse(r.body);
    CHECK(j.at("total") == n);
    REQUIRE(j.at("items").size() == 5);
    for (std::size_t i = 1; i < 5; ++i) CHECK(j["items"][i - 1]["score"].get<double>() <= j["items"][i]["score"].get<double>());
    const json past = json::parse(svc.list_pairs("", n + 10, 5).body);
    CHECK(past.at("items").empty());
    CHECK(past.at("total") == n);
    CHECK(svc.list_pairs("bogus", 0, 5).status == 400);
  }

  SUBCASE("get pair") {
    const auto r = svc.get_pair("0");
    CHECK(r.status == 200);
    const json j = json::parse(r.body);
    CHECK(j.at("pair_id") == 0);
    CHECK(j.at("a").at("entity") == f.data.a.entities().name(svc.pairs()[0].a));
    CHECK(j.at("a").at("attributes").size() <= kDefaultTopN);
    CHECK(svc.get_pair(std::to_string(n)).status == 404);
    CHECK(svc.get_pair("x1").status == 404);
  }

  SUBCASE("post decision status codes") {
    CHECK(svc.post_decision("0", decision("accept", "ann")).status == 204);
    CHECK(svc.post_decision("0", "{not json").status == 400);
    CHECK(svc.post_decision("0", R"({"decision":"accept"})").status == 400);
    CHECK(svc.post_decision("0", R"({"decision":"accept","annotator":""})").status == 400);
    CHECK(svc.post_decision("0", R"({"decision":"accept","annotator":"a","confident":"yes"})").status == 400);
    CHECK(svc.post_decision("0", decision("maybe", "ann")).status == 422);
    CHECK(svc.post_decision("99999", decision("accept", "ann")).status == 404);
  }

  SUBCASE("latest decision per annotator wins and is persisted") {
    svc.post_decision("1", decision("reject", "ann"));
    svc.post_decision("1", decision("accept", "ann"));
    const json listed = json::parse(svc.list_pairs("decided", 0, 50).body);
    REQUIRE(listed.at("items").size() == 1);
    CHECK(listed["items"][0]["decisions"].size() == 1);
    CHECK(listed["items"][0]["decisions"][0]["decision"] == "accept");
    CHECK(json::parse(svc.list_pairs("pending", 0, 50).body).at("total") == n - 1);
    DecisionLog reopened(f.log());
    CHECK(reopened.events().size() == 2);
    CHECK(reopened.active().size() == 1);
  }

  SUBCASE("export keeps accepted pairs nobody rejects") {
    svc.post_decision("0", decision("accept", "ann"));
    svc.post_decision("1", decision("accept", "ann"));
    svc.post_decision("1", decision("reject", "bob"));
    svc.post_decision("2", decision("unsure", "ann"));
    const auto r = svc.export_accepted();
    CHECK(r.status == 200);
    const auto& p = svc.pairs()[0];
    CHECK(r.body == f.data.a.entities().name(p.a) + "\t" + f.data.b.entities().name(p.b) + "\n");
  }

  SUBCASE("export is one-to-one") {
    std::optional<std::pair<std::size_t, std::size_t>> clash;
    for (std::size_t i = 0; i < n && !clash; ++i)
      for (std::size_t j = i + 1; j < n && !clash; ++j)
        if (svc.pairs()[i].b == svc.pairs()[j].b) clash = {i, j};
    REQUIRE(clash);
    const auto [i, j] = *clash;
    svc.post_decision(std::to_string(i), decision("accept", "ann"));
    svc.post_decision(std::to_string(j), decision("accept", "ann"));
    const auto& pi = svc.pairs()[i];
    const auto& pj = svc.pairs()[j];
    const auto& winner = pi.score >= pj.score ? pi : pj;
    CHECK(svc.export_accepted().body ==
          f.data.a.entities().name(winner.a) + "\t" + f.data.b.entities().name(winner.b) + "\n");
  }

  SUBCASE("stats") {
    svc.post_decision("0", decision("accept", "ann", true));
    svc.post_decision("0", decision("reject", "bob", false));
    svc.post_decision("3", decision("unsure", "ann", false));
    const json s = json::parse(svc.stats().body);
    CHECK(s.at("pairs") == n);
    CHECK(s.at("decided") == 2);
    CHECK(s.at("pending") == n - 2);
    CHECK(s.at("decisions").at("accept") == 1);
    CHECK(s.at("decisions").at("reject") == 1);
    CHECK(s.at("decisions").at("unsure") == 1);
    CHECK(s.at("confident_rate").get<double>() == doctest::Approx(1.0 / 3.0));
  }
}

TEST_CASE("highest score first ordering") {
  const Fixture& f = shared();
  fs::remove(f.log());
  ServiceOptions opts;
  opts.highest_score_first = true;
  CurationService svc(f.data, f.ckpt, f.log(), opts);
  const json j = json::parse(svc.list_pairs("pending", 0, 10).body);
  for (std::size_t i = 1; i < j.at("items").size(); ++i)
    CHECK(j["items"][i - 1]["score"].get<double>() >= j["items"][i]["score"].get<double>());
}

TEST_CASE("curation loop over http") {
  const Fixture& f = shared();
  fs::remove(f.log());
  CurationService svc(f.data, f.ckpt, f.log());
  httplib::Server server;
  register_routes(server, svc);
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread worker([&] { server.listen_after_bind(); });
  struct Join {
    httplib::Server& s;
    std::thread& t;
    ~Join() {
      s.stop();
      t.join();
    }
  } join{server, worker};
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  auto pending = client.Get("/api/pairs?status=pending&limit=3");
  REQUIRE(pending);
  CHECK(pending->status == 200);
  const json items = json::parse(pending->body).at("items");
  REQUIRE(items.size() == 3);
  for (const auto& item : items) {
    const std::string id = std::to_string(item.at("pair_id").get<std::size_t>());
    auto detail = client.Get("/api/pairs/" + id);
    REQUIRE(detail);
    CHECK(detail->status == 200);
    auto posted = client.Post("/api/pairs/" + id + "/decision", decision("accept", "curator"), "application/json");
    REQUIRE(posted);
    CHECK(posted->status == 204);
  }
  auto bad = client.Post("/api/pairs/0/decision", decision("nope", "curator"), "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 422);
  CHECK(client.Get("/api/pairs?limit=x")->status == 400);
  CHECK(client.Get("/api/pairs/100000")->status == 404);

  auto exported = client.Get("/api/export/accepted");
  REQUIRE(exported);
  CHECK(exported->status == 200);
  std::istringstream in(exported->body);
  const SeedAlignment seeds = load_seed_alignment(in, f.data.a, f.data.b, 1.0, 0);
  CHECK(!seeds.pairs().empty());
  CHECK(seeds.pairs().size() <= 3);
  std::vector<AlignmentPair> accepted;
  for (const auto& item : items) {
    const auto& p = svc.pairs()[item.at("pair_id").get<std::size_t>()];
    accepted.push_back({p.a, p.b});
  }
  for (const auto& p : seeds.pairs()) CHECK(std::find(accepted.begin(), accepted.end(), p) != accepted.end());
  auto stats = client.Get("/api/stats");
  REQUIRE(stats);
  CHECK(json::parse(stats->body).at("decided") == 3);
}
