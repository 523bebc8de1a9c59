#include "kgalign/service.hpp"

#include <algorithm>
#include <charconv>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "httplib.h"
#include "json.hpp"

namespace kgalign {

using nlohmann::json;

std::optional<Decision> parse_decision(std::string_view s) {
  if (s == "accept") return Decision::Accept;
  if (s == "reject") return Decision::Reject;
  if (s == "unsure") return Decision::Unsure;
  return std::nullopt;
}

std::string to_string(Decision d) {
  switch (d) {
    case Decision::Accept:
      return "accept";
    case Decision::Reject:
      return "reject";
    case Decision::Unsure:
      return "unsure";
  }
  return "unsure";
}

// ---- DecisionLog ------------------------------------------------------------------

DecisionLog::DecisionLog(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(path_);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      CurationDecision d;
      d.pair_id = j.at("pair_id").get<std::size_t>();
      const auto decision = parse_decision(j.at("decision").get<std::string>());
      if (!decision) throw std::runtime_error("unknown decision");
      d.decision = *decision;
      d.confident = j.at("confident").get<bool>();
      d.annotator = j.at("annotator").get<std::string>();
      d.timestamp = j.at("timestamp").get<std::int64_t>();
      latest_[{d.pair_id, d.annotator}] = events_.size();
      events_.push_back(std::move(d));
    } catch (const std::exception& e) {
      throw std::runtime_error("decision log " + path_.string() + ": bad entry at line " + std::to_string(line_no) +
                               ": " + e.what());
    }
  }
}

void DecisionLog::append(const CurationDecision& d) {
  const json j{{"pair_id", d.pair_id},
               {"decision", to_string(d.decision)},
               {"confident", d.confident},
               {"annotator", d.annotator},
               {"timestamp", d.timestamp}};
  std::lock_guard lock(mutex_);
  std::ofstream out(path_, std::ios::app);
  out << j.dump() << '\n';
  out.flush();
  if (!out) throw std::runtime_error("cannot append to decision log " + path_.string());
  latest_[{d.pair_id, d.annotator}] = events_.size();
  events_.push_back(d);
}

std::vector<CurationDecision> DecisionLog::events() const {
  std::lock_guard lock(mutex_);
  return events_;
}

std::vector<CurationDecision> DecisionLog::active() const {
  std::lock_guard lock(mutex_);
  std::vector<CurationDecision> out;
  out.reserve(latest_.size());
  for (const auto& [key, idx] : latest_) out.push_back(events_[idx]);
  return out;
}

// ---- CurationService ----------------------------------------------------------------

CurationService::CurationService(const Dataset& data, const Checkpoint& ckpt, std::filesystem::path decision_log,
                                 ServiceOptions options)
    : data_(data), options_(options), log_(std::move(decision_log)) {
  check_compatible(ckpt, data.a, data.b);
  const ModelView model = view_of(ckpt);
  table_a_ = embed_all(data.a, model, true);
  table_b_ = embed_all(data.b, model, true);
  const auto test = data.seeds.test();
  std::vector<EntityId> queries, candidates;
  for (const auto& p : test) {
    queries.push_back(p.a);
    candidates.push_back(p.b);
  }
  if (test.empty()) return;
  const auto predictions = predict(table_a_.h, table_b_.h, queries, candidates, 1, options_.metric);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    pairs_.push_back({i, predictions[i].query, predictions[i].top.front().first, predictions[i].top.front().second});
  }
}

std::optional<std::size_t> CurationService::find_pair(std::string_view id) const {
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(id.data(), id.data() + id.size(), value);
  if (ec != std::errc() || ptr != id.data() + id.size() || value >= pairs_.size()) return std::nullopt;
  return value;
}

namespace {

HttpResponse error_response(int status, const std::string& message) {
  return {status, json{{"error", message}}.dump(), "application/json"};
}

}  // namespace

HttpResponse CurationService::list_pairs(std::string_view status, std::size_t offset, std::size_t limit) const {
  if (!status.empty() && status != "pending" && status != "decided") {
    return error_response(400, "status must be pending or decided");
  }
  std::map<std::size_t, std::vector<CurationDecision>> by_pair;
  for (auto& d : log_.active()) by_pair[d.pair_id].push_back(std::move(d));

  std::vector<const PredictedPair*> selected;
  for (const auto& p : pairs_) {
    const bool decided = by_pair.count(p.pair_id) != 0;
    if (status == "pending" && decided) continue;
    if (status == "decided" && !decided) continue;
    selected.push_back(&p);
  }
  const bool high_first = options_.highest_score_first;
  std::stable_sort(selected.begin(), selected.end(), [high_first](const PredictedPair* x, const PredictedPair* y) {
    if (x->score != y->score) return high_first ? x->score > y->score : x->score < y->score;
    return x->pair_id < y->pair_id;
  });

  json items = json::array();
  for (std::size_t i = offset; i < selected.size() && i - offset < limit; ++i) {
    const PredictedPair& p = *selected[i];
    json decisions = json::array();
    if (auto it = by_pair.find(p.pair_id); it != by_pair.end()) {
      for (const auto& d : it->second) {
        decisions.push_back({{"annotator", d.annotator}, {"decision", to_string(d.decision)}, {"confident", d.confident}});
      }
    }
    items.push_back({{"pair_id", p.pair_id},
                     {"a", {{"entity", data_.a.entities().name(p.a)}, {"label", data_.a.display_name(p.a)}}},
                     {"b", {{"entity", data_.b.entities().name(p.b)}, {"label", data_.b.display_name(p.b)}}},
                     {"score", p.score},
                     {"decisions", decisions}});
  }
  const json body{{"total", selected.size()}, {"offset", offset}, {"limit", limit}, {"items", items}};
  return {200, body.dump(), "application/json"};
}

HttpResponse CurationService::get_pair(std::string_view id) const {
  const auto idx = find_pair(id);
  if (!idx) return error_response(404, "unknown pair " + std::string(id));
  const PredictedPair& p = pairs_[*idx];
  const Explanation e = explain(p.pair_id, p.score, data_.a, *table_a_.internals, p.a, data_.b, *table_b_.internals,
                                p.b, options_.top_n);
  return {200, to_json(e).dump(), "application/json"};
}

HttpResponse CurationService::post_decision(std::string_view id, std::string_view body) {
  const auto idx = find_pair(id);
  if (!idx) return error_response(404, "unknown pair " + std::string(id));
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception&) {
    return error_response(400, "body is not valid JSON");
  }
  if (!j.is_object() || !j.contains("decision") || !j["decision"].is_string() || !j.contains("annotator") ||
      !j["annotator"].is_string() || j["annotator"].get<std::string>().empty() ||
      (j.contains("confident") && !j["confident"].is_boolean())) {
    return error_response(400, "expected {decision: string, confident: bool, annotator: non-empty string}");
  }
  const auto decision = parse_decision(j["decision"].get<std::string>());
  if (!decision) return error_response(422, "decision must be one of accept, reject, unsure");
  CurationDecision d;
  d.pair_id = *idx;
  d.decision = *decision;
  d.confident = j.value("confident", false);
  d.annotator = j["annotator"].get<std::string>();
  d.timestamp = static_cast<std::int64_t>(std::time(nullptr));
  log_.append(d);
  return {204, "", "application/json"};
}

HttpResponse CurationService::export_accepted() const {
  std::set<std::size_t> accepted, rejected;
  for (const auto& d : log_.active()) {
    if (d.decision == Decision::Accept) accepted.insert(d.pair_id);
    if (d.decision == Decision::Reject) rejected.insert(d.pair_id);
  }
  std::vector<const PredictedPair*> kept;
  for (std::size_t id : accepted) {
    if (!rejected.count(id)) kept.push_back(&pairs_[id]);
  }
  // A seed alignment is one-to-one; among accepted pairs sharing an entity
  // the higher score wins.
  std::stable_sort(kept.begin(), kept.end(),
                   [](const PredictedPair* x, const PredictedPair* y) { return x->score > y->score; });
  std::set<EntityId> used_a, used_b;
  std::vector<std::pair<std::size_t, AlignmentPair>> chosen;
  for (const PredictedPair* p : kept) {
    if (used_a.count(p->a) || used_b.count(p->b)) continue;
    used_a.insert(p->a);
    used_b.insert(p->b);
    chosen.push_back({p->pair_id, {p->a, p->b}});
  }
  std::sort(chosen.begin(), chosen.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  std::vector<AlignmentPair> out;
  for (const auto& [id, pair] : chosen) out.push_back(pair);
  std::ostringstream tsv;
  write_alignment(out, data_.a, data_.b, tsv);
  return {200, tsv.str(), "text/tab-separated-values; charset=utf-8"};
}

HttpResponse CurationService::stats() const {
  const auto active = log_.active();
  std::size_t accept = 0, reject = 0, unsure = 0, confident = 0;
  std::set<std::size_t> decided;
  for (const auto& d : active) {
    decided.insert(d.pair_id);
    if (d.confident) ++confident;
    switch (d.decision) {
      case Decision::Accept:
        ++accept;
        break;
      case Decision::Reject:
        ++reject;
        break;
      case Decision::Unsure:
        ++unsure;
        break;
    }
  }
  const json body{{"pairs", pairs_.size()},
                  {"decided", decided.size()},
                  {"pending", pairs_.size() - decided.size()},
                  {"decisions", {{"accept", accept}, {"reject", reject}, {"unsure", unsure}}},
                  {"confident_rate", active.empty() ? 0.0 : static_cast<double>(confident) / active.size()}};
  return {200, body.dump(), "application/json"};
}

// ---- HTTP -------------------------------------------------------------------------

namespace {

void send(httplib::Response& res, const HttpResponse& r) {
  res.status = r.status;
  if (r.status != 204) res.set_content(r.body, r.content_type);
}

std::size_t query_size(const httplib::Request& req, const std::string& key, std::size_t fallback) {
  if (!req.has_param(key)) return fallback;
  const std::string v = req.get_param_value(key);
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw std::invalid_argument(key + " must be a non-negative integer");
  return out;
}

}  // namespace

void register_routes(httplib::Server& server, CurationService& service,
                     const std::optional<std::filesystem::path>& static_dir) {
  server.Get("/api/pairs", [&service](const httplib::Request& req, httplib::Response& res) {
    try {
      const std::string status = req.has_param("status") ? req.get_param_value("status") : "";
      send(res, service.list_pairs(status, query_size(req, "offset", 0), query_size(req, "limit", 50)));
    } catch (const std::invalid_argument& e) {
      send(res, error_response(400, e.what()));
    }
  });
  server.Get(R"(/api/pairs/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    send(res, service.get_pair(req.matches[1].str()));
  });
  server.Post(R"(/api/pairs/([^/]+)/decision)", [&service](const httplib::Request& req, httplib::Response& res) {
    send(res, service.post_decision(req.matches[1].str(), req.body));
  });
  server.Get("/api/export/accepted", [&service](const httplib::Request&, httplib::Response& res) {
    send(res, service.export_accepted());
  });
  server.Get("/api/stats", [&service](const httplib::Request&, httplib::Response& res) { send(res, service.stats()); });
  if (static_dir) server.set_mount_point("/", static_dir->string());
}

}  // namespace kgalign
