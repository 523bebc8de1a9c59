#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kgalign/align.hpp"

namespace httplib {
class Server;
}

namespace kgalign {

enum class Decision { Accept, Reject, Unsure };

std::optional<Decision> parse_decision(std::string_view s);
std::string to_string(Decision d);

struct CurationDecision {
  std::size_t pair_id = 0;
  Decision decision = Decision::Unsure;
  bool confident = false;
  std::string annotator;
  std::int64_t timestamp = 0;  // UTC seconds
};

// Append-only JSONL log. The active view keeps the latest decision per
// (pair, annotator).
class DecisionLog {
 public:
  explicit DecisionLog(std::filesystem::path path);

  void append(const CurationDecision& d);
  std::vector<CurationDecision> events() const;
  std::vector<CurationDecision> active() const;

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::vector<CurationDecision> events_;
  std::map<std::pair<std::size_t, std::string>, std::size_t> latest_;
};

struct PredictedPair {
  std::size_t pair_id = 0;
  EntityId a = 0;
  EntityId b = 0;  // top-1 candidate
  double score = 0.0;
};

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

struct ServiceOptions {
  std::size_t top_n = kDefaultTopN;
  Metric metric = Metric::Cosine;
  bool highest_score_first = false;  // pending queue order
};

// Serves predictions for the test split of `data`: each test A entity with
// its top-1 B candidate among test B entities. Model state is read-only.
class CurationService {
 public:
  CurationService(const Dataset& data, const Checkpoint& ckpt, std::filesystem::path decision_log,
                  ServiceOptions options = {});

  HttpResponse list_pairs(std::string_view status, std::size_t offset, std::size_t limit) const;
  HttpResponse get_pair(std::string_view id) const;
  HttpResponse post_decision(std::string_view id, std::string_view body);
  // Pairs accepted by someone and rejected by nobody, reduced to a
  // one-to-one alignment by descending score.
  HttpResponse export_accepted() const;
  HttpResponse stats() const;

  const std::vector<PredictedPair>& pairs() const { return pairs_; }

 private:
  std::optional<std::size_t> find_pair(std::string_view id) const;

  const Dataset& data_;
  ServiceOptions options_;
  EntityEmbeddingTable table_a_, table_b_;
  std::vector<PredictedPair> pairs_;
  DecisionLog log_;
};

// Registers the /api routes, plus `static_dir` mounted at / when given.
void register_routes(httplib::Server& server, CurationService& service,
                     const std::optional<std::filesystem::path>& static_dir = std::nullopt);

}  // namespace kgalign
