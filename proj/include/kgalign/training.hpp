#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kgalign/batching.hpp"
#include "kgalign/kg.hpp"
#include "kgalign/model.hpp"
#include "kgalign/params.hpp"
#include "kgalign/trans_ge.hpp"

namespace kgalign {

struct LossWeights {
  double align = 1.0;
  double he1 = 1.0;
  double he2 = 1.0;
  double reg = 1.0;
};

struct TrainConfig {
  std::size_t epochs = 400;
  double margin = 1.0;
  std::size_t negatives = 5;
  ModelDims dims;
  double lr = 1e-3;
  double lambda_reg = 1e-3;
  double train_fraction = 0.3;  // recorded so evaluation can rebuild the split
  std::uint64_t rng_seed = 0;
  std::size_t num_parts = 0;  // per graph; 0 picks ~512-entity cores
  std::size_t warmup_epochs = 1;
  LossWeights weights;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

void validate(const TrainConfig& cfg);

struct Dataset {
  KnowledgeGraph a;
  KnowledgeGraph b;
  SeedAlignment seeds;
};

// Negatives for positive i occupy [i*k, (i+1)*k). Each corrupts a uniformly
// chosen side with a uniform entity of that graph other than the original.
std::vector<AlignmentPair> sample_negatives(std::span<const AlignmentPair> positives, std::size_t entities_a,
                                            std::size_t entities_b, std::size_t per_positive, Rng& rng);

// sum_i sum_j max(0, margin + |pos_a_i - pos_b_i| - |neg_a_ij - neg_b_ij|),
// negatives grouped per positive as in sample_negatives.
Var margin_loss(const Var& pos_a, const Var& pos_b, const Var& neg_a, const Var& neg_b, double margin);

struct DistillLosses {
  Var he1;
  Var he2;
  Var reg;
};

// he1 = sum_k sum_core (1 - cos(layer input, layer output)),
// he2 = sum_core (1 - cos(x0, h_att)), reg = lambda * sum_k |H_k|_F^2 / n.
// Rows [0, num_core) of the encoding are the core nodes.
DistillLosses distill_losses(const NeighborEncoding& enc, std::size_t num_core, const Tensor& x0_core,
                             const Var& h_att_core, double lambda_reg);

struct EpochLosses {
  std::size_t epoch = 0;
  double align = 0.0;
  double he1 = 0.0;
  double he2 = 0.0;
  double reg = 0.0;
  double total() const { return align + he1 + he2 + reg; }
};

void write_loss_csv(std::span<const EpochLosses> history, std::ostream& out);

struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  TrainConfig config;
  std::uint64_t entities_a_hash = 0;
  std::uint64_t predicates_a_hash = 0;
  std::uint64_t entities_b_hash = 0;
  std::uint64_t predicates_b_hash = 0;
  std::size_t predicates_a = 0;
  std::size_t predicates_b = 0;
  std::size_t epoch = 0;
  std::vector<EpochLosses> history;
  ParameterStore params;
  HistoricalEmbeddingStore store;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointHashError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class TruncatedBlobError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointValidationError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

// Writes `manifest.json` and `tensors.bin` (little-endian float32).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);
// Also checks the intern-table hashes against the graphs.
Checkpoint load_checkpoint(const std::filesystem::path& dir, const KnowledgeGraph& kg_a, const KnowledgeGraph& kg_b);
void check_compatible(const Checkpoint& ckpt, const KnowledgeGraph& kg_a, const KnowledgeGraph& kg_b);

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, Checkpoint last_good)
      : std::runtime_error(what), last_good_(std::move(last_good)) {}
  const Checkpoint& last_good() const { return last_good_; }

 private:
  Checkpoint last_good_;
};

// Computes h_att for every entity of a graph in chunks, without gradients.
Tensor attribute_embeddings(const KnowledgeGraph& kg, const ParameterStore& params, const ModelDims& dims,
                            std::size_t chunk = 256);

struct BatchLoss {
  Var align, he1, he2, reg;
  Var total;  // weighted sum
  // Final-layer and attribute embeddings of each side's core, when present.
  Var h_nei_a, h_att_a, h_nei_b, h_att_b;
};

// Loss of one training step. Entities of `positives` / `negatives` outside
// a side's batch core use their attribute history and x0 W_dist. Either
// batch may be null.
BatchLoss batch_loss(const Dataset& data, const MiniBatch* batch_a, const MiniBatch* batch_b,
                     std::span<const AlignmentPair> positives, std::span<const AlignmentPair> negatives,
                     const ParameterStore& params, const HistoricalEmbeddingStore& store,
                     const HistoricalEmbeddingStore& att_history, const TrainConfig& cfg);

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const Dataset& data);

  // x0 <- h_att for every entity; also seeds the attribute history used
  // for entities outside the current batch.
  void warmup();
  // One pass over all part pairs in a seeded order. Throws DivergenceError
  // if a loss or gradient becomes non-finite.
  EpochLosses run_epoch();
  // Parameters and store rounded to float32, as written to disk.
  Checkpoint snapshot() const;

  const ParameterStore& params() const { return params_; }
  const HistoricalEmbeddingStore& store() const { return store_; }
  const HistoricalEmbeddingStore& attribute_history() const { return att_history_; }
  const std::vector<EpochLosses>& history() const { return history_; }
  const Partition& partition(GraphLabel g) const { return g == GraphLabel::A ? parts_a_ : parts_b_; }
  const std::vector<PartPair>& part_pairs() const { return pairs_; }
  std::size_t epoch() const { return history_.size(); }

 private:
  EpochLosses step(const PartPair& pair);

  TrainConfig cfg_;
  const Dataset& data_;
  ParameterStore params_;
  HistoricalEmbeddingStore store_;
  HistoricalEmbeddingStore att_history_;  // last h_att of each entity
  Partition parts_a_, parts_b_;
  std::vector<PartPair> pairs_;
  std::vector<AlignmentPair> train_pairs_;
  std::vector<std::optional<MiniBatch>> batches_a_, batches_b_;
  Rng rng_;
  std::vector<EpochLosses> history_;
};

// warmup, then cfg.epochs epochs; `on_epoch` runs after each epoch.
Checkpoint train(const TrainConfig& cfg, const Dataset& data,
                 const std::function<void(const Trainer&)>& on_epoch = {});

// Seeds used for the model's independent random streams.
std::uint64_t init_seed(const TrainConfig& cfg);
std::size_t resolved_num_parts(const TrainConfig& cfg, std::size_t num_entities);

}  // namespace kgalign
