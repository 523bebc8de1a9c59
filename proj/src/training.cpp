#include "kgalign/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "kgalign/attr_agg.hpp"

namespace kgalign {

using nlohmann::json;

void validate(const TrainConfig& cfg) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid config: " + what);
  };
  require(cfg.margin > 0.0, "margin must be positive");
  require(cfg.negatives > 0, "negatives must be positive");
  require(cfg.dims.dim > 0 && cfg.dims.char_dim > 0, "dimensions must be positive");
  require(cfg.dims.heads > 0 && cfg.dims.dim % cfg.dims.heads == 0, "dim must be divisible by heads");
  require(cfg.dims.layers > 0, "layers must be positive");
  require(cfg.dims.max_slots > 0, "max_slots must be positive");
  require(cfg.lr > 0.0, "lr must be positive");
  require(cfg.lambda_reg >= 0.0, "lambda_reg must be non-negative");
  require(cfg.train_fraction >= 0.0 && cfg.train_fraction <= 1.0, "train_fraction must be in [0, 1]");
}

std::uint64_t init_seed(const TrainConfig& cfg) { return derive_seed(cfg.rng_seed, 1); }

std::size_t resolved_num_parts(const TrainConfig& cfg, std::size_t num_entities) {
  if (cfg.num_parts == 0) return default_num_parts(num_entities);
  return std::min(cfg.num_parts, std::max<std::size_t>(num_entities, 1));
}

// ---- losses ----------------------------------------------------------------------

std::vector<AlignmentPair> sample_negatives(std::span<const AlignmentPair> positives, std::size_t entities_a,
                                            std::size_t entities_b, std::size_t per_positive, Rng& rng) {
  if (!positives.empty() && (entities_a < 2 || entities_b < 2)) {
    throw std::invalid_argument("sample_negatives: candidate pool of size < 2 cannot be corrupted");
  }
  std::vector<AlignmentPair> out;
  out.reserve(positives.size() * per_positive);
  for (const auto& p : positives) {
    for (std::size_t j = 0; j < per_positive; ++j) {
      AlignmentPair neg = p;
      if (rng.uniform_index(2) == 0) {
        do neg.a = static_cast<EntityId>(rng.uniform_index(entities_a));
        while (neg.a == p.a);
      } else {
        do neg.b = static_cast<EntityId>(rng.uniform_index(entities_b));
        while (neg.b == p.b);
      }
      out.push_back(neg);
    }
  }
  return out;
}

Var margin_loss(const Var& pos_a, const Var& pos_b, const Var& neg_a, const Var& neg_b, double margin) {
  const std::size_t n_pos = pos_a.rows();
  if (n_pos == 0) return Var::constant(Tensor(1, 1));
  if (neg_a.rows() % n_pos != 0 || neg_a.rows() != neg_b.rows() || pos_b.rows() != n_pos) {
    throw ShapeError("margin_loss: " + std::to_string(neg_a.rows()) + " negatives for " + std::to_string(n_pos) +
                     " positives");
  }
  const std::size_t k = neg_a.rows() / n_pos;
  Var f_pos = row_norm(sub(pos_a, pos_b));
  Var f_neg = row_norm(sub(neg_a, neg_b));
  std::vector<std::uint32_t> repeat(n_pos * k);
  for (std::size_t i = 0; i < repeat.size(); ++i) repeat[i] = static_cast<std::uint32_t>(i / k);
  return sum(relu(add_scalar(sub(gather_rows(f_pos, repeat), f_neg), margin)));
}

DistillLosses distill_losses(const NeighborEncoding& enc, std::size_t num_core, const Tensor& x0_core,
                             const Var& h_att_core, double lambda_reg) {
  DistillLosses out;
  const auto nc = static_cast<double>(num_core);
  Var he1 = Var::constant(Tensor(1, 1));
  Var reg = Var::constant(Tensor(1, 1));
  for (std::size_t k = 0; k < enc.layer_outputs.size(); ++k) {
    if (num_core > 0) {
      Var cos = row_cosine(slice_rows(enc.layer_inputs[k], 0, num_core), slice_rows(enc.layer_outputs[k], 0, num_core));
      he1 = add(he1, add_scalar(scale(sum(cos), -1.0), nc));
    }
    const Var& h = enc.layer_outputs[k];
    if (h.rows() > 0) reg = add(reg, scale(sum(mul(h, h)), lambda_reg / static_cast<double>(h.rows())));
  }
  out.he1 = he1;
  out.reg = reg;
  if (num_core > 0) {
    out.he2 = add_scalar(scale(sum(row_cosine(Var::constant(x0_core), h_att_core)), -1.0), nc);
  } else {
    out.he2 = Var::constant(Tensor(1, 1));
  }
  return out;
}

void write_loss_csv(std::span<const EpochLosses> history, std::ostream& out) {
  out << "epoch,l_align,l_he1,l_he2,l_reg\n";
  out << std::setprecision(10);
  for (const auto& e : history) {
    out << e.epoch << ',' << e.align << ',' << e.he1 << ',' << e.he2 << ',' << e.reg << '\n';
  }
}

// ---- embeddings ------------------------------------------------------------------

Tensor attribute_embeddings(const KnowledgeGraph& kg, const ParameterStore& params, const ModelDims& dims,
                            std::size_t chunk) {
  NoGradGuard no_grad;
  const std::size_t n = kg.num_entities();
  Tensor out(n, dims.dim);
  std::vector<EntityId> ids;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    ids.resize(end - begin);
    std::iota(ids.begin(), ids.end(), static_cast<EntityId>(begin));
    const AttributeEncoding enc = aggregate_attributes(build_slot_batch(kg, ids, dims.max_slots), params, dims, false);
    std::copy_n(enc.h_att.value().data(), ids.size() * dims.dim, out.data() + begin * dims.dim);
  }
  return out;
}

// ---- Trainer ---------------------------------------------------------------------

namespace {

struct SideForward {
  std::vector<EntityId> rows;  // core then extras
  std::unordered_map<EntityId, std::uint32_t> row_of;
  Var h;
  bool has_batch = false;
  NeighborEncoding enc;
  Var h_att_core;
  DistillLosses distill;
};

// Core rows run through both encoders. Other entities referenced by the
// step's pairs use their stored attribute embedding and x0 W_dist.
SideForward forward_side(const KnowledgeGraph& kg, const MiniBatch* batch, std::vector<EntityId> needed,
                         const ParameterStore& params, const HistoricalEmbeddingStore& store,
                         const HistoricalEmbeddingStore& att_history, const TrainConfig& cfg) {
  SideForward f;
  const ModelDims& dims = cfg.dims;
  if (batch) f.rows = batch->core;
  for (std::uint32_t i = 0; i < f.rows.size(); ++i) f.row_of.emplace(f.rows[i], i);
  std::sort(needed.begin(), needed.end());
  needed.erase(std::unique(needed.begin(), needed.end()), needed.end());
  std::vector<EntityId> extras;
  for (EntityId v : needed) {
    if (!f.row_of.count(v)) extras.push_back(v);
  }
  for (EntityId v : extras) {
    f.row_of.emplace(v, static_cast<std::uint32_t>(f.rows.size()));
    f.rows.push_back(v);
  }
  if (f.rows.empty()) return f;

  std::vector<Var> att_parts, nei_parts;
  if (batch) {
    f.has_batch = true;
    const std::size_t nc = batch->core.size();
    f.h_att_core = aggregate_attributes(batch->slots, params, dims, false).h_att;
    f.enc = encode_subgraph(batch->sub, store, params, dims, false);
    att_parts.push_back(f.h_att_core);
    nei_parts.push_back(slice_rows(f.enc.h_nei, 0, nc));
    f.distill = distill_losses(f.enc, nc, store.read(kg.label(), batch->core), f.h_att_core, cfg.lambda_reg);
  }
  if (!extras.empty()) {
    att_parts.push_back(Var::constant(att_history.read(kg.label(), extras)));
    nei_parts.push_back(approximate_history(kg.label(), extras, store, params));
  }
  auto stack = [](const std::vector<Var>& parts) { return parts.size() == 1 ? parts.front() : vconcat(parts); };
  f.h = hconcat({stack(att_parts), stack(nei_parts)});
  return f;
}

Tensor rounded(const Tensor& t) {
  Tensor out = t;
  for (double& x : out.values()) x = static_cast<double>(static_cast<float>(x));
  return out;
}

}  // namespace

BatchLoss batch_loss(const Dataset& data, const MiniBatch* batch_a, const MiniBatch* batch_b,
                     std::span<const AlignmentPair> positives, std::span<const AlignmentPair> negatives,
                     const ParameterStore& params, const HistoricalEmbeddingStore& store,
                     const HistoricalEmbeddingStore& att_history, const TrainConfig& cfg) {
  std::vector<EntityId> need_a, need_b;
  for (const auto list : {positives, negatives}) {
    for (const auto& p : list) {
      need_a.push_back(p.a);
      need_b.push_back(p.b);
    }
  }
  SideForward fa = forward_side(data.a, batch_a, std::move(need_a), params, store, att_history, cfg);
  SideForward fb = forward_side(data.b, batch_b, std::move(need_b), params, store, att_history, cfg);

  BatchLoss out;
  out.align = Var::constant(Tensor(1, 1));
  if (!positives.empty()) {
    auto rows = [](const SideForward& f, std::span<const AlignmentPair> pairs, bool side_a) {
      std::vector<std::uint32_t> r;
      r.reserve(pairs.size());
      for (const auto& p : pairs) r.push_back(f.row_of.at(side_a ? p.a : p.b));
      return r;
    };
    out.align = margin_loss(gather_rows(fa.h, rows(fa, positives, true)), gather_rows(fb.h, rows(fb, positives, false)),
                            gather_rows(fa.h, rows(fa, negatives, true)), gather_rows(fb.h, rows(fb, negatives, false)),
                            cfg.margin);
  }
  out.he1 = out.he2 = out.reg = Var::constant(Tensor(1, 1));
  for (const SideForward* f : {&fa, &fb}) {
    if (!f->has_batch) continue;
    out.he1 = add(out.he1, f->distill.he1);
    out.he2 = add(out.he2, f->distill.he2);
    out.reg = add(out.reg, f->distill.reg);
  }
  const LossWeights& w = cfg.weights;
  out.total = add(add(scale(out.align, w.align), scale(out.he1, w.he1)), add(scale(out.he2, w.he2), scale(out.reg, w.reg)));
  if (fa.has_batch) {
    out.h_nei_a = fa.enc.h_nei;
    out.h_att_a = fa.h_att_core;
  }
  if (fb.has_batch) {
    out.h_nei_b = fb.enc.h_nei;
    out.h_att_b = fb.h_att_core;
  }
  return out;
}

Trainer::Trainer(const TrainConfig& cfg, const Dataset& data)
    : cfg_(cfg), data_(data), rng_(derive_seed(cfg.rng_seed, 2)) {
  validate(cfg_);
  train_pairs_ = data_.seeds.train();
  if (train_pairs_.empty()) throw ConfigError("invalid config: seed alignment train split is empty");
  init_model_parameters(params_, cfg_.dims, data_.a.num_predicates(), data_.b.num_predicates(), init_seed(cfg_));
  store_ = HistoricalEmbeddingStore(cfg_.dims.dim, data_.a.num_entities(), data_.b.num_entities());
  att_history_ = store_;
  parts_a_ = partition_graph(data_.a, resolved_num_parts(cfg_, data_.a.num_entities()), cfg_.rng_seed);
  parts_b_ = partition_graph(data_.b, resolved_num_parts(cfg_, data_.b.num_entities()), cfg_.rng_seed);
  pairs_ = pair_parts(parts_a_, parts_b_, train_pairs_, data_.a.num_entities(), data_.b.num_entities());
  batches_a_.resize(parts_a_.parts.size());
  batches_b_.resize(parts_b_.parts.size());
}

void Trainer::warmup() {
  if (cfg_.warmup_epochs == 0) return;
  for (const KnowledgeGraph* kg : {&data_.a, &data_.b}) {
    std::vector<EntityId> ids(kg->num_entities());
    std::iota(ids.begin(), ids.end(), 0u);
    const Tensor h_att = attribute_embeddings(*kg, params_, cfg_.dims);
    store_.write(kg->label(), ids, h_att);
    att_history_.write(kg->label(), ids, h_att);
  }
}

EpochLosses Trainer::step(const PartPair& pair) {
  const MiniBatch* batch_a = nullptr;
  const MiniBatch* batch_b = nullptr;
  if (pair.a) {
    auto& slot = batches_a_[*pair.a];
    if (!slot) slot = assemble_batch(parts_a_.parts[*pair.a], data_.a, cfg_.dims.max_slots);
    batch_a = &*slot;
  }
  if (pair.b) {
    auto& slot = batches_b_[*pair.b];
    if (!slot) slot = assemble_batch(parts_b_.parts[*pair.b], data_.b, cfg_.dims.max_slots);
    batch_b = &*slot;
  }

  std::vector<bool> core_a(data_.a.num_entities(), false), core_b(data_.b.num_entities(), false);
  if (batch_a) {
    for (EntityId v : batch_a->core) core_a[v] = true;
  }
  if (batch_b) {
    for (EntityId v : batch_b->core) core_b[v] = true;
  }
  std::vector<AlignmentPair> positives;
  for (const auto& p : train_pairs_) {
    if (core_a[p.a] || core_b[p.b]) positives.push_back(p);
  }
  const auto negatives =
      sample_negatives(positives, data_.a.num_entities(), data_.b.num_entities(), cfg_.negatives, rng_);

  const BatchLoss loss =
      batch_loss(data_, batch_a, batch_b, positives, negatives, params_, store_, att_history_, cfg_);
  const Var& total = loss.total;
  const Var &align = loss.align, &he1 = loss.he1, &he2 = loss.he2, &reg = loss.reg;

  EpochLosses out;
  out.align = align.item();
  out.he1 = he1.item();
  out.he2 = he2.item();
  out.reg = reg.item();
  if (!std::isfinite(total.item())) {
    throw std::domain_error("non-finite loss");
  }
  backward(total);
  adam_step(params_, cfg_.lr);
  if (batch_a) {
    update_store(store_, batch_a->sub, loss.h_nei_a.value());
    att_history_.write(GraphLabel::A, batch_a->core, loss.h_att_a.value());
  }
  if (batch_b) {
    update_store(store_, batch_b->sub, loss.h_nei_b.value());
    att_history_.write(GraphLabel::B, batch_b->core, loss.h_att_b.value());
  }
  return out;
}

EpochLosses Trainer::run_epoch() {
  std::vector<std::size_t> order(pairs_.size());
  std::iota(order.begin(), order.end(), 0u);
  rng_.shuffle(order);
  const std::size_t epoch = history_.size() + 1;
  EpochLosses total;
  total.epoch = epoch;
  // Both failure points are hit before adam_step changes anything, so the
  // current state is the last good one.
  try {
    for (std::size_t i : order) {
      const EpochLosses l = step(pairs_[i]);
      total.align += l.align;
      total.he1 += l.he1;
      total.he2 += l.he2;
      total.reg += l.reg;
    }
  } catch (const NonFiniteGradientError& e) {
    throw DivergenceError(std::string("training diverged in epoch ") + std::to_string(epoch) + ": " + e.what(),
                          snapshot());
  } catch (const std::domain_error& e) {
    throw DivergenceError(std::string("training diverged in epoch ") + std::to_string(epoch) + ": " + e.what(),
                          snapshot());
  }
  history_.push_back(total);
  return total;
}

Checkpoint Trainer::snapshot() const {
  Checkpoint c;
  c.config = cfg_;
  c.entities_a_hash = data_.a.entities().fingerprint();
  c.predicates_a_hash = data_.a.predicates().fingerprint();
  c.entities_b_hash = data_.b.entities().fingerprint();
  c.predicates_b_hash = data_.b.predicates().fingerprint();
  c.predicates_a = data_.a.num_predicates();
  c.predicates_b = data_.b.num_predicates();
  c.epoch = history_.size();
  c.history = history_;
  for (const auto& [name, var] : params_.entries()) c.params.add(name, rounded(var.value()));
  c.store = store_;
  for (GraphLabel g : {GraphLabel::A, GraphLabel::B}) {
    for (double& x : c.store.mutable_table(g)) x = static_cast<double>(static_cast<float>(x));
  }
  return c;
}

Checkpoint train(const TrainConfig& cfg, const Dataset& data, const std::function<void(const Trainer&)>& on_epoch) {
  Trainer trainer(cfg, data);
  trainer.warmup();
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    trainer.run_epoch();
    if (on_epoch) on_epoch(trainer);
  }
  return trainer.snapshot();
}

// ---- checkpoint I/O ---------------------------------------------------------------

namespace {

json config_to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"margin", c.margin},
              {"negatives", c.negatives},
              {"dims",
               {{"dim", c.dims.dim},
                {"char_dim", c.dims.char_dim},
                {"heads", c.dims.heads},
                {"layers", c.dims.layers},
                {"max_slots", c.dims.max_slots}}},
              {"lr", c.lr},
              {"lambda_reg", c.lambda_reg},
              {"train_fraction", c.train_fraction},
              {"rng_seed", c.rng_seed},
              {"num_parts", c.num_parts},
              {"warmup_epochs", c.warmup_epochs},
              {"loss_weights",
               {{"align", c.weights.align}, {"he1", c.weights.he1}, {"he2", c.weights.he2}, {"reg", c.weights.reg}}}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  j.at("epochs").get_to(c.epochs);
  j.at("margin").get_to(c.margin);
  j.at("negatives").get_to(c.negatives);
  const json& d = j.at("dims");
  d.at("dim").get_to(c.dims.dim);
  d.at("char_dim").get_to(c.dims.char_dim);
  d.at("heads").get_to(c.dims.heads);
  d.at("layers").get_to(c.dims.layers);
  d.at("max_slots").get_to(c.dims.max_slots);
  j.at("lr").get_to(c.lr);
  j.at("lambda_reg").get_to(c.lambda_reg);
  j.at("train_fraction").get_to(c.train_fraction);
  j.at("rng_seed").get_to(c.rng_seed);
  j.at("num_parts").get_to(c.num_parts);
  j.at("warmup_epochs").get_to(c.warmup_epochs);
  const json& w = j.at("loss_weights");
  w.at("align").get_to(c.weights.align);
  w.at("he1").get_to(c.weights.he1);
  w.at("he2").get_to(c.weights.he2);
  w.at("reg").get_to(c.weights.reg);
  return c;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

std::uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

void append_floats(std::string& blob, std::span<const double> values) {
  const std::size_t start = blob.size();
  blob.resize(start + values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t bits = to_little_endian(std::bit_cast<std::uint32_t>(static_cast<float>(values[i])));
    std::memcpy(blob.data() + start + i * 4, &bits, 4);
  }
}

void read_floats(const std::string& blob, std::size_t offset, std::span<double> out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, blob.data() + offset + i * 4, 4);
    out[i] = static_cast<double>(std::bit_cast<float>(to_little_endian(bits)));
  }
}

json losses_to_json(std::span<const EpochLosses> history) {
  json arr = json::array();
  for (const auto& e : history) {
    arr.push_back({{"epoch", e.epoch}, {"l_align", e.align}, {"l_he1", e.he1}, {"l_he2", e.he2}, {"l_reg", e.reg}});
  }
  return arr;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string blob;
  json tensors = json::array();
  for (const auto& [name, var] : ckpt.params.entries()) {
    const Tensor& t = var.value();
    tensors.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}, {"offset", blob.size()}});
    append_floats(blob, t.values());
  }
  json store = json::array();
  for (GraphLabel g : {GraphLabel::A, GraphLabel::B}) {
    const auto& table = ckpt.store.table(g);
    store.push_back({{"name", std::string("x0.") + to_char(g)},
                     {"rows", ckpt.store.rows(g)},
                     {"cols", ckpt.store.dim()},
                     {"offset", blob.size()}});
    append_floats(blob, table);
  }
  json manifest{{"format_version", Checkpoint::kFormatVersion},
                {"config", config_to_json(ckpt.config)},
                {"intern_hashes",
                 {{"entities_a", hex64(ckpt.entities_a_hash)},
                  {"predicates_a", hex64(ckpt.predicates_a_hash)},
                  {"entities_b", hex64(ckpt.entities_b_hash)},
                  {"predicates_b", hex64(ckpt.predicates_b_hash)}}},
                {"predicate_counts", {{"a", ckpt.predicates_a}, {"b", ckpt.predicates_b}}},
                {"epoch", ckpt.epoch},
                {"loss_history", losses_to_json(ckpt.history)},
                {"tensors", tensors},
                {"store", store},
                {"blob_bytes", blob.size()}};
  {
    std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
    out << manifest.dump(2) << '\n';
    if (!out) throw CheckpointError("cannot write " + (dir / "manifest.json").string());
  }
  std::ofstream out(dir / "tensors.bin", std::ios::binary | std::ios::trunc);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw CheckpointError("cannot write " + (dir / "tensors.bin").string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json", std::ios::binary);
  if (!mf) throw CheckpointError("cannot open " + (dir / "manifest.json").string());
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw CheckpointValidationError(std::string("malformed manifest: ") + e.what());
  }

  Checkpoint c;
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != Checkpoint::kFormatVersion) {
      throw CheckpointVersionError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                                   std::to_string(Checkpoint::kFormatVersion) + ")");
    }
    c.config = config_from_json(manifest.at("config"));
    const json& h = manifest.at("intern_hashes");
    c.entities_a_hash = parse_hex64(h.at("entities_a").get<std::string>());
    c.predicates_a_hash = parse_hex64(h.at("predicates_a").get<std::string>());
    c.entities_b_hash = parse_hex64(h.at("entities_b").get<std::string>());
    c.predicates_b_hash = parse_hex64(h.at("predicates_b").get<std::string>());
    manifest.at("predicate_counts").at("a").get_to(c.predicates_a);
    manifest.at("predicate_counts").at("b").get_to(c.predicates_b);
    manifest.at("epoch").get_to(c.epoch);
    for (const json& e : manifest.at("loss_history")) {
      c.history.push_back({e.at("epoch").get<std::size_t>(), e.at("l_align").get<double>(),
                           e.at("l_he1").get<double>(), e.at("l_he2").get<double>(), e.at("l_reg").get<double>()});
    }
  } catch (const json::exception& e) {
    throw CheckpointValidationError(std::string("malformed manifest: ") + e.what());
  }
  try {
    validate(c.config);
  } catch (const ConfigError& e) {
    throw CheckpointValidationError(e.what());
  }

  std::ifstream bf(dir / "tensors.bin", std::ios::binary);
  if (!bf) throw CheckpointError("cannot open " + (dir / "tensors.bin").string());
  const std::string blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
  const auto expected_bytes = manifest.value("blob_bytes", std::size_t{0});
  if (blob.size() < expected_bytes) {
    throw TruncatedBlobError("truncated blob: tensors.bin has " + std::to_string(blob.size()) + " bytes, manifest expects " +
                             std::to_string(expected_bytes));
  }

  // Expected parameter shapes follow from the stored config.
  ParameterStore reference;
  init_model_parameters(reference, c.config.dims, c.predicates_a, c.predicates_b, 0);
  std::size_t seen = 0;
  try {
    for (const json& t : manifest.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const auto rows = t.at("rows").get<std::size_t>();
      const auto cols = t.at("cols").get<std::size_t>();
      const auto offset = t.at("offset").get<std::size_t>();
      if (!reference.contains(name)) throw CheckpointValidationError("unexpected tensor '" + name + "'");
      const Tensor& ref = reference.get(name).value();
      if (ref.rows() != rows || ref.cols() != cols) {
        throw CheckpointValidationError("tensor '" + name + "' is " + std::to_string(rows) + "x" + std::to_string(cols) +
                                        " but the config implies " + ref.shape_string());
      }
      if (offset + rows * cols * 4 > blob.size()) {
        throw TruncatedBlobError("truncated blob: tensor '" + name + "' extends past end of tensors.bin");
      }
      Tensor value(rows, cols);
      read_floats(blob, offset, value.values());
      c.params.add(name, std::move(value));
      ++seen;
    }
    if (seen != reference.size()) {
      throw CheckpointValidationError("checkpoint has " + std::to_string(seen) + " tensors, config implies " +
                                      std::to_string(reference.size()));
    }
    std::size_t rows_a = 0, rows_b = 0;
    for (const json& s : manifest.at("store")) {
      const auto cols = s.at("cols").get<std::size_t>();
      if (cols != c.config.dims.dim) {
        throw CheckpointValidationError("store width " + std::to_string(cols) + " != dim " +
                                        std::to_string(c.config.dims.dim));
      }
      const auto name = s.at("name").get<std::string>();
      if (name == "x0.A") {
        rows_a = s.at("rows").get<std::size_t>();
      } else if (name == "x0.B") {
        rows_b = s.at("rows").get<std::size_t>();
      } else {
        throw CheckpointValidationError("unexpected store table '" + name + "'");
      }
    }
    c.store = HistoricalEmbeddingStore(c.config.dims.dim, rows_a, rows_b);
    for (const json& s : manifest.at("store")) {
      const GraphLabel g = s.at("name").get<std::string>() == "x0.A" ? GraphLabel::A : GraphLabel::B;
      auto& table = c.store.mutable_table(g);
      const auto offset = s.at("offset").get<std::size_t>();
      if (offset + table.size() * 4 > blob.size()) {
        throw TruncatedBlobError("truncated blob: store table extends past end of tensors.bin");
      }
      read_floats(blob, offset, table);
    }
  } catch (const json::exception& e) {
    throw CheckpointValidationError(std::string("malformed manifest: ") + e.what());
  }
  return c;
}

void check_compatible(const Checkpoint& ckpt, const KnowledgeGraph& kg_a, const KnowledgeGraph& kg_b) {
  auto check = [](std::uint64_t stored, std::uint64_t actual, const std::string& what) {
    if (stored != actual) {
      throw CheckpointHashError("intern table hash mismatch for " + what + ": checkpoint " + hex64(stored) + ", data " +
                                hex64(actual));
    }
  };
  check(ckpt.entities_a_hash, kg_a.entities().fingerprint(), "entities of graph A");
  check(ckpt.predicates_a_hash, kg_a.predicates().fingerprint(), "predicates of graph A");
  check(ckpt.entities_b_hash, kg_b.entities().fingerprint(), "entities of graph B");
  check(ckpt.predicates_b_hash, kg_b.predicates().fingerprint(), "predicates of graph B");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir, const KnowledgeGraph& kg_a, const KnowledgeGraph& kg_b) {
  Checkpoint c = load_checkpoint(dir);
  check_compatible(c, kg_a, kg_b);
  return c;
}

}  // namespace kgalign
