#include "kgalign/attr_agg.hpp"

#include <algorithm>
#include <cmath>

#include "kgalign/layers.hpp"

namespace kgalign {

std::uint32_t char_id(char32_t code_point) {
  if (code_point < kCharVocabSize) return static_cast<std::uint32_t>(code_point);
  return 1 + static_cast<std::uint32_t>(code_point % (kCharVocabSize - 1));
}

std::vector<std::uint32_t> literal_char_ids(std::string_view literal) {
  const auto cps = decode_utf8(literal);
  std::vector<std::uint32_t> ids;
  const std::size_t n = std::min(cps.size(), kMaxLiteralCodePoints);
  ids.reserve(std::max<std::size_t>(n, 1));
  for (std::size_t i = 0; i < n; ++i) ids.push_back(char_id(cps[i]));
  if (ids.empty()) ids.push_back(kEmptyCharId);
  return ids;
}

AttributeSlotBatch build_slot_batch(const KnowledgeGraph& kg, std::span<const EntityId> entities,
                                    std::size_t max_slots) {
  AttributeSlotBatch batch;
  batch.graph = kg.label();
  batch.entities.assign(entities.begin(), entities.end());
  batch.slots.reserve(entities.size());
  const auto no_attr_row = static_cast<std::uint32_t>(kg.num_predicates());
  for (EntityId e : entities) {
    std::vector<std::uint32_t> idx = kg.attributes_of(e);
    std::stable_sort(idx.begin(), idx.end(), [&](std::uint32_t x, std::uint32_t y) {
      return kg.attr_triples()[x].predicate < kg.attr_triples()[y].predicate;
    });
    if (idx.size() > max_slots) idx.resize(max_slots);
    std::vector<AttributeSlot> slots;
    slots.reserve(std::max<std::size_t>(idx.size(), 1));
    for (std::uint32_t t : idx) {
      const auto& triple = kg.attr_triples()[t];
      slots.push_back({triple.predicate, literal_char_ids(triple.value), t});
    }
    if (slots.empty()) slots.push_back({no_attr_row, {kEmptyCharId}, std::nullopt});
    batch.slots.push_back(std::move(slots));
  }
  return batch;
}

void init_attribute_parameters(ParameterStore& store, const ModelDims& dims, Rng& rng) {
  store.add("attr.char_emb", normal_init(kCharVocabSize, dims.char_dim,
                                         1.0 / std::sqrt(static_cast<double>(dims.char_dim)), rng));
  init_gru(store, "attr.gru", dims.char_dim, dims.char_dim, rng);
  store.add("attr.w_key", xavier_uniform(dims.dim, dims.dim, rng));
  store.add("attr.w_literal", xavier_uniform(dims.char_dim, dims.dim, rng));
  store.add("attr.summary", normal_init(1, dims.dim, 1.0 / std::sqrt(static_cast<double>(dims.dim)), rng));
  for (std::size_t k = 0; k < dims.layers; ++k) {
    const std::string p = "attr.layer" + std::to_string(k);
    init_attention(store, p + ".attn", dims.dim, rng);
    init_layer_norm(store, p + ".ln", dims.dim);
  }
}

Var encode_literal(std::span<const std::uint32_t> chars, const ParameterStore& store) {
  std::vector<std::uint32_t> ids(chars.begin(), chars.end());
  if (ids.size() > kMaxLiteralCodePoints) ids.resize(kMaxLiteralCodePoints);
  if (ids.empty()) ids.push_back(kEmptyCharId);
  Var embedded = gather_rows(store.get("attr.char_emb"), ids);
  return gru_sequence(embedded, GruWeights::from_store(store, "attr.gru"));
}

Var fuse_key_value(const Var& key_embedding, const Var& literal_embedding, const ParameterStore& store) {
  return tanh(add(matmul(key_embedding, store.get("attr.w_key")),
                  matmul(literal_embedding, store.get("attr.w_literal"))));
}

AttributeEncoding aggregate_attributes(const AttributeSlotBatch& batch, const ParameterStore& store,
                                       const ModelDims& dims, bool capture_importance) {
  const std::size_t n_entities = batch.entities.size();
  AttributeEncoding result;
  if (n_entities == 0) {
    result.h_att = Var::constant(Tensor(0, dims.dim));
    return result;
  }

  std::vector<std::vector<std::uint32_t>> sequences;
  std::vector<std::uint32_t> predicate_rows;
  for (const auto& slots : batch.slots) {
    if (slots.empty()) throw std::logic_error("aggregate_attributes: entity without slots");
    for (const auto& s : slots) {
      sequences.push_back(s.chars);
      predicate_rows.push_back(s.predicate_row);
    }
  }

  Var literals = gru_encode_batch(store.get("attr.char_emb"), sequences, GruWeights::from_store(store, "attr.gru"));
  Var keys = gather_rows(store.get(predicate_table(batch.graph)), predicate_rows);
  Var slot_rows = fuse_key_value(keys, literals, store);

  // Row 0 of `pool` is the learned SUMMARY slot, followed by all slot rows.
  Var pool = vconcat({store.get("attr.summary"), slot_rows});
  std::vector<std::uint32_t> layout;
  std::vector<Segment> segments;
  std::vector<std::uint32_t> summary_rows;
  layout.reserve(sequences.size() + n_entities);
  std::uint32_t next_slot = 1;
  for (const auto& slots : batch.slots) {
    segments.push_back({layout.size(), slots.size() + 1});
    summary_rows.push_back(static_cast<std::uint32_t>(layout.size()));
    layout.push_back(0);
    for (std::size_t i = 0; i < slots.size(); ++i) layout.push_back(next_slot++);
  }
  Var x = gather_rows(pool, layout);

  if (capture_importance) result.importance.assign(n_entities, {});
  for (std::size_t k = 0; k < dims.layers; ++k) {
    const std::string p = "attr.layer" + std::to_string(k);
    AttentionResult block = attention_block(x, AttentionWeights::from_store(store, p + ".attn"),
                                            LayerNormWeights::from_store(store, p + ".ln"), dims.heads,
                                            segments, capture_importance);
    x = block.output;
    if (!capture_importance) continue;
    for (std::size_t e = 0; e < n_entities; ++e) {
      const auto& slots = batch.slots[e];
      if (!slots.front().attr_triple) continue;  // NO_ATTR
      const Tensor& alpha = block.alpha.per_segment[e];
      double total = 0.0;
      for (std::size_t j = 1; j < alpha.cols(); ++j) total += alpha(0, j);
      auto& imp = result.importance[e];
      if (imp.empty()) {
        for (std::size_t j = 1; j < alpha.cols(); ++j) imp.emplace_back(static_cast<std::uint32_t>(j - 1), 0.0);
      }
      for (std::size_t j = 1; j < alpha.cols(); ++j)
        imp[j - 1].second += alpha(0, j) / total / static_cast<double>(dims.layers);
    }
  }
  result.h_att = gather_rows(x, summary_rows);
  return result;
}

}  // namespace kgalign
