#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "kgalign/autograd.hpp"
#include "kgalign/kg.hpp"
#include "kgalign/model.hpp"
#include "kgalign/params.hpp"

namespace kgalign {

// Character vocabulary: code points below 512 map to themselves, higher
// code points hash into [1, 511]. Id 0 is reserved and doubles as the
// EMPTY literal token.
inline constexpr std::uint32_t kCharVocabSize = 512;
inline constexpr std::uint32_t kEmptyCharId = 0;

std::uint32_t char_id(char32_t code_point);
// At most 64 ids; an empty literal becomes {kEmptyCharId}.
std::vector<std::uint32_t> literal_char_ids(std::string_view literal);

struct AttributeSlot {
  std::uint32_t predicate_row = 0;  // row of the predicate table
  std::vector<std::uint32_t> chars;
  std::optional<std::uint32_t> attr_triple;  // empty for the NO_ATTR slot
};

struct AttributeSlotBatch {
  GraphLabel graph = GraphLabel::A;
  std::vector<EntityId> entities;
  std::vector<std::vector<AttributeSlot>> slots;  // per entity, never empty
};

// Collects up to `max_slots` attributes per entity, ordered by predicate id
// (stable). Entities without attributes get a single NO_ATTR slot whose
// predicate row is kg.num_predicates().
AttributeSlotBatch build_slot_batch(const KnowledgeGraph& kg, std::span<const EntityId> entities,
                                    std::size_t max_slots);

struct AttributeEncoding {
  Var h_att;  // entities x dim
  // Per entity: (slot index, weight) over real attribute slots, summing to 1.
  std::vector<std::vector<std::pair<std::uint32_t, double>>> importance;
};

void init_attribute_parameters(ParameterStore& store, const ModelDims& dims, Rng& rng);

// GRU final state of a literal, 1 x char_dim.
Var encode_literal(std::span<const std::uint32_t> chars, const ParameterStore& store);

// tanh(a W_key + l W_literal), 1 x dim per row.
Var fuse_key_value(const Var& key_embedding, const Var& literal_embedding, const ParameterStore& store);

// Each entity's sequence [SUMMARY; slots] runs through `dims.layers`
// attention blocks; h_att is the final SUMMARY row. Importance is the
// SUMMARY attention row over attribute slots, renormalized per layer and
// averaged across layers (heads are already averaged).
AttributeEncoding aggregate_attributes(const AttributeSlotBatch& batch, const ParameterStore& store,
                                       const ModelDims& dims, bool capture_importance);

}  // namespace kgalign
