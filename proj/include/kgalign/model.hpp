#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "kgalign/kg.hpp"
#include "kgalign/params.hpp"

namespace kgalign {

struct ModelDims {
  std::size_t dim = 256;       // attribute / entity / hidden width
  std::size_t char_dim = 64;   // character embedding and GRU width
  std::size_t heads = 8;
  std::size_t layers = 3;      // both aggregators
  std::size_t max_slots = 32;  // attributes kept per entity
};

// Per-graph predicate embedding table name. The table has one extra row
// reserved for the NO_ATTR slot.
std::string predicate_table(GraphLabel g);

// Creates every learned tensor with seeded Xavier-uniform weights and
// N(0, 1/d) embedding tables.
void init_model_parameters(ParameterStore& store, const ModelDims& dims, std::size_t predicates_a,
                           std::size_t predicates_b, std::uint64_t seed);

}  // namespace kgalign
