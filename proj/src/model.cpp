#include "kgalign/model.hpp"

#include <cmath>

#include "kgalign/attr_agg.hpp"
#include "kgalign/trans_ge.hpp"

namespace kgalign {

std::string predicate_table(GraphLabel g) { return g == GraphLabel::A ? "pred_emb.A" : "pred_emb.B"; }

void init_model_parameters(ParameterStore& store, const ModelDims& dims, std::size_t predicates_a,
                           std::size_t predicates_b, std::uint64_t seed) {
  Rng rng(seed);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(dims.dim));
  store.add(predicate_table(GraphLabel::A), normal_init(predicates_a + 1, dims.dim, stddev, rng));
  store.add(predicate_table(GraphLabel::B), normal_init(predicates_b + 1, dims.dim, stddev, rng));
  init_attribute_parameters(store, dims, rng);
  init_trans_ge_parameters(store, dims, rng);
}

}  // namespace kgalign
