#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "kgalign/kg.hpp"
#include "kgalign/model.hpp"
#include "kgalign/rng.hpp"
#include "kgalign/tensor.hpp"
#include "kgalign/training.hpp"

namespace fixtures {

using namespace kgalign;

inline Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Tensor t(rows, cols);
  for (double& v : t.values()) v = rng.uniform(-scale, scale);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline ModelDims tiny_dims() {
  ModelDims d;
  d.dim = 8;
  d.char_dim = 4;
  d.heads = 2;
  d.layers = 2;
  d.max_slots = 6;
  return d;
}

inline KnowledgeGraph graph_from_tsv(const std::string& tsv, GraphLabel label) {
  std::istringstream in(tsv);
  return parse_triples(in, label);
}

// Six entities, a few relations and attributes, entity e5 without attributes.
inline KnowledgeGraph toy_graph(GraphLabel label) {
  return graph_from_tsv(
      "e0\tname\tAda\tA\n"
      "e0\tborn\t1815\tA\n"
      "e1\tname\tCharles\tA\n"
      "e1\tborn\t1791\tA\n"
      "e1\tfield\tmaths\tA\n"
      "e2\tname\tMary\tA\n"
      "e3\tname\tLondon\tA\n"
      "e4\tname\tEngine\tA\n"
      "e4\tyear\t1837\tA\n"
      "e0\tknows\te1\tR\n"
      "e1\tknows\te2\tR\n"
      "e0\tlived_in\te3\tR\n"
      "e1\tlived_in\te3\tR\n"
      "e1\tdesigned\te4\tR\n"
      "e4\tpart_of\te5\tR\n"
      "e2\tlived_in\te3\tR\n",
      label);
}

inline Dataset synthetic_dataset(const SyntheticConfig& syn, double train_fraction, std::uint64_t split_seed) {
  SyntheticPair pair = gen_synthetic_pair(syn);
  std::ostringstream gold;
  write_alignment(pair.gold, pair.a, pair.b, gold);
  std::istringstream in(gold.str());
  Dataset d;
  d.seeds = load_seed_alignment(in, pair.a, pair.b, train_fraction, split_seed);
  d.a = std::move(pair.a);
  d.b = std::move(pair.b);
  return d;
}

inline TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.dims = tiny_dims();
  cfg.epochs = 2;
  cfg.negatives = 2;
  cfg.lr = 1e-2;
  return cfg;
}

}  // namespace fixtures
