#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kgalign/autograd.hpp"
#include "kgalign/params.hpp"

namespace kgalign {

// x [n x p] times W [p x q].
inline Var linear(const Var& x, const Var& w) { return matmul(x, w); }

// GRU with gate column blocks ordered (reset, update, candidate):
//   r = sigma(x W_ir + b_ir + h W_hr + b_hr)
//   z = sigma(x W_iz + b_iz + h W_hz + b_hz)
//   n = tanh(x W_in + b_in + r * (h W_hn + b_hn))
//   h' = (1 - z) * n + z * h
struct GruWeights {
  Var w_ih;  // d_in x 3h
  Var w_hh;  // h x 3h
  Var b_ih;  // 1 x 3h
  Var b_hh;  // 1 x 3h

  static GruWeights from_store(const ParameterStore& store, const std::string& prefix);
  std::size_t hidden() const { return w_hh.rows(); }
};

void init_gru(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
              std::size_t hidden_dim, Rng& rng);

// Final hidden state of one sequence (rows of `inputs` are time steps),
// zero initial state. Returns 1 x hidden.
Var gru_sequence(const Var& inputs, const GruWeights& gru);

// Final hidden states of many token sequences in one batched pass.
// Sequences are embedded through `table`; row i of the result belongs to
// sequences[i]. Every sequence must be non-empty.
Var gru_encode_batch(const Var& table, const std::vector<std::vector<std::uint32_t>>& sequences,
                     const GruWeights& gru);

struct AttentionWeights {
  Var wq, wk, wv, wo;  // d x d each
  static AttentionWeights from_store(const ParameterStore& store, const std::string& prefix);
};

struct LayerNormWeights {
  Var gain, bias;  // 1 x d
  static LayerNormWeights from_store(const ParameterStore& store, const std::string& prefix);
};

void init_attention(ParameterStore& store, const std::string& prefix, std::size_t dim, Rng& rng);
void init_layer_norm(ParameterStore& store, const std::string& prefix, std::size_t dim);

struct AttentionResult {
  Var output;              // n x d, after the output projection
  AttentionCapture alpha;  // head-averaged probabilities per segment
};

// Multi-head scaled dot-product self-attention within each segment.
AttentionResult multi_head_attention(const Var& x, const AttentionWeights& w, std::size_t heads,
                                     std::span<const Segment> segments, bool capture);

// Single-segment form: attention over all n rows.
AttentionResult multi_head_attention(const Var& x, const AttentionWeights& w, std::size_t heads);

// LayerNorm(x + MHA(x)).
AttentionResult attention_block(const Var& x, const AttentionWeights& w, const LayerNormWeights& ln,
                                std::size_t heads, std::span<const Segment> segments, bool capture);

}  // namespace kgalign
