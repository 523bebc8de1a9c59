#include "kgalign/layers.hpp"

#include <algorithm>
#include <numeric>

namespace kgalign {

GruWeights GruWeights::from_store(const ParameterStore& store, const std::string& prefix) {
  return {store.get(prefix + ".w_ih"), store.get(prefix + ".w_hh"), store.get(prefix + ".b_ih"),
          store.get(prefix + ".b_hh")};
}

void init_gru(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
              std::size_t hidden_dim, Rng& rng) {
  Tensor w_ih(input_dim, 3 * hidden_dim);
  Tensor w_hh(hidden_dim, 3 * hidden_dim);
  // Xavier per gate block.
  for (std::size_t gate = 0; gate < 3; ++gate) {
    Tensor a = xavier_uniform(input_dim, hidden_dim, rng);
    Tensor b = xavier_uniform(hidden_dim, hidden_dim, rng);
    for (std::size_t r = 0; r < input_dim; ++r)
      for (std::size_t c = 0; c < hidden_dim; ++c) w_ih(r, gate * hidden_dim + c) = a(r, c);
    for (std::size_t r = 0; r < hidden_dim; ++r)
      for (std::size_t c = 0; c < hidden_dim; ++c) w_hh(r, gate * hidden_dim + c) = b(r, c);
  }
  store.add(prefix + ".w_ih", std::move(w_ih));
  store.add(prefix + ".w_hh", std::move(w_hh));
  store.add(prefix + ".b_ih", Tensor(1, 3 * hidden_dim));
  store.add(prefix + ".b_hh", Tensor(1, 3 * hidden_dim));
}

namespace {

// One GRU step on the first rows of h; gi holds the precomputed input
// projection (with bias) for the same rows.
Var gru_cell(const Var& gi, const Var& h, const GruWeights& gru) {
  const std::size_t hd = gru.hidden();
  Var gh = add_row(matmul(h, gru.w_hh), gru.b_hh);
  Var r = sigmoid(add(slice_cols(gi, 0, hd), slice_cols(gh, 0, hd)));
  Var z = sigmoid(add(slice_cols(gi, hd, 2 * hd), slice_cols(gh, hd, 2 * hd)));
  Var n = tanh(add(slice_cols(gi, 2 * hd, 3 * hd), mul(r, slice_cols(gh, 2 * hd, 3 * hd))));
  // (1 - z) * n + z * h == n + z * (h - n)
  return add(n, mul(z, sub(h, n)));
}

}  // namespace

Var gru_sequence(const Var& inputs, const GruWeights& gru) {
  if (inputs.rows() == 0) throw std::invalid_argument("gru_sequence: empty sequence");
  Var gi_all = add_row(matmul(inputs, gru.w_ih), gru.b_ih);
  Var h = Var::constant(Tensor(1, gru.hidden()));
  for (std::size_t t = 0; t < inputs.rows(); ++t) h = gru_cell(slice_rows(gi_all, t, t + 1), h, gru);
  return h;
}

Var gru_encode_batch(const Var& table, const std::vector<std::vector<std::uint32_t>>& sequences,
                     const GruWeights& gru) {
  const std::size_t count = sequences.size();
  if (count == 0) return Var::constant(Tensor(0, gru.hidden()));
  for (const auto& s : sequences)
    if (s.empty()) throw std::invalid_argument("gru_encode_batch: empty sequence");

  // Longest first, so the sequences still running at step t are a prefix.
  std::vector<std::uint32_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return sequences[a].size() > sequences[b].size();
  });
  const std::size_t max_len = sequences[order.front()].size();

  std::vector<std::size_t> active(max_len, 0);
  std::vector<std::uint32_t> time_major;
  for (std::size_t t = 0; t < max_len; ++t) {
    for (std::uint32_t idx : order) {
      if (sequences[idx].size() <= t) break;
      time_major.push_back(sequences[idx][t]);
      ++active[t];
    }
  }

  Var gi_all = add_row(matmul(gather_rows(table, time_major), gru.w_ih), gru.b_ih);
  Var h = Var::constant(Tensor(count, gru.hidden()));
  std::size_t offset = 0;
  for (std::size_t t = 0; t < max_len; ++t) {
    const std::size_t m = active[t];
    Var gi = slice_rows(gi_all, offset, offset + m);
    offset += m;
    Var h_run = m == count ? h : slice_rows(h, 0, m);
    Var h_new = gru_cell(gi, h_run, gru);
    h = m == count ? h_new : vconcat({h_new, slice_rows(h, m, count)});
  }

  std::vector<std::uint32_t> inverse(count);
  for (std::size_t pos = 0; pos < count; ++pos) inverse[order[pos]] = static_cast<std::uint32_t>(pos);
  return gather_rows(h, inverse);
}

AttentionWeights AttentionWeights::from_store(const ParameterStore& store, const std::string& prefix) {
  return {store.get(prefix + ".wq"), store.get(prefix + ".wk"), store.get(prefix + ".wv"),
          store.get(prefix + ".wo")};
}

LayerNormWeights LayerNormWeights::from_store(const ParameterStore& store, const std::string& prefix) {
  return {store.get(prefix + ".gain"), store.get(prefix + ".bias")};
}

void init_attention(ParameterStore& store, const std::string& prefix, std::size_t dim, Rng& rng) {
  for (const char* w : {".wq", ".wk", ".wv", ".wo"}) store.add(prefix + w, xavier_uniform(dim, dim, rng));
}

void init_layer_norm(ParameterStore& store, const std::string& prefix, std::size_t dim) {
  store.add(prefix + ".gain", Tensor(1, dim, 1.0));
  store.add(prefix + ".bias", Tensor(1, dim, 0.0));
}

AttentionResult multi_head_attention(const Var& x, const AttentionWeights& w, std::size_t heads,
                                     std::span<const Segment> segments, bool capture) {
  AttentionResult result;
  Var q = matmul(x, w.wq);
  Var k = matmul(x, w.wk);
  Var v = matmul(x, w.wv);
  Var attended = segment_attention(q, k, v, segments, heads, capture ? &result.alpha : nullptr);
  result.output = matmul(attended, w.wo);
  return result;
}

AttentionResult multi_head_attention(const Var& x, const AttentionWeights& w, std::size_t heads) {
  const Segment whole{0, x.rows()};
  return multi_head_attention(x, w, heads, std::span<const Segment>(&whole, 1), true);
}

AttentionResult attention_block(const Var& x, const AttentionWeights& w, const LayerNormWeights& ln,
                                std::size_t heads, std::span<const Segment> segments, bool capture) {
  AttentionResult mha = multi_head_attention(x, w, heads, segments, capture);
  mha.output = layer_norm(add(x, mha.output), ln.gain, ln.bias);
  return mha;
}

}  // namespace kgalign
