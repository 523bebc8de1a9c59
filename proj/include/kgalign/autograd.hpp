#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kgalign/tensor.hpp"

namespace kgalign {

// Reverse-mode differentiation over a dynamically recorded graph. Every op
// produces a Var whose node keeps its parents alive; dropping the final Var
// releases the whole graph. Parameters are leaf Vars owned by a
// ParameterStore and accumulate gradients across backward calls.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  void accumulate(const Tensor& g);
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Tensor value);
  static Var leaf(Tensor value, bool requires_grad = true);

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  double item() const;
  bool defined() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph recording in the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Builds an op output; records parents and backward only when grad mode is
// on and some parent requires a gradient.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

// Runs reverse accumulation from a 1x1 loss.
void backward(const Var& loss);

// Compressed sparse rows, used for constant structural operators
// (adjacency, incidence averages).
struct CsrMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::uint32_t> col_idx;
  std::vector<double> values;

  static CsrMatrix from_triplets(std::size_t rows, std::size_t cols,
                                 std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> entries);
  Tensor to_dense() const;
  std::size_t nnz() const { return col_idx.size(); }
};

// Half-open row range [offset, offset + length) forming one attention group.
struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
};

// Head-averaged attention probabilities, one length x length block per
// segment.
struct AttentionCapture {
  std::vector<Tensor> per_segment;
};

// ---- primitive ops --------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var add_row(const Var& a, const Var& row);       // broadcast 1 x m over rows
Var mul_constant(const Var& a, const Tensor& c);  // elementwise by data
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var gather_rows(const Var& table, std::span<const std::uint32_t> ids);
Var slice_rows(const Var& a, std::size_t begin, std::size_t end);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
Var vconcat(const std::vector<Var>& parts);
Var hconcat(const std::vector<Var>& parts);
Var spmm(const CsrMatrix& m, const Var& x);
Var sum(const Var& a);
Var row_sum(const Var& a);
Var row_norm(const Var& a);                       // n x 1, zero rows -> 0
Var row_cosine(const Var& a, const Var& b);       // n x 1, zero norm -> 0
Var softmax_rows(const Var& a);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

// Scaled dot-product attention applied independently per segment and per
// head. q, k, v are already projected, n x d with d divisible by heads.
Var segment_attention(const Var& q, const Var& k, const Var& v, std::span<const Segment> segments,
                      std::size_t heads, AttentionCapture* capture = nullptr);

}  // namespace kgalign
