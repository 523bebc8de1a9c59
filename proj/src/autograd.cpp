#include "kgalign/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>
#include <unordered_set>

namespace kgalign {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using StrideMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStrideMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

MapMat as_mat(Tensor& t) { return MapMat(t.data(), t.rows(), t.cols()); }
CMapMat as_mat(const Tensor& t) { return CMapMat(t.data(), t.rows(), t.cols()); }

thread_local bool t_grad_enabled = true;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.value().shape_string() + " vs " +
                     b.value().shape_string());
  }
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

}  // namespace

// ---- Node / Var -----------------------------------------------------------

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.rows(), value.cols());
  return grad;
}

void Node::accumulate(const Tensor& g) {
  Tensor& buf = grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Var::leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

double Var::item() const {
  if (value().size() != 1) throw ShapeError("item() on non-scalar " + value().shape_string());
  return value()[0];
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (t_grad_enabled) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const Var& p) { return p.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Var(std::move(node));
}

void backward(const Var& loss) {
  if (loss.value().size() != 1) throw ShapeError("backward requires a 1x1 loss");
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward_fn) continue;
    if (!node->grad.empty()) node->backward_fn(*node);
    // Interior gradients are not needed once propagated.
    node->grad = Tensor();
  }
}

// ---- CsrMatrix --------------------------------------------------------------

CsrMatrix CsrMatrix::from_triplets(std::size_t rows, std::size_t cols,
                                   std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> entries) {
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
  });
  CsrMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.row_ptr.assign(rows + 1, 0);
  std::size_t last_r = SIZE_MAX, last_c = SIZE_MAX;
  for (const auto& [r, c, v] : entries) {
    if (r >= rows || c >= cols) throw ShapeError("CsrMatrix: entry out of range");
    if (r == last_r && c == last_c) {
      m.values.back() += v;  // merge duplicates
      continue;
    }
    m.col_idx.push_back(c);
    m.values.push_back(v);
    ++m.row_ptr[r + 1];
    last_r = r;
    last_c = c;
  }
  for (std::size_t r = 1; r <= rows; ++r) m.row_ptr[r] += m.row_ptr[r - 1];
  return m;
}

Tensor CsrMatrix::to_dense() const {
  Tensor t(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) t(r, col_idx[k]) += values[k];
  return t;
}

// ---- ops ------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + a.value().shape_string() + " x " +
                     b.value().shape_string());
  }
  Tensor out(a.rows(), b.cols());
  as_mat(out).noalias() = as_mat(a.value()) * as_mat(b.value());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    auto g = as_mat(static_cast<const Tensor&>(self.grad));
    if (pa.requires_grad) as_mat(pa.grad_buffer()).noalias() += g * as_mat(static_cast<const Tensor&>(pb.value)).transpose();
    if (pb.requires_grad) as_mat(pb.grad_buffer()).noalias() += as_mat(static_cast<const Tensor&>(pa.value)).transpose() * g;
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (parent(self, p).requires_grad) parent(self, p).accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (parent(self, 0).requires_grad) parent(self, 0).accumulate(self.grad);
    if (parent(self, 1).requires_grad) {
      Tensor& gb = parent(self, 1).grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      Tensor& ga = pa.grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor& gb = pb.grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * pa.value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
  return make_result(std::move(out), {a}, [s](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += s;
  return make_result(std::move(out), {a}, [](Node& self) { parent(self, 0).accumulate(self.grad); });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: expected 1x" + std::to_string(a.cols()) + " got " +
                     row.value().shape_string());
  }
  Tensor out = a.value();
  const std::size_t n = out.rows(), m = out.cols();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) out(r, c) += row.value()[c];
  return make_result(std::move(out), {a, row}, [](Node& self) {
    if (parent(self, 0).requires_grad) parent(self, 0).accumulate(self.grad);
    Node& pr = parent(self, 1);
    if (pr.requires_grad) {
      Tensor& g = pr.grad_buffer();
      const std::size_t cols = self.grad.cols();
      for (std::size_t r = 0; r < self.grad.rows(); ++r)
        for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad(r, c);
    }
  });
}

Var mul_constant(const Var& a, const Tensor& c) {
  if (!a.value().same_shape(c)) throw ShapeError("mul_constant: shape mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
  return make_result(std::move(out), {a}, [c](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c[i];
  });
}

Var sigmoid(const Var& a) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = out[i];
    out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return make_result(std::move(out), {a}, [](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.value[i];
      g[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Var tanh(const Var& a) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  return make_result(std::move(out), {a}, [](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.value[i];
      g[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, out[i]);
  return make_result(std::move(out), {a}, [](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (self.value[i] > 0.0) g[i] += self.grad[i];
  });
}

Var gather_rows(const Var& table, std::span<const std::uint32_t> ids) {
  const std::size_t cols = table.cols();
  Tensor out(ids.size(), cols);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= table.rows()) throw ShapeError("gather_rows: index out of range");
    auto src = table.value().row(ids[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  std::vector<std::uint32_t> idx(ids.begin(), ids.end());
  return make_result(std::move(out), {table}, [idx = std::move(idx)](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    const std::size_t cols = g.cols();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      double* dst = g.data() + idx[r] * cols;
      const double* src = self.grad.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
  });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.rows()) throw ShapeError("slice_rows: bad range");
  const std::size_t cols = a.cols();
  Tensor out(end - begin, cols);
  std::copy(a.value().data() + begin * cols, a.value().data() + end * cols, out.data());
  return make_result(std::move(out), {a}, [begin](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    double* dst = g.data() + begin * g.cols();
    for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
  });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) throw ShapeError("slice_cols: bad range");
  const std::size_t w = end - begin;
  Tensor out(a.rows(), w);
  for (std::size_t r = 0; r < a.rows(); ++r)
    std::copy(a.value().data() + r * a.cols() + begin, a.value().data() + r * a.cols() + end,
              out.data() + r * w);
  return make_result(std::move(out), {a}, [begin, w](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t r = 0; r < self.grad.rows(); ++r)
      for (std::size_t c = 0; c < w; ++c) g(r, begin + c) += self.grad(r, c);
  });
}

Var vconcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("vconcat: no inputs");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("vconcat: column mismatch");
    rows += p.rows();
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + off);
    off += p.value().size();
  }
  return make_result(std::move(out), parts, [](Node& self) {
    std::size_t off = 0;
    for (auto& pp : self.parents) {
      const std::size_t n = pp->value.size();
      if (pp->requires_grad) {
        Tensor& g = pp->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
      }
      off += n;
    }
  });
}

Var hconcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("hconcat: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("hconcat: row mismatch");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(p.value().row(r).begin(), p.value().row(r).end(), out.data() + r * cols + c0);
    c0 += p.cols();
  }
  return make_result(std::move(out), parts, [](Node& self) {
    std::size_t c0 = 0;
    const std::size_t cols = self.grad.cols();
    for (auto& pp : self.parents) {
      const std::size_t w = pp->value.cols();
      if (pp->requires_grad) {
        Tensor& g = pp->grad_buffer();
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < w; ++c) g(r, c) += self.grad[r * cols + c0 + c];
      }
      c0 += w;
    }
  });
}

Var spmm(const CsrMatrix& m, const Var& x) {
  if (m.cols != x.rows()) throw ShapeError("spmm: inner dimensions differ");
  const std::size_t cols = x.cols();
  Tensor out(m.rows, cols);
  for (std::size_t r = 0; r < m.rows; ++r) {
    double* dst = out.data() + r * cols;
    for (std::size_t k = m.row_ptr[r]; k < m.row_ptr[r + 1]; ++k) {
      const double v = m.values[k];
      const double* src = x.value().data() + m.col_idx[k] * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += v * src[c];
    }
  }
  // The structural operator is shared by value so the graph owns its copy.
  auto shared = std::make_shared<const CsrMatrix>(m);
  return make_result(std::move(out), {x}, [shared](Node& self) {
    const CsrMatrix& mm = *shared;
    Tensor& g = parent(self, 0).grad_buffer();
    const std::size_t cols = g.cols();
    for (std::size_t r = 0; r < mm.rows; ++r) {
      const double* src = self.grad.data() + r * cols;
      for (std::size_t k = mm.row_ptr[r]; k < mm.row_ptr[r + 1]; ++k) {
        const double v = mm.values[k];
        double* dst = g.data() + mm.col_idx[k] * cols;
        for (std::size_t c = 0; c < cols; ++c) dst[c] += v * src[c];
      }
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  return make_result(Tensor(1, 1, s), {a}, [](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    const double gs = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gs;
  });
}

Var row_sum(const Var& a) {
  Tensor out(a.rows(), 1);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double s = 0.0;
    for (double x : a.value().row(r)) s += x;
    out[r] = s;
  }
  return make_result(std::move(out), {a}, [](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) g(r, c) += self.grad[r];
  });
}

Var row_norm(const Var& a) {
  Tensor out(a.rows(), 1);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double s = 0.0;
    for (double x : a.value().row(r)) s += x * x;
    out[r] = std::sqrt(s);
  }
  return make_result(std::move(out), {a}, [](Node& self) {
    Node& p = parent(self, 0);
    Tensor& g = p.grad_buffer();
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const double norm = self.value[r];
      if (norm == 0.0) continue;
      const double k = self.grad[r] / norm;
      for (std::size_t c = 0; c < g.cols(); ++c) g(r, c) += k * p.value(r, c);
    }
  });
}

Var row_cosine(const Var& a, const Var& b) {
  require_same_shape(a, b, "row_cosine");
  const std::size_t n = a.rows(), m = a.cols();
  Tensor out(n, 1);
  for (std::size_t r = 0; r < n; ++r) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t c = 0; c < m; ++c) {
      dot += a.value()(r, c) * b.value()(r, c);
      na += a.value()(r, c) * a.value()(r, c);
      nb += b.value()(r, c) * b.value()(r, c);
    }
    out[r] = (na == 0.0 || nb == 0.0) ? 0.0 : dot / (std::sqrt(na) * std::sqrt(nb));
  }
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    const std::size_t n = pa.value.rows(), m = pa.value.cols();
    for (std::size_t r = 0; r < n; ++r) {
      double na = 0, nb = 0;
      for (std::size_t c = 0; c < m; ++c) {
        na += pa.value(r, c) * pa.value(r, c);
        nb += pb.value(r, c) * pb.value(r, c);
      }
      if (na == 0.0 || nb == 0.0) continue;
      const double la = std::sqrt(na), lb = std::sqrt(nb), cosv = self.value[r], g = self.grad[r];
      // d cos / d a = b/(|a||b|) - cos * a/|a|^2
      if (pa.requires_grad) {
        Tensor& ga = pa.grad_buffer();
        for (std::size_t c = 0; c < m; ++c)
          ga(r, c) += g * (pb.value(r, c) / (la * lb) - cosv * pa.value(r, c) / na);
      }
      if (pb.requires_grad) {
        Tensor& gb = pb.grad_buffer();
        for (std::size_t c = 0; c < m; ++c)
          gb(r, c) += g * (pa.value(r, c) / (la * lb) - cosv * pb.value(r, c) / nb);
      }
    }
  });
}

namespace {

// In-place stabilized softmax over each row of a row-major block.
template <class Block>
void softmax_block_rows(Block& s) {
  // Vectorized reductions depend on the data's alignment; an aligned scratch row keeps them reproducible.
  Eigen::ArrayXd scratch(s.cols());
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    scratch = s.row(r).transpose().array();
    scratch = (scratch - scratch.maxCoeff()).exp();
    s.row(r) = (scratch / scratch.sum()).transpose().matrix();
  }
}

}  // namespace

Var softmax_rows(const Var& a) {
  for (double x : a.value().values())
    if (std::isnan(x)) throw std::domain_error("softmax_rows: NaN input");
  Tensor out = a.value();
  auto m = as_mat(out);
  softmax_block_rows(m);
  return make_result(std::move(out), {a}, [](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) dot += self.grad(r, c) * self.value(r, c);
      for (std::size_t c = 0; c < g.cols(); ++c)
        g(r, c) += self.value(r, c) * (self.grad(r, c) - dot);
    }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const std::size_t n = x.rows(), d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(d));
  }
  Tensor out(n, d);
  auto xhat = std::make_shared<Tensor>(n, d);
  auto inv_std = std::make_shared<std::vector<double>>(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = x.value().row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (row[c] - mean) * is;
      (*xhat)(r, c) = h;
      out(r, c) = h * gain.value()[c] + bias.value()[c];
    }
  }
  return make_result(std::move(out), {x, gain, bias}, [xhat, inv_std](Node& self) {
    Node& px = parent(self, 0);
    Node& pg = parent(self, 1);
    Node& pb = parent(self, 2);
    const std::size_t n = xhat->rows(), d = xhat->cols();
    if (pg.requires_grad || pb.requires_grad) {
      Tensor& gg = pg.grad_buffer();
      Tensor& gb = pb.grad_buffer();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) {
          gg[c] += self.grad(r, c) * (*xhat)(r, c);
          gb[c] += self.grad(r, c);
        }
    }
    if (px.requires_grad) {
      Tensor& gx = px.grad_buffer();
      for (std::size_t r = 0; r < n; ++r) {
        double mean_g = 0.0, mean_gx = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          const double gh = self.grad(r, c) * pg.value[c];
          mean_g += gh;
          mean_gx += gh * (*xhat)(r, c);
        }
        mean_g /= static_cast<double>(d);
        mean_gx /= static_cast<double>(d);
        for (std::size_t c = 0; c < d; ++c) {
          const double gh = self.grad(r, c) * pg.value[c];
          gx(r, c) += (*inv_std)[r] * (gh - mean_g - (*xhat)(r, c) * mean_gx);
        }
      }
    }
  });
}

Var segment_attention(const Var& q, const Var& k, const Var& v, std::span<const Segment> segments,
                      std::size_t heads, AttentionCapture* capture) {
  require_same_shape(q, k, "segment_attention");
  require_same_shape(q, v, "segment_attention");
  const std::size_t n = q.rows(), d = q.cols();
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("segment_attention: dimension " + std::to_string(d) +
                     " not divisible by heads " + std::to_string(heads));
  }
  const std::size_t dh = d / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Segment> segs(segments.begin(), segments.end());
  std::size_t prob_total = 0;
  for (const auto& s : segs) {
    if (s.offset + s.length > n) throw ShapeError("segment_attention: segment out of range");
    prob_total += s.length * s.length * heads;
  }

  Tensor out(n, d);
  auto probs = std::make_shared<Tensor>(prob_total, 1);
  if (capture) {
    capture->per_segment.clear();
    capture->per_segment.reserve(segs.size());
  }

  std::size_t poff = 0;
  for (const auto& s : segs) {
    const auto len = static_cast<Eigen::Index>(s.length);
    Tensor avg;
    if (capture) avg = Tensor(s.length, s.length);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t base = s.offset * d + h * dh;
      CStrideMap qb(q.value().data() + base, len, dh, Eigen::OuterStride<>(d));
      CStrideMap kb(k.value().data() + base, len, dh, Eigen::OuterStride<>(d));
      CStrideMap vb(v.value().data() + base, len, dh, Eigen::OuterStride<>(d));
      MapMat p(probs->data() + poff, len, len);
      p.noalias() = (qb * scale_factor) * kb.transpose();
      softmax_block_rows(p);
      StrideMap ob(out.data() + base, len, dh, Eigen::OuterStride<>(d));
      ob.noalias() = p * vb;
      if (capture) {
        for (Eigen::Index i = 0; i < len * len; ++i) avg[i] += p.data()[i] / static_cast<double>(heads);
      }
      poff += s.length * s.length;
    }
    if (capture) capture->per_segment.push_back(std::move(avg));
  }

  return make_result(std::move(out), {q, k, v}, [segs, heads, dh, d, scale_factor, probs](Node& self) {
    Node& pq = parent(self, 0);
    Node& pk = parent(self, 1);
    Node& pv = parent(self, 2);
    Tensor& gq = pq.grad_buffer();
    Tensor& gk = pk.grad_buffer();
    Tensor& gv = pv.grad_buffer();
    std::size_t poff = 0;
    RowMat dp, ds;
    for (const auto& s : segs) {
      const auto len = static_cast<Eigen::Index>(s.length);
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t base = s.offset * d + h * dh;
        CStrideMap qb(pq.value.data() + base, len, dh, Eigen::OuterStride<>(d));
        CStrideMap kb(pk.value.data() + base, len, dh, Eigen::OuterStride<>(d));
        CStrideMap vb(pv.value.data() + base, len, dh, Eigen::OuterStride<>(d));
        CStrideMap gob(self.grad.data() + base, len, dh, Eigen::OuterStride<>(d));
        CMapMat p(probs->data() + poff, len, len);
        dp.noalias() = gob * vb.transpose();
        ds.resize(len, len);
        for (Eigen::Index r = 0; r < len; ++r) {
          double dot = 0.0;
          for (Eigen::Index c = 0; c < len; ++c) dot += p(r, c) * dp(r, c);
          ds.row(r) = (p.row(r).array() * (dp.row(r).array() - dot) * scale_factor).matrix();
        }
        StrideMap gqb(gq.data() + base, len, dh, Eigen::OuterStride<>(d));
        StrideMap gkb(gk.data() + base, len, dh, Eigen::OuterStride<>(d));
        StrideMap gvb(gv.data() + base, len, dh, Eigen::OuterStride<>(d));
        gvb.noalias() += p.transpose() * gob;
        gqb.noalias() += ds * kb;
        gkb.noalias() += ds.transpose() * qb;
        poff += s.length * s.length;
      }
    }
  });
}

}  // namespace kgalign
