#include "kgalign/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace kgalign {

namespace tensor_memory {
namespace {
std::atomic<std::size_t> g_live{0};
std::atomic<std::size_t> g_peak{0};
}  // namespace

Stats stats() { return {g_live.load(), g_peak.load()}; }

void reset_peak() { g_peak.store(g_live.load()); }

void on_allocate(std::size_t bytes) {
  const std::size_t now = g_live.fetch_add(bytes) + bytes;
  std::size_t peak = g_peak.load();
  while (now > peak && !g_peak.compare_exchange_weak(peak, now)) {
  }
}

void on_deallocate(std::size_t bytes) { g_live.fetch_sub(bytes); }

}  // namespace tensor_memory

Tensor::Tensor(std::size_t rows, std::size_t cols, std::initializer_list<double> values)
    : rows_(rows), cols_(cols), data_(values.begin(), values.end()) {
  if (data_.size() != rows * cols) {
    throw ShapeError("initializer has " + std::to_string(values.size()) + " values for shape " +
                     shape_string());
  }
}

Tensor Tensor::from_vector(std::size_t rows, std::size_t cols, std::span<const double> values) {
  if (values.size() != rows * cols) {
    throw ShapeError("from_vector: size mismatch");
  }
  Tensor t(rows, cols);
  std::copy(values.begin(), values.end(), t.data_.begin());
  return t;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

std::string Tensor::shape_string() const {
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

bool operator==(const Tensor& a, const Tensor& b) {
  return a.same_shape(b) &&
         (a.size() == 0 || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

}  // namespace kgalign
