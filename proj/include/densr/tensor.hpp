#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace densr {

/// Dense row-major numeric array of rank 1..4. Image tensors use
/// [channels, height, width]; batched feature tensors use
/// [batch, channels, height, width].
template <class S>
struct Tensor {
  std::vector<int> shape;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> dims, S fill = S(0))
      : shape(std::move(dims)), data(count(shape), fill) {}

  static Tensor zeros(std::vector<int> dims) { return Tensor(std::move(dims)); }
  static Tensor full(std::vector<int> dims, S v) { return Tensor(std::move(dims), v); }
  static Tensor scalar(S v) { return Tensor({1}, v); }

  static std::int64_t count(const std::vector<int>& dims) {
    std::int64_t n = 1;
    for (int d : dims) {
      if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
      n *= d;
    }
    return n;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

  S* ptr() { return data.data(); }
  const S* ptr() const { return data.data(); }

  S& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const S& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  // 4D [n, c, h, w] indexing; lower ranks use the trailing axes.
  std::int64_t index4(int n, int c, int h, int w) const {
    const int C = shape[1], H = shape[2], W = shape[3];
    return ((static_cast<std::int64_t>(n) * C + c) * H + h) * W + w;
  }
  S& at4(int n, int c, int h, int w) { return data[static_cast<std::size_t>(index4(n, c, h, w))]; }
  const S& at4(int n, int c, int h, int w) const {
    return data[static_cast<std::size_t>(index4(n, c, h, w))];
  }
  std::int64_t index3(int c, int h, int w) const {
    const int H = shape[1], W = shape[2];
    return (static_cast<std::int64_t>(c) * H + h) * W + w;
  }
  S& at3(int c, int h, int w) { return data[static_cast<std::size_t>(index3(c, h, w))]; }
  const S& at3(int c, int h, int w) const {
    return data[static_cast<std::size_t>(index3(c, h, w))];
  }
  std::int64_t index2(int r, int c) const { return static_cast<std::int64_t>(r) * shape[1] + c; }
  S& at2(int r, int c) { return data[static_cast<std::size_t>(index2(r, c))]; }
  const S& at2(int r, int c) const { return data[static_cast<std::size_t>(index2(r, c))]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  Tensor reshaped(std::vector<int> dims) const {
    if (count(dims) != numel()) throw std::invalid_argument("reshape element count mismatch");
    Tensor out;
    out.shape = std::move(dims);
    out.data = data;
    return out;
  }

  template <class F>
  Tensor map(F&& f) const {
    Tensor out(shape);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = f(data[i]);
    return out;
  }

  bool all_finite() const {
    for (S v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
  }
};

template <class S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* where) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(where) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
}

/// FNV-1a over raw tensor bytes; used for parameter-partition checks and
/// manifest hashing.
inline std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

template <class S>
std::uint64_t tensor_hash(const Tensor<S>& t, std::uint64_t h = 0xcbf29ce484222325ull) {
  h = fnv1a(t.shape.data(), t.shape.size() * sizeof(int), h);
  return fnv1a(t.data.data(), t.data.size() * sizeof(S), h);
}

}  // namespace densr
