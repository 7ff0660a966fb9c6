#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "saltseg/error.hpp"

namespace saltseg {

using Dims = std::vector<std::size_t>;

/// 64-byte aligned storage. Vectorised reductions peel according to the
/// buffer address, so a fixed alignment keeps results bit-reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

inline std::size_t dims_product(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string dims_to_string(const Dims& dims) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << ')';
  return os.str();
}

/// Dense row-major array. Rank-4 tensors use batch, channel, height, width
/// order; lower ranks hold biases and scalars.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Dims dims, T fill = T{}) : dims_(std::move(dims)) {
    check_extents(dims_);
    data_.assign(dims_product(dims_), fill);
  }

  BasicTensor(Dims dims, const std::vector<T>& data) : dims_(std::move(dims)), data_(data.begin(), data.end()) {
    check_extents(dims_);
    if (data_.size() != dims_product(dims_))
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match dims " + dims_to_string(dims_));
  }

  static BasicTensor zeros(Dims dims) { return BasicTensor(std::move(dims)); }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Rank-4 element access.
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[offset(n, c, h, w)];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[offset(n, c, h, w)];
  }

  // Rank-2 element access.
  T& at(std::size_t r, std::size_t c) { return data_[r * dims_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * dims_[1] + c]; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w;
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  T sum() const { return std::accumulate(data_.begin(), data_.end(), T{}); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  BasicTensor reshaped(Dims dims) const {
    if (dims_product(dims) != data_.size())
      throw ShapeError("cannot reshape " + dims_to_string(dims_) + " to " + dims_to_string(dims));
    BasicTensor out = *this;
    out.dims_ = std::move(dims);
    return out;
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  static void check_extents(const Dims& dims) {
    for (auto d : dims)
      if (d == 0) throw ShapeError("tensor extent of zero in " + dims_to_string(dims));
  }

  Dims dims_;
  std::vector<T, AlignedAllocator<T>> data_;
};

using Tensor = BasicTensor<double>;

inline void require_rank(const Dims& dims, std::size_t rank, const char* what) {
  if (dims.size() != rank)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     dims_to_string(dims));
}

inline void require_same_dims(const Dims& a, const Dims& b, const char* what) {
  if (a != b)
    throw ShapeError(std::string(what) + ": dims " + dims_to_string(a) + " vs " +
                     dims_to_string(b));
}

}  // namespace saltseg
