#pragma once

#include <algorithm>
#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "demorph/error.hpp"

namespace demorph {

// Fixed 64-byte alignment keeps vectorised reductions independent of where malloc places a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

// NCHW extent. A single image is a tensor with n == 1.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }

  bool operator==(const Shape&) const = default;

  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) +
           "x" + std::to_string(w);
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(Shape shape, AlignedVector<T> data) : shape_(shape), data_(std::move(data)) {
    check_size();
  }
  Tensor(Shape shape, const std::vector<T>& data) : shape_(shape), data_(data.begin(), data.end()) {
    check_size();
  }
  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  std::span<T> sample(int i) {
    return std::span<T>(data_).subspan(i * shape_.sample_size(), shape_.sample_size());
  }
  std::span<const T> sample(int i) const {
    return std::span<const T>(data_).subspan(i * shape_.sample_size(), shape_.sample_size());
  }

  T& operator()(int n, int c, int h, int w) {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  T operator()(int n, int c, int h, int w) const {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    AlignedVector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor&) const = default;

 private:
  void check_size() const {
    if (data_.size() != shape_.numel()) {
      throw DimensionError("tensor data size " + std::to_string(data_.size()) +
                           " does not match shape " + shape_.str());
    }
  }

  Shape shape_;
  AlignedVector<T> data_;
};

// An ImageTensor: 3 x res x res intensities in [0,1], stored as a batch of one.
using Image = Tensor<float>;

// Ordered component images I_1..I_k. Order is semantically load-bearing.
template <typename T>
using Components = std::vector<Tensor<T>>;
using ComponentSet = Components<float>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    throw DimensionError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

// Concatenate single images (or batches) along n.
template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> items) {
  if (items.empty()) throw DimensionError("stack: no tensors");
  Shape s = items.front().shape();
  int total = 0;
  for (const auto& t : items) {
    if (t.c() != s.c || t.h() != s.h || t.w() != s.w) {
      throw DimensionError("stack: inconsistent sample shapes");
    }
    total += t.n();
  }
  s.n = total;
  Tensor<T> out(s);
  std::size_t offset = 0;
  for (const auto& t : items) {
    std::copy(t.values().begin(), t.values().end(), out.data() + offset);
    offset += t.size();
  }
  return out;
}

template <typename T>
Tensor<T> slice_sample(const Tensor<T>& batch, int i) {
  Shape s = batch.shape();
  s.n = 1;
  auto src = batch.sample(i);
  return Tensor<T>(s, AlignedVector<T>(src.begin(), src.end()));
}

}  // namespace demorph
