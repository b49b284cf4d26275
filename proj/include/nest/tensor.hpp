#pragma once

#include "nest/core.hpp"

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <vector>

namespace nest {

using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1},
                         [](Index a, Index b) { return a * b; });
}

/// Dense row-major N-d array with the timestep axis leading.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar{0})
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_size(shape_)), fill) {
    if (shape_.empty()) throw StructuralError("tensor shape must be non-empty");
    for (Index d : shape_)
      if (d < 1) throw StructuralError("tensor dimensions must be positive");
  }

  const Shape& shape() const { return shape_; }
  Index dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  Index size() const { return static_cast<Index>(data_.size()); }

  std::span<Scalar> data() { return data_; }
  std::span<const Scalar> data() const { return data_; }

  Index offset(std::initializer_list<Index> idx) const {
    if (idx.size() != shape_.size()) throw StructuralError("index rank mismatch");
    Index off = 0;
    std::size_t axis = 0;
    for (Index i : idx) {
      if (i < 0 || i >= shape_[axis]) throw StructuralError("index out of range");
      off = off * shape_[axis++] + i;
    }
    return off;
  }
  Scalar& operator()(std::initializer_list<Index> idx) { return data_[offset(idx)]; }
  Scalar operator()(std::initializer_list<Index> idx) const { return data_[offset(idx)]; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 protected:
  Shape shape_;
  std::vector<Scalar> data_;
};

using RealTensor = Tensor<double>;

/// Binary activation tensor; every element is 0 or 1 and the leading axis is time.
class SpikeTensor : public Tensor<std::uint8_t> {
 public:
  SpikeTensor() = default;
  explicit SpikeTensor(Shape shape) : Tensor<std::uint8_t>(std::move(shape), 0) {}

  Index timesteps() const { return dim(0); }

  void set(std::initializer_list<Index> idx, bool fire) { (*this)(idx) = fire ? 1 : 0; }

  bool is_binary() const {
    for (auto v : data_)
      if (v > 1) return false;
    return true;
  }
  void check_binary() const {
    if (!is_binary()) throw ContractViolation("spike tensor holds a non-binary value");
  }
  Index count() const {
    Index n = 0;
    for (auto v : data_) n += v;
    return n;
  }

  RealTensor to_real() const {
    RealTensor out(shape_);
    for (Index i = 0; i < size(); ++i) out.data()[i] = data_[i];
    return out;
  }
};

}  // namespace nest
