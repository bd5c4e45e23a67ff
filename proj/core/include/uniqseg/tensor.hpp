// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "uniqseg/errors.hpp"

namespace uniqseg::nn {

/// Dense row-major tensor of rank <= 4. Value semantics.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::initializer_list<int> dims) { reset(dims.begin(), dims.end()); }
  explicit Tensor(const std::vector<int>& dims) { reset(dims.begin(), dims.end()); }

  template <typename It>
  void reset(It first, It last) {
    rank_ = 0;
    std::size_t n = 1;
    for (It it = first; it != last; ++it) {
      if (rank_ >= 4) throw ContractError("Tensor: rank > 4");
      if (*it <= 0) throw ContractError("Tensor: non-positive dimension");
      dims_[rank_++] = *it;
      n *= static_cast<std::size_t>(*it);
    }
    data_.assign(n, T(0));
  }

  int rank() const { return rank_; }
  int dim(int i) const { return dims_[i]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int i, int j) { return data_[static_cast<std::size_t>(i) * dims_[1] + j]; }
  const T& at(int i, int j) const { return data_[static_cast<std::size_t>(i) * dims_[1] + j]; }

  T& at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * dims_[1] + y) * dims_[2] + x];
  }
  const T& at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * dims_[1] + y) * dims_[2] + x];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const {
    if (rank_ != o.rank_) return false;
    for (int i = 0; i < rank_; ++i)
      if (dims_[i] != o.dims_[i]) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (int i = 0; i < rank_; ++i) os << (i ? "x" : "") << dims_[i];
    os << ']';
    return os.str();
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.reset(dims_.begin(), dims_.begin() + rank_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  template <typename U>
  friend class Tensor;

  std::array<int, 4> dims_{1, 1, 1, 1};
  int rank_ = 0;
  std::vector<T> data_;
};

}  // namespace uniqseg::nn
