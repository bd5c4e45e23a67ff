// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

namespace uniqseg {

/// Packed binary H x W mask with popcount-based set operations.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width);

  int height() const { return height_; }
  int width() const { return width_; }

  bool get(int y, int x) const {
    std::size_t bit = static_cast<std::size_t>(y) * width_ + x;
    return (words_[bit >> 6] >> (bit & 63)) & 1u;
  }
  void set(int y, int x, bool v) {
    std::size_t bit = static_cast<std::size_t>(y) * width_ + x;
    std::uint64_t m = 1ULL << (bit & 63);
    if (v)
      words_[bit >> 6] |= m;
    else
      words_[bit >> 6] &= ~m;
  }

  /// Number of foreground pixels.
  long long area() const;

  long long intersection_area(const BinaryMask& other) const;
  long long union_area(const BinaryMask& other) const;

  /// In-place union with another mask of the same shape.
  void or_with(const BinaryMask& other);

  bool operator==(const BinaryMask&) const = default;

  /// FNV-1a over the packed words; used only for deterministic tie-breaking.
  std::uint64_t hash() const;

  const std::vector<std::uint64_t>& words() const { return words_; }

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint64_t> words_;
};

/// |a n b| / |a u b|; 0 when both masks are empty. Shapes must match.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

}  // namespace uniqseg
