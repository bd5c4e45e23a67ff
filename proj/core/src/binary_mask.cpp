// SPDX-License-Identifier: Apache-2.0
#include "uniqseg/binary_mask.hpp"

#include <bit>

#include "uniqseg/errors.hpp"

namespace uniqseg {

BinaryMask::BinaryMask(int height, int width)
    : height_(height),
      width_(width),
      words_((static_cast<std::size_t>(height) * width + 63) / 64, 0) {}

long long BinaryMask::area() const {
  long long n = 0;
  for (std::uint64_t w : words_) n += std::popcount(w);
  return n;
}

long long BinaryMask::intersection_area(const BinaryMask& other) const {
  long long n = 0;
  for (std::size_t i = 0; i < words_.size(); ++i) n += std::popcount(words_[i] & other.words_[i]);
  return n;
}

long long BinaryMask::union_area(const BinaryMask& other) const {
  long long n = 0;
  for (std::size_t i = 0; i < words_.size(); ++i) n += std::popcount(words_[i] | other.words_[i]);
  return n;
}

void BinaryMask::or_with(const BinaryMask& other) {
  if (height_ != other.height_ || width_ != other.width_)
    throw ContractError("BinaryMask::or_with: shape mismatch");
  for (std::size_t i = 0; i < words_.size(); ++i) words_[i] |= other.words_[i];
}

std::uint64_t BinaryMask::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint64_t w : words_) {
    h ^= w;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.height() != b.height() || a.width() != b.width())
    throw ContractError("mask_iou: shape mismatch");
  long long u = a.union_area(b);
  if (u == 0) return 0.0;
  return static_cast<double>(a.intersection_area(b)) / static_cast<double>(u);
}

}  // namespace uniqseg
