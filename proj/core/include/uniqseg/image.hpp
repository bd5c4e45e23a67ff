// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

namespace uniqseg {

/// 8-bit RGB image, row-major interleaved (r,g,b per pixel).
struct ImageU8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // height*width*3

  ImageU8() = default;
  ImageU8(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}

  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  bool operator==(const ImageU8&) const = default;
};

/// Per-pixel instance label map: 0 = background, k = instance k (1-based).
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint16_t> labels;  // height*width

  LabelMap() = default;
  LabelMap(int h, int w) : height(h), width(w), labels(static_cast<std::size_t>(h) * w, 0) {}

  std::uint16_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint16_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const LabelMap&) const = default;
};

}  // namespace uniqseg
