// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace uniqseg::png {

/// Writes an 8-bit RGB PNG (color type 2). Deterministic byte output.
void write_rgb8(const std::filesystem::path& path, int width, int height,
                const std::vector<std::uint8_t>& rgb);

/// Writes a 16-bit grayscale PNG (color type 0), big-endian samples per spec.
void write_gray16(const std::filesystem::path& path, int width, int height,
                  const std::vector<std::uint16_t>& gray);

/// Reads an 8-bit RGB PNG written by write_rgb8 (also accepts any
/// non-interlaced 8-bit truecolor PNG). Throws IntegrityError on damage.
void read_rgb8(const std::filesystem::path& path, int& width, int& height,
               std::vector<std::uint8_t>& rgb);

/// Reads a 16-bit grayscale PNG. Throws IntegrityError on damage.
void read_gray16(const std::filesystem::path& path, int& width, int& height,
                 std::vector<std::uint16_t>& gray);

}  // namespace uniqseg::png
