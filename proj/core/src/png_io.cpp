// SPDX-License-Identifier: Apache-2.0
#include "uniqseg/png_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "uniqseg/errors.hpp"

namespace uniqseg::png {
namespace {

constexpr std::uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& payload) {
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  std::uint32_t crc = ::crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
  put_u32(out, crc);
}

std::vector<std::uint8_t> deflate_all(const std::vector<std::uint8_t>& raw) {
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> out(bound);
  // Fixed compression level keeps byte output deterministic across runs.
  if (compress2(out.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw IoError("png: deflate failed");
  out.resize(bound);
  return out;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("png: cannot open for write: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("png: short write: " + path.string());
}

void write_png(const std::filesystem::path& path, int width, int height, int bit_depth,
               int color_type, const std::vector<std::uint8_t>& raw_scanlines) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kSignature, kSignature + 8);

  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(width));
  put_u32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(static_cast<std::uint8_t>(bit_depth));
  ihdr.push_back(static_cast<std::uint8_t>(color_type));
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // no interlace
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", deflate_all(raw_scanlines));
  append_chunk(out, "IEND", {});
  write_file(path, out);
}

struct Decoded {
  int width = 0;
  int height = 0;
  int bit_depth = 0;
  int color_type = 0;
  std::vector<std::uint8_t> raw;  // unfiltered scanline bytes
};

int channels_for(int color_type) {
  switch (color_type) {
    case 0: return 1;
    case 2: return 3;
    default: throw IntegrityError("png: unsupported color type");
  }
}

std::uint8_t paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
  if (pb <= pc) return static_cast<std::uint8_t>(b);
  return static_cast<std::uint8_t>(c);
}

Decoded decode_png(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw NotFoundError("png: cannot open: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());

  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0)
    throw IntegrityError("png: bad signature: " + path.string());

  Decoded d;
  std::vector<std::uint8_t> idat;
  std::size_t pos = 8;
  bool saw_ihdr = false, saw_iend = false;
  while (pos + 12 <= bytes.size()) {
    std::uint32_t len = get_u32(&bytes[pos]);
    if (pos + 12 + len > bytes.size()) throw IntegrityError("png: truncated chunk");
    const std::uint8_t* type = &bytes[pos + 4];
    const std::uint8_t* payload = &bytes[pos + 8];
    std::uint32_t crc_expect = get_u32(&bytes[pos + 8 + len]);
    std::uint32_t crc_actual = ::crc32(0L, type, 4 + len);
    if (crc_expect != crc_actual) throw IntegrityError("png: chunk CRC mismatch");

    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw IntegrityError("png: bad IHDR");
      d.width = static_cast<int>(get_u32(payload));
      d.height = static_cast<int>(get_u32(payload + 4));
      d.bit_depth = payload[8];
      d.color_type = payload[9];
      if (payload[10] != 0 || payload[11] != 0) throw IntegrityError("png: bad IHDR methods");
      if (payload[12] != 0) throw IntegrityError("png: interlaced PNG unsupported");
      if (d.width <= 0 || d.height <= 0) throw IntegrityError("png: bad dimensions");
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
      break;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || !saw_iend) throw IntegrityError("png: missing IHDR/IEND");

  int channels = channels_for(d.color_type);
  int bytes_per_sample = d.bit_depth / 8;
  if (d.bit_depth != 8 && d.bit_depth != 16) throw IntegrityError("png: unsupported bit depth");
  std::size_t stride = static_cast<std::size_t>(d.width) * channels * bytes_per_sample;
  std::size_t expect = (stride + 1) * d.height;

  std::vector<std::uint8_t> filtered(expect);
  uLongf out_len = static_cast<uLongf>(expect);
  int rc = uncompress(filtered.data(), &out_len, idat.data(), static_cast<uLong>(idat.size()));
  if (rc != Z_OK || out_len != expect) throw IntegrityError("png: IDAT inflate failed");

  d.raw.assign(stride * d.height, 0);
  int bpp = channels * bytes_per_sample;
  for (int y = 0; y < d.height; ++y) {
    const std::uint8_t* src = &filtered[static_cast<std::size_t>(y) * (stride + 1)];
    std::uint8_t filter = src[0];
    ++src;
    std::uint8_t* dst = &d.raw[static_cast<std::size_t>(y) * stride];
    const std::uint8_t* up = y > 0 ? dst - stride : nullptr;
    for (std::size_t x = 0; x < stride; ++x) {
      int a = x >= static_cast<std::size_t>(bpp) ? dst[x - bpp] : 0;
      int b = up ? up[x] : 0;
      int c = (up && x >= static_cast<std::size_t>(bpp)) ? up[x - bpp] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw IntegrityError("png: bad filter type");
      }
      dst[x] = static_cast<std::uint8_t>(v);
    }
  }
  return d;
}

}  // namespace

void write_rgb8(const std::filesystem::path& path, int width, int height,
                const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3)
    throw ContractError("png: rgb buffer size mismatch");
  std::size_t stride = static_cast<std::size_t>(width) * 3;
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * height);
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), rgb.begin() + y * stride, rgb.begin() + (y + 1) * stride);
  }
  write_png(path, width, height, 8, 2, raw);
}

void write_gray16(const std::filesystem::path& path, int width, int height,
                  const std::vector<std::uint16_t>& gray) {
  if (gray.size() != static_cast<std::size_t>(width) * height)
    throw ContractError("png: gray buffer size mismatch");
  std::vector<std::uint8_t> raw;
  raw.reserve((static_cast<std::size_t>(width) * 2 + 1) * height);
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    for (int x = 0; x < width; ++x) {
      std::uint16_t v = gray[static_cast<std::size_t>(y) * width + x];
      raw.push_back(static_cast<std::uint8_t>(v >> 8));
      raw.push_back(static_cast<std::uint8_t>(v & 0xff));
    }
  }
  write_png(path, width, height, 16, 0, raw);
}

void read_rgb8(const std::filesystem::path& path, int& width, int& height,
               std::vector<std::uint8_t>& rgb) {
  Decoded d = decode_png(path);
  if (d.color_type != 2 || d.bit_depth != 8)
    throw IntegrityError("png: expected 8-bit RGB: " + path.string());
  width = d.width;
  height = d.height;
  rgb = std::move(d.raw);
}

void read_gray16(const std::filesystem::path& path, int& width, int& height,
                 std::vector<std::uint16_t>& gray) {
  Decoded d = decode_png(path);
  if (d.color_type != 0 || d.bit_depth != 16)
    throw IntegrityError("png: expected 16-bit grayscale: " + path.string());
  width = d.width;
  height = d.height;
  gray.resize(static_cast<std::size_t>(d.width) * d.height);
  for (std::size_t i = 0; i < gray.size(); ++i)
    gray[i] = static_cast<std::uint16_t>((d.raw[2 * i] << 8) | d.raw[2 * i + 1]);
}

}  // namespace uniqseg::png
