#include "amcseg/imageio.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace amcseg {

namespace {

void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::uint8_t* data, std::size_t len) {
  put_u32_be(out, static_cast<std::uint32_t>(len));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  if (len) out.insert(out.end(), data, data + len);
  const auto crc = crc32(0, out.data() + start, static_cast<uInt>(4 + len));
  put_u32_be(out, static_cast<std::uint32_t>(crc));
}

void write_png(const std::string& path, std::span<const std::uint8_t> pixels, int width,
               int height, int channels) {
  if (width <= 0 || height <= 0)
    throw std::invalid_argument("write_png: non-positive dimensions");
  const std::size_t row = static_cast<std::size_t>(width) * channels;
  if (pixels.size() != row * static_cast<std::size_t>(height))
    throw std::invalid_argument("write_png: pixel buffer size mismatch");

  // Raw stream: one filter byte (0) per scanline.
  std::vector<std::uint8_t> raw((row + 1) * static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) {
    raw[(row + 1) * static_cast<std::size_t>(y)] = 0;
    std::memcpy(raw.data() + (row + 1) * static_cast<std::size_t>(y) + 1,
                pixels.data() + row * static_cast<std::size_t>(y), row);
  }
  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("write_png: deflate failed");
  comp.resize(comp_len);

  std::vector<std::uint8_t> png;
  static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  png.insert(png.end(), sig, sig + 8);

  std::uint8_t ihdr[13];
  ihdr[0] = static_cast<std::uint8_t>(width >> 24);
  ihdr[1] = static_cast<std::uint8_t>(width >> 16);
  ihdr[2] = static_cast<std::uint8_t>(width >> 8);
  ihdr[3] = static_cast<std::uint8_t>(width);
  ihdr[4] = static_cast<std::uint8_t>(height >> 24);
  ihdr[5] = static_cast<std::uint8_t>(height >> 16);
  ihdr[6] = static_cast<std::uint8_t>(height >> 8);
  ihdr[7] = static_cast<std::uint8_t>(height);
  ihdr[8] = 8;                                         // bit depth
  ihdr[9] = (channels == 1) ? 0 : 2;                   // gray / truecolor
  ihdr[10] = ihdr[11] = ihdr[12] = 0;                  // default methods
  append_chunk(png, "IHDR", ihdr, sizeof(ihdr));
  append_chunk(png, "IDAT", comp.data(), comp.size());
  append_chunk(png, "IEND", nullptr, 0);

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(reinterpret_cast<const char*>(png.data()),
           static_cast<std::streamsize>(png.size()));
  if (!os) throw std::runtime_error("failed writing PNG: " + path);
}

}  // namespace

void write_png_gray8(const std::string& path, std::span<const std::uint8_t> pixels,
                     int width, int height) {
  write_png(path, pixels, width, height, 1);
}

void write_png_rgb8(const std::string& path, std::span<const std::uint8_t> pixels,
                    int width, int height) {
  write_png(path, pixels, width, height, 3);
}

std::vector<std::uint8_t> to_gray8(std::span<const float> values) {
  std::vector<std::uint8_t> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float v = std::clamp(values[i], 0.0f, 1.0f);
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

}  // namespace amcseg
