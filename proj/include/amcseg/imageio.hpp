#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace amcseg {

// Minimal deterministic PNG writer (fixed zlib settings, filter 0 rows).
void write_png_gray8(const std::string& path, std::span<const std::uint8_t> pixels,
                     int width, int height);
void write_png_rgb8(const std::string& path, std::span<const std::uint8_t> pixels,
                    int width, int height);

// Maps [0,1] floats to 8-bit gray, clamping out-of-range values.
std::vector<std::uint8_t> to_gray8(std::span<const float> values);

}  // namespace amcseg
