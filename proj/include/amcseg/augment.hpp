#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace amcseg {

struct AugmentConfig {
  bool enabled = true;
  double rotation_deg = 10.0;  // +/- range
  double shift_frac = 0.2;     // +/- of width and height
  double zoom_frac = 0.2;      // +/- around 1.0

  void validate() const;
};

// Applies one random rotate/shift/zoom draw to an image patch and its mask.
// Both receive the identical geometric transform; the image is sampled
// bilinearly, the mask nearest-neighbour, out-of-bounds reads are 0. Draw
// order per call: rotation, row shift, column shift, zoom.
void augment_patch(std::vector<float>& image, std::vector<std::uint8_t>& mask, int h,
                   int w, const AugmentConfig& cfg, std::mt19937_64& rng);

}  // namespace amcseg
