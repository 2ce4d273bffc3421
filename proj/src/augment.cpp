#include "amcseg/augment.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace amcseg {

void AugmentConfig::validate() const {
  if (rotation_deg < 0.0 || rotation_deg > 180.0)
    throw std::invalid_argument("augment: rotation_deg must be in [0,180]");
  if (shift_frac < 0.0 || shift_frac >= 1.0 || zoom_frac < 0.0 || zoom_frac >= 1.0)
    throw std::invalid_argument("augment: shift_frac and zoom_frac must be in [0,1)");
}

void augment_patch(std::vector<float>& image, std::vector<std::uint8_t>& mask, int h,
                   int w, const AugmentConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  if (image.size() != static_cast<std::size_t>(h) * w ||
      mask.size() != static_cast<std::size_t>(h) * w)
    throw std::invalid_argument("augment: image/mask size does not match h*w");
  if (!cfg.enabled) return;

  std::uniform_real_distribution<double> u01(-1.0, 1.0);
  const double theta = u01(rng) * cfg.rotation_deg * std::numbers::pi / 180.0;
  const double dy = u01(rng) * cfg.shift_frac * h;
  const double dx = u01(rng) * cfg.shift_frac * w;
  const double zoom = 1.0 + u01(rng) * cfg.zoom_frac;

  const double cy = 0.5 * (h - 1), cx = 0.5 * (w - 1);
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);

  std::vector<float> src_img(image);
  std::vector<std::uint8_t> src_mask(mask);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Invert output = center + zoom * R(theta) * (input - center) + shift.
      const double ry = (y - cy - dy) / zoom;
      const double rx = (x - cx - dx) / zoom;
      const double sy = cos_t * ry + sin_t * rx + cy;
      const double sx = -sin_t * ry + cos_t * rx + cx;

      float iv = 0.0f;
      const int y0 = static_cast<int>(std::floor(sy));
      const int x0 = static_cast<int>(std::floor(sx));
      if (sy >= -1.0 && sy <= h && sx >= -1.0 && sx <= w) {
        const double fy = sy - y0, fx = sx - x0;
        auto at = [&](int yy, int xx) -> double {
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
          return src_img[static_cast<std::size_t>(yy) * w + xx];
        };
        iv = static_cast<float>((1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                                fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1)));
      }
      image[static_cast<std::size_t>(y) * w + x] = iv;

      const int ny = static_cast<int>(std::lround(sy));
      const int nx = static_cast<int>(std::lround(sx));
      mask[static_cast<std::size_t>(y) * w + x] =
          (ny >= 0 && ny < h && nx >= 0 && nx < w)
              ? src_mask[static_cast<std::size_t>(ny) * w + nx]
              : std::uint8_t(0);
    }
  }
}

}  // namespace amcseg
