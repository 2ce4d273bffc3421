#include "amcseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "amcseg/binio.hpp"

namespace amcseg {

float normalize_hu_value(float hu) {
  const float c = std::clamp(hu, kHuMin, kHuMax);
  return (c - kHuMin) / (kHuMax - kHuMin);
}

Volume normalize_hu(const Volume& raw) {
  Volume out = raw;
  for (auto& v : out.voxels) v = normalize_hu_value(v);
  return out;
}

std::vector<SliceLabel> label_slices(const Volume& volume, const MaskVolume& mask) {
  if (volume.slices != mask.slices || volume.height != mask.height ||
      volume.width != mask.width)
    throw std::invalid_argument("label_slices: volume and mask dimensions differ");
  std::vector<SliceLabel> labels(static_cast<std::size_t>(mask.slices),
                                 SliceLabel::NON_INFECTED);
  for (int s = 0; s < mask.slices; ++s) {
    const std::uint8_t* m = mask.slice(s);
    const std::size_t n = mask.slice_stride();
    for (std::size_t i = 0; i < n; ++i) {
      if (m[i]) {
        labels[static_cast<std::size_t>(s)] = SliceLabel::INFECTED;
        break;
      }
    }
  }
  return labels;
}

// ---- patch extraction ---------------------------------------------------------

namespace {

PatchSample cut_patch(const float* slice_px, const std::uint8_t* mask_px, int w,
                      int patch, int row, int col, const std::string& patient,
                      int slice_idx) {
  PatchSample s;
  s.image.resize(static_cast<std::size_t>(patch) * patch);
  s.mask.resize(static_cast<std::size_t>(patch) * patch);
  bool any = false;
  for (int y = 0; y < patch; ++y) {
    const std::size_t src = static_cast<std::size_t>(row + y) * w + col;
    std::copy(slice_px + src, slice_px + src + patch,
              s.image.begin() + static_cast<std::size_t>(y) * patch);
    for (int x = 0; x < patch; ++x) {
      const std::uint8_t mv = mask_px ? mask_px[src + x] : std::uint8_t(0);
      s.mask[static_cast<std::size_t>(y) * patch + x] = mv;
      any = any || mv;
    }
  }
  s.label = any ? SliceLabel::INFECTED : SliceLabel::NON_INFECTED;
  s.patient = patient;
  s.slice = slice_idx;
  s.row_off = row;
  s.col_off = col;
  return s;
}

bool patch_hits_roi(const std::uint8_t* mask_px, int w, int patch, int row, int col) {
  for (int y = 0; y < patch; ++y) {
    const std::uint8_t* r = mask_px + static_cast<std::size_t>(row + y) * w + col;
    for (int x = 0; x < patch; ++x)
      if (r[x]) return true;
  }
  return false;
}

}  // namespace

std::vector<PatchSample> extract_train_patches(const float* slice_px,
                                               const std::uint8_t* mask_px, int h, int w,
                                               SliceLabel slice_label,
                                               const ExtractConfig& cfg,
                                               std::mt19937_64& rng,
                                               const std::string& patient,
                                               int slice_idx) {
  const int p = cfg.patch;
  if (h % p != 0 || w % p != 0)
    throw std::invalid_argument("extract_train_patches: slice " + std::to_string(h) + "x" +
                                std::to_string(w) + " is not a multiple of the patch size " +
                                std::to_string(p));
  std::vector<PatchSample> out;

  if (slice_label == SliceLabel::INFECTED) {
    // Bounding box of the ROI limits the offset ranges; rejection sampling
    // inside them keeps the draw uniform over offsets whose box hits the ROI.
    int rmin = h, rmax = -1, cmin = w, cmax = -1;
    for (int y = 0; y < h; ++y) {
      const std::uint8_t* r = mask_px + static_cast<std::size_t>(y) * w;
      for (int x = 0; x < w; ++x) {
        if (r[x]) {
          rmin = std::min(rmin, y);
          rmax = std::max(rmax, y);
          cmin = std::min(cmin, x);
          cmax = std::max(cmax, x);
        }
      }
    }
    if (rmax < 0)
      throw std::invalid_argument("extract_train_patches: slice labeled INFECTED has an empty mask");

    const int r_lo = std::max(0, rmin - (p - 1)), r_hi = std::min(h - p, rmax);
    const int c_lo = std::max(0, cmin - (p - 1)), c_hi = std::min(w - p, cmax);
    std::uniform_int_distribution<int> dr(r_lo, r_hi), dc(c_lo, c_hi);

    for (int i = 0; i < cfg.roi_boxes; ++i) {
      int row = 0, col = 0;
      bool ok = false;
      for (int tries = 0; tries < 10000; ++tries) {
        row = dr(rng);
        col = dc(rng);
        if (patch_hits_roi(mask_px, w, p, row, col)) {
          ok = true;
          break;
        }
      }
      if (!ok) {
        // Center a box on some ROI pixel; always valid.
        row = std::clamp(rmin - p / 2, 0, h - p);
        col = std::clamp(cmin - p / 2, 0, w - p);
      }
      out.push_back(cut_patch(slice_px, mask_px, w, p, row, col, patient, slice_idx));
    }

    // Perimeter cells of the non-overlapping grid (12 of 16 for 512/128).
    const int rows = h / p, cols = w / p;
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) {
        if (i == 0 || i == rows - 1 || j == 0 || j == cols - 1)
          out.push_back(cut_patch(slice_px, mask_px, w, p, i * p, j * p, patient, slice_idx));
      }
    }
  } else {
    std::uniform_int_distribution<int> dr(0, h - p), dc(0, w - p);
    for (int i = 0; i < cfg.negatives_per_slice; ++i) {
      const int row = dr(rng), col = dc(rng);
      out.push_back(cut_patch(slice_px, mask_px, w, p, row, col, patient, slice_idx));
    }
  }
  return out;
}

std::vector<PatchSample> extract_test_patches(const float* slice_px,
                                              const std::uint8_t* mask_px, int h, int w,
                                              int patch, const std::string& patient,
                                              int slice_idx) {
  if (h % patch != 0 || w % patch != 0)
    throw std::invalid_argument("extract_test_patches: slice " + std::to_string(h) + "x" +
                                std::to_string(w) + " is not a multiple of the patch size " +
                                std::to_string(patch));
  std::vector<PatchSample> out;
  const int rows = h / patch, cols = w / patch;
  out.reserve(static_cast<std::size_t>(rows) * cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      out.push_back(cut_patch(slice_px, mask_px, w, patch, i * patch, j * patch,
                              patient, slice_idx));
  return out;
}

void stitch_patch_grid(const std::vector<std::vector<float>>& patches, int h, int w,
                       int patch, float* out) {
  const int rows = h / patch, cols = w / patch;
  if (patches.size() != static_cast<std::size_t>(rows) * cols)
    throw std::invalid_argument("stitch_patch_grid: expected " +
                                std::to_string(rows * cols) + " patches, got " +
                                std::to_string(patches.size()));
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const auto& pv = patches[static_cast<std::size_t>(i) * cols + j];
      for (int y = 0; y < patch; ++y) {
        std::copy(pv.begin() + static_cast<std::size_t>(y) * patch,
                  pv.begin() + static_cast<std::size_t>(y + 1) * patch,
                  out + static_cast<std::size_t>(i * patch + y) * w + j * patch);
      }
    }
  }
}

std::vector<float> resample_slice(const float* src, int h, int w, int out_h, int out_w) {
  std::vector<float> out(static_cast<std::size_t>(out_h) * out_w);
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, h - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int x = 0; x < out_w; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, w - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = std::clamp(fx - x0, 0.0, 1.0);
      const double v = (1 - wy) * ((1 - wx) * src[static_cast<std::size_t>(y0) * w + x0] +
                                   wx * src[static_cast<std::size_t>(y0) * w + x1]) +
                       wy * ((1 - wx) * src[static_cast<std::size_t>(y1) * w + x0] +
                             wx * src[static_cast<std::size_t>(y1) * w + x1]);
      out[static_cast<std::size_t>(y) * out_w + x] = static_cast<float>(v);
    }
  }
  return out;
}

// ---- phantom -------------------------------------------------------------------

namespace {

struct Ellipse {
  double cy, cx, ry, rx, angle;

  // Normalized squared radius; <= 1 inside.
  double rho2(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (c * dy + s * dx) / ry;
    const double v = (-s * dy + c * dx) / rx;
    return u * u + v * v;
  }
  bool contains(double y, double x) const { return rho2(y, x) <= 1.0; }
};

}  // namespace

Phantom make_phantom(std::uint64_t seed, int n_slices, const LesionSpec& spec) {
  if (n_slices < 1) throw std::invalid_argument("make_phantom: n_slices must be >= 1");
  if (spec.area_fraction < 0.0 || spec.area_fraction > 0.5)
    throw std::invalid_argument("make_phantom: area_fraction must be in [0, 0.5]");
  const int H = 512, W = 512;

  Phantom ph;
  ph.hu.slices = ph.lesions.slices = ph.lungs.slices = n_slices;
  ph.hu.height = ph.lesions.height = ph.lungs.height = H;
  ph.hu.width = ph.lesions.width = ph.lungs.width = W;
  ph.hu.voxels.assign(static_cast<std::size_t>(n_slices) * H * W, 0.0f);
  ph.lesions.voxels.assign(ph.hu.voxels.size(), 0);
  ph.lungs.voxels.assign(ph.hu.voxels.size(), 0);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto jitter = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  const Ellipse body{256 + jitter(-8, 8), 256 + jitter(-8, 8), jitter(215, 235),
                     jitter(180, 200), jitter(-0.06, 0.06)};
  const Ellipse lungL{256 + jitter(-6, 6), 161 + jitter(-6, 6), jitter(130, 150),
                      jitter(74, 88), jitter(-0.12, 0.02)};
  const Ellipse lungR{256 + jitter(-6, 6), 351 + jitter(-6, 6), jitter(130, 150),
                      jitter(74, 88), jitter(-0.02, 0.12)};

  int infected = spec.infected_slices >= 0
                     ? std::min(spec.infected_slices, n_slices)
                     : (3 * n_slices + 3) / 4;
  if (spec.area_fraction <= 0.0) infected = 0;

  std::uniform_real_distribution<float> noise(-1.0f, 1.0f);

  for (int s = 0; s < n_slices; ++s) {
    float* hu = ph.hu.slice(s);
    std::uint8_t* lung_mask = ph.lungs.slice(s);
    std::size_t lung_px = 0;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * W + x;
        float v = -1000.0f + 15.0f * noise(rng);
        if (body.contains(y, x)) {
          v = 40.0f + 18.0f * noise(rng);
          if (lungL.contains(y, x) || lungR.contains(y, x)) {
            v = -820.0f + 30.0f * noise(rng);
            lung_mask[i] = 1;
            ++lung_px;
          }
        }
        hu[i] = v;
      }
    }

    if (s >= infected) continue;

    std::uint8_t* lesion = ph.lesions.slice(s);
    const double target = spec.area_fraction * static_cast<double>(lung_px);
    std::size_t lesion_px = 0;
    for (int blob = 0; blob < 80 && static_cast<double>(lesion_px) < target; ++blob) {
      const Ellipse& lung = (u01(rng) < 0.5) ? lungL : lungR;
      // Blob center inside the chosen lung, away from its rim.
      double by = 0, bx = 0;
      for (int tries = 0; tries < 200; ++tries) {
        by = lung.cy + (2.0 * u01(rng) - 1.0) * lung.ry * 0.8;
        bx = lung.cx + (2.0 * u01(rng) - 1.0) * lung.rx * 0.8;
        if (lung.rho2(by, bx) <= 0.7) break;
      }
      double r1 = jitter(9, 34), r2 = jitter(9, 34);
      const double remaining = target - static_cast<double>(lesion_px);
      const double blob_area = std::numbers::pi * r1 * r2;
      if (blob_area > 1.25 * remaining) {
        const double scale = std::sqrt(std::max(1.1 * remaining, 100.0) / blob_area);
        r1 = std::max(5.0, r1 * scale);
        r2 = std::max(5.0, r2 * scale);
      }
      const Ellipse e{by, bx, r1, r2, jitter(0, std::numbers::pi)};
      const float level = static_cast<float>(jitter(170, 320));

      const int y0 = std::max(0, static_cast<int>(by - std::max(r1, r2) * 1.3 - 1));
      const int y1 = std::min(H - 1, static_cast<int>(by + std::max(r1, r2) * 1.3 + 1));
      const int x0 = std::max(0, static_cast<int>(bx - std::max(r1, r2) * 1.3 - 1));
      const int x1 = std::min(W - 1, static_cast<int>(bx + std::max(r1, r2) * 1.3 + 1));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * W + x;
          if (!lung_mask[i]) continue;
          const double rho = std::sqrt(e.rho2(y, x));
          if (rho >= 1.25) continue;
          // Soft halo outside the mask support mimics a GGO margin.
          const double wgt = std::clamp((1.25 - rho) / 0.5, 0.0, 1.0);
          hu[i] = static_cast<float>(hu[i] + wgt * (level - hu[i]));
          if (rho <= 1.0 && !lesion[i]) {
            lesion[i] = 1;
            ++lesion_px;
          }
        }
      }
    }
  }
  return ph;
}

// ---- CTV1 / MSK1 ----------------------------------------------------------------

namespace {

void write_dims(std::ostream& os, int slices, int height, int width) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(slices));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(height));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(width));
}

std::array<int, 3> read_dims(std::istream& is, const std::string& path) {
  std::array<int, 3> d{};
  for (auto& v : d) {
    const auto raw = read_pod<std::uint32_t>(is, "dims");
    if (raw == 0 || raw > (1u << 24)) throw std::runtime_error(path + ": implausible extent");
    v = static_cast<int>(raw);
  }
  return d;
}

}  // namespace

void save_volume(const Volume& v, const std::string& path) {
  auto os = open_out(path);
  os.write("CTV1", 4);
  write_dims(os, v.slices, v.height, v.width);
  write_vec(os, v.voxels);
  if (!os) throw std::runtime_error("failed writing volume: " + path);
}

Volume load_volume(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "CTV1", path);
  Volume v;
  auto [s, h, w] = read_dims(is, path);
  v.slices = s;
  v.height = h;
  v.width = w;
  read_vec(is, v.voxels, static_cast<std::size_t>(s) * h * w, "voxels");
  return v;
}

void save_mask(const MaskVolume& m, const std::string& path) {
  auto os = open_out(path);
  os.write("MSK1", 4);
  write_dims(os, m.slices, m.height, m.width);
  write_vec(os, m.voxels);
  if (!os) throw std::runtime_error("failed writing mask: " + path);
}

MaskVolume load_mask(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "MSK1", path);
  MaskVolume m;
  auto [s, h, w] = read_dims(is, path);
  m.slices = s;
  m.height = h;
  m.width = w;
  read_vec(is, m.voxels, static_cast<std::size_t>(s) * h * w, "voxels");
  for (auto& v : m.voxels)
    if (v > 1) throw std::runtime_error(path + ": mask voxels must be 0 or 1");
  return m;
}

// ---- patch store -----------------------------------------------------------------

std::vector<std::string> PatchStore::patients() const {
  std::vector<std::string> out;
  for (const auto& s : samples)
    if (std::find(out.begin(), out.end(), s.patient) == out.end()) out.push_back(s.patient);
  return out;
}

void save_patch_store(const PatchStore& store, const std::string& path) {
  auto os = open_out(path);
  os.write("PST1", 4);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(store.patch));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(store.samples.size()));
  for (const auto& s : store.samples) {
    write_pod<std::uint16_t>(os, static_cast<std::uint16_t>(s.patient.size()));
    os.write(s.patient.data(), static_cast<std::streamsize>(s.patient.size()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.slice));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.row_off));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.col_off));
    write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(s.label));
    write_vec(os, s.image);
    write_vec(os, s.mask);
  }
  if (!os) throw std::runtime_error("failed writing patch store: " + path);
}

PatchStore load_patch_store(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "PST1", path);
  PatchStore store;
  store.patch = static_cast<int>(read_pod<std::uint32_t>(is, "patch size"));
  const auto count = read_pod<std::uint32_t>(is, "sample count");
  const std::size_t px = static_cast<std::size_t>(store.patch) * store.patch;
  store.samples.resize(count);
  for (auto& s : store.samples) {
    const auto len = read_pod<std::uint16_t>(is, "patient name");
    s.patient.resize(len);
    is.read(s.patient.data(), len);
    s.slice = static_cast<int>(read_pod<std::uint32_t>(is, "slice"));
    s.row_off = static_cast<int>(read_pod<std::uint32_t>(is, "row"));
    s.col_off = static_cast<int>(read_pod<std::uint32_t>(is, "col"));
    s.label = static_cast<SliceLabel>(read_pod<std::uint8_t>(is, "label"));
    read_vec(is, s.image, px, "patch image");
    read_vec(is, s.mask, px, "patch mask");
  }
  return store;
}

void write_patch_manifest(const PatchStore& store, const std::string& csv_path) {
  std::ofstream os(csv_path);
  if (!os) throw std::runtime_error("cannot open for writing: " + csv_path);
  os << "patient,slice,label,row_off,col_off\n";
  for (const auto& s : store.samples)
    os << s.patient << ',' << s.slice << ','
       << (s.label == SliceLabel::INFECTED ? "INFECTED" : "NON_INFECTED") << ','
       << s.row_off << ',' << s.col_off << '\n';
  if (!os) throw std::runtime_error("failed writing manifest: " + csv_path);
}

}  // namespace amcseg
