#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace amcseg {

inline constexpr float kHuMin = -1024.0f;
inline constexpr float kHuMax = 3071.0f;
inline constexpr int kPatchSize = 128;

// 3-d CT volume, slice-major row-major voxels. Files store raw Hounsfield
// units; the pipeline normalizes on entry.
struct Volume {
  int slices = 0;
  int height = 0;
  int width = 0;
  std::optional<std::array<double, 3>> spacing_mm;
  std::vector<float> voxels;

  std::size_t slice_stride() const {
    return static_cast<std::size_t>(height) * width;
  }
  const float* slice(int s) const { return voxels.data() + slice_stride() * s; }
  float* slice(int s) { return voxels.data() + slice_stride() * s; }
};

struct MaskVolume {
  int slices = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> voxels;  // 0 or 1

  std::size_t slice_stride() const {
    return static_cast<std::size_t>(height) * width;
  }
  const std::uint8_t* slice(int s) const { return voxels.data() + slice_stride() * s; }
  std::uint8_t* slice(int s) { return voxels.data() + slice_stride() * s; }
};

// Clamps to [-1024, 3071] and maps linearly to [0,1].
Volume normalize_hu(const Volume& raw);
float normalize_hu_value(float hu);

enum class SliceLabel : std::uint8_t { NON_INFECTED = 0, INFECTED = 1 };

std::vector<SliceLabel> label_slices(const Volume& volume, const MaskVolume& mask);

struct PatchSample {
  std::vector<float> image;        // patch^2 values in [0,1]
  std::vector<std::uint8_t> mask;  // aligned binary mask
  SliceLabel label = SliceLabel::NON_INFECTED;
  std::string patient;
  int slice = 0;
  int row_off = 0;
  int col_off = 0;
};

struct ExtractConfig {
  int patch = kPatchSize;
  int roi_boxes = 20;           // random ROI-covering boxes per infected slice
  int negatives_per_slice = 12; // random patches per non-infected slice
};

// Training extraction. Infected slices emit `roi_boxes` random boxes that each
// contain at least one ROI pixel, plus every perimeter cell of the
// non-overlapping patch grid; non-infected slices emit random patches. Patch
// labels follow the patch's own mask content.
std::vector<PatchSample> extract_train_patches(const float* slice_px,
                                               const std::uint8_t* mask_px, int h, int w,
                                               SliceLabel slice_label,
                                               const ExtractConfig& cfg,
                                               std::mt19937_64& rng,
                                               const std::string& patient, int slice_idx);

// Testing extraction: the full non-overlapping patch grid, row-major. Patch
// (i,j) has origin (patch*i, patch*j).
std::vector<PatchSample> extract_test_patches(const float* slice_px,
                                              const std::uint8_t* mask_px, int h, int w,
                                              int patch, const std::string& patient,
                                              int slice_idx);

// Reassembles a grid of per-patch maps into one h x w slice (exact inverse of
// extract_test_patches ordering).
void stitch_patch_grid(const std::vector<std::vector<float>>& patches, int h, int w,
                       int patch, float* out);

// Bilinear resample of one slice to a new size (used when inputs are not
// grid-aligned and the caller opted in).
std::vector<float> resample_slice(const float* src, int h, int w, int out_h, int out_w);

// ---- synthetic phantoms ------------------------------------------------------

struct LesionSpec {
  double area_fraction = 0.10;  // lesion pixels / lung pixels per infected slice
  int infected_slices = -1;     // -1: about three quarters of the slices
};

struct Phantom {
  Volume hu;           // raw Hounsfield units
  MaskVolume lesions;  // ROI ground truth
  MaskVolume lungs;    // lung fields (reference region for severity)
};

Phantom make_phantom(std::uint64_t seed, int n_slices, const LesionSpec& spec);

// ---- file formats --------------------------------------------------------------

// CTV1: magic, three little-endian u32 dims (slices, height, width), then
// float32 voxels. MSK1 is identical with u8 voxels.
void save_volume(const Volume& v, const std::string& path);
Volume load_volume(const std::string& path);
void save_mask(const MaskVolume& m, const std::string& path);
MaskVolume load_mask(const std::string& path);

// ---- patch store ---------------------------------------------------------------

struct PatchStore {
  int patch = kPatchSize;
  std::vector<PatchSample> samples;

  std::vector<std::string> patients() const;  // distinct, in first-seen order
};

// PST1 container next to a CSV manifest (patient, slice, label, offsets).
void save_patch_store(const PatchStore& store, const std::string& path);
PatchStore load_patch_store(const std::string& path);
void write_patch_manifest(const PatchStore& store, const std::string& csv_path);

}  // namespace amcseg
