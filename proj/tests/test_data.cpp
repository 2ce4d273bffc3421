#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "amcseg/data.hpp"
#include "doctest.h"

using namespace amcseg;

TEST_CASE("normalize_hu maps the clamped range onto [0,1]") {
  CHECK(normalize_hu_value(-1024.0f) == doctest::Approx(0.0));
  CHECK(normalize_hu_value(3071.0f) == doctest::Approx(1.0));
  CHECK(normalize_hu_value(1023.5f) == doctest::Approx(0.5));
  CHECK(normalize_hu_value(-5000.0f) == doctest::Approx(0.0));  // clamped
  CHECK(normalize_hu_value(9000.0f) == doctest::Approx(1.0));

  // Monotone non-decreasing, and stable when re-expressed in HU.
  float prev = -1.0f;
  for (float hu = -1200.0f; hu <= 3200.0f; hu += 7.3f) {
    const float v = normalize_hu_value(hu);
    CHECK(v >= prev);
    prev = v;
    const float back = v * (kHuMax - kHuMin) + kHuMin;
    CHECK(normalize_hu_value(back) == doctest::Approx(v).epsilon(1e-6));
  }
}

TEST_CASE("label_slices flags any positive pixel") {
  Volume v;
  v.slices = 3;
  v.height = v.width = 4;
  v.voxels.assign(48, 0.0f);
  MaskVolume m;
  m.slices = 3;
  m.height = m.width = 4;
  m.voxels.assign(48, 0);
  m.voxels[16 + 5] = 1;  // one pixel in slice 1
  auto labels = label_slices(v, m);
  CHECK(labels[0] == SliceLabel::NON_INFECTED);
  CHECK(labels[1] == SliceLabel::INFECTED);
  CHECK(labels[2] == SliceLabel::NON_INFECTED);

  MaskVolume bad = m;
  bad.slices = 2;
  bad.voxels.resize(32);
  CHECK_THROWS_AS(label_slices(v, bad), std::invalid_argument);
}

namespace {

struct TestSlice {
  std::vector<float> img;
  std::vector<std::uint8_t> mask;
};

TestSlice lesion_slice(int h, int w, int r0, int c0, int r1, int c1) {
  TestSlice s;
  s.img.assign(static_cast<std::size_t>(h) * w, 0.1f);
  s.mask.assign(static_cast<std::size_t>(h) * w, 0);
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) {
      s.mask[static_cast<std::size_t>(r) * w + c] = 1;
      s.img[static_cast<std::size_t>(r) * w + c] = 0.8f;
    }
  return s;
}

}  // namespace

TEST_CASE("train extraction on an infected slice: 20 ROI boxes + 12 perimeter cells") {
  auto s = lesion_slice(512, 512, 200, 240, 260, 300);
  ExtractConfig cfg;
  std::mt19937_64 rng(5);
  auto patches = extract_train_patches(s.img.data(), s.mask.data(), 512, 512,
                                       SliceLabel::INFECTED, cfg, rng, "P1", 3);
  CHECK(patches.size() == 32);

  int infected = 0;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto& p = patches[i];
    CHECK(p.row_off >= 0);
    CHECK(p.col_off >= 0);
    CHECK(p.row_off <= 512 - 128);
    CHECK(p.col_off <= 512 - 128);
    CHECK(p.patient == "P1");
    CHECK(p.slice == 3);
    const bool any = std::any_of(p.mask.begin(), p.mask.end(), [](auto v) { return v != 0; });
    CHECK((p.label == SliceLabel::INFECTED) == any);
    if (p.label == SliceLabel::INFECTED) ++infected;
    if (i < 20) CHECK(any);  // the ROI boxes must contain ROI pixels
  }
  CHECK(infected >= 20);

  // The 12 perimeter cells of the 4x4 grid.
  std::set<std::pair<int, int>> perimeter;
  for (std::size_t i = 20; i < 32; ++i)
    perimeter.insert({patches[i].row_off, patches[i].col_off});
  CHECK(perimeter.size() == 12);
  for (auto [r, c] : perimeter) {
    CHECK(r % 128 == 0);
    CHECK(c % 128 == 0);
    const int gi = r / 128, gj = c / 128;
    CHECK((gi == 0 || gi == 3 || gj == 0 || gj == 3));
  }
}

TEST_CASE("train extraction on a non-infected slice yields all-zero masks") {
  TestSlice s;
  s.img.assign(512 * 512, 0.2f);
  s.mask.assign(512 * 512, 0);
  ExtractConfig cfg;
  std::mt19937_64 rng(6);
  auto patches = extract_train_patches(s.img.data(), s.mask.data(), 512, 512,
                                       SliceLabel::NON_INFECTED, cfg, rng, "P2", 0);
  CHECK(patches.size() == 12);
  for (const auto& p : patches) {
    CHECK(p.label == SliceLabel::NON_INFECTED);
    for (auto v : p.mask) CHECK(v == 0);
  }
}

TEST_CASE("train extraction is deterministic under a fixed seed") {
  auto s = lesion_slice(512, 512, 100, 100, 140, 150);
  ExtractConfig cfg;
  auto run = [&] {
    std::mt19937_64 rng(77);
    return extract_train_patches(s.img.data(), s.mask.data(), 512, 512,
                                 SliceLabel::INFECTED, cfg, rng, "P", 0);
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].row_off == b[i].row_off);
    CHECK(a[i].col_off == b[i].col_off);
    CHECK(a[i].image == b[i].image);
  }
}

TEST_CASE("tiny ROI: every ROI box still contains it") {
  auto s = lesion_slice(512, 512, 17, 443, 18, 444);  // single pixel
  ExtractConfig cfg;
  std::mt19937_64 rng(11);
  auto patches = extract_train_patches(s.img.data(), s.mask.data(), 512, 512,
                                       SliceLabel::INFECTED, cfg, rng, "P", 0);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& p = patches[i];
    CHECK(std::any_of(p.mask.begin(), p.mask.end(), [](auto v) { return v != 0; }));
  }
}

TEST_CASE("test extraction tiles 512x512 into 16 patches that reassemble exactly") {
  std::mt19937_64 rng(13);
  std::vector<float> img(512 * 512);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : img) v = u(rng);

  auto tiles = extract_test_patches(img.data(), nullptr, 512, 512, 128, "P", 0);
  REQUIRE(tiles.size() == 16);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      CHECK(tiles[static_cast<std::size_t>(i) * 4 + j].row_off == 128 * i);
      CHECK(tiles[static_cast<std::size_t>(i) * 4 + j].col_off == 128 * j);
    }

  std::vector<std::vector<float>> maps;
  for (auto& t : tiles) maps.push_back(t.image);
  std::vector<float> back(512 * 512);
  stitch_patch_grid(maps, 512, 512, 128, back.data());
  CHECK(back == img);

  CHECK_THROWS_AS(extract_test_patches(img.data(), nullptr, 500, 512, 128, "P", 0),
                  std::invalid_argument);
}

TEST_CASE("phantoms: fraction control, determinism and empty masks at zero") {
  LesionSpec ls;
  ls.area_fraction = 0.0;
  Phantom empty = make_phantom(3, 4, ls);
  for (auto v : empty.lesions.voxels) CHECK(v == 0);

  ls.area_fraction = 0.10;
  ls.infected_slices = 2;
  Phantom a = make_phantom(21, 3, ls);
  Phantom b = make_phantom(21, 3, ls);
  CHECK(a.hu.voxels == b.hu.voxels);
  CHECK(a.lesions.voxels == b.lesions.voxels);

  for (int s = 0; s < 2; ++s) {
    std::size_t lung = 0, lesion = 0;
    for (std::size_t i = 0; i < a.lungs.slice_stride(); ++i) {
      lung += a.lungs.slice(s)[i];
      lesion += a.lesions.slice(s)[i];
    }
    const double frac = static_cast<double>(lesion) / static_cast<double>(lung);
    CHECK(frac > 0.08);
    CHECK(frac < 0.12);
  }
  // Slice 2 is non-infected.
  for (std::size_t i = 0; i < a.lesions.slice_stride(); ++i)
    CHECK(a.lesions.slice(2)[i] == 0);

  // Lesions sit well above the lung HU band.
  double lung_mean = 0, lesion_mean = 0;
  std::size_t ln = 0, lm = 0;
  for (std::size_t i = 0; i < a.hu.slice_stride(); ++i) {
    if (a.lesions.slice(0)[i]) {
      lesion_mean += a.hu.slice(0)[i];
      ++lm;
    } else if (a.lungs.slice(0)[i]) {
      lung_mean += a.hu.slice(0)[i];
      ++ln;
    }
  }
  CHECK(lesion_mean / static_cast<double>(lm) >
        lung_mean / static_cast<double>(ln) + 500.0);
}

TEST_CASE("volume and mask files round-trip byte-exactly") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "amcseg_io_test";
  fs::create_directories(dir);

  LesionSpec ls;
  ls.area_fraction = 0.08;
  Phantom ph = make_phantom(9, 2, ls);
  const std::string vp = (dir / "v.ctv").string();
  const std::string mp = (dir / "m.msk").string();
  save_volume(ph.hu, vp);
  save_mask(ph.lesions, mp);

  Volume v = load_volume(vp);
  CHECK(v.slices == ph.hu.slices);
  CHECK(v.voxels == ph.hu.voxels);
  MaskVolume m = load_mask(mp);
  CHECK(m.voxels == ph.lesions.voxels);

  save_volume(v, (dir / "v2.ctv").string());
  std::ifstream f1(vp, std::ios::binary), f2(dir / "v2.ctv", std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  CHECK_THROWS(load_volume(mp));  // wrong magic
  CHECK_THROWS(load_volume((dir / "absent.ctv").string()));
  fs::remove_all(dir);
}

TEST_CASE("patch store round-trips and writes a manifest") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "amcseg_pst_test";
  fs::create_directories(dir);

  auto s = lesion_slice(512, 512, 50, 60, 90, 120);
  ExtractConfig cfg;
  std::mt19937_64 rng(4);
  PatchStore store;
  store.samples = extract_train_patches(s.img.data(), s.mask.data(), 512, 512,
                                        SliceLabel::INFECTED, cfg, rng, "P7", 2);
  const std::string path = (dir / "p.pst").string();
  save_patch_store(store, path);
  PatchStore back = load_patch_store(path);
  REQUIRE(back.samples.size() == store.samples.size());
  CHECK(back.patch == store.patch);
  for (std::size_t i = 0; i < store.samples.size(); ++i) {
    CHECK(back.samples[i].image == store.samples[i].image);
    CHECK(back.samples[i].mask == store.samples[i].mask);
    CHECK(back.samples[i].patient == store.samples[i].patient);
    CHECK(back.samples[i].label == store.samples[i].label);
  }
  CHECK(back.patients() == std::vector<std::string>{"P7"});

  write_patch_manifest(store, (dir / "p.csv").string());
  std::ifstream csv(dir / "p.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "patient,slice,label,row_off,col_off");
  fs::remove_all(dir);
}

TEST_CASE("resample_slice recovers constants and respects the identity size") {
  std::vector<float> src(64 * 64, 0.37f);
  auto out = resample_slice(src.data(), 64, 64, 512, 512);
  for (float v : out) CHECK(v == doctest::Approx(0.37f));
  auto same = resample_slice(src.data(), 64, 64, 64, 64);
  CHECK(same == src);
}
