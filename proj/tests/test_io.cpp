#include <cstring>
#include <filesystem>
#include <fstream>

#include "amcseg/config.hpp"
#include "amcseg/imageio.hpp"
#include "amcseg/manifest.hpp"
#include "doctest.h"

using namespace amcseg;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("png writer emits valid, deterministic files") {
  const auto dir = fs::temp_directory_path() / "amcseg_png_test";
  fs::create_directories(dir);

  std::vector<std::uint8_t> gray(32 * 16);
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = static_cast<std::uint8_t>(i * 7);
  write_png_gray8((dir / "g.png").string(), gray, 32, 16);
  write_png_gray8((dir / "g2.png").string(), gray, 32, 16);
  const std::string a = slurp(dir / "g.png");
  CHECK(a == slurp(dir / "g2.png"));  // bit-identical encodes

  static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  REQUIRE(a.size() > 8 + 25);
  CHECK(std::memcmp(a.data(), sig, 8) == 0);
  CHECK(a.substr(12, 4) == "IHDR");
  CHECK(a.find("IDAT") != std::string::npos);
  CHECK(a.rfind("IEND") == a.size() - 8);

  std::vector<std::uint8_t> rgb(8 * 8 * 3, 200);
  write_png_rgb8((dir / "c.png").string(), rgb, 8, 8);
  CHECK(slurp(dir / "c.png").size() > 0);

  CHECK_THROWS(write_png_gray8((dir / "bad.png").string(), gray, 31, 16));
  fs::remove_all(dir);
}

TEST_CASE("to_gray8 clamps and scales") {
  std::vector<float> v{-0.5f, 0.0f, 0.5f, 1.0f, 2.0f};
  auto g = to_gray8(v);
  CHECK(g == std::vector<std::uint8_t>{0, 0, 128, 255, 255});
}

TEST_CASE("config parsing: comments, trimming, typed getters") {
  auto cfg = Config::parse_string(
      "# a comment\n"
      "alpha = 0.8\n"
      "epochs=70   # trailing comment\n"
      "name = hello world\n"
      "flag = true\n"
      "rates = 1,2,3,5\n",
      "test.cfg");
  CHECK(cfg.get_double("alpha", 0.0) == doctest::Approx(0.8));
  CHECK(cfg.get_int("epochs", 0) == 70);
  CHECK(cfg.get_string("name", "") == "hello world");
  CHECK(cfg.get_bool("flag", false) == true);
  CHECK(cfg.get_int_list("rates", {}) == std::vector<int>{1, 2, 3, 5});
  CHECK(cfg.get_int("missing", 42) == 42);
  CHECK_NOTHROW(cfg.finish());
}

TEST_CASE("config errors are collected and reported together") {
  auto cfg = Config::parse_string(
      "epochs = seventy\n"
      "lr = fast\n"
      "mystery = 1\n",
      "bad.cfg");
  cfg.get_int("epochs", 1);
  cfg.get_double("lr", 0.1);
  try {
    cfg.finish();
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epochs") != std::string::npos);
    CHECK(msg.find("lr") != std::string::npos);
    CHECK(msg.find("mystery") != std::string::npos);  // unknown key listed too
  }
}

TEST_CASE("config rejects malformed lines and duplicates") {
  CHECK_THROWS(Config::parse_string("just some words\n"));
  CHECK_THROWS(Config::parse_string("a = 1\na = 2\n"));
  CHECK_THROWS(Config::parse_file("/nonexistent/amcseg.cfg"));
}

TEST_CASE("run manifests round-trip through json") {
  const auto dir = fs::temp_directory_path() / "amcseg_manifest_test";
  fs::create_directories(dir);
  RunManifest m;
  m.command = "phantom";
  m.argv = {"amcseg", "phantom", "--seed", "7"};
  m.seeds = {7};
  m.inputs = {};
  m.outputs = {"vol_P1.ctv", "mask_P1.msk"};
  m.duration_seconds = 1.5;
  m.write((dir / "manifest.json").string());

  auto back = RunManifest::read((dir / "manifest.json").string());
  CHECK(back.command == "phantom");
  CHECK(back.argv == m.argv);
  CHECK(back.seeds == m.seeds);
  CHECK(back.outputs == m.outputs);
  CHECK(back.tool_version == kToolVersion);
  fs::remove_all(dir);
}
