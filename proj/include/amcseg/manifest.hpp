#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace amcseg {

inline constexpr const char* kToolVersion = "0.1.0";

// One manifest is written beside the outputs of every CLI run; re-running the
// recorded argv (with a fresh out dir) reproduces the outputs bit-exactly.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_path;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;  // relative to the out dir
  std::string tool_version = kToolVersion;
  double duration_seconds = 0.0;

  void write(const std::string& path) const;
  static RunManifest read(const std::string& path);
};

}  // namespace amcseg
