#include "amcseg/manifest.hpp"

#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace amcseg {

void RunManifest::write(const std::string& path) const {
  nlohmann::json j;
  j["command"] = command;
  j["argv"] = argv;
  j["config"] = config_path;
  j["seeds"] = seeds;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["tool_version"] = tool_version;
  j["duration_seconds"] = duration_seconds;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("failed writing manifest: " + path);
}

RunManifest RunManifest::read(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest: " + path);
  nlohmann::json j;
  is >> j;
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.argv = j.at("argv").get<std::vector<std::string>>();
  m.config_path = j.value("config", "");
  m.seeds = j.value("seeds", std::vector<std::uint64_t>{});
  m.inputs = j.value("inputs", std::vector<std::string>{});
  m.outputs = j.value("outputs", std::vector<std::string>{});
  m.tool_version = j.value("tool_version", "");
  m.duration_seconds = j.value("duration_seconds", 0.0);
  return m;
}

}  // namespace amcseg
