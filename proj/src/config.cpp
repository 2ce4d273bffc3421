#include "amcseg/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace amcseg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_string(buf.str(), path);
}

Config Config::parse_string(const std::string& text, const std::string& origin) {
  Config cfg;
  cfg.origin_ = origin;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                               ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": empty key");
    if (cfg.values_.count(key))
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": duplicate key '" +
                               key + "'");
    cfg.values_[key] = value;
  }
  return cfg;
}

std::string Config::get_string(const std::string& key, const std::string& def) {
  consumed_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? def : it->second;
}

int Config::get_int(const std::string& key, int def) {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return def;
  try {
    std::size_t pos = 0;
    const int v = std::stoi(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    errors_.push_back(key + ": not an integer ('" + it->second + "')");
    return def;
  }
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t def) {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return def;
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
    return static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
    errors_.push_back(key + ": not an unsigned integer ('" + it->second + "')");
    return def;
  }
}

double Config::get_double(const std::string& key, double def) {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return def;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    errors_.push_back(key + ": not a number ('" + it->second + "')");
    return def;
  }
}

bool Config::get_bool(const std::string& key, bool def) {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return def;
  const std::string& v = it->second;
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  errors_.push_back(key + ": not a boolean ('" + v + "')");
  return def;
}

std::vector<int> Config::get_int_list(const std::string& key, std::vector<int> def) {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return def;
  std::vector<int> out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(trim(item)));
    } catch (const std::exception&) {
      errors_.push_back(key + ": not a comma-separated integer list ('" + it->second + "')");
      return def;
    }
  }
  if (out.empty()) {
    errors_.push_back(key + ": empty list");
    return def;
  }
  return out;
}

void Config::fail(const std::string& key, const std::string& message) {
  errors_.push_back(key + ": " + message);
}

void Config::finish() const {
  std::vector<std::string> problems = errors_;
  for (const auto& [key, value] : values_)
    if (!consumed_.count(key)) problems.push_back(key + ": unknown key");
  if (problems.empty()) return;
  std::string msg = origin_ + ": invalid configuration:";
  for (const auto& p : problems) msg += "\n  " + p;
  throw std::runtime_error(msg);
}

}  // namespace amcseg
