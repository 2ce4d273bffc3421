#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

namespace amcseg {

// Flat key = value config files. Blank lines and '#' comments are ignored.
// Readers collect every unknown key and every malformed value, then report
// them all in one error.
class Config {
 public:
  static Config parse_file(const std::string& path);
  static Config parse_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& def);
  int get_int(const std::string& key, int def);
  std::uint64_t get_u64(const std::string& key, std::uint64_t def);
  double get_double(const std::string& key, double def);
  bool get_bool(const std::string& key, bool def);
  std::vector<int> get_int_list(const std::string& key, std::vector<int> def);

  // Records a custom validation problem against a key.
  void fail(const std::string& key, const std::string& message);

  // Throws if any key was never consumed or any value failed to parse,
  // enumerating every offender.
  void finish() const;

  const std::string& origin() const { return origin_; }

 private:
  std::string origin_;
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
  std::vector<std::string> errors_;
};

}  // namespace amcseg
