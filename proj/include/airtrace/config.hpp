#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace airtrace {

// Plain "key = value" text, one pair per line. Blank lines and lines whose
// first non-space character is '#' are skipped. Keys are limited to
// [A-Za-z0-9_.]; values run to the end of the line and are whitespace
// trimmed, so lists stay on one line, comma-separated. A repeated key
// overrides the earlier value.
class Config {
 public:
  [[nodiscard]] static Config parse(const std::string& text);
  [[nodiscard]] static Config parse_file(const std::string& path);

  bool has(const std::string& key) const;
  void set(const std::string& key, const std::string& value);

  std::string get_str(const std::string& key, const std::string& def) const;
  double get_double(const std::string& key, double def) const;
  int64_t get_int(const std::string& key, int64_t def) const;
  bool get_bool(const std::string& key, bool def) const;
  std::vector<double> get_doubles(const std::string& key,
                                  const std::vector<double>& def) const;
  std::vector<std::string> get_strs(const std::string& key,
                                    const std::vector<std::string>& def) const;

  std::vector<std::string> keys() const;  // sorted
  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace airtrace
