#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "persemon/common.hpp"

namespace persemon {

// Run configs are flat `key = value` files: one pair per line, `#` comments,
// blank lines ignored. Values never span lines. The full schema lives in the
// README; unknown keys are rejected by name.
using KvMap = std::map<std::string, std::string>;

KvMap parse_kv_text(const std::string& text, const std::string& context);
KvMap parse_kv_file(const std::string& path);

// Typed accessor that tracks consumed keys so finish() can flag typos.
class KvReader {
 public:
  KvReader(KvMap map, std::string context) : map_(std::move(map)), context_(std::move(context)) {}

  bool has(const std::string& key) const { return map_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback);
  double get_double(const std::string& key, double fallback);
  int get_int(const std::string& key, int fallback);
  uint64_t get_u64(const std::string& key, uint64_t fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback);
  std::vector<double> get_double_list(const std::string& key, std::vector<double> fallback);

  // Throws ConfigError naming the first unconsumed key.
  void finish() const;

  const KvMap& raw() const { return map_; }

 private:
  const std::string* lookup(const std::string& key);
  KvMap map_;
  std::string context_;
  std::set<std::string> used_;
};

}  // namespace persemon
