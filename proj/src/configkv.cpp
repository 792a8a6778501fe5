#include "persemon/configkv.hpp"

#include <fstream>
#include <sstream>

namespace persemon {

namespace {
std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}
}  // namespace

KvMap parse_kv_text(const std::string& text, const std::string& context) {
  KvMap out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(context + ":" + std::to_string(lineno) + ": expected `key = value`, got `" +
                        line + "`");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(context + ":" + std::to_string(lineno) + ": empty key");
    if (out.count(key))
      throw ConfigError(context + ":" + std::to_string(lineno) + ": duplicate key `" + key + "`");
    out[key] = val;
  }
  return out;
}

KvMap parse_kv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_kv_text(buf.str(), path);
}

const std::string* KvReader::lookup(const std::string& key) {
  used_.insert(key);
  auto it = map_.find(key);
  return it == map_.end() ? nullptr : &it->second;
}

std::string KvReader::get_string(const std::string& key, const std::string& fallback) {
  const std::string* v = lookup(key);
  return v ? *v : fallback;
}

double KvReader::get_double(const std::string& key, double fallback) {
  const std::string* v = lookup(key);
  if (!v) return fallback;
  try {
    size_t used = 0;
    double d = std::stod(*v, &used);
    if (used != v->size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(context_ + ": key `" + key + "` is not a number: `" + *v + "`");
  }
}

int KvReader::get_int(const std::string& key, int fallback) {
  const std::string* v = lookup(key);
  if (!v) return fallback;
  try {
    size_t used = 0;
    long val = std::stol(*v, &used);
    if (used != v->size()) throw std::invalid_argument("trailing");
    return static_cast<int>(val);
  } catch (const std::exception&) {
    throw ConfigError(context_ + ": key `" + key + "` is not an integer: `" + *v + "`");
  }
}

uint64_t KvReader::get_u64(const std::string& key, uint64_t fallback) {
  const std::string* v = lookup(key);
  if (!v) return fallback;
  try {
    size_t used = 0;
    unsigned long long val = std::stoull(*v, &used);
    if (used != v->size()) throw std::invalid_argument("trailing");
    return static_cast<uint64_t>(val);
  } catch (const std::exception&) {
    throw ConfigError(context_ + ": key `" + key + "` is not an unsigned integer: `" + *v + "`");
  }
}

bool KvReader::get_bool(const std::string& key, bool fallback) {
  const std::string* v = lookup(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigError(context_ + ": key `" + key + "` is not a boolean: `" + *v + "`");
}

namespace {
std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, ',')) out.push_back(trim(cur));
  return out;
}
}  // namespace

std::vector<int> KvReader::get_int_list(const std::string& key, std::vector<int> fallback) {
  const std::string* v = lookup(key);
  if (!v) return fallback;
  std::vector<int> out;
  for (const std::string& part : split_commas(*v)) {
    if (part.empty()) continue;
    try {
      out.push_back(std::stoi(part));
    } catch (const std::exception&) {
      throw ConfigError(context_ + ": key `" + key + "` has a non-integer entry: `" + part + "`");
    }
  }
  return out;
}

std::vector<double> KvReader::get_double_list(const std::string& key,
                                              std::vector<double> fallback) {
  const std::string* v = lookup(key);
  if (!v) return fallback;
  std::vector<double> out;
  for (const std::string& part : split_commas(*v)) {
    if (part.empty()) continue;
    try {
      out.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw ConfigError(context_ + ": key `" + key + "` has a non-numeric entry: `" + part + "`");
    }
  }
  return out;
}

void KvReader::finish() const {
  for (const auto& [key, value] : map_)
    if (!used_.count(key))
      throw ConfigError(context_ + ": unknown config key `" + key + "`");
}

}  // namespace persemon
