#include "made/kv.hpp"

#include <cstdio>
#include <set>
#include <sstream>

#include "made/errors.hpp"

namespace made::kv {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& v, const char* what) {
  throw ConfigError("key '" + key + "': expected " + what + ", got '" + v + "'");
}

}  // namespace

std::vector<Entry> parse(const std::string& text, const std::string& origin) {
  std::vector<Entry> out;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(n) + ": expected 'key = value'");
    }
    Entry e{trim(t.substr(0, eq)), trim(t.substr(eq + 1)), n};
    if (e.key.empty()) throw ConfigError(origin + ":" + std::to_string(n) + ": empty key");
    if (!seen.insert(e.key).second) {
      throw ConfigError(origin + ":" + std::to_string(n) + ": duplicate key '" + e.key + "'");
    }
    out.push_back(std::move(e));
  }
  return out;
}

int to_int(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size() || x < INT32_MIN || x > INT32_MAX) bad(key, v, "an integer");
    return static_cast<int>(x);
  } catch (const std::logic_error&) {
    bad(key, v, "an integer");
  }
}

std::uint64_t to_u64(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v.front() == '-') bad(key, v, "a non-negative integer");
    const auto x = std::stoull(v, &used);
    if (used != v.size()) bad(key, v, "a non-negative integer");
    return x;
  } catch (const std::logic_error&) {
    bad(key, v, "a non-negative integer");
  }
}

double to_double(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) bad(key, v, "a number");
    return x;
  } catch (const std::logic_error&) {
    bad(key, v, "a number");
  }
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad(key, v, "a boolean");
}

std::vector<int> to_int_list(const std::string& v, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) bad(key, v, "a comma-separated integer list");
    out.push_back(to_int(item, key));
  }
  return out;
}

std::string from_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Prefer the shortest representation that round-trips.
  for (int prec = 1; prec <= 17; ++prec) {
    char shorter[64];
    std::snprintf(shorter, sizeof shorter, "%.*g", prec, v);
    if (std::stod(shorter) == v) return shorter;
  }
  return buf;
}

std::string from_int_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace made::kv
