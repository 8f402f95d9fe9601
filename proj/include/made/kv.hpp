#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace made::kv {

struct Entry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// Flat `key = value` text; `#` starts a comment line. Duplicate keys and
/// malformed lines raise ConfigError.
std::vector<Entry> parse(const std::string& text, const std::string& origin);

int to_int(const std::string& v, const std::string& key);
std::uint64_t to_u64(const std::string& v, const std::string& key);
double to_double(const std::string& v, const std::string& key);
bool to_bool(const std::string& v, const std::string& key);
std::vector<int> to_int_list(const std::string& v, const std::string& key);

std::string from_double(double v);
std::string from_int_list(const std::vector<int>& v);

}  // namespace made::kv
