// Deterministic text output helpers: fixed-format numbers, CSV layout and
// config hashing so every exported row can be traced to its inputs.
#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "maser/params.hpp"

namespace maser {

// 64-bit FNV-1a; stable across platforms, good enough for provenance tags
std::uint64_t fnv1a64(std::string_view s);
std::string to_hex(std::uint64_t v);

// shortest round-trip-safe decimal form
std::string format_g17(double v);

std::string config_hash_hex(const SystemParams& p);

class CsvWriter {
 public:
  CsvWriter(std::ostream& out, std::vector<std::string> columns);
  void row(const std::vector<std::string>& cells);

 private:
  std::ostream& out_;
  std::size_t n_columns_;
};

std::string join(const std::vector<std::string>& parts, const std::string& sep);

}  // namespace maser
