#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace difflight {

// Violated precondition / shape contract. Carries the offending shapes in the message.
struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

// Non-finite value produced where the contract promises finite output.
struct NumericFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename S>
using Vec = Eigen::Array<S, Eigen::Dynamic, 1>;

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ContractViolation(msg);
}

// FNV-1a over bytes; used for artifact/manifest hashes (integrity, not crypto).
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace difflight
