#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gencrs {

enum class ErrorCode {
  kInvalidArgument,
  kParse,
  kMissingField,
  kDuplicate,
  kNotFound,
  kMismatch,
  kNonFinite,
  kCapacityExceeded,
  kUnavailable,
  kIo,
};

// Every failure in the library surfaces as an Error carrying a code, so the CLI
// and the HTTP layer can map it without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

const char* error_code_name(ErrorCode code);

// A semantic ID: one code index per quantization level.
using Codes = std::vector<int>;

using Rng = std::mt19937_64;

// Portable uniform draw in [0, 1); std distributions are implementation-defined.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Unbiased integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

// Fisher-Yates with uniform_index, so shuffles match across standard libraries.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[uniform_index(rng, i)]);
  }
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

std::string hex64(std::uint64_t v);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

// Non-empty lines of a text file, with their 1-based line numbers.
struct NumberedLine {
  std::size_t line_no;
  std::string text;
};
std::vector<NumberedLine> read_lines(const std::string& path);

}  // namespace gencrs
