#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace ccmst {

using NodeId = std::uint32_t;

class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A program broke a rule of the clique model (link reuse, oversize payload).
class ModelViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IncompatibleSketch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when decoded data fails a soundness check. Never expected on honest runs.
class CorruptionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A deterministic protocol bound (DGS/DSG/RSG message or round formula) failed.
class BoundViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A run went past its wall-clock budget.
class Timeout : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline unsigned ceil_log2(std::uint64_t x) {
  if (x <= 1) return 0;
  return 64u - static_cast<unsigned>(__builtin_clzll(x - 1));
}

// Bits needed to write any value in [0, x].
inline unsigned bits_for(std::uint64_t x) {
  return x == 0 ? 1u : 64u - static_cast<unsigned>(__builtin_clzll(x));
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

}  // namespace ccmst
