#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ccmst/common.hpp"

namespace ccmst {

bool is_prime(std::uint64_t x);
// Smallest prime strictly greater than domain.
std::uint64_t prime_above(std::uint64_t domain);

// Arithmetic mod a prime below 2^32 with Barrett reduction.
class PrimeField {
 public:
  PrimeField() = default;
  explicit PrimeField(std::uint64_t q);
  std::uint64_t q() const { return q_; }
  std::uint64_t reduce(std::uint64_t x) const {
    std::uint64_t t = static_cast<std::uint64_t>((static_cast<unsigned __int128>(x) * barrett_) >> 64);
    std::uint64_t r = x - t * q_;
    return r >= q_ ? r - q_ : r;
  }
  std::uint64_t mul(std::uint64_t a, std::uint64_t b) const { return reduce(a * b); }
  std::uint64_t add(std::uint64_t a, std::uint64_t b) const {
    std::uint64_t s = a + b;
    return s >= q_ ? s - q_ : s;
  }

 private:
  std::uint64_t q_ = 2;
  std::uint64_t barrett_ = 0;
};

class SharedSeed {
 public:
  SharedSeed() = default;
  SharedSeed(std::vector<std::uint64_t> words, std::size_t bits);
  static SharedSeed random(std::size_t bits, std::mt19937_64& rng);

  std::size_t bits() const { return bits_; }
  const std::vector<std::uint64_t>& words() const { return words_; }
  std::vector<std::uint8_t> to_bytes() const;
  static SharedSeed from_bytes(std::span<const std::uint8_t> bytes, std::size_t bits);
  // Digest of the seed bits, used to key derivations.
  std::uint64_t digest() const;

  friend bool operator==(const SharedSeed& a, const SharedSeed& b) {
    return a.bits_ == b.bits_ && a.words_ == b.words_;
  }

 private:
  std::vector<std::uint64_t> words_;
  std::size_t bits_ = 0;
};

// Degree-(k-1) polynomial over GF(q). coeffs[j] multiplies x^j.
class HashFamily {
 public:
  HashFamily() = default;
  static HashFamily from_coefficients(std::vector<std::uint64_t> coeffs, std::uint64_t q, std::uint64_t tag = 0);

  unsigned k() const { return static_cast<unsigned>(coeffs_.size()); }
  std::uint64_t q() const { return field_.q(); }
  std::uint64_t tag() const { return tag_; }
  const std::vector<std::uint64_t>& coeffs() const { return coeffs_; }

  std::uint64_t eval(std::uint64_t x) const;
  // No range check; x must be < q.
  std::uint64_t eval_unchecked(std::uint64_t x) const {
    const std::uint64_t* c = coeffs_.data();
    std::size_t j = coeffs_.size();
    std::uint64_t acc = c[--j];
    while (j > 0) acc = field_.add(field_.mul(acc, x), c[--j]);
    return acc;
  }

 private:
  std::vector<std::uint64_t> coeffs_;
  PrimeField field_;
  std::uint64_t tag_ = 0;
};

HashFamily derive_family(const SharedSeed& seed, unsigned k, std::uint64_t q, std::uint64_t tag);

std::uint64_t bernoulli_threshold(std::uint64_t q, double p);
bool bernoulli_sample(const HashFamily& family, std::uint64_t item, double p);

double schmidt_tail_bound(unsigned k, double C, double T);

// 2 * ceil(log2 n), rounded up to even, at least 2.
unsigned default_independence(std::size_t n);
// Seed length needed for one family of independence k over GF(q).
std::size_t required_seed_bits(unsigned k, std::uint64_t q);

enum class TagPurpose : std::uint64_t { EdgeSample = 1, Sketch = 2, Test = 3 };

std::uint64_t make_tag(TagPurpose purpose, std::uint64_t a = 0, std::uint64_t b = 0, std::uint64_t c = 0,
                       std::uint64_t d = 0);

}  // namespace ccmst
