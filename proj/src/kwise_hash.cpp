#include "ccmst/kwise_hash.hpp"

#include <cmath>
#include <limits>

namespace ccmst {

namespace {

std::uint64_t mulmod64(std::uint64_t a, std::uint64_t b, std::uint64_t m) {
  return static_cast<std::uint64_t>(static_cast<unsigned __int128>(a) * b % m);
}

std::uint64_t powmod64(std::uint64_t a, std::uint64_t e, std::uint64_t m) {
  std::uint64_t r = 1 % m;
  a %= m;
  while (e) {
    if (e & 1) r = mulmod64(r, a, m);
    a = mulmod64(a, a, m);
    e >>= 1;
  }
  return r;
}

}  // namespace

bool is_prime(std::uint64_t x) {
  if (x < 2) return false;
  for (std::uint64_t p : {2ULL, 3ULL, 5ULL, 7ULL, 11ULL, 13ULL, 17ULL, 19ULL, 23ULL, 29ULL, 31ULL, 37ULL}) {
    if (x % p == 0) return x == p;
  }
  std::uint64_t d = x - 1;
  unsigned s = 0;
  while ((d & 1) == 0) {
    d >>= 1;
    ++s;
  }
  // Deterministic Miller-Rabin bases for 64-bit inputs.
  for (std::uint64_t a : {2ULL, 3ULL, 5ULL, 7ULL, 11ULL, 13ULL, 17ULL, 19ULL, 23ULL, 29ULL, 31ULL, 37ULL}) {
    std::uint64_t y = powmod64(a, d, x);
    if (y == 1 || y == x - 1) continue;
    bool composite = true;
    for (unsigned r = 1; r < s; ++r) {
      y = mulmod64(y, y, x);
      if (y == x - 1) {
        composite = false;
        break;
      }
    }
    if (composite) return false;
  }
  return true;
}

std::uint64_t prime_above(std::uint64_t domain) {
  std::uint64_t x = domain + 1;
  while (!is_prime(x)) ++x;
  return x;
}

PrimeField::PrimeField(std::uint64_t q) : q_(q) {
  if (q < 2 || q >= (1ULL << 32)) throw ParameterError("field modulus must lie in [2, 2^32)");
  barrett_ = static_cast<std::uint64_t>((static_cast<unsigned __int128>(1) << 64) / q);
}

SharedSeed::SharedSeed(std::vector<std::uint64_t> words, std::size_t bits) : words_(std::move(words)), bits_(bits) {
  if (words_.size() != ceil_div(bits_, 64)) throw ParameterError("seed word count does not match bit length");
  if (bits_ % 64 && !words_.empty()) words_.back() &= (1ULL << (bits_ % 64)) - 1;
}

SharedSeed SharedSeed::random(std::size_t bits, std::mt19937_64& rng) {
  std::vector<std::uint64_t> w(ceil_div(bits, 64));
  for (auto& x : w) x = rng();
  return SharedSeed(std::move(w), bits);
}

std::vector<std::uint8_t> SharedSeed::to_bytes() const {
  std::vector<std::uint8_t> out(ceil_div(bits_, 8));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::uint8_t>(words_[i / 8] >> (8 * (i % 8)));
  return out;
}

SharedSeed SharedSeed::from_bytes(std::span<const std::uint8_t> bytes, std::size_t bits) {
  if (bytes.size() < ceil_div(bits, 8)) throw ParameterError("seed bytes too short");
  std::vector<std::uint64_t> w(ceil_div(bits, 64), 0);
  for (std::size_t i = 0; i < ceil_div(bits, 8); ++i) w[i / 8] |= std::uint64_t(bytes[i]) << (8 * (i % 8));
  return SharedSeed(std::move(w), bits);
}

std::uint64_t SharedSeed::digest() const {
  std::uint64_t h = splitmix64(bits_);
  for (std::uint64_t w : words_) h = hash_combine(h, w);
  return h;
}

HashFamily HashFamily::from_coefficients(std::vector<std::uint64_t> coeffs, std::uint64_t q, std::uint64_t tag) {
  if (coeffs.empty()) throw ParameterError("hash family needs k >= 1");
  HashFamily f;
  f.field_ = PrimeField(q);
  for (auto c : coeffs)
    if (c >= q) throw ParameterError("coefficient outside the field");
  f.coeffs_ = std::move(coeffs);
  f.tag_ = tag;
  return f;
}

std::uint64_t HashFamily::eval(std::uint64_t x) const {
  if (x >= q()) throw ParameterError("hash input must be < q");
  return eval_unchecked(x);
}

std::size_t required_seed_bits(unsigned k, std::uint64_t q) { return std::size_t(k) * ceil_log2(q); }

HashFamily derive_family(const SharedSeed& seed, unsigned k, std::uint64_t q, std::uint64_t tag) {
  if (k == 0) throw ParameterError("k must be positive");
  if (!is_prime(q)) throw ParameterError("q must be prime");
  if (seed.bits() < required_seed_bits(k, q)) throw ParameterError("shared seed too short for k coefficients");
  // Coefficient j comes from the stream keyed by (seed, tag, j).
  const std::uint64_t base = hash_combine(seed.digest(), tag);
  std::vector<std::uint64_t> coeffs(k);
  for (unsigned j = 0; j < k; ++j) coeffs[j] = hash_combine(base, j) % q;
  return HashFamily::from_coefficients(std::move(coeffs), q, tag);
}

std::uint64_t bernoulli_threshold(std::uint64_t q, double p) {
  if (!(p > 0.0)) return 0;
  if (p >= 1.0) return q;
  long double t = std::floor(static_cast<long double>(p) * static_cast<long double>(q));
  return static_cast<std::uint64_t>(t);
}

bool bernoulli_sample(const HashFamily& family, std::uint64_t item, double p) {
  return family.eval(item) < bernoulli_threshold(family.q(), p);
}

double schmidt_tail_bound(unsigned k, double C, double T) {
  if (k < 2 || k % 2) throw ParameterError("k must be even and >= 2");
  if (!(C > 0) || !(T > 0)) throw ParameterError("C and T must be positive");
  const double x = std::sqrt(double(k) * k * k / (36.0 * C));
  const double log_cosh = x + std::log1p(std::exp(-2.0 * x)) - std::log(2.0);
  const double log_val = 0.5 * std::log(2.0) + log_cosh + 0.5 * k * std::log(double(k) * C / (std::exp(1.0) * T * T));
  if (!std::isfinite(log_val) || log_val >= 0.0) return 1.0;
  return std::exp(log_val);
}

unsigned default_independence(std::size_t n) {
  unsigned k = 2 * ceil_log2(n);
  if (k < 2) k = 2;
  return k + (k & 1u);
}

std::uint64_t make_tag(TagPurpose purpose, std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
  std::uint64_t h = splitmix64(static_cast<std::uint64_t>(purpose));
  h = hash_combine(h, a);
  h = hash_combine(h, b);
  h = hash_combine(h, c);
  return hash_combine(h, d);
}

}  // namespace ccmst
