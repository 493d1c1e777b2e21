#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "ccmst/graph.hpp"
#include "ccmst/kwise_hash.hpp"

namespace ccmst {

// Edge {u,v}, u < v, maps to u*n + v.
class EdgeIndexing {
 public:
  explicit EdgeIndexing(std::size_t n) : n_(n) {}
  std::size_t n() const { return n_; }
  std::uint64_t domain() const { return std::uint64_t(n_) * n_; }
  std::uint64_t index(NodeId u, NodeId v) const {
    if (u > v) std::swap(u, v);
    return std::uint64_t(u) * n_ + v;
  }
  std::optional<std::pair<NodeId, NodeId>> decode(std::uint64_t index) const;

 private:
  std::size_t n_;
};

struct SketchParams {
  std::size_t n = 0;
  unsigned levels = 0;  // L + 1
  unsigned reps = 0;    // R
  unsigned k = 0;       // independence of the level hashes
  std::uint64_t q = 0;  // hash field, smallest prime above n^2

  static SketchParams defaults(std::size_t n);
  static SketchParams custom(std::size_t n, unsigned L, unsigned R, unsigned k);
  std::size_t cells() const { return std::size_t(levels) * reps; }
  std::size_t serialized_bits() const;
  std::size_t required_seed_bits() const;
};

struct OneSparseCell {
  std::int64_t count = 0;
  std::int64_t indexsum = 0;
  std::uint64_t fingerprint = 0;  // mod 2^61 - 1

  friend bool operator==(const OneSparseCell&, const OneSparseCell&) = default;
};

inline constexpr std::uint64_t kFingerprintPrime = (1ULL << 61) - 1;

// Hash material for one sketch tag: a level hash per repetition and the
// fingerprint base z.
class SketchFamilies {
 public:
  SketchFamilies(const SharedSeed& seed, const SketchParams& params, std::uint64_t tag);

  const SketchParams& params() const { return params_; }
  std::uint64_t tag() const { return tag_; }
  std::uint64_t z() const { return z_; }
  const HashFamily& rep(unsigned r) const { return reps_[r]; }

  // Highest level containing index under repetition r.
  unsigned top_level(unsigned r, std::uint64_t index) const;
  std::uint64_t zpow(std::uint64_t index) const;

 private:
  SketchParams params_;
  std::uint64_t tag_;
  std::uint64_t z_;
  std::vector<HashFamily> reps_;
};

struct SparseEntry {
  std::uint64_t index;
  std::int64_t value;
};

class Sketch {
 public:
  Sketch() = default;
  Sketch(unsigned levels, unsigned reps, std::uint64_t tag)
      : levels_(levels), reps_(reps), tag_(tag), cells_(std::size_t(levels) * reps) {}

  unsigned levels() const { return levels_; }
  unsigned reps() const { return reps_; }
  std::uint64_t tag() const { return tag_; }
  const OneSparseCell& cell(unsigned level, unsigned rep) const { return cells_[std::size_t(level) * reps_ + rep]; }
  const std::vector<OneSparseCell>& cells() const { return cells_; }

  void add(const SketchFamilies& fam, std::uint64_t index, std::int64_t value);
  void merge_from(const Sketch& other);
  bool is_zero() const;

  std::vector<std::uint8_t> serialize() const;
  static Sketch deserialize(std::span<const std::uint8_t> bytes);
  std::size_t serialized_bits() const { return 128 + cells_.size() * 192; }

  friend bool operator==(const Sketch&, const Sketch&) = default;

 private:
  unsigned levels_ = 0;
  unsigned reps_ = 0;
  std::uint64_t tag_ = 0;
  std::vector<OneSparseCell> cells_;
};

struct IncidentKey {
  NodeId nbr;
  WeightKey key;
};

Sketch build_sketch(const SketchFamilies& fam, std::span<const SparseEntry> vec);
// Sketch of the incidence vector of node restricted to keys <= threshold.
Sketch build_sketch(const SketchFamilies& fam, NodeId node, std::span<const IncidentKey> incident,
                    const WeightKey& threshold);
// Appends the restricted incidence entries of node to out.
void append_incidence(const EdgeIndexing& idx, NodeId node, std::span<const IncidentKey> incident,
                      const WeightKey& threshold, std::vector<SparseEntry>& out);

Sketch merge(const Sketch& a, const Sketch& b);

struct SampleResult {
  enum class Kind { Edge, Empty, Failure } kind = Kind::Empty;
  NodeId u = 0;
  NodeId v = 0;

  bool is_edge() const { return kind == Kind::Edge; }
};

// Scans repetitions in order, and within each the levels bottom-up; returns the
// first cell that passes the one-sparse and fingerprint checks.
SampleResult sample(const Sketch& s, const SketchFamilies& fam);

// Same result as sample(build_sketch(SketchFamilies(seed, params, tag), vec)),
// computed one repetition at a time without materializing the sketch.
SampleResult sample_vector(const SharedSeed& seed, const SketchParams& params, std::uint64_t tag,
                           std::span<const SparseEntry> vec);
// Sorted by index, duplicates summed, zeros dropped.
std::vector<SparseEntry> canonical_vector(std::span<const SparseEntry> vec);
// sample_vector for a vector already in canonical form.
SampleResult sample_canonical(const SharedSeed& seed, const SketchParams& params, std::uint64_t tag,
                              std::span<const SparseEntry> v);

std::uint64_t fingerprint_base(const SharedSeed& seed, std::uint64_t tag);
std::uint64_t fingerprint_pow(std::uint64_t z, std::uint64_t index);
// Level of an index whose level hash is h: floor(log2((q-1)/h)), capped at top.
unsigned level_from_hash(std::uint64_t h, std::uint64_t q, unsigned top);

}  // namespace ccmst
