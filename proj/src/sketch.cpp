#include "ccmst/sketch.hpp"

#include <algorithm>
#include <cstring>

namespace ccmst {

namespace {

std::uint64_t m61_reduce(unsigned __int128 x) {
  std::uint64_t lo = static_cast<std::uint64_t>(x) & kFingerprintPrime;
  std::uint64_t hi = static_cast<std::uint64_t>(x >> 61);
  std::uint64_t r = lo + hi;
  // Inputs are below 2^122, so after one fold r < 2^62.
  r = (r & kFingerprintPrime) + (r >> 61);
  return r >= kFingerprintPrime ? r - kFingerprintPrime : r;
}

std::uint64_t m61_mul(std::uint64_t a, std::uint64_t b) {
  return m61_reduce(static_cast<unsigned __int128>(a) * b);
}

std::uint64_t m61_add(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a + b;
  return s >= kFingerprintPrime ? s - kFingerprintPrime : s;
}

std::uint64_t m61_from_signed(std::int64_t v) {
  if (v >= 0) return static_cast<std::uint64_t>(v) % kFingerprintPrime;
  std::uint64_t m = static_cast<std::uint64_t>(-(v + 1)) % kFingerprintPrime;  // avoids INT64_MIN overflow
  return kFingerprintPrime - 1 - m;
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> b, std::size_t off, int width) {
  std::uint64_t x = 0;
  for (int i = 0; i < width; ++i) x |= std::uint64_t(b[off + i]) << (8 * i);
  return x;
}

}  // namespace

std::optional<std::pair<NodeId, NodeId>> EdgeIndexing::decode(std::uint64_t index) const {
  if (index >= domain()) return std::nullopt;
  NodeId u = static_cast<NodeId>(index / n_), v = static_cast<NodeId>(index % n_);
  if (u >= v) return std::nullopt;
  return std::make_pair(u, v);
}

SketchParams SketchParams::defaults(std::size_t n) {
  if (n < 2) throw ParameterError("sketch needs n >= 2");
  const unsigned L = ceil_log2(std::uint64_t(n) * n);
  const unsigned R = std::max(1u, 3 * ceil_log2(n));
  return custom(n, L, R, default_independence(n));
}

SketchParams SketchParams::custom(std::size_t n, unsigned L, unsigned R, unsigned k) {
  if (n < 2 || R == 0 || k == 0) throw ParameterError("invalid sketch parameters");
  SketchParams p;
  p.n = n;
  p.levels = L + 1;
  p.reps = R;
  p.k = k;
  p.q = prime_above(std::uint64_t(n) * n);
  return p;
}

std::size_t SketchParams::serialized_bits() const { return 128 + cells() * 192; }

std::size_t SketchParams::required_seed_bits() const { return ccmst::required_seed_bits(k, q); }

SketchFamilies::SketchFamilies(const SharedSeed& seed, const SketchParams& params, std::uint64_t tag)
    : params_(params), tag_(tag) {
  reps_.reserve(params.reps);
  for (unsigned r = 0; r < params.reps; ++r) reps_.push_back(derive_family(seed, params.k, params.q, hash_combine(tag, r)));
  z_ = fingerprint_base(seed, tag);
}

std::uint64_t fingerprint_base(const SharedSeed& seed, std::uint64_t tag) {
  std::uint64_t zseed = hash_combine(hash_combine(seed.digest(), tag), 0x7a7a7a7aULL);
  return 2 + zseed % (kFingerprintPrime - 3);
}

unsigned level_from_hash(std::uint64_t h, std::uint64_t q, unsigned top) {
  if (h == 0) return top;
  const std::uint64_t ratio = (q - 1) / h;
  const unsigned lvl = 63u - static_cast<unsigned>(__builtin_clzll(ratio));
  return lvl < top ? lvl : top;
}

std::uint64_t fingerprint_pow(std::uint64_t z, std::uint64_t index) {
  std::uint64_t r = 1, a = z;
  while (index) {
    if (index & 1) r = m61_mul(r, a);
    a = m61_mul(a, a);
    index >>= 1;
  }
  return r;
}

unsigned SketchFamilies::top_level(unsigned r, std::uint64_t index) const {
  return level_from_hash(reps_[r].eval_unchecked(index), params_.q, params_.levels - 1);
}

std::uint64_t SketchFamilies::zpow(std::uint64_t index) const { return fingerprint_pow(z_, index); }

void Sketch::add(const SketchFamilies& fam, std::uint64_t index, std::int64_t value) {
  if (fam.tag() != tag_ || fam.params().levels != levels_ || fam.params().reps != reps_)
    throw IncompatibleSketch("families do not match sketch");
  if (index >= fam.params().q) throw ParameterError("sketch index outside hash domain");
  if (value == 0) return;
  const std::uint64_t fp = m61_mul(m61_from_signed(value), fam.zpow(index));
  const std::int64_t isum = value * static_cast<std::int64_t>(index);
  for (unsigned r = 0; r < reps_; ++r) {
    const unsigned top = fam.top_level(r, index);
    for (unsigned l = 0; l <= top; ++l) {
      OneSparseCell& c = cells_[std::size_t(l) * reps_ + r];
      c.count += value;
      c.indexsum += isum;
      c.fingerprint = m61_add(c.fingerprint, fp);
    }
  }
}

void Sketch::merge_from(const Sketch& other) {
  if (other.tag_ != tag_ || other.levels_ != levels_ || other.reps_ != reps_)
    throw IncompatibleSketch("cannot merge sketches with different tags or shapes");
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    cells_[i].count += other.cells_[i].count;
    cells_[i].indexsum += other.cells_[i].indexsum;
    cells_[i].fingerprint = m61_add(cells_[i].fingerprint, other.cells_[i].fingerprint);
  }
}

bool Sketch::is_zero() const {
  for (const auto& c : cells_)
    if (c.count || c.indexsum || c.fingerprint) return false;
  return true;
}

std::vector<std::uint8_t> Sketch::serialize() const {
  std::vector<std::uint8_t> out;
  out.reserve(serialized_bits() / 8);
  put_u32(out, levels_);
  put_u32(out, reps_);
  put_u64(out, tag_);
  for (const auto& c : cells_) {
    put_u64(out, static_cast<std::uint64_t>(c.count));
    put_u64(out, static_cast<std::uint64_t>(c.indexsum));
    put_u64(out, c.fingerprint);
  }
  return out;
}

Sketch Sketch::deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw CorruptionError("sketch header truncated");
  Sketch s(static_cast<unsigned>(get_le(bytes, 0, 4)), static_cast<unsigned>(get_le(bytes, 4, 4)), get_le(bytes, 8, 8));
  if (bytes.size() != 16 + s.cells_.size() * 24) throw CorruptionError("sketch body has wrong length");
  std::size_t off = 16;
  for (auto& c : s.cells_) {
    c.count = static_cast<std::int64_t>(get_le(bytes, off, 8));
    c.indexsum = static_cast<std::int64_t>(get_le(bytes, off + 8, 8));
    c.fingerprint = get_le(bytes, off + 16, 8);
    off += 24;
  }
  return s;
}

Sketch build_sketch(const SketchFamilies& fam, std::span<const SparseEntry> vec) {
  Sketch s(fam.params().levels, fam.params().reps, fam.tag());
  for (const SparseEntry& e : vec) s.add(fam, e.index, e.value);
  return s;
}

void append_incidence(const EdgeIndexing& idx, NodeId node, std::span<const IncidentKey> incident,
                      const WeightKey& threshold, std::vector<SparseEntry>& out) {
  for (const IncidentKey& inc : incident) {
    if (threshold < inc.key) continue;
    out.push_back({idx.index(node, inc.nbr), node < inc.nbr ? 1 : -1});
  }
}

Sketch build_sketch(const SketchFamilies& fam, NodeId node, std::span<const IncidentKey> incident,
                    const WeightKey& threshold) {
  std::vector<SparseEntry> vec;
  append_incidence(EdgeIndexing(fam.params().n), node, incident, threshold, vec);
  return build_sketch(fam, vec);
}

Sketch merge(const Sketch& a, const Sketch& b) {
  Sketch out = a;
  out.merge_from(b);
  return out;
}

SampleResult sample(const Sketch& s, const SketchFamilies& fam) {
  if (fam.tag() != s.tag() || fam.params().levels != s.levels() || fam.params().reps != s.reps())
    throw IncompatibleSketch("families do not match sketch");
  if (s.is_zero()) return {};
  const EdgeIndexing idx(fam.params().n);
  for (unsigned r = 0; r < s.reps(); ++r) {
    for (unsigned l = 0; l < s.levels(); ++l) {
      const OneSparseCell& c = s.cell(l, r);
      if (c.count != 1 && c.count != -1) continue;
      const std::int64_t j = c.indexsum * c.count;
      if (j < 0 || static_cast<std::uint64_t>(j) >= fam.params().q) continue;
      std::uint64_t expect = fam.zpow(static_cast<std::uint64_t>(j));
      if (c.count < 0) expect = expect == 0 ? 0 : kFingerprintPrime - expect;
      if (expect != c.fingerprint) continue;
      auto uv = idx.decode(static_cast<std::uint64_t>(j));
      if (!uv) throw CorruptionError("verified cell decodes to an invalid edge index");
      return {SampleResult::Kind::Edge, uv->first, uv->second};
    }
  }
  return {SampleResult::Kind::Failure, 0, 0};
}

std::vector<SparseEntry> canonical_vector(std::span<const SparseEntry> vec) {
  std::vector<SparseEntry> v(vec.begin(), vec.end());
  std::sort(v.begin(), v.end(), [](const SparseEntry& a, const SparseEntry& b) { return a.index < b.index; });
  std::size_t out = 0;
  for (std::size_t i = 0; i < v.size();) {
    SparseEntry e{v[i].index, 0};
    for (; i < v.size() && v[i].index == e.index; ++i) e.value += v[i].value;
    if (e.value != 0) v[out++] = e;
  }
  v.resize(out);
  return v;
}

SampleResult sample_vector(const SharedSeed& seed, const SketchParams& params, std::uint64_t tag,
                           std::span<const SparseEntry> vec) {
  const std::vector<SparseEntry> v = canonical_vector(vec);
  return sample_canonical(seed, params, tag, v);
}

SampleResult sample_canonical(const SharedSeed& seed, const SketchParams& params, std::uint64_t tag,
                              std::span<const SparseEntry> v) {
  if (v.empty()) return {};
  if (v.back().index >= params.q) throw ParameterError("sketch index outside hash domain");

  const unsigned L = params.levels - 1;
  const std::uint64_t z = fingerprint_base(seed, tag);
  const EdgeIndexing idx(params.n);
  std::vector<unsigned> top(v.size());
  std::vector<std::int64_t> cnt(params.levels), isum(params.levels);
  for (unsigned r = 0; r < params.reps; ++r) {
    const HashFamily fam = derive_family(seed, params.k, params.q, hash_combine(tag, r));
    std::fill(cnt.begin(), cnt.end(), 0);
    std::fill(isum.begin(), isum.end(), 0);
    for (std::size_t e = 0; e < v.size(); ++e) {
      top[e] = level_from_hash(fam.eval_unchecked(v[e].index), params.q, L);
      cnt[top[e]] += v[e].value;
      isum[top[e]] += v[e].value * static_cast<std::int64_t>(v[e].index);
    }
    // Level l holds every entry whose top level is >= l.
    for (unsigned l = L; l-- > 0;) {
      cnt[l] += cnt[l + 1];
      isum[l] += isum[l + 1];
    }
    for (unsigned l = 0; l <= L; ++l) {
      if (cnt[l] != 1 && cnt[l] != -1) continue;
      const std::int64_t j = isum[l] * cnt[l];
      if (j < 0 || static_cast<std::uint64_t>(j) >= params.q) continue;
      std::uint64_t fp = 0;
      for (std::size_t e = 0; e < v.size(); ++e)
        if (top[e] >= l) fp = m61_add(fp, m61_mul(m61_from_signed(v[e].value), fingerprint_pow(z, v[e].index)));
      std::uint64_t expect = fingerprint_pow(z, static_cast<std::uint64_t>(j));
      if (cnt[l] < 0) expect = expect == 0 ? 0 : kFingerprintPrime - expect;
      if (expect != fp) continue;
      auto uv = idx.decode(static_cast<std::uint64_t>(j));
      if (!uv) throw CorruptionError("verified cell decodes to an invalid edge index");
      return {SampleResult::Kind::Edge, uv->first, uv->second};
    }
  }
  // No repetition verified. Fall back to the materialized sketch, which also
  // tells an all-zero sketch apart from a decoding failure.
  SketchFamilies fams(seed, params, tag);
  return sample(build_sketch(fams, v), fams);
}

}  // namespace ccmst
