#include "ccmst/sim.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <queue>

#include <json.hpp>

namespace ccmst {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size() || v.find('-') != std::string::npos) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ParameterError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ParameterError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_key_values(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ParameterError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParameterError("config line " + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

SimConfig parse_sim_config(std::istream& in) {
  SimConfig cfg;
  for (const auto& [k, v] : parse_key_values(in)) {
    if (k == "n") cfg.n = parse_u64(k, v);
    else if (k == "beta") cfg.beta = static_cast<unsigned>(parse_u64(k, v));
    else if (k == "seed") cfg.seed = parse_u64(k, v);
    else if (k == "max_rounds") cfg.max_rounds = parse_u64(k, v);
    else if (k == "record_links") cfg.record_links = parse_bool(k, v);
    else if (k == "scramble_order") cfg.scramble_order = parse_bool(k, v);
    else if (k == "wall_limit_ms") cfg.wall_limit_ms = std::stod(v);
    else throw ParameterError("unknown sim-config key '" + k + "'");
  }
  return cfg;
}

unsigned word_bits(std::size_t n) { return std::max(kMinWordBits, ceil_log2(n)); }

BitWriter& BitWriter::put(std::uint64_t value, unsigned width) {
  if (width == 0) return *this;
  if (width > 64) throw ParameterError("field wider than 64 bits");
  if (width < 64 && (value >> width) != 0) throw ParameterError("value does not fit its field width");
  const std::uint32_t pos = p_.bits_;
  const std::uint32_t word = pos / 64, off = pos % 64;
  if (p_.words_.size() < ceil_div(pos + width, 64)) p_.words_.resize(ceil_div(pos + width, 64), 0);
  p_.words_[word] |= value << off;
  if (off + width > 64) p_.words_[word + 1] |= value >> (64 - off);
  p_.bits_ += width;
  return *this;
}

std::uint64_t BitReader::get(unsigned width) {
  if (width == 0) return 0;
  if (pos_ + width > p_.bits()) throw CorruptionError("payload read past its end");
  const auto& w = p_.words();
  const std::uint32_t word = pos_ / 64, off = pos_ % 64;
  std::uint64_t v = w[word] >> off;
  if (off + width > 64) v |= w[word + 1] << (64 - off);
  if (width < 64) v &= (1ULL << width) - 1;
  pos_ += width;
  return v;
}

std::size_t RoundContext::n() const { return net_.n(); }
unsigned RoundContext::word() const { return net_.word_bits(); }
unsigned RoundContext::bandwidth() const { return net_.bandwidth_bits(); }
void RoundContext::send(Envelope e) { net_.submit(self_, std::move(e)); }
std::mt19937_64& RoundContext::rng() { return net_.node_rng(self_); }

Network::Network(SimConfig cfg) : cfg_(cfg), word_(ccmst::word_bits(cfg.n)) {
  if (cfg_.n < 2) throw ParameterError("network needs n >= 2");
  if (cfg_.beta < 4) throw ParameterError("beta must be at least 4 words");
  transcript_.sent.assign(cfg_.n, 0);
  transcript_.received.assign(cfg_.n, 0);
  busy_until_.assign(cfg_.n * cfg_.n, 0);
  rngs_.resize(cfg_.n);
  start_ = std::chrono::steady_clock::now();
}

LabelId Network::intern(const Label& label) {
  for (LabelId i = 0; i < labels_.size(); ++i)
    if (labels_[i].protocol == label.protocol && labels_[i].step == label.step && labels_[i].depth == label.depth)
      return i;
  labels_.push_back(label);
  step_depth_keys_.push_back(label.step + "@" + std::to_string(label.depth));
  label_msgs_.push_back(0);
  return static_cast<LabelId>(labels_.size() - 1);
}

std::mt19937_64& Network::node_rng(NodeId v) {
  if (!rngs_[v]) {
    std::seed_seq seq{splitmix64(cfg_.seed), splitmix64(stage_), splitmix64(v + 0x51ULL)};
    rngs_[v] = std::make_unique<std::mt19937_64>(seq);
  }
  return *rngs_[v];
}

void Network::submit(NodeId src, Envelope&& e) {
  if (e.dst >= cfg_.n) throw ModelViolation("send to a node outside the clique");
  if (e.dst == src) throw ModelViolation("node " + std::to_string(src) + " sent a message to itself");
  if (e.fragments == 0) throw ModelViolation("train with zero fragments");
  if (e.payload.bits() > bandwidth_bits())
    throw ModelViolation("payload of " + std::to_string(e.payload.bits()) + " bits exceeds B = " +
                         std::to_string(bandwidth_bits()) + " without fragmentation");
  const std::uint64_t now = base_ + round_;
  std::uint64_t& busy = busy_until_[std::size_t(src) * cfg_.n + e.dst];
  if (busy >= now)
    throw ModelViolation("link " + std::to_string(src) + "->" + std::to_string(e.dst) + " used twice in round " +
                         std::to_string(now));
  busy = now + e.fragments - 1;

  const LabelId lid = e.label == kStageLabel ? stage_label_ : e.label;
  if (lid >= labels_.size()) throw ParameterError("unknown label id");
  transcript_.messages_total += e.fragments;
  label_msgs_[lid] += e.fragments;
  transcript_.sent[src] += e.fragments;
  transcript_.received[e.dst] += e.fragments;
  if (cfg_.record_links) transcript_.link_log.push_back({now, e.fragments, src, e.dst});

  last_active_ = std::max(last_active_, round_ + e.fragments - 1);
  calendar_[round_ + e.fragments].push_back(
      Delivery{src, e.dst, e.fragments, std::move(e.payload), std::move(e.cargo)});
  ++sent_this_round_;
}

StageStats Network::run(std::span<NodeProgram* const> programs, const Label& stage_label, Schedule schedule) {
  if (programs.size() != cfg_.n) throw ParameterError("need exactly one program per node");
  stage_label_ = intern(stage_label);
  base_ = transcript_.rounds;
  round_ = 0;
  last_active_ = 0;
  calendar_.clear();
  for (auto& r : rngs_) r.reset();
  const std::uint64_t msgs_before = transcript_.messages_total;

  std::vector<std::vector<Delivery>> inbox(cfg_.n);
  std::vector<NodeId> order(cfg_.n);
  std::iota(order.begin(), order.end(), 0u);
  std::vector<char> woken(cfg_.n, 0);
  std::vector<NodeId> touched, wake;
  std::mt19937_64 scramble(splitmix64(cfg_.seed ^ (stage_ * 0x9e37ULL)));
  RoundContext ctx(*this);
  std::uint64_t polls = 0;

  while (true) {
    ++round_;
    if (round_ > cfg_.max_rounds) throw ModelViolation("stage exceeded max_rounds");
    if (cfg_.wall_limit_ms > 0 && (++polls & 1023) == 0 &&
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count() > cfg_.wall_limit_ms)
      throw Timeout("run exceeded its wall-clock limit");
    touched.clear();
    wake.clear();
    std::vector<Delivery> arriving;
    if (!calendar_.empty() && calendar_.begin()->first == round_) {
      arriving = std::move(calendar_.begin()->second);
      calendar_.erase(calendar_.begin());
    }
    for (Delivery& d : arriving) {
      const NodeId dst = d.dst;
      if (inbox[dst].empty()) touched.push_back(dst);
      for (NodeId v : {dst, d.src})
        if (!woken[v]) {
          woken[v] = 1;
          wake.push_back(v);
        }
      inbox[dst].push_back(std::move(d));
    }
    for (NodeId v : touched)
      std::sort(inbox[v].begin(), inbox[v].end(), [](const Delivery& a, const Delivery& b) { return a.src < b.src; });

    std::span<const NodeId> active = order;
    if (schedule == Schedule::EventDriven && round_ > 1) {
      std::sort(wake.begin(), wake.end());
      active = wake;
    }
    if (cfg_.scramble_order) {
      if (active.data() == order.data()) {
        std::shuffle(order.begin(), order.end(), scramble);
      } else {
        std::shuffle(wake.begin(), wake.end(), scramble);
      }
    }

    sent_this_round_ = 0;
    for (NodeId v : active) {
      ctx.self_ = v;
      ctx.round_ = round_;
      ctx.inbox_ = inbox[v];
      programs[v]->on_round(ctx);
    }
    for (NodeId v : touched) inbox[v].clear();
    for (NodeId v : wake) woken[v] = 0;

    if (calendar_.empty()) {
      bool all_done = true;
      for (NodeProgram* p : programs)
        if (!p->done()) {
          all_done = false;
          break;
        }
      if (all_done) break;
      if (schedule == Schedule::EventDriven) throw ModelViolation("stage stalled: programs waiting on an idle network");
    } else if (sent_this_round_ == 0 && schedule == Schedule::EventDriven) {
      // Nothing can happen before the next delivery; skip the idle rounds.
      round_ = calendar_.begin()->first - 1;
    }
  }

  // The final round only drains inboxes; a stage costs the rounds in which
  // links carried traffic (one round minimum).
  const std::uint64_t rounds = std::max<std::uint64_t>(1, last_active_);
  for (LabelId i = 0; i < labels_.size(); ++i) {
    if (!label_msgs_[i]) continue;
    transcript_.by_protocol[labels_[i].protocol] += label_msgs_[i];
    transcript_.by_step[labels_[i].step] += label_msgs_[i];
    transcript_.by_step_depth[step_depth_keys_[i]] += label_msgs_[i];
    label_msgs_[i] = 0;
  }
  transcript_.rounds += rounds;
  const Label& lab = labels_[stage_label_];
  transcript_.rounds_by_protocol[lab.protocol] += rounds;
  transcript_.rounds_by_step[lab.step] += rounds;
  ++stage_;
  return {rounds, transcript_.messages_total - msgs_before};
}

std::uint64_t fragment_count(std::uint64_t payload_bits, unsigned bandwidth_bits, unsigned header_bits) {
  if (bandwidth_bits <= header_bits) throw ParameterError("bandwidth leaves no room after the fragment header");
  if (payload_bits == 0) return 1;
  return ceil_div(payload_bits, bandwidth_bits - header_bits);
}

std::vector<Payload> fragment(std::span<const std::uint8_t> bytes, unsigned bandwidth_bits, unsigned header_bits) {
  const std::uint64_t total = std::uint64_t(bytes.size()) * 8;
  const std::uint64_t count = fragment_count(total, bandwidth_bits, header_bits);
  if (header_bits < 64 && count > (1ULL << header_bits)) throw ParameterError("too many fragments for the header width");
  const unsigned usable = bandwidth_bits - header_bits;
  auto bit_at = [&](std::uint64_t i) -> std::uint64_t { return (bytes[i / 8] >> (i % 8)) & 1u; };
  std::vector<Payload> out;
  out.reserve(count);
  std::uint64_t pos = 0;
  for (std::uint64_t f = 0; f < count; ++f) {
    BitWriter w;
    w.put(f, header_bits);
    std::uint64_t end = std::min(total, pos + usable);
    while (pos < end) {
      unsigned chunk = static_cast<unsigned>(std::min<std::uint64_t>(end - pos, 8 - pos % 8));
      std::uint64_t v = 0;
      for (unsigned b = 0; b < chunk; ++b) v |= bit_at(pos + b) << b;
      w.put(v, chunk);
      pos += chunk;
    }
    out.push_back(w.finish());
  }
  return out;
}

std::vector<std::uint8_t> reassemble(std::span<const Payload> fragments, unsigned header_bits) {
  std::vector<std::pair<std::uint64_t, const Payload*>> order;
  for (const Payload& p : fragments) {
    BitReader r(p);
    order.emplace_back(r.get(header_bits), &p);
  }
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 0; i < order.size(); ++i)
    if (order[i].first != i) throw CorruptionError("fragment sequence has a gap or duplicate");
  std::vector<std::uint8_t> out;
  std::uint64_t bitpos = 0;
  for (const auto& [seq, p] : order) {
    BitReader r(*p);
    r.get(header_bits);
    while (r.remaining() > 0) {
      unsigned chunk = std::min<unsigned>(r.remaining(), 8 - bitpos % 8);
      std::uint64_t v = r.get(chunk);
      if (bitpos % 8 == 0) out.push_back(0);
      out.back() |= static_cast<std::uint8_t>(v << (bitpos % 8));
      bitpos += chunk;
    }
  }
  if (bitpos % 8) throw CorruptionError("reassembled payload is not byte aligned");
  return out;
}

Counts metrics(const Transcript& t, std::string_view protocol) {
  if (protocol.empty()) return {t.rounds, t.messages_total};
  Counts c;
  if (auto it = t.by_protocol.find(std::string(protocol)); it != t.by_protocol.end()) c.messages = it->second;
  if (auto it = t.rounds_by_protocol.find(std::string(protocol)); it != t.rounds_by_protocol.end()) c.rounds = it->second;
  return c;
}

Counts step_metrics(const Transcript& t, std::string_view step) {
  auto matches = [&](const std::string& key) {
    return key == step || (key.size() > step.size() && key.compare(0, step.size(), step) == 0 && key[step.size()] == '.');
  };
  Counts c;
  for (const auto& [k, v] : t.by_step)
    if (matches(k)) c.messages += v;
  for (const auto& [k, v] : t.rounds_by_step)
    if (matches(k)) c.rounds += v;
  return c;
}

std::string transcript_json(const Transcript& t) {
  nlohmann::json j;
  j["rounds"] = t.rounds;
  j["messages_total"] = t.messages_total;
  j["by_protocol"] = t.by_protocol;
  j["by_step"] = t.by_step;
  j["by_step_depth"] = t.by_step_depth;
  j["rounds_by_step"] = t.rounds_by_step;
  return j.dump(2);
}

bool links_respect_capacity(const Transcript& t) {
  std::vector<LinkUse> log = t.link_log;
  std::sort(log.begin(), log.end(), [](const LinkUse& a, const LinkUse& b) {
    if (a.src != b.src) return a.src < b.src;
    if (a.dst != b.dst) return a.dst < b.dst;
    return a.first_round < b.first_round;
  });
  for (std::size_t i = 1; i < log.size(); ++i) {
    const LinkUse& a = log[i - 1];
    const LinkUse& b = log[i];
    if (a.src == b.src && a.dst == b.dst && a.first_round + a.rounds > b.first_round) return false;
  }
  return true;
}

}  // namespace ccmst
