#pragma once

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ccmst/common.hpp"

namespace ccmst {

// Ordered `key = value` lines; '#' starts a comment.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::istream& in);

struct SimConfig {
  std::size_t n = 0;
  unsigned beta = 8;
  std::uint64_t seed = 1;
  std::uint64_t max_rounds = 100'000'000;
  bool record_links = false;
  bool scramble_order = false;
  double wall_limit_ms = 0;  // 0: unlimited; otherwise Network::run throws Timeout
};

SimConfig parse_sim_config(std::istream& in);

// Bits in one word: ceil(log2 n), floored at kMinWordBits so tiny networks can
// still carry a weight and two ids in one message.
inline constexpr unsigned kMinWordBits = 6;
unsigned word_bits(std::size_t n);

class Payload {
 public:
  Payload() = default;
  std::uint32_t bits() const { return bits_; }
  const std::vector<std::uint64_t>& words() const { return words_; }
  friend bool operator==(const Payload&, const Payload&) = default;

 private:
  friend class BitWriter;
  std::vector<std::uint64_t> words_;
  std::uint32_t bits_ = 0;
};

class BitWriter {
 public:
  BitWriter& put(std::uint64_t value, unsigned width);
  BitWriter& put_flag(bool b) { return put(b ? 1 : 0, 1); }
  Payload finish() { return std::move(p_); }

 private:
  Payload p_;
};

class BitReader {
 public:
  explicit BitReader(const Payload& p) : p_(p) {}
  std::uint64_t get(unsigned width);
  bool get_flag() { return get(1) != 0; }
  std::uint32_t remaining() const { return p_.bits() - pos_; }

 private:
  const Payload& p_;
  std::uint32_t pos_ = 0;
};

// Opaque content attached to a train (a payload pre-fragmented into several
// B-bit messages). The fragment count is what gets metered.
struct Cargo {
  virtual ~Cargo() = default;
};

struct Label {
  std::string protocol;
  std::string step;
  unsigned depth = 0;
};
using LabelId = std::uint32_t;
inline constexpr LabelId kStageLabel = 0xffffffffu;

struct Delivery {
  NodeId src = 0;
  NodeId dst = 0;
  std::uint64_t fragments = 1;
  Payload payload;
  std::shared_ptr<const Cargo> cargo;
};

struct Envelope {
  NodeId dst = 0;
  Payload payload;
  // 1 for a single message; F > 1 reserves the link for F consecutive rounds
  // and delivers the train at the end.
  std::uint64_t fragments = 1;
  std::shared_ptr<const Cargo> cargo;
  LabelId label = kStageLabel;
};

class Network;

class RoundContext {
 public:
  std::uint64_t round() const { return round_; }
  NodeId self() const { return self_; }
  std::size_t n() const;
  unsigned word() const;
  unsigned bandwidth() const;
  std::span<const Delivery> inbox() const { return inbox_; }
  void send(Envelope e);
  std::mt19937_64& rng();

 private:
  friend class Network;
  RoundContext(Network& net) : net_(net) {}
  Network& net_;
  NodeId self_ = 0;
  std::uint64_t round_ = 0;
  std::span<const Delivery> inbox_;
};

class NodeProgram {
 public:
  virtual ~NodeProgram() = default;
  // Called once per round with the messages delivered at the start of it.
  virtual void on_round(RoundContext& ctx) = 0;
  // True when the program has nothing left to send and awaits no reply.
  virtual bool done() const = 0;
};

struct LinkUse {
  std::uint64_t first_round;
  std::uint64_t rounds;
  NodeId src;
  NodeId dst;
};

struct Transcript {
  std::uint64_t rounds = 0;
  std::uint64_t messages_total = 0;
  std::map<std::string, std::uint64_t> by_protocol;
  std::map<std::string, std::uint64_t> by_step;
  std::map<std::string, std::uint64_t> by_step_depth;  // "step@depth"
  std::map<std::string, std::uint64_t> rounds_by_protocol;
  std::map<std::string, std::uint64_t> rounds_by_step;
  std::vector<std::uint64_t> sent;
  std::vector<std::uint64_t> received;
  std::vector<LinkUse> link_log;
};

struct StageStats {
  std::uint64_t rounds = 0;
  std::uint64_t messages = 0;
};

class Network {
 public:
  explicit Network(SimConfig cfg);

  const SimConfig& config() const { return cfg_; }
  std::size_t n() const { return cfg_.n; }
  unsigned word_bits() const { return word_; }
  unsigned bandwidth_bits() const { return cfg_.beta * word_; }
  // Reassembly header carried by every fragment: origin, stream, sequence.
  unsigned header_bits() const { return 3 * word_; }
  unsigned usable_bits() const { return bandwidth_bits() - header_bits(); }

  LabelId intern(const Label& label);
  const Label& label(LabelId id) const { return labels_[id]; }

  // Runs one protocol stage until every program is done and no message is in
  // flight. Stages are sequential; rounds accumulate in the transcript.
  // EveryRound calls every handler each round. EventDriven calls all handlers
  // in round 1 and afterwards only nodes that received a delivery or whose
  // outgoing train just finished.
  enum class Schedule { EveryRound, EventDriven };
  StageStats run(std::span<NodeProgram* const> programs, const Label& stage_label,
                 Schedule schedule = Schedule::EveryRound);

  const Transcript& transcript() const { return transcript_; }
  std::uint64_t stages_run() const { return stage_; }

 private:
  friend class RoundContext;
  void submit(NodeId src, Envelope&& e);
  std::mt19937_64& node_rng(NodeId v);

  SimConfig cfg_;
  unsigned word_;
  Transcript transcript_;
  std::vector<Label> labels_;
  std::vector<std::string> step_depth_keys_;
  std::vector<std::uint64_t> label_msgs_;  // flushed into the transcript maps per stage
  std::vector<std::uint64_t> busy_until_;  // per ordered link, global round
  std::vector<std::unique_ptr<std::mt19937_64>> rngs_;
  std::uint64_t stage_ = 0;
  std::chrono::steady_clock::time_point start_;

  // Per-stage state.
  LabelId stage_label_ = 0;
  std::uint64_t base_ = 0;
  std::uint64_t round_ = 0;
  std::uint64_t sent_this_round_ = 0;
  std::uint64_t last_active_ = 0;  // last stage round in which some link was busy
  // Deliveries keyed by stage round, in submission order within a round.
  std::map<std::uint64_t, std::vector<Delivery>> calendar_;
};

std::uint64_t fragment_count(std::uint64_t payload_bits, unsigned bandwidth_bits, unsigned header_bits);
// Splits bytes into payloads of at most bandwidth_bits, each led by a
// header_bits sequence number.
std::vector<Payload> fragment(std::span<const std::uint8_t> bytes, unsigned bandwidth_bits, unsigned header_bits);
// Fragments may arrive in any order.
std::vector<std::uint8_t> reassemble(std::span<const Payload> fragments, unsigned header_bits);

struct Counts {
  std::uint64_t rounds = 0;
  std::uint64_t messages = 0;
};

// Counts for one protocol label; an empty filter selects everything.
Counts metrics(const Transcript& t, std::string_view protocol = {});
// Counts for a step label, including dotted sub-steps ("flight" covers "flight.5").
Counts step_metrics(const Transcript& t, std::string_view step);

std::string transcript_json(const Transcript& t);
// Post-hoc check that no ordered link carried two messages in one round.
bool links_respect_capacity(const Transcript& t);

}  // namespace ccmst
