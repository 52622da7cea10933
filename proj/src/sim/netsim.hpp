#pragma once

#include "consensus/messages.hpp"
#include "core/types.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace flextender::sim {

using Tick = int64_t;
using Mid = uint64_t;

enum class Fanout : uint8_t { All, Log2N };

std::string fanout_name(Fanout f);
Fanout fanout_from_name(const std::string& s);

/// Link outage around one node: hops sent to or from `node` while the window
/// is open are held back and arrive only after `until`.
struct PartitionWindow {
  NodeId node;
  Tick from = 0;
  Tick until = 0;
};

struct SimConfig {
  uint64_t seed = 1;
  Tick delta = 100;      // post-gst per-hop delay bound
  Tick gst = 0;          // global stabilization time
  Tick pre_gst_min = 1;  // pre-gst latency bounds; may exceed delta
  Tick pre_gst_max = 100;
  Fanout fanout = Fanout::All;
  bool duplicate_suppression = true;
  Tick max_sim_time = 1'000'000;
  std::vector<PartitionWindow> partitions;

  void validate() const;
};

/// A message arriving at one node. `msg` points into scheduler-owned storage
/// and stays valid for the whole run.
struct Delivery {
  Mid mid = 0;
  const consensus::Message* msg = nullptr;
  NodeId origin;       // author of the message
  NodeId relayer;      // sender of this hop (== origin on direct sends)
  NodeId to;
  Tick created_at = 0; // when the origin handed the message to the network
  Tick sent_at = 0;    // when this hop was sent
  Tick at = 0;         // arrival time
};

struct TimerFire {
  NodeId node;
  consensus::TimerKind kind = consensus::TimerKind::Propose;
  int64_t height = 0;
  int64_t round = 0;
  Tick at = 0;
};

struct TimerArmed {
  NodeId node;
  consensus::TimerKind kind = consensus::TimerKind::Propose;
  int64_t height = 0;
  int64_t round = 0;
  Tick armed_at = 0;
  Tick fire_at = 0;
};

/// Deterministic discrete-event network. Gossip broadcast with relay on first
/// receipt; latency is arbitrary within [pre_gst_min, pre_gst_max] before gst
/// and within [1, delta] per hop afterwards; crash-stop faults drop all of a
/// node's I/O. Byzantine senders may address subsets and later release a held
/// message at an absolute time, but cannot stop correct recipients from
/// relaying. Events fire in (time, insertion) order and a single PRNG drives
/// every random draw, so equal seeds give identical runs.
class Scheduler {
public:
  Scheduler(SimConfig cfg, ClusterConfig cluster, std::set<NodeId> byzantine);

  // Installed by the runner; all invoked synchronously inside step().
  std::function<void(const Delivery&)> on_deliver;
  std::function<void(const TimerFire&)> on_timer;
  std::function<void(const TimerArmed&)> on_timer_armed;
  std::function<void(const NodeId&, Tick)> on_crash;

  /// Gossip a message from `from` to the cluster under the fanout rule.
  /// Returns 0 without effect when `from` has crashed. A positive send_delay
  /// holds the message for that many ticks before it hits the wire (models
  /// local work, e.g. per-tx signing, without blocking the event loop).
  Mid broadcast(const NodeId& from, const consensus::Message& msg, Tick send_delay = 0);

  /// Byzantine send: direct delivery only to `targets` (normal latency). The
  /// sender controls its own audience, not the network: once any correct node
  /// receives the message it relays as usual, so omitted nodes still hear
  /// about it within delta of the first correct receipt. Only an empty or
  /// all-byzantine audience keeps the message dark (until release_to).
  Mid targeted_send(const NodeId& from, const consensus::Message& msg,
                    const std::set<NodeId>& targets);

  /// Schedule a previously created message to one node at an absolute time
  /// (clamped to now). No-op if the node already received it.
  void release_to(Mid mid, const NodeId& to, Tick at);

  /// Enqueue a timer to fire at now + duration; reports the arm via
  /// on_timer_armed. Firing into a stale (height, round) is the consensus
  /// layer's problem, not the scheduler's.
  void schedule_timer(const NodeId& node, consensus::TimerKind kind, int64_t height,
                      int64_t round, Tick duration);

  void schedule_crash(const NodeId& node, Tick at);
  void schedule_recover(const NodeId& node, Tick at);

  /// Schedule every message held by a correct node to all correct nodes that
  /// have not yet received it, at normal post-hoc latency. Runs automatically
  /// at gst; the runner calls it again when draining at end of run.
  void flush_missing();

  /// Process the next event. Returns false when the queue is empty or the
  /// next event lies beyond max_sim_time (sets exhausted). Pass true to keep
  /// draining past the time budget.
  bool step(bool ignore_time_limit = false);

  Tick now() const { return now_; }
  bool exhausted() const { return exhausted_; }
  bool queue_empty() const { return queue_.empty(); }
  bool crashed(const NodeId& n) const { return crashed_.count(n) > 0; }
  const SimConfig& config() const { return cfg_; }
  const ClusterConfig& cluster() const { return cluster_; }

  /// Uniform draw in [lo, hi] from the run's single PRNG.
  uint64_t rand_range(uint64_t lo, uint64_t hi);

private:
  struct Envelope {
    consensus::Message msg;
    NodeId origin;
    Tick created_at = 0;
  };

  struct Event {
    enum class Kind : uint8_t { Deliver, TimerFire, Crash, Recover, GstFlush };
    Kind kind = Kind::GstFlush;
    Mid mid = 0;       // Deliver
    NodeId node;       // recipient / timer owner / crash target
    NodeId relayer;    // Deliver
    Tick sent_at = 0;  // Deliver
    consensus::TimerKind timer = consensus::TimerKind::Propose;
    int64_t height = 0;
    int64_t round = 0;
  };

  Mid new_envelope(const NodeId& from, const consensus::Message& msg);
  void push_event(Tick at, Event ev);
  void dispatch(const Event& ev);
  void dispatch_deliver(const Event& ev);
  void relay(Mid mid, const NodeId& holder, Tick sent_at);
  void schedule_delivery(Mid mid, const NodeId& to, const NodeId& relayer, Tick sent_at,
                         std::optional<Tick> forced_at);
  Tick hop_arrival(const NodeId& relayer, const NodeId& to, Tick sent_at);
  size_t fanout_width() const;

  SimConfig cfg_;
  ClusterConfig cluster_;
  std::set<NodeId> byzantine_;
  std::mt19937_64 rng_;

  Tick now_ = 0;
  uint64_t next_seq_ = 0;
  Mid next_mid_ = 1;
  bool exhausted_ = false;

  std::map<std::pair<Tick, uint64_t>, Event> queue_;
  std::map<Mid, Envelope> envelopes_;
  std::map<Mid, std::set<NodeId>> received_; // nodes that processed the message
  std::map<Mid, std::set<NodeId>> covered_;  // received, scheduled, or withheld
  std::set<NodeId> crashed_;
};

} // namespace flextender::sim
