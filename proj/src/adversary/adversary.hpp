#pragma once

#include "consensus/messages.hpp"
#include "core/types.hpp"
#include "sim/netsim.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <set>
#include <vector>

namespace flextender::adversary {

enum class StrategyKind : uint8_t {
  Crash,
  WithholdEndorsement,
  LastMomentEndorsement,
  UnevenEndorsement,
  EquivocateProposals,
  WithholdProposalFrom,
  DuplicatePrevoteDiffering,
  Silent,
};

std::string strategy_kind_name(StrategyKind k);
StrategyKind strategy_kind_from_name(const std::string& s);

/// One byzantine behavior, optionally scoped to specific heights/rounds.
/// A node carries a list of these; they are applied in order to every
/// outbound message (see Controller::handle_send).
struct Strategy {
  StrategyKind kind = StrategyKind::Silent;
  std::set<int64_t> heights; // empty = every height
  std::set<int64_t> rounds;  // empty = every round

  sim::Tick crash_at = 0;                       // Crash
  std::set<TxId> txids;                         // WithholdEndorsement; empty = all
  int target_correct_count = 0;                 // LastMomentEndorsement
  std::vector<std::set<NodeId>> partition_plan; // UnevenEndorsement
  std::set<NodeId> victims;                     // WithholdProposalFrom

  bool applies(int64_t height, int64_t round) const;
  void validate(const ClusterConfig& cluster) const;

  nlohmann::json to_json() const;
  static Strategy from_json(const nlohmann::json& j);
};

/// What the controller actually put on the wire for one outbound message.
struct SentMessage {
  sim::Mid mid = 0;
  consensus::Message msg;
};

/// Executes a byzantine node's strategies. The node itself runs the normal
/// state machine; the controller distorts its outbound traffic and exploits
/// the scheduler's timer-arm feed (the model grants the adversary knowledge
/// of every correct node's deadlines, which over-approximates any real
/// attacker).
class Controller {
public:
  Controller(NodeId self, std::vector<Strategy> strategies, ClusterConfig cluster,
             std::set<NodeId> byzantine, sim::Scheduler* sched);

  const NodeId& self() const { return self_; }

  /// Earliest CRASH strategy time, if any; the runner schedules it at setup.
  std::optional<sim::Tick> crash_at() const;

  /// Route one outbound message through the strategy list. Returns what was
  /// sent (possibly several distorted variants, possibly nothing).
  std::vector<SentMessage> handle_send(const consensus::Message& m);

  /// Fed every timer arm in the simulation; drives last-moment and
  /// withheld-proposal release timing.
  void observe_timer_armed(const sim::TimerArmed& arm);

private:
  struct PendingRelease {
    sim::Mid mid = 0;
    int64_t height = 0;
    int64_t round = 0;
    // victim -> arrival offset relative to the victim's prevote-timer fire
    std::map<NodeId, sim::Tick> offsets;
    std::set<NodeId> done;
  };

  void plan_release(PendingRelease pr);
  void try_release(PendingRelease& pr, const sim::TimerArmed& arm);

  std::vector<SentMessage> equivocate(const consensus::Message& m);
  std::vector<SentMessage> withhold_proposal(const Strategy& s, const consensus::Message& m);
  std::vector<SentMessage> duplicate_differing(const consensus::Message& m);
  std::vector<SentMessage> uneven(const Strategy& s, const consensus::Message& m);
  std::vector<SentMessage> last_moment(const Strategy& s, const consensus::Message& m);

  NodeId self_;
  std::vector<Strategy> strategies_;
  ClusterConfig cluster_;
  std::set<NodeId> byzantine_;
  sim::Scheduler* sched_;

  std::vector<sim::TimerArmed> arm_history_;
  std::vector<PendingRelease> pending_;
};

} // namespace flextender::adversary
