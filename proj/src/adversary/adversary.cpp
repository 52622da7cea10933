#include "adversary/adversary.hpp"

#include <algorithm>

namespace flextender::adversary {

namespace {

const char* kKindNames[] = {
    "crash",
    "withhold_endorsement",
    "last_moment_endorsement",
    "uneven_endorsement",
    "equivocate_proposals",
    "withhold_proposal_from",
    "duplicate_prevote_differing",
    "silent",
};

std::set<int64_t> int_set_from_json(const nlohmann::json& j, const char* field) {
  std::set<int64_t> out;
  if (!j.contains(field)) return out;
  if (!j.at(field).is_array())
    throw Error(ErrorCode::Config, std::string("strategy field '") + field + "' must be an array");
  for (const auto& e : j.at(field)) out.insert(e.get<int64_t>());
  return out;
}

} // namespace

std::string strategy_kind_name(StrategyKind k) { return kKindNames[static_cast<size_t>(k)]; }

StrategyKind strategy_kind_from_name(const std::string& s) {
  for (size_t i = 0; i < std::size(kKindNames); ++i)
    if (s == kKindNames[i]) return static_cast<StrategyKind>(i);
  throw Error(ErrorCode::Config, "unknown adversary strategy kind '" + s + "'");
}

bool Strategy::applies(int64_t height, int64_t round) const {
  if (!heights.empty() && !heights.count(height)) return false;
  if (!rounds.empty() && !rounds.count(round)) return false;
  return true;
}

void Strategy::validate(const ClusterConfig& cluster) const {
  switch (kind) {
  case StrategyKind::Crash:
    if (crash_at < 0) throw Error(ErrorCode::Config, "crash time must be >= 0");
    break;
  case StrategyKind::LastMomentEndorsement:
    if (target_correct_count < 0 || target_correct_count > cluster.n())
      throw Error(ErrorCode::Config, "target_correct_count out of range");
    break;
  case StrategyKind::UnevenEndorsement: {
    if (partition_plan.empty())
      throw Error(ErrorCode::Config, "uneven_endorsement needs a non-empty plan");
    std::set<NodeId> seen;
    for (const auto& subset : partition_plan) {
      if (subset.empty()) throw Error(ErrorCode::Config, "uneven_endorsement plan subset is empty");
      for (const auto& nid : subset) {
        if (!cluster.has_node(nid))
          throw Error(ErrorCode::Config, "uneven_endorsement plan names unknown node '" + nid + "'");
        if (!seen.insert(nid).second)
          throw Error(ErrorCode::Config, "uneven_endorsement plan subsets must be disjoint");
      }
    }
    break;
  }
  case StrategyKind::WithholdProposalFrom:
    if (victims.empty())
      throw Error(ErrorCode::Config, "withhold_proposal_from needs at least one node");
    for (const auto& nid : victims)
      if (!cluster.has_node(nid))
        throw Error(ErrorCode::Config, "withhold_proposal_from names unknown node '" + nid + "'");
    break;
  default:
    break;
  }
}

nlohmann::json Strategy::to_json() const {
  nlohmann::json j;
  j["kind"] = strategy_kind_name(kind);
  if (!heights.empty()) j["heights"] = heights;
  if (!rounds.empty()) j["rounds"] = rounds;
  switch (kind) {
  case StrategyKind::Crash:
    j["at"] = crash_at;
    break;
  case StrategyKind::WithholdEndorsement:
    if (!txids.empty()) j["txids"] = txids;
    break;
  case StrategyKind::LastMomentEndorsement:
    j["target_correct_count"] = target_correct_count;
    break;
  case StrategyKind::UnevenEndorsement:
    j["plan"] = partition_plan;
    break;
  case StrategyKind::WithholdProposalFrom:
    j["nodes"] = victims;
    break;
  default:
    break;
  }
  return j;
}

Strategy Strategy::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("kind"))
    throw Error(ErrorCode::Config, "adversary strategy must be an object with a 'kind'");
  Strategy s;
  s.kind = strategy_kind_from_name(j.at("kind").get<std::string>());
  s.heights = int_set_from_json(j, "heights");
  s.rounds = int_set_from_json(j, "rounds");
  switch (s.kind) {
  case StrategyKind::Crash:
    s.crash_at = j.value("at", int64_t{0});
    break;
  case StrategyKind::WithholdEndorsement:
    if (j.contains("txids"))
      for (const auto& t : j.at("txids")) s.txids.insert(t.get<std::string>());
    break;
  case StrategyKind::LastMomentEndorsement:
    s.target_correct_count = j.value("target_correct_count", 0);
    break;
  case StrategyKind::UnevenEndorsement:
    if (j.contains("plan"))
      for (const auto& subset : j.at("plan")) {
        std::set<NodeId> nodes;
        for (const auto& nid : subset) nodes.insert(nid.get<std::string>());
        s.partition_plan.push_back(std::move(nodes));
      }
    break;
  case StrategyKind::WithholdProposalFrom:
    if (j.contains("nodes"))
      for (const auto& nid : j.at("nodes")) s.victims.insert(nid.get<std::string>());
    break;
  default:
    break;
  }
  return s;
}

Controller::Controller(NodeId self, std::vector<Strategy> strategies, ClusterConfig cluster,
                       std::set<NodeId> byzantine, sim::Scheduler* sched)
    : self_(std::move(self)), strategies_(std::move(strategies)), cluster_(std::move(cluster)),
      byzantine_(std::move(byzantine)), sched_(sched) {
  for (const auto& s : strategies_) s.validate(cluster_);
}

std::optional<sim::Tick> Controller::crash_at() const {
  std::optional<sim::Tick> at;
  for (const auto& s : strategies_)
    if (s.kind == StrategyKind::Crash && (!at || s.crash_at < *at)) at = s.crash_at;
  return at;
}

std::vector<SentMessage> Controller::handle_send(const consensus::Message& original) {
  consensus::Message m = original;
  for (const auto& s : strategies_) {
    if (!s.applies(m.height, m.round)) continue;
    switch (s.kind) {
    case StrategyKind::Silent:
      return {};
    case StrategyKind::Crash:
      break; // handled at setup via crash_at()
    case StrategyKind::WithholdEndorsement:
      if (m.type == consensus::MsgType::Prevote && m.endorsements) {
        auto& views = *m.endorsements;
        if (s.txids.empty())
          views.clear();
        else
          for (const auto& t : s.txids) views.erase(t);
      }
      break;
    case StrategyKind::DuplicatePrevoteDiffering:
      if (m.type == consensus::MsgType::Prevote && m.endorsements && !m.endorsements->empty())
        return duplicate_differing(m);
      break;
    case StrategyKind::UnevenEndorsement:
      if (m.type == consensus::MsgType::Prevote && m.endorsements && !m.endorsements->empty())
        return uneven(s, m);
      break;
    case StrategyKind::LastMomentEndorsement:
      if (m.type == consensus::MsgType::Prevote && m.endorsements && !m.endorsements->empty() &&
          m.digest)
        return last_moment(s, m);
      if (m.type == consensus::MsgType::Precommit && m.digest) {
        // Vote nil instead of helping the value commit: the attack wants the
        // round to fail so the endorsement game repeats next round.
        m.digest = std::nullopt;
        m.exclusions.clear();
      }
      break;
    case StrategyKind::EquivocateProposals:
      if (m.type == consensus::MsgType::Proposal && m.value && !m.value->txs.empty())
        return equivocate(m);
      break;
    case StrategyKind::WithholdProposalFrom:
      if (m.type == consensus::MsgType::Proposal) return withhold_proposal(s, m);
      break;
    }
  }
  sim::Mid mid = sched_->broadcast(self_, m);
  if (mid == 0) return {};
  return {SentMessage{mid, std::move(m)}};
}

std::vector<SentMessage> Controller::equivocate(const consensus::Message& m) {
  consensus::Message twin = m;
  Value shorter = *m.value;
  shorter.txs.pop_back();
  if (!shorter.exec_results.empty()) shorter.exec_results.pop_back();
  twin.value = std::move(shorter);

  std::vector<NodeId> others;
  for (const auto& nid : cluster_.node_ids)
    if (nid != self_) others.push_back(nid);
  size_t half = (others.size() + 1) / 2;
  std::set<NodeId> first(others.begin(), others.begin() + static_cast<ptrdiff_t>(half));
  std::set<NodeId> second(others.begin() + static_cast<ptrdiff_t>(half), others.end());

  std::vector<SentMessage> out;
  out.push_back(SentMessage{sched_->targeted_send(self_, m, first), m});
  out.push_back(SentMessage{sched_->targeted_send(self_, twin, second), twin});
  return out;
}

std::vector<SentMessage> Controller::withhold_proposal(const Strategy& s,
                                                       const consensus::Message& m) {
  std::set<NodeId> targets;
  for (const auto& nid : cluster_.node_ids)
    if (nid != self_ && !s.victims.count(nid)) targets.insert(nid);
  sim::Mid mid = sched_->targeted_send(self_, m, targets, s.victims);
  if (mid == 0) return {};

  PendingRelease pr;
  pr.mid = mid;
  pr.height = m.height;
  pr.round = m.round;
  for (const auto& v : s.victims)
    if (!byzantine_.count(v)) pr.offsets[v] = +1;
  plan_release(std::move(pr));
  return {SentMessage{mid, m}};
}

std::vector<SentMessage> Controller::duplicate_differing(const consensus::Message& m) {
  consensus::Message alt = m;
  auto views = *m.endorsements;
  auto it = views.begin();
  it->second = it->second == policy::View::Endorse ? policy::View::OpposeResult
                                                   : policy::View::Endorse;
  alt.endorsements = std::move(views);

  std::vector<SentMessage> out;
  out.push_back(SentMessage{sched_->broadcast(self_, m), m});
  out.push_back(SentMessage{sched_->broadcast(self_, alt), alt});
  return out;
}

std::vector<SentMessage> Controller::uneven(const Strategy& s, const consensus::Message& m) {
  size_t k = s.partition_plan.size();
  std::vector<std::map<TxId, policy::View>> maps(k);
  size_t i = 0;
  for (const auto& [txid, view] : *m.endorsements) maps[i++ % k][txid] = view;

  std::vector<SentMessage> out;
  for (size_t j = 0; j < k; ++j) {
    consensus::Message part = m;
    part.endorsements = std::move(maps[j]);
    out.push_back(SentMessage{sched_->targeted_send(self_, part, s.partition_plan[j]), part});
  }
  return out;
}

std::vector<SentMessage> Controller::last_moment(const Strategy& s, const consensus::Message& m) {
  std::set<NodeId> withhold;
  for (const auto& nid : cluster_.node_ids)
    if (nid != self_) withhold.insert(nid);
  sim::Mid mid = sched_->targeted_send(self_, m, {}, withhold);
  if (mid == 0) return {};

  PendingRelease pr;
  pr.mid = mid;
  pr.height = m.height;
  pr.round = m.round;
  int rank = 0;
  for (const auto& nid : cluster_.node_ids) {
    if (byzantine_.count(nid)) continue;
    pr.offsets[nid] = rank < s.target_correct_count ? -1 : +1;
    ++rank;
  }
  plan_release(std::move(pr));
  return {SentMessage{mid, m}};
}

void Controller::plan_release(PendingRelease pr) {
  pending_.push_back(std::move(pr));
  auto& stored = pending_.back();
  for (const auto& arm : arm_history_) try_release(stored, arm);
}

void Controller::try_release(PendingRelease& pr, const sim::TimerArmed& arm) {
  auto it = pr.offsets.find(arm.node);
  if (it == pr.offsets.end() || pr.done.count(arm.node)) return;
  if (arm.kind == consensus::TimerKind::Prevote && arm.height == pr.height &&
      arm.round == pr.round) {
    sched_->release_to(pr.mid, arm.node, arm.fire_at + it->second);
    pr.done.insert(arm.node);
  } else if (std::pair(arm.height, arm.round) > std::pair(pr.height, pr.round)) {
    // The victim moved on without ever arming that prevote timer; the attack
    // window is gone, so stop withholding.
    sched_->release_to(pr.mid, arm.node, arm.armed_at);
    pr.done.insert(arm.node);
  }
}

void Controller::observe_timer_armed(const sim::TimerArmed& arm) {
  arm_history_.push_back(arm);
  for (auto& pr : pending_) try_release(pr, arm);
}

} // namespace flextender::adversary
