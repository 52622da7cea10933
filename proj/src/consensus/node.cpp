#include "consensus/node.hpp"

#include <algorithm>

namespace flextender::consensus {

std::string step_name(Step s) {
  switch (s) {
    case Step::Propose: return "propose";
    case Step::Prevote: return "prevote";
    case Step::Precommit: return "precommit";
  }
  throw Error(ErrorCode::Internal, "bad step");
}

TimerConfig TimerConfig::defaults(int64_t delta) {
  TimerConfig t;
  t.propose_base = t.prevote_base = t.precommit_base = 2 * delta;
  t.propose_backoff = t.prevote_backoff = t.precommit_backoff = delta;
  return t;
}

int64_t TimerConfig::duration(TimerKind k, int64_t round) const {
  switch (k) {
    case TimerKind::Propose: return propose_base + round * propose_backoff;
    case TimerKind::Prevote: return prevote_base + round * prevote_backoff;
    case TimerKind::Precommit: return precommit_base + round * precommit_backoff;
  }
  throw Error(ErrorCode::Internal, "bad timer kind");
}

void TimerConfig::validate(int64_t delta) const {
  if (delta < 1) throw Error(ErrorCode::Config, "delta must be positive");
  for (int64_t v : {propose_base, prevote_base, precommit_base}) {
    if (v < 1) throw Error(ErrorCode::Config, "timer base must be positive");
  }
  for (int64_t v : {propose_backoff, prevote_backoff, precommit_backoff}) {
    if (v < 0) throw Error(ErrorCode::Config, "timer backoff must be non-negative");
  }
}

Action Action::send(Message m) {
  Action a;
  a.kind = Kind::Send;
  a.msg = std::move(m);
  return a;
}

Action Action::set_timer(TimerKind k, int64_t h, int64_t r, int64_t duration) {
  Action a;
  a.kind = Kind::Timer;
  a.timer = k;
  a.timer_height = h;
  a.timer_round = r;
  a.timer_duration = duration;
  return a;
}

Action Action::decide(int64_t h, int64_t r, Value v) {
  Action a;
  a.kind = Kind::Decide;
  a.decide_height = h;
  a.decide_round = r;
  a.decided = std::move(v);
  return a;
}

Action Action::make_note(NoteRec n) {
  Action a;
  a.kind = Kind::Note;
  a.note = std::move(n);
  return a;
}

Node::Node(NodeConfig cfg, exec::WorldState genesis)
    : cfg_(std::move(cfg)), world_(std::move(genesis)) {
  cfg_.cluster.validate();
  if (!cfg_.cluster.has_node(cfg_.id)) throw Error(ErrorCode::Config, "node id not in cluster");
  quorum_ = quorum_size(cfg_.cluster);
  fplus1_ = removal_threshold(cfg_.cluster);
}

void Node::push_tx(Transaction tx) { mempool_.push_back(std::move(tx)); }

void Node::push_front_txs(const std::vector<Transaction>& txs) {
  for (auto it = txs.rbegin(); it != txs.rend(); ++it) mempool_.push_front(*it);
}

void Node::drop_txs(const std::set<TxId>& txids) {
  std::erase_if(mempool_, [&](const Transaction& tx) { return txids.count(tx.txid) > 0; });
}

std::vector<Action> Node::start() {
  std::vector<Action> out;
  if (started_) return out;
  started_ = true;
  start_round(0, out);
  poll(out);
  return out;
}

std::vector<Action> Node::on_message(const Message& m) {
  std::vector<Action> out;
  if (m.height < height_) return out;
  if (m.type == MsgType::Proposal && m.from != cfg_.cluster.proposer(m.height, m.round)) {
    return out; // not this slot's proposer
  }
  if (!log_insert(m)) return out;
  poll(out);
  return out;
}

std::vector<Action> Node::on_timer(TimerKind kind, int64_t height, int64_t round) {
  std::vector<Action> out;
  if (height != height_ || round != round_) return out; // stale
  switch (kind) {
    case TimerKind::Propose:
      if (step_ == Step::Propose) {
        send_prevote(std::nullopt, std::nullopt, true, out);
        step_ = Step::Prevote;
        note(out, "enter_prevote", {{"vote", nullptr}});
      }
      break;
    case TimerKind::Prevote: {
      if (step_ != Step::Prevote) break;
      bool acted = false;
      const RoundLog* rl = rlog(height_, round_);
      if (rl) {
        const NodeId& prop = cfg_.cluster.proposer(height_, round_);
        for (const auto& p : rl->proposals) {
          if (p.from != prop || p.vr != -1) continue;
          const Value* v = resolved_value(p);
          if (!v) continue;
          Digest d = value_digest(*v);
          if (count_prevotes(round_, d) < quorum_) continue;
          if (!valid_structure(*v) || !valid_execution(*v, p.rr)) continue;
          auto record = round_record(round_, d, v->txids());
          auto statuses = policy::mutual_exclusion_check(record, *v, cfg_.bindings,
                                                         cfg_.default_policy, all_nodes());
          auto excl = get_excluded_tx(round_, *v);
          suggestion_notes(*v, excl, statuses, out);
          send_precommit(d, std::move(excl), out);
          acted = true;
          break;
        }
      }
      if (!acted) send_precommit(std::nullopt, {}, out);
      step_ = Step::Precommit;
      note(out, "enter_precommit", {{"on", "timeout"}});
      break;
    }
    case TimerKind::Precommit:
      start_round(round_ + 1, out);
      break;
  }
  poll(out);
  return out;
}

bool Node::log_insert(const Message& m) {
  auto& hl = log_[m.height];
  auto& rl = hl.rounds[m.round];
  std::string key = m.body_key();
  if (rl.body_keys.count(key)) return false;
  int ti = static_cast<int>(m.type);
  int& retained = rl.per_sender[ti][m.from];
  if (retained >= 2) return false; // keep at most two distinct bodies per sender
  ++retained;
  rl.body_keys.insert(std::move(key));
  switch (m.type) {
    case MsgType::Proposal:
      rl.proposals.push_back(m);
      if (m.value) hl.values[to_hex(value_digest(*m.value))] = *m.value;
      break;
    case MsgType::Prevote: rl.prevotes.push_back(m); break;
    case MsgType::Precommit: rl.precommits.push_back(m); break;
  }
  return true;
}

const Node::RoundLog* Node::rlog(int64_t h, int64_t r) const {
  auto hit = log_.find(h);
  if (hit == log_.end()) return nullptr;
  auto rit = hit->second.rounds.find(r);
  if (rit == hit->second.rounds.end()) return nullptr;
  return &rit->second;
}

const Value* Node::resolved_value(const Message& proposal) const {
  if (proposal.value) return &*proposal.value;
  if (!proposal.proposal_digest) return nullptr;
  auto hit = log_.find(proposal.height);
  if (hit == log_.end()) return nullptr;
  auto vit = hit->second.values.find(to_hex(*proposal.proposal_digest));
  if (vit == hit->second.values.end()) return nullptr;
  return &vit->second;
}

void Node::remember_value(const Value& v) { log_[height_].values[to_hex(value_digest(v))] = v; }

int Node::count_prevotes(int64_t r, const std::optional<Digest>& digest) const {
  const RoundLog* rl = rlog(height_, r);
  if (!rl) return 0;
  std::set<NodeId> senders;
  for (const auto& m : rl->prevotes) {
    if (m.con && m.digest == digest) senders.insert(m.from);
  }
  return static_cast<int>(senders.size());
}

int Node::count_prevotes_any(int64_t r) const {
  const RoundLog* rl = rlog(height_, r);
  if (!rl) return 0;
  std::set<NodeId> senders;
  for (const auto& m : rl->prevotes) {
    if (m.con) senders.insert(m.from);
  }
  return static_cast<int>(senders.size());
}

int Node::count_precommits(int64_t r, const Digest& digest, bool require_clean) const {
  const RoundLog* rl = rlog(height_, r);
  if (!rl) return 0;
  std::set<NodeId> senders;
  for (const auto& m : rl->precommits) {
    if (m.digest && *m.digest == digest && (!require_clean || m.exclusions.empty())) {
      senders.insert(m.from);
    }
  }
  return static_cast<int>(senders.size());
}

int Node::count_precommits_any(int64_t r) const {
  const RoundLog* rl = rlog(height_, r);
  if (!rl) return 0;
  std::set<NodeId> senders;
  for (const auto& m : rl->precommits) senders.insert(m.from);
  return static_cast<int>(senders.size());
}

std::map<TxId, std::set<NodeId>> Node::suggestion_senders(int64_t r, const Digest& digest,
                                                          bool always_only) const {
  std::map<TxId, std::set<NodeId>> out;
  const RoundLog* rl = rlog(height_, r);
  if (!rl) return out;
  for (const auto& m : rl->precommits) {
    if (!m.digest || *m.digest != digest) continue;
    for (const auto& [txid, kind] : m.exclusions) {
      if (always_only && kind != ExclusionKind::Always) continue;
      out[txid].insert(m.from);
    }
  }
  return out;
}

policy::EndorsementRecord Node::round_record(int64_t r, const Digest& digest,
                                             const std::vector<TxId>& txids) const {
  std::vector<policy::PrevoteViews> views;
  const RoundLog* rl = rlog(height_, r);
  if (rl) {
    for (const auto& m : rl->prevotes) {
      if (!m.digest || *m.digest != digest || !m.endorsements) continue;
      views.push_back({m.from, *m.endorsements});
    }
  }
  return policy::aggregate_prevotes(views, txids);
}

std::set<NodeId> Node::all_nodes() const {
  return {cfg_.cluster.node_ids.begin(), cfg_.cluster.node_ids.end()};
}

std::string Node::txs_key(const std::vector<Transaction>& txs) const {
  std::vector<uint8_t> bytes;
  for (const auto& tx : txs) {
    uint32_t len = static_cast<uint32_t>(tx.txid.size());
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<uint8_t>(len >> (8 * i)));
    bytes.insert(bytes.end(), tx.txid.begin(), tx.txid.end());
  }
  return to_hex(sha256(bytes));
}

const Node::ExecArtifacts& Node::exec_full(const std::vector<Transaction>& txs) {
  std::string key = txs_key(txs);
  auto it = exec_cache_.find(key);
  if (it != exec_cache_.end()) return it->second;
  ExecArtifacts art;
  if (cfg_.endorsement_enabled) {
    auto outp = exec::execute_block(world_, txs);
    art.results = std::move(outp.results);
    art.dag = std::move(outp.dag);
  } else {
    art.results = eov::pre_execute(world_, txs);
  }
  recompute_count_ += static_cast<int64_t>(txs.size());
  return exec_cache_.emplace(std::move(key), std::move(art)).first->second;
}

const Node::ExecArtifacts* Node::exec_cached(const std::vector<Transaction>& txs) const {
  auto it = exec_cache_.find(txs_key(txs));
  return it == exec_cache_.end() ? nullptr : &it->second;
}

namespace {

bool is_tx_subsequence(const std::vector<Transaction>& sub, const std::vector<Transaction>& super) {
  size_t i = 0;
  for (const auto& tx : super) {
    if (i < sub.size() && sub[i] == tx) ++i;
  }
  return i == sub.size();
}

} // namespace

std::vector<ExecResult> Node::exec_for_proposal(const std::vector<Transaction>& txs, int64_t rr) {
  if (const ExecArtifacts* hit = exec_cached(txs)) return hit->results;
  if (cfg_.endorsement_enabled && cfg_.dependency_reexec && rr >= 0) {
    auto hit = log_.find(height_);
    if (hit != log_.end()) {
      for (const auto& [hex, parent] : hit->second.values) {
        if (count_precommits(rr, value_digest(parent), false) < quorum_) continue;
        if (!is_tx_subsequence(txs, parent.txs)) continue;
        const ExecArtifacts* pa = exec_cached(parent.txs);
        if (!pa) continue;
        std::set<TxId> kept;
        for (const auto& tx : txs) kept.insert(tx.txid);
        std::set<TxId> removed;
        for (const auto& tx : parent.txs) {
          if (!kept.count(tx.txid)) removed.insert(tx.txid);
        }
        auto ro = exec::reexecute_after_removal(world_, parent.txs, removed, pa->results, pa->dag,
                                                true);
        recompute_count_ += ro.recomputed;
        ExecArtifacts art{std::move(ro.results), std::move(ro.dag)};
        auto res = art.results;
        exec_cache_.emplace(txs_key(txs), std::move(art));
        return res;
      }
    }
  }
  return exec_full(txs).results;
}

bool Node::valid_structure(const Value& v) const {
  if (v.origin_height != height_) return false;
  if (v.exec_results.size() != v.txs.size()) return false;
  std::set<TxId> seen;
  for (size_t i = 0; i < v.txs.size(); ++i) {
    const auto& tx = v.txs[i];
    if (tx.txid.empty() || tx.from.empty() || tx.to.empty() || tx.amount < 0) return false;
    if (!seen.insert(tx.txid).second) return false;
    if (v.exec_results[i].txid != tx.txid) return false;
  }
  return true;
}

bool Node::valid_execution(const Value& v, int64_t rr) {
  return exec_for_proposal(v.txs, rr) == v.exec_results;
}

std::map<TxId, policy::View> Node::own_views(const Value& v) const {
  std::map<TxId, policy::View> views;
  for (const auto& tx : v.txs) {
    auto it = cfg_.verdicts.find(tx.txid);
    views[tx.txid] = it == cfg_.verdicts.end() ? policy::View::Endorse : it->second;
  }
  return views;
}

bool Node::designated_endorser_for_some_tx(const Value& v) const {
  for (size_t i = 0; i < v.txs.size(); ++i) {
    const ExecResult* res = i < v.exec_results.size() ? &v.exec_results[i] : nullptr;
    auto applicable = policy::applicable_policies(v.txs[i], res, cfg_.bindings);
    if (applicable.empty()) {
      if (cfg_.default_policy.leaves().count(cfg_.id)) return true;
      continue;
    }
    for (const auto* b : applicable) {
      if (b->policy.leaves().count(cfg_.id)) return true;
    }
  }
  return false;
}

bool Node::verify_endorsement(int64_t r, const Value& v) const {
  if (!cfg_.endorsement_enabled) return true;
  if (r < 0) return false;
  auto record = round_record(r, value_digest(v), v.txids());
  for (size_t i = 0; i < v.txs.size(); ++i) {
    const auto& tx = v.txs[i];
    const ExecResult* res = i < v.exec_results.size() ? &v.exec_results[i] : nullptr;
    auto applicable = policy::applicable_policies(tx, res, cfg_.bindings);
    if (!policy::is_properly_endorsed(applicable, cfg_.default_policy,
                                      record.endorsers_of(tx.txid))) {
      return false;
    }
  }
  return true;
}

bool Node::verify_reference(int64_t rr, const Value& v) const {
  if (rr < 0) return false;
  auto hit = log_.find(height_);
  if (hit == log_.end()) return false;
  for (const auto& [hex, parent] : hit->second.values) {
    Digest pd = value_digest(parent);
    if (count_precommits(rr, pd, false) < quorum_) continue; // not examined here
    if (!is_tx_subsequence(v.txs, parent.txs)) continue;
    std::set<TxId> kept;
    for (const auto& tx : v.txs) kept.insert(tx.txid);
    std::vector<size_t> dropped_idx;
    for (size_t i = 0; i < parent.txs.size(); ++i) {
      if (!kept.count(parent.txs[i].txid)) dropped_idx.push_back(i);
    }
    if (dropped_idx.empty()) return true; // identical re-proposal
    auto sugg_any = suggestion_senders(rr, pd, false);
    auto sugg_always = suggestion_senders(rr, pd, true);
    bool ok = true;
    std::vector<size_t> conditional_drops;
    for (size_t i : dropped_idx) {
      const TxId& txid = parent.txs[i].txid;
      auto ait = sugg_any.find(txid);
      if (ait == sugg_any.end() || static_cast<int>(ait->second.size()) < fplus1_) {
        ok = false;
        break;
      }
      auto wit = sugg_always.find(txid);
      bool always_backed = wit != sugg_always.end() &&
                           static_cast<int>(wit->second.size()) >= fplus1_;
      if (!always_backed) conditional_drops.push_back(i);
    }
    if (!ok || conditional_drops.size() > 1) continue;
    if (conditional_drops.size() == 1) {
      // Conditionally removable only when first: everything kept before it
      // must be visibly endorsed in the referenced round.
      auto record = round_record(rr, pd, parent.txids());
      for (size_t i = 0; i < conditional_drops[0] && ok; ++i) {
        if (!kept.count(parent.txs[i].txid)) continue;
        const ExecResult* res = i < parent.exec_results.size() ? &parent.exec_results[i] : nullptr;
        auto applicable = policy::applicable_policies(parent.txs[i], res, cfg_.bindings);
        ok = policy::is_properly_endorsed(applicable, cfg_.default_policy,
                                          record.endorsers_of(parent.txs[i].txid));
      }
    }
    if (ok) return true;
  }
  return false;
}

std::map<TxId, ExclusionKind> Node::get_excluded_tx(int64_t r, const Value& v) const {
  std::map<TxId, ExclusionKind> out;
  if (!cfg_.endorsement_enabled) return out;
  Digest d = value_digest(v);
  auto record = round_record(r, d, v.txids());
  auto statuses =
      policy::mutual_exclusion_check(record, v, cfg_.bindings, cfg_.default_policy, all_nodes());
  auto participants = record.participants();
  for (size_t i = 0; i < v.txs.size(); ++i) {
    const auto& tx = v.txs[i];
    auto st = statuses.at(tx.txid);
    if (st == policy::TxStatus::Endorsed) continue;
    const ExecResult* res = i < v.exec_results.size() ? &v.exec_results[i] : nullptr;
    auto applicable = policy::applicable_policies(tx, res, cfg_.bindings);
    ExclusionKind kind = ExclusionKind::IfFirst;
    if (st == policy::TxStatus::Vetoed &&
        policy::is_vetoed(applicable, cfg_.default_policy, record.always_opposers_of(tx.txid),
                          all_nodes())) {
      kind = ExclusionKind::Always;
    } else {
      // Contract-wide endorsement timeout: a statically applicable policy went
      // unsatisfied while none of its endorsers showed up at all this round.
      for (const auto* b : applicable) {
        if (b->trigger.result_dependent()) continue;
        if (b->policy.satisfied_by(record.endorsers_of(tx.txid))) continue;
        bool any_present = false;
        for (const auto& leaf : b->policy.leaves()) {
          if (participants.count(leaf)) {
            any_present = true;
            break;
          }
        }
        if (!any_present) {
          kind = ExclusionKind::Always;
          break;
        }
      }
    }
    out[tx.txid] = kind;
  }
  return out;
}

std::vector<Transaction> Node::extract(int64_t r, const Value& v) const {
  Digest d = value_digest(v);
  auto sugg_any = suggestion_senders(r, d, false);
  auto sugg_always = suggestion_senders(r, d, true);
  auto backed = [&](const std::map<TxId, std::set<NodeId>>& m, const TxId& txid) {
    auto it = m.find(txid);
    return it != m.end() && static_cast<int>(it->second.size()) >= fplus1_;
  };
  std::vector<Transaction> out;
  bool conditional_dropped = false;
  for (const auto& tx : v.txs) {
    if (backed(sugg_always, tx.txid)) continue; // removable regardless of position
    if (!conditional_dropped && backed(sugg_any, tx.txid)) {
      conditional_dropped = true; // only the first conditionally removable tx goes
      continue;
    }
    out.push_back(tx);
  }
  return out;
}

void Node::poll(std::vector<Action>& out) {
  for (;;) {
    if (try_reconstruct(out)) continue;
    if (try_commit(out)) continue;
    if (try_propose_new(out)) continue;
    if (try_propose_requeued(out)) continue;
    if (try_lock(out)) continue;
    if (try_nil_quorum(out)) continue;
    if (try_rapid_removal(out)) continue;
    if (try_valid_update(out)) continue;
    if (try_examined(out)) continue;
    if (try_prevote_any_timer(out)) continue;
    if (try_precommit_any_timer(out)) continue;
    if (try_conflict(out)) continue;
    if (try_catch_up(out)) continue;
    if (try_endorsement_only(out)) continue;
    break;
  }
}

bool Node::try_reconstruct(std::vector<Action>&) {
  auto hit = log_.find(height_);
  if (hit == log_.end()) return false;
  auto& hl = hit->second;
  for (auto& [r, rl] : hl.rounds) {
    for (auto& p : rl.proposals) {
      if (p.value || !p.proposal_digest) continue;
      std::string hex = to_hex(*p.proposal_digest);
      if (hl.values.count(hex)) continue;
      if (p.vr != -1 || p.rr < 0) continue;
      // Rebuild the referenced extraction and check it hashes right.
      std::vector<std::string> parents;
      for (const auto& [phex, parent] : hl.values) {
        if (count_precommits(p.rr, value_digest(parent), false) >= quorum_) parents.push_back(phex);
      }
      for (const auto& phex : parents) {
        Value parent = hl.values.at(phex);
        Value cand;
        cand.txs = extract(p.rr, parent);
        cand.origin_height = height_;
        cand.exec_results = exec_for_proposal(cand.txs, p.rr);
        if (value_digest(cand) == *p.proposal_digest) {
          hl.values[hex] = std::move(cand);
          return true;
        }
      }
    }
  }
  return false;
}

bool Node::try_commit(std::vector<Action>& out) {
  if (decisions_.count(height_)) return false;
  auto hit = log_.find(height_);
  if (hit == log_.end()) return false;
  for (const auto& [r, rl] : hit->second.rounds) {
    const NodeId& prop = cfg_.cluster.proposer(height_, r);
    for (const auto& p : rl.proposals) {
      if (p.from != prop) continue;
      const Value* v = resolved_value(p);
      if (!v) continue;
      Digest d = value_digest(*v);
      if (count_precommits(r, d, /*require_clean=*/true) < quorum_) continue;
      if (!valid_structure(*v) || !valid_execution(*v, p.rr)) continue;

      Value decided = *v;
      decisions_[height_] = decided;
      if (cfg_.endorsement_enabled) {
        world_ = exec::apply_committed(world_, decided.exec_results, height_);
      } else {
        world_ = eov::validate_and_apply(world_, decided, height_).new_state;
      }
      out.push_back(Action::decide(height_, r, decided));

      // Prune before the next height's proposal is built below; otherwise a
      // node that proposes the round after its own commit re-proposes what it
      // just committed (or suggested dropping).
      std::set<TxId> gone(noted_suggestions_.begin(), noted_suggestions_.end());
      for (const auto& tx : decided.txs) gone.insert(tx.txid);
      drop_txs(gone);

      locked_value_.reset();
      locked_round_ = -1;
      valid_value_.reset();
      valid_round_ = -1;
      ref_value_.reset();
      ref_round_ = -1;
      ++height_;
      log_.erase(log_.begin(), log_.lower_bound(height_));
      exec_cache_.clear();
      sent_endorsement_rounds_.clear();
      my_prevote_.clear();
      prevote_timer_armed_.clear();
      precommit_timer_armed_.clear();
      lock_done_rounds_.clear();
      noted_suggestions_.clear();
      start_round(0, out);
      return true;
    }
  }
  return false;
}

bool Node::try_propose_new(std::vector<Action>& out) {
  if (step_ != Step::Propose) return false;
  const RoundLog* rl = rlog(height_, round_);
  if (!rl) return false;
  const NodeId& prop = cfg_.cluster.proposer(height_, round_);
  for (const auto& p : rl->proposals) {
    if (p.from != prop || p.vr != -1) continue;
    const Value* v = resolved_value(p);
    if (!v) continue;
    if (!((p.rr == -1 && ref_round_ == -1) || verify_reference(p.rr, *v))) {
      continue; // reference not verifiable yet; the propose timer backstops
    }
    Digest d = value_digest(*v);
    bool ok = valid_structure(*v) &&
              (locked_round_ == -1 || (locked_value_ && value_digest(*locked_value_) == d));
    if (ok) ok = valid_execution(*v, p.rr);
    if (ok) {
      if (cfg_.endorsement_enabled) {
        send_prevote(d, own_views(*v), true, out);
      } else {
        send_prevote(d, std::nullopt, true, out);
      }
      note(out, "enter_prevote", {{"vote", to_hex(d)}});
    } else {
      send_prevote(std::nullopt, std::nullopt, true, out);
      note(out, "enter_prevote", {{"vote", nullptr}});
    }
    step_ = Step::Prevote;
    return true;
  }
  return false;
}

bool Node::try_propose_requeued(std::vector<Action>& out) {
  if (step_ != Step::Propose) return false;
  const RoundLog* rl = rlog(height_, round_);
  if (!rl) return false;
  const NodeId& prop = cfg_.cluster.proposer(height_, round_);
  for (const auto& p : rl->proposals) {
    if (p.from != prop || p.vr < 0 || p.vr >= round_) continue;
    const Value* v = resolved_value(p);
    if (!v) continue;
    Digest d = value_digest(*v);
    if (count_prevotes(p.vr, d) < quorum_) continue;
    if (!verify_endorsement(p.rr, *v)) continue;
    bool ok = valid_structure(*v) &&
              (locked_round_ <= p.vr || (locked_value_ && value_digest(*locked_value_) == d));
    if (ok) {
      send_prevote(d, std::nullopt, true, out);
      note(out, "enter_prevote", {{"vote", to_hex(d)}, {"requeued", true}});
    } else {
      send_prevote(std::nullopt, std::nullopt, true, out);
      note(out, "enter_prevote", {{"vote", nullptr}});
    }
    step_ = Step::Prevote;
    return true;
  }
  return false;
}

bool Node::try_lock(std::vector<Action>& out) {
  if (step_ == Step::Propose) return false;
  if (lock_done_rounds_.count(round_)) return false;
  const RoundLog* rl = rlog(height_, round_);
  if (!rl) return false;
  const NodeId& prop = cfg_.cluster.proposer(height_, round_);
  for (const auto& p : rl->proposals) {
    if (p.from != prop) continue;
    const Value* v = resolved_value(p);
    if (!v) continue;
    Digest d = value_digest(*v);
    if (count_prevotes(round_, d) < quorum_) continue;
    if (!valid_structure(*v)) continue;
    if (p.vr == -1 && !valid_execution(*v, p.rr)) continue;
    if (!(verify_endorsement(p.rr, *v) || verify_endorsement(round_, *v))) continue;
    locked_value_ = *v;
    locked_round_ = round_;
    lock_done_rounds_.insert(round_);
    note(out, "lock", {{"digest", to_hex(d)}});
    if (step_ == Step::Prevote) {
      send_precommit(d, {}, out);
      step_ = Step::Precommit;
      note(out, "enter_precommit", {{"on", "endorsed_quorum"}});
    }
    return true;
  }
  return false;
}

bool Node::try_nil_quorum(std::vector<Action>& out) {
  if (step_ != Step::Prevote) return false;
  if (count_prevotes(round_, std::nullopt) < quorum_) return false;
  send_precommit(std::nullopt, {}, out);
  step_ = Step::Precommit;
  note(out, "enter_precommit", {{"on", "nil_quorum"}});
  return true;
}

bool Node::try_rapid_removal(std::vector<Action>& out) {
  if (!cfg_.endorsement_enabled || step_ != Step::Prevote) return false;
  const RoundLog* rl = rlog(height_, round_);
  if (!rl) return false;
  const NodeId& prop = cfg_.cluster.proposer(height_, round_);
  for (const auto& p : rl->proposals) {
    if (p.from != prop || p.vr != -1) continue;
    const Value* v = resolved_value(p);
    if (!v) continue;
    Digest d = value_digest(*v);
    if (count_prevotes(round_, d) < quorum_) continue;
    if (!valid_structure(*v) || !valid_execution(*v, p.rr)) continue;
    auto record = round_record(round_, d, v->txids());
    auto statuses =
        policy::mutual_exclusion_check(record, *v, cfg_.bindings, cfg_.default_policy, all_nodes());
    bool any_vetoed = false;
    for (const auto& [txid, st] : statuses) {
      if (st == policy::TxStatus::Vetoed) any_vetoed = true;
    }
    if (!any_vetoed) continue;
    // Suggest only the unsatisfiable txs. Pending ones keep their full prevote
    // window and, unsuggested, ride into the next proposal where their
    // endorsers get another chance.
    auto excl = get_excluded_tx(round_, *v);
    for (auto it = excl.begin(); it != excl.end();) {
      if (statuses.at(it->first) == policy::TxStatus::Vetoed) {
        ++it;
      } else {
        it = excl.erase(it);
      }
    }
    suggestion_notes(*v, excl, statuses, out);
    send_precommit(d, std::move(excl), out);
    step_ = Step::Precommit;
    note(out, "enter_precommit", {{"on", "rapid_removal"}});
    return true;
  }
  return false;
}

bool Node::try_prevote_any_timer(std::vector<Action>& out) {
  if (step_ != Step::Prevote) return false;
  if (prevote_timer_armed_.count(round_)) return false;
  if (count_prevotes_any(round_) < quorum_) return false;
  prevote_timer_armed_.insert(round_);
  out.push_back(Action::set_timer(TimerKind::Prevote, height_, round_,
                                  cfg_.timers.duration(TimerKind::Prevote, round_)));
  return true;
}

bool Node::try_valid_update(std::vector<Action>& out) {
  auto hit = log_.find(height_);
  if (hit == log_.end()) return false;
  for (const auto& [r, rl] : hit->second.rounds) {
    if (r <= valid_round_) continue;
    const NodeId& prop = cfg_.cluster.proposer(height_, r);
    for (const auto& p : rl.proposals) {
      if (p.from != prop) continue;
      const Value* v = resolved_value(p);
      if (!v) continue;
      Digest d = value_digest(*v);
      if (count_prevotes(r, d) < quorum_) continue;
      if (!valid_structure(*v)) continue;
      if (p.vr == -1 && !valid_execution(*v, p.rr)) continue;
      bool ve_here = verify_endorsement(r, *v);
      if (!ve_here && !verify_endorsement(p.rr, *v)) continue;
      valid_value_ = *v;
      valid_round_ = r;
      ref_round_ = ve_here ? r : p.rr;
      ref_value_ = *v;
      note(out, "valid_update", {{"r", r}, {"digest", to_hex(d)}, {"rr", ref_round_}});
      note(out, "ref_update",
           {{"trigger", "valid"}, {"r", ref_round_}, {"txids", v->txids()}});
      return true;
    }
  }
  return false;
}

bool Node::try_examined(std::vector<Action>& out) {
  if (!cfg_.endorsement_enabled) return false;
  auto hit = log_.find(height_);
  if (hit == log_.end()) return false;
  for (const auto& [r, rl] : hit->second.rounds) {
    const NodeId& prop = cfg_.cluster.proposer(height_, r);
    for (const auto& p : rl.proposals) {
      if (p.from != prop || p.vr != -1) continue;
      const Value* v = resolved_value(p);
      if (!v) continue;
      Digest d = value_digest(*v);
      if (count_precommits(r, d, false) < quorum_) continue;
      auto sugg = suggestion_senders(r, d, false);
      bool removable = false;
      for (const auto& tx : v->txs) {
        auto it = sugg.find(tx.txid);
        if (it != sugg.end() && static_cast<int>(it->second.size()) >= fplus1_) {
          removable = true;
          break;
        }
      }
      if (!removable) continue;
      bool updated = false;
      if (ref_round_ == -1 ||
          (valid_round_ == -1 && ref_value_ && v->size() < ref_value_->size())) {
        ref_round_ = r;
        ref_value_ = *v;
        updated = true;
        note(out, "ref_update",
             {{"trigger", "examined"}, {"r", r}, {"digest", to_hex(d)}, {"txids", v->txids()}});
      }
      if (r == round_) {
        start_round(round_ + 1, out);
        return true;
      }
      if (updated) return true;
    }
  }
  return false;
}

bool Node::try_precommit_any_timer(std::vector<Action>& out) {
  if (precommit_timer_armed_.count(round_)) return false;
  if (count_precommits_any(round_) < quorum_) return false;
  precommit_timer_armed_.insert(round_);
  out.push_back(Action::set_timer(TimerKind::Precommit, height_, round_,
                                  cfg_.timers.duration(TimerKind::Precommit, round_)));
  return true;
}

bool Node::try_conflict(std::vector<Action>& out) {
  if (step_ == Step::Precommit) return false;
  const RoundLog* rl = rlog(height_, round_);
  if (!rl) return false;
  const NodeId& prop = cfg_.cluster.proposer(height_, round_);
  std::set<std::string> digests;
  for (const auto& p : rl->proposals) {
    if (p.from != prop) continue;
    if (auto d = p.target_digest()) digests.insert(to_hex(*d));
  }
  if (digests.size() < 2) return false;
  send_precommit(std::nullopt, {}, out);
  step_ = Step::Precommit;
  note(out, "enter_precommit", {{"on", "conflicting_proposals"}});
  return true;
}

bool Node::try_catch_up(std::vector<Action>& out) {
  auto hit = log_.find(height_);
  if (hit == log_.end()) return false;
  int64_t best = -1;
  for (const auto& [r, rl] : hit->second.rounds) {
    if (r <= round_) continue;
    std::set<NodeId> senders;
    for (const auto& m : rl.proposals) senders.insert(m.from);
    for (const auto& m : rl.prevotes) senders.insert(m.from);
    for (const auto& m : rl.precommits) senders.insert(m.from);
    if (static_cast<int>(senders.size()) >= fplus1_) best = r;
  }
  if (best < 0) return false;
  start_round(best, out);
  return true;
}

bool Node::try_endorsement_only(std::vector<Action>& out) {
  if (!cfg_.endorsement_enabled) return false;
  if (sent_endorsement_rounds_.count(round_)) return false;
  auto mp = my_prevote_.find(round_);
  if (mp == my_prevote_.end()) return false; // no consensus prevote cast yet
  const RoundLog* rl = rlog(height_, round_);
  if (!rl) return false;
  const NodeId& prop = cfg_.cluster.proposer(height_, round_);
  for (const auto& p : rl->proposals) {
    if (p.from != prop || p.vr != -1) continue;
    const Value* v = resolved_value(p);
    if (!v) continue;
    Digest d = value_digest(*v);
    if (mp->second && *mp->second == d) continue; // endorsed in the consensus prevote already
    if (!valid_structure(*v) || !valid_execution(*v, p.rr)) continue;
    if (!designated_endorser_for_some_tx(*v)) continue;
    sent_endorsement_rounds_.insert(round_);
    send_prevote(d, own_views(*v), /*con=*/false, out);
    note(out, "endorsement_only", {{"digest", to_hex(d)}});
    return true;
  }
  return false;
}

void Node::start_round(int64_t r, std::vector<Action>& out) {
  round_ = r;
  step_ = Step::Propose;
  const NodeId& prop = cfg_.cluster.proposer(height_, r);
  note(out, "round_start", {{"proposer", prop}});
  if (prop == cfg_.id) {
    Message m;
    m.type = MsgType::Proposal;
    m.height = height_;
    m.round = round_;
    m.from = cfg_.id;
    Value v;
    if (valid_value_) {
      v = *valid_value_;
      m.vr = valid_round_;
      m.rr = ref_round_;
    } else if (ref_value_) {
      v.txs = extract(ref_round_, *ref_value_);
      v.origin_height = height_;
      v.exec_results = exec_for_proposal(v.txs, ref_round_);
      m.rr = ref_round_;
    } else {
      for (size_t i = 0; i < mempool_.size() && i < static_cast<size_t>(cfg_.batch_size); ++i) {
        v.txs.push_back(mempool_[i]); // peek; decisions prune the pool
      }
      v.origin_height = height_;
      v.exec_results = exec_for_proposal(v.txs, -1);
    }
    if (cfg_.hash_only_reproposal && m.rr != -1) {
      m.proposal_digest = value_digest(v);
      remember_value(v);
    } else {
      m.value = std::move(v);
    }
    broadcast(std::move(m), out);
  } else {
    out.push_back(Action::set_timer(TimerKind::Propose, height_, round_,
                                    cfg_.timers.duration(TimerKind::Propose, round_)));
  }
}

void Node::broadcast(Message m, std::vector<Action>& out) {
  log_insert(m); // a node counts its own vote immediately
  out.push_back(Action::send(std::move(m)));
}

void Node::send_prevote(const std::optional<Digest>& digest,
                        std::optional<std::map<TxId, policy::View>> views, bool con,
                        std::vector<Action>& out) {
  Message m;
  m.type = MsgType::Prevote;
  m.height = height_;
  m.round = round_;
  m.from = cfg_.id;
  m.digest = digest;
  m.endorsements = std::move(views);
  m.con = con;
  if (con) my_prevote_[round_] = digest;
  broadcast(std::move(m), out);
}

void Node::send_precommit(const std::optional<Digest>& digest, std::map<TxId, ExclusionKind> excl,
                          std::vector<Action>& out) {
  Message m;
  m.type = MsgType::Precommit;
  m.height = height_;
  m.round = round_;
  m.from = cfg_.id;
  m.digest = digest;
  m.exclusions = std::move(excl);
  broadcast(std::move(m), out);
}

void Node::note(std::vector<Action>& out, std::string event, nlohmann::ordered_json extra) {
  NoteRec n;
  n.event = std::move(event);
  n.height = height_;
  n.round = round_;
  n.extra = std::move(extra);
  out.push_back(Action::make_note(std::move(n)));
}

void Node::suggestion_notes(const Value& v, const std::map<TxId, ExclusionKind>& excl,
                            const std::map<TxId, policy::TxStatus>& statuses,
                            std::vector<Action>& out) {
  for (const auto& tx : v.txs) {
    auto it = excl.find(tx.txid);
    if (it == excl.end()) continue;
    if (!noted_suggestions_.insert(tx.txid).second) continue;
    auto sit = statuses.find(tx.txid);
    std::string cause =
        sit != statuses.end() && sit->second == policy::TxStatus::Vetoed ? "veto" : "timeout";
    note(out, "remove_suggest",
         {{"txid", tx.txid}, {"cause", cause}, {"kind", exclusion_kind_name(it->second)}});
  }
}

} // namespace flextender::consensus
