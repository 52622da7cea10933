#include "harness/runner.hpp"

#include "eov/eovsim.hpp"
#include "harness/trace.hpp"
#include "harness/workload.hpp"

#include <cstdio>
#include <cstdlib>
#include <memory>

namespace flextender::harness {

using consensus::Action;
using consensus::Message;
using consensus::MsgType;
using consensus::Node;
using consensus::NodeConfig;
using nlohmann::ordered_json;

namespace {

bool log_enabled() {
  const char* v = std::getenv("FLEXTENDER_LOG");
  return v != nullptr && *v != '\0';
}

ordered_json send_payload(sim::Mid mid, const Message& m) {
  ordered_json p{{"mid", mid}, {"type", msg_type_name(m.type)}, {"h", m.height}, {"r", m.round}};
  switch (m.type) {
  case MsgType::Proposal: {
    auto d = m.target_digest();
    p["digest"] = d ? ordered_json(to_hex(*d)) : ordered_json(nullptr);
    p["vr"] = m.vr;
    p["rr"] = m.rr;
    if (m.value) {
      p["txids"] = m.value->txids();
      p["full"] = true;
    } else {
      p["full"] = false;
    }
    break;
  }
  case MsgType::Prevote: {
    p["digest"] = m.digest ? ordered_json(to_hex(*m.digest)) : ordered_json(nullptr);
    p["con"] = m.con;
    if (m.endorsements && !m.endorsements->empty()) {
      ordered_json views;
      for (const auto& [txid, view] : *m.endorsements) views[txid] = policy::view_name(view);
      p["views"] = std::move(views);
    }
    break;
  }
  case MsgType::Precommit: {
    p["digest"] = m.digest ? ordered_json(to_hex(*m.digest)) : ordered_json(nullptr);
    if (!m.exclusions.empty()) {
      ordered_json ex;
      for (const auto& [txid, kind] : m.exclusions) ex[txid] = consensus::exclusion_kind_name(kind);
      p["exclusions"] = std::move(ex);
    }
    break;
  }
  }
  return p;
}

ordered_json deliver_payload(const sim::Delivery& d) {
  return ordered_json{{"mid", d.mid},
                      {"type", msg_type_name(d.msg->type)},
                      {"h", d.msg->height},
                      {"r", d.msg->round},
                      {"origin", d.origin},
                      {"relayer", d.relayer},
                      {"created_at", d.created_at},
                      {"sent_at", d.sent_at}};
}

class RunContext {
public:
  RunContext(Scenario sc)
      : sc_(std::move(sc)),
        byz_(byz_set(sc_)),
        sched_(sc_.sim, sc_.cluster, byz_),
        verbose_(log_enabled()) {}

  RunResult run() {
    trace_.meta(sc_.to_json());
    build_nodes();
    wire_callbacks();
    schedule_crashes();
    seed_mempools();
    for (const auto& id : sc_.cluster.node_ids) process_actions(id, nodes_.at(id)->start());

    while (!stop_ && sched_.step()) {
    }
    sim::Tick protocol_end = stop_ ? stop_time_ : sched_.now();
    if (!stop_) {
      result_.failure = sched_.exhausted()
                            ? "MAX_TIME_EXCEEDED: simulation budget spent before every correct "
                              "node reached the target height"
                            : "event queue drained before every correct node reached the target "
                              "height";
    }
    result_.reached_target = stop_;

    // Drain: flush everything correct nodes hold and let in-flight traffic
    // land (recorded, not consumed) so eventual-delivery holds on the trace.
    draining_ = true;
    sched_.flush_missing();
    while (sched_.step(true)) {
    }

    finalize_metrics(protocol_end);
    result_.trace = trace_.str();
    result_.end_time = sched_.now();
    if (verbose_)
      std::fprintf(stderr, "[flextender] %s seed=%llu heights=%lld/%lld elapsed=%lld %s\n",
                   sc_.name.c_str(), static_cast<unsigned long long>(sc_.sim.seed),
                   static_cast<long long>(result_.metrics.heights),
                   static_cast<long long>(sc_.target_heights),
                   static_cast<long long>(result_.metrics.elapsed),
                   result_.reached_target ? "ok" : "LIVENESS-FAIL");
    return std::move(result_);
  }

private:
  static std::set<NodeId> byz_set(const Scenario& sc) {
    std::set<NodeId> out;
    for (const auto& [nid, _] : sc.adversaries) out.insert(nid);
    return out;
  }

  void build_nodes() {
    GeneratedWorkload wl = generate_workload(sc_.workload, sc_.cluster, sc_.sim.seed);
    exec::WorldState genesis;
    for (const auto& tx : wl.all) {
      genesis.balances.emplace(tx.from, sc_.default_balance);
      genesis.balances.emplace(tx.to, sc_.default_balance);
    }
    for (const auto& [acct, bal] : sc_.balances) genesis.balances[acct] = bal;
    eov_world_ = genesis;
    workload_ = std::move(wl);

    for (const auto& id : sc_.cluster.node_ids) {
      NodeConfig cfg;
      cfg.id = id;
      cfg.cluster = sc_.cluster;
      cfg.bindings = sc_.policies;
      cfg.default_policy = sc_.default_policy;
      auto vit = sc_.verdicts.find(id);
      if (vit != sc_.verdicts.end()) cfg.verdicts = vit->second;
      cfg.timers = sc_.timers;
      cfg.batch_size = static_cast<int>(sc_.workload.batch);
      cfg.hash_only_reproposal = sc_.hash_only_reproposal;
      cfg.dependency_reexec = sc_.dependency_reexec;
      cfg.endorsement_enabled = sc_.mode == Mode::Flextender;
      nodes_.emplace(id, std::make_unique<Node>(std::move(cfg), genesis));
    }
    for (const auto& [nid, strategies] : sc_.adversaries)
      controllers_.emplace(
          nid, std::make_unique<adversary::Controller>(nid, strategies, sc_.cluster, byz_, &sched_));
  }

  void wire_callbacks() {
    sched_.on_deliver = [this](const sim::Delivery& d) {
      trace_.add(sched_.now(), d.to, "DELIVER", deliver_payload(d));
      if (draining_) return;
      process_actions(d.to, nodes_.at(d.to)->on_message(*d.msg));
    };
    sched_.on_timer = [this](const sim::TimerFire& t) {
      if (!draining_) {
        const auto& node = *nodes_.at(t.node);
        bool stale = node.height() != t.height || node.round() != t.round;
        trace_.add(t.at, t.node, "TIMER",
                   ordered_json{{"action", "fire"},
                                {"timer", consensus::timer_kind_name(t.kind)},
                                {"h", t.height},
                                {"r", t.round},
                                {"stale", stale}});
        process_actions(t.node, nodes_.at(t.node)->on_timer(t.kind, t.height, t.round));
      }
    };
    sched_.on_timer_armed = [this](const sim::TimerArmed& a) {
      trace_.add(a.armed_at, a.node, "TIMER",
                 ordered_json{{"action", "arm"},
                              {"timer", consensus::timer_kind_name(a.kind)},
                              {"h", a.height},
                              {"r", a.round},
                              {"fire_at", a.fire_at}});
      for (auto& [_, ctrl] : controllers_) ctrl->observe_timer_armed(a);
    };
    sched_.on_crash = [this](const NodeId& n, sim::Tick at) {
      trace_.add(at, n, "PHASE", ordered_json{{"event", "crash"}});
    };
  }

  void schedule_crashes() {
    for (auto& [nid, ctrl] : controllers_)
      if (auto at = ctrl->crash_at()) sched_.schedule_crash(nid, *at);
  }

  void seed_mempools() {
    for (const auto& [nid, txs] : workload_.per_node)
      for (const auto& tx : txs) nodes_.at(nid)->push_tx(tx);
  }

  void process_actions(const NodeId& from, std::vector<Action> actions) {
    for (auto& a : actions) {
      switch (a.kind) {
      case Action::Kind::Send:
        handle_send(from, a.msg);
        break;
      case Action::Kind::Timer:
        sched_.schedule_timer(from, a.timer, a.timer_height, a.timer_round, a.timer_duration);
        break;
      case Action::Kind::Decide:
        handle_decide(from, a.decide_height, a.decide_round, a.decided);
        break;
      case Action::Kind::Note:
        handle_note(from, a.note);
        break;
      }
    }
    check_stop();
  }

  void handle_send(const NodeId& from, const Message& m) {
    auto cit = controllers_.find(from);
    if (cit != controllers_.end()) {
      for (const auto& sent : cit->second->handle_send(m))
        trace_.add(sched_.now(), from, "SEND", send_payload(sent.mid, sent.msg));
      return;
    }
    sim::Tick delay = 0;
    if (sc_.mode == Mode::Eov && m.type == MsgType::Proposal && sc_.eov_sign_cost_per_tx > 0 &&
        m.value)
      delay = sc_.eov_sign_cost_per_tx * static_cast<sim::Tick>(m.value->txs.size());
    sim::Mid mid = sched_.broadcast(from, m, delay);
    ordered_json p = send_payload(mid, m);
    if (delay > 0) p["wire_t"] = sched_.now() + delay;
    trace_.add(sched_.now(), from, "SEND", std::move(p));
  }

  void handle_note(const NodeId& from, const consensus::NoteRec& n) {
    if (n.event == "remove_suggest") {
      ordered_json p{{"h", n.height}, {"r", n.round}};
      for (const auto& [k, v] : n.extra.items()) p[k] = v;
      suggestions_[n.height].emplace(n.extra.at("txid").get<TxId>(),
                                     n.extra.at("cause").get<std::string>());
      trace_.add(sched_.now(), from, "REMOVE", std::move(p));
      return;
    }
    ordered_json p{{"event", n.event}, {"h", n.height}, {"r", n.round}};
    for (const auto& [k, v] : n.extra.items()) p[k] = v;
    trace_.add(sched_.now(), from, "PHASE", std::move(p));
  }

  void handle_decide(const NodeId& from, int64_t h, int64_t r, const Value& v) {
    Digest d = value_digest(v);
    std::vector<TxId> txids = v.txids();
    ordered_json statuses = ordered_json::array();
    for (const auto& res : v.exec_results)
      statuses.push_back(res.status == ExecStatus::Ok ? "ok" : "insufficient");
    trace_.add(sched_.now(), from, "DECIDE",
               ordered_json{{"h", h},
                            {"r", r},
                            {"digest", to_hex(d)},
                            {"txids", txids},
                            {"statuses", std::move(statuses)}});
    if (verbose_)
      std::fprintf(stderr, "[flextender] t=%lld %s decided h=%lld r=%lld txs=%zu\n",
                   static_cast<long long>(sched_.now()), from.c_str(), static_cast<long long>(h),
                   static_cast<long long>(r), txids.size());

    auto it = decided_digest_.find(h);
    if (it != decided_digest_.end()) {
      if (it->second != d && result_.invariant_violation.empty() && !byz_.count(from))
        result_.invariant_violation = "agreement violated at height " + std::to_string(h) +
                                      ": " + from + " decided " + to_hex(d).substr(0, 12) +
                                      " against " + to_hex(it->second).substr(0, 12);
      return; // later deciders of an already-settled height add nothing below
    }
    // Only a correct node's decision settles a height for bookkeeping; a
    // byzantine machine may run ahead of what correct nodes will confirm.
    if (byz_.count(from)) return;
    decided_digest_.emplace(h, d);
    decide_round_[h] = r;
    result_.committed[h] = txids;

    std::set<TxId> prune(txids.begin(), txids.end());
    if (sc_.mode == Mode::Eov) {
      auto outcome = eov::validate_and_apply(eov_world_, v, h);
      eov_world_ = outcome.new_state;
      metrics_committed_ += static_cast<int64_t>(outcome.committed.size());
      metrics_aborted_ += static_cast<int64_t>(outcome.aborted.size());
      if (!outcome.aborted.empty()) {
        std::map<TxId, const Transaction*> by_id;
        for (const auto& tx : v.txs) by_id[tx.txid] = &tx;
        std::vector<Transaction> requeue;
        for (const auto& txid : outcome.aborted) {
          trace_.add(sched_.now(), from, "ABORT", ordered_json{{"h", h}, {"txid", txid}});
          requeue.push_back(*by_id.at(txid));
        }
        // Aborted txs retry at the front of the next height's proposer.
        const NodeId& next_prop = sc_.cluster.proposer(h + 1, 0);
        nodes_.at(next_prop)->push_front_txs(requeue);
      }
    } else {
      metrics_committed_ += static_cast<int64_t>(txids.size());
      auto sit = suggestions_.find(h);
      if (sit != suggestions_.end())
        for (const auto& [txid, _] : sit->second) prune.insert(txid);
    }
    for (const auto& id : sc_.cluster.node_ids) nodes_.at(id)->drop_txs(prune);
  }

  void check_stop() {
    if (stop_) return;
    for (const auto& id : sc_.cluster.node_ids) {
      if (byz_.count(id)) continue;
      if (nodes_.at(id)->height() < sc_.target_heights) return;
    }
    stop_ = true;
    stop_time_ = sched_.now();
  }

  void finalize_metrics(sim::Tick protocol_end) {
    Metrics& m = result_.metrics;
    m.mode = mode_name(sc_.mode);
    m.seed = sc_.sim.seed;
    m.reached_target = result_.reached_target;
    m.heights = static_cast<int64_t>(result_.committed.size());
    m.committed_txs = metrics_committed_;
    m.elapsed = protocol_end;
    m.throughput = protocol_end > 0
                       ? static_cast<double>(metrics_committed_) * 1e6 /
                             static_cast<double>(protocol_end)
                       : 0.0;
    for (const auto& [h, r] : decide_round_) ++m.rounds_per_height[r + 1];
    for (const auto& [h, sugg] : suggestions_) {
      std::set<TxId> committed_at_h;
      auto cit = result_.committed.find(h);
      if (cit != result_.committed.end())
        committed_at_h.insert(cit->second.begin(), cit->second.end());
      for (const auto& [txid, cause] : sugg) {
        if (committed_at_h.count(txid)) continue; // suggested but survived
        if (cause == "veto")
          ++m.removals_veto;
        else
          ++m.removals_timeout;
      }
    }
    m.aborted_txs = metrics_aborted_;
    m.validated_txs = metrics_committed_ + metrics_aborted_;
    m.abort_rate = m.validated_txs > 0
                       ? static_cast<double>(metrics_aborted_) /
                             static_cast<double>(m.validated_txs)
                       : 0.0;
    for (const auto& id : sc_.cluster.node_ids)
      if (!byz_.count(id)) m.recompute_total += nodes_.at(id)->recompute_count();
  }

  Scenario sc_;
  std::set<NodeId> byz_;
  sim::Scheduler sched_;
  bool verbose_ = false;

  GeneratedWorkload workload_;
  std::map<NodeId, std::unique_ptr<Node>> nodes_;
  std::map<NodeId, std::unique_ptr<adversary::Controller>> controllers_;
  TraceWriter trace_;
  RunResult result_;
  exec::WorldState eov_world_;

  bool stop_ = false;
  bool draining_ = false;
  sim::Tick stop_time_ = 0;
  std::map<int64_t, Digest> decided_digest_;
  std::map<int64_t, int64_t> decide_round_;
  std::map<int64_t, std::map<TxId, std::string>> suggestions_; // txid -> first cause
  int64_t metrics_committed_ = 0;
  int64_t metrics_aborted_ = 0;
};

} // namespace

RunResult run_scenario(Scenario sc, std::optional<uint64_t> seed_override) {
  if (seed_override) sc.sim.seed = *seed_override;
  sc.validate();
  return RunContext(std::move(sc)).run();
}

} // namespace flextender::harness
