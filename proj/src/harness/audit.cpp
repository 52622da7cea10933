#include "harness/audit.hpp"

#include "consensus/messages.hpp"
#include "harness/scenario.hpp"
#include "harness/workload.hpp"
#include "policy/policy.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace flextender::harness {

using consensus::ExclusionKind;
using nlohmann::json;
using nlohmann::ordered_json;

std::string check_status_name(CheckStatus s) {
  switch (s) {
  case CheckStatus::Pass: return "PASS";
  case CheckStatus::Fail: return "FAIL";
  case CheckStatus::NotApplicable: return "NOT APPLICABLE";
  }
  return "?";
}

bool AuditReport::passed() const {
  if (corrupt) return false;
  for (const auto& c : checks)
    if (c.status == CheckStatus::Fail) return false;
  return true;
}

ordered_json AuditReport::to_json() const {
  ordered_json j;
  j["corrupt"] = corrupt;
  if (corrupt) j["reason"] = corrupt_reason;
  ordered_json arr = ordered_json::array();
  for (const auto& c : checks) {
    ordered_json e{{"name", c.name}, {"status", check_status_name(c.status)}};
    if (!c.details.empty()) e["details"] = c.details;
    arr.push_back(std::move(e));
  }
  j["checks"] = std::move(arr);
  j["passed"] = passed();
  return j;
}

std::string AuditReport::text() const {
  std::ostringstream out;
  if (corrupt) {
    out << "TRACE_CORRUPT: " << corrupt_reason << "\n";
    return out.str();
  }
  for (const auto& c : checks) {
    out << check_status_name(c.status) << "  " << c.name << "\n";
    for (const auto& d : c.details) out << "        " << d << "\n";
  }
  out << (passed() ? "all checks green" : "audit failed") << "\n";
  return out.str();
}

namespace {

struct Corrupt {
  std::string msg;
};

[[noreturn]] void corrupt(size_t line, const std::string& what) {
  throw Corrupt{"line " + std::to_string(line + 1) + ": " + what};
}

const json& need(const json& p, const char* key, size_t line) {
  auto it = p.find(key);
  if (it == p.end()) corrupt(line, std::string("payload missing '") + key + "'");
  return *it;
}

struct SendRec {
  uint64_t i = 0;
  sim::Tick t = 0;
  NodeId from;
  uint64_t mid = 0;
  std::string type;
  int64_t h = 0, r = 0;
  std::string digest; // empty = nil / digestless
  bool full = false;
  std::vector<TxId> txids;
  int64_t vr = -1, rr = -1;
  std::map<TxId, policy::View> views;
  std::map<TxId, ExclusionKind> exclusions;
};

struct DeliverRec {
  uint64_t i = 0;
  sim::Tick t = 0;
  NodeId to;
  uint64_t mid = 0;
  NodeId origin, relayer;
  sim::Tick sent_at = 0;
};

struct DecideRec {
  uint64_t i = 0;
  sim::Tick t = 0;
  NodeId node;
  int64_t h = 0, r = 0;
  std::string digest;
  std::vector<TxId> txids;
};

struct TraceData {
  Scenario sc;
  std::set<NodeId> byz;
  std::set<NodeId> crashed;
  std::vector<SendRec> sends;
  std::vector<DeliverRec> delivers;
  std::vector<DecideRec> decides;
  std::map<uint64_t, size_t> send_by_mid;                    // mid -> sends index
  std::map<std::string, std::vector<TxId>> txids_by_digest;  // full values seen on the wire
  std::map<TxId, Transaction> tx_by_id;                      // regenerated workload
  std::map<std::pair<int64_t, int64_t>, sim::Tick> round_start; // earliest correct entry
  std::set<std::pair<int64_t, std::string>> examined_notes;  // (h, digest) per correct notes

  bool is_correct(const NodeId& n) const { return !byz.count(n) && !crashed.count(n); }

  std::set<NodeId> all_nodes() const {
    return {sc.cluster.node_ids.begin(), sc.cluster.node_ids.end()};
  }

  const Transaction* tx(const TxId& id) const {
    auto it = tx_by_id.find(id);
    return it == tx_by_id.end() ? nullptr : &it->second;
  }

  /// Pseudo-value for policy evaluation: real tx bodies, no exec results
  /// (only statically triggered bindings can be re-judged from a trace).
  Value pseudo_value(const std::vector<TxId>& txids) const {
    Value v;
    for (const auto& id : txids)
      if (const Transaction* t = tx(id)) v.txs.push_back(*t);
    return v;
  }
};

TraceData parse_trace(const std::string& jsonl) {
  TraceData td;
  std::istringstream in(jsonl);
  std::string line;
  size_t line_no = 0;
  uint64_t expect_i = 0;
  sim::Tick last_t = std::numeric_limits<sim::Tick>::min();
  bool have_meta = false;

  while (std::getline(in, line)) {
    if (line.empty()) {
      ++line_no;
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      corrupt(line_no, e.what());
    }
    if (!j.is_object()) corrupt(line_no, "record is not an object");
    if (!have_meta) {
      if (j.value("kind", "") != "META") corrupt(line_no, "first record must be META");
      try {
        td.sc = Scenario::from_json(need(j, "scenario", line_no), "META");
      } catch (const Error& e) {
        corrupt(line_no, std::string("embedded scenario invalid: ") + e.what());
      }
      for (const auto& [nid, _] : td.sc.adversaries) td.byz.insert(nid);
      GeneratedWorkload wl =
          generate_workload(td.sc.workload, td.sc.cluster, td.sc.sim.seed);
      for (const auto& tx : wl.all) td.tx_by_id.emplace(tx.txid, tx);
      have_meta = true;
      ++line_no;
      continue;
    }

    if (!j.contains("i") || !j["i"].is_number_unsigned()) corrupt(line_no, "missing index");
    uint64_t i = j["i"].get<uint64_t>();
    if (i != expect_i) corrupt(line_no, "record index out of sequence");
    ++expect_i;
    if (!j.contains("t") || !j["t"].is_number_integer()) corrupt(line_no, "missing time");
    sim::Tick t = j["t"].get<sim::Tick>();
    if (t < last_t) corrupt(line_no, "time went backwards");
    last_t = t;
    std::string node = need(j, "node", line_no).get<std::string>();
    if (!td.sc.cluster.has_node(node)) corrupt(line_no, "unknown node '" + node + "'");
    std::string kind = need(j, "kind", line_no).get<std::string>();
    const json& p = need(j, "p", line_no);
    if (!p.is_object()) corrupt(line_no, "payload is not an object");

    try {
      if (kind == "SEND") {
        SendRec s;
        s.i = i;
        s.t = t;
        s.from = node;
        s.mid = need(p, "mid", line_no).get<uint64_t>();
        s.type = need(p, "type", line_no).get<std::string>();
        s.h = need(p, "h", line_no).get<int64_t>();
        s.r = need(p, "r", line_no).get<int64_t>();
        if (p.contains("digest") && p["digest"].is_string())
          s.digest = p["digest"].get<std::string>();
        if (s.type == "proposal") {
          s.vr = need(p, "vr", line_no).get<int64_t>();
          s.rr = need(p, "rr", line_no).get<int64_t>();
          s.full = need(p, "full", line_no).get<bool>();
          if (s.full) {
            s.txids = need(p, "txids", line_no).get<std::vector<TxId>>();
            if (!s.digest.empty()) td.txids_by_digest.emplace(s.digest, s.txids);
          }
        } else if (s.type == "prevote") {
          if (p.contains("views"))
            for (const auto& [txid, v] : p["views"].items())
              s.views[txid] = policy::view_from_name(v.get<std::string>());
        } else if (s.type == "precommit") {
          if (p.contains("exclusions"))
            for (const auto& [txid, k] : p["exclusions"].items())
              s.exclusions[txid] =
                  consensus::exclusion_kind_from_name(k.get<std::string>());
        } else {
          corrupt(line_no, "unknown message type '" + s.type + "'");
        }
        td.send_by_mid.emplace(s.mid, td.sends.size());
        td.sends.push_back(std::move(s));
      } else if (kind == "DELIVER") {
        DeliverRec d;
        d.i = i;
        d.t = t;
        d.to = node;
        d.mid = need(p, "mid", line_no).get<uint64_t>();
        d.origin = need(p, "origin", line_no).get<std::string>();
        d.relayer = need(p, "relayer", line_no).get<std::string>();
        d.sent_at = need(p, "sent_at", line_no).get<sim::Tick>();
        td.delivers.push_back(std::move(d));
      } else if (kind == "DECIDE") {
        DecideRec d;
        d.i = i;
        d.t = t;
        d.node = node;
        d.h = need(p, "h", line_no).get<int64_t>();
        d.r = need(p, "r", line_no).get<int64_t>();
        d.digest = need(p, "digest", line_no).get<std::string>();
        d.txids = need(p, "txids", line_no).get<std::vector<TxId>>();
        td.txids_by_digest.emplace(d.digest, d.txids);
        td.decides.push_back(std::move(d));
      } else if (kind == "PHASE") {
        std::string ev = need(p, "event", line_no).get<std::string>();
        if (ev == "crash") {
          td.crashed.insert(node);
        } else if (ev == "round_start" && !td.byz.count(node)) {
          auto key = std::make_pair(need(p, "h", line_no).get<int64_t>(),
                                    need(p, "r", line_no).get<int64_t>());
          auto [it, fresh] = td.round_start.emplace(key, t);
          if (!fresh) it->second = std::min(it->second, t);
        } else if (ev == "ref_update" && !td.byz.count(node) &&
                   p.value("trigger", "") == "examined" && p.contains("digest")) {
          td.examined_notes.emplace(need(p, "h", line_no).get<int64_t>(),
                                    p["digest"].get<std::string>());
        }
      } else if (kind == "TIMER" || kind == "REMOVE" || kind == "ABORT") {
        // consumed by metrics, not by the invariants re-checked here
      } else {
        corrupt(line_no, "unknown record kind '" + kind + "'");
      }
    } catch (const json::exception& e) {
      corrupt(line_no, e.what());
    } catch (const Error& e) {
      corrupt(line_no, e.what());
    }
    ++line_no;
  }
  if (!have_meta) throw Corrupt{"trace has no META record"};
  return td;
}

// ---------------------------------------------------------------------------
// Shared derivations

/// True if `sub` is an order-preserving subsequence of `full`.
bool is_subsequence(const std::vector<TxId>& sub, const std::vector<TxId>& full) {
  size_t j = 0;
  for (const auto& id : full) {
    if (j < sub.size() && sub[j] == id) ++j;
  }
  return j == sub.size();
}

/// Endorsement record for (h, r, digest) aggregated from a set of prevote
/// sends (the global wire view, or one node's received subset).
policy::EndorsementRecord make_record(const std::vector<const SendRec*>& prevotes,
                                      const std::vector<TxId>& value_txids) {
  std::vector<policy::PrevoteViews> views;
  for (const SendRec* s : prevotes) views.push_back({s->from, s->views});
  return policy::aggregate_prevotes(views, value_txids);
}

std::vector<const SendRec*> prevotes_at(const TraceData& td, int64_t h, int64_t r,
                                        const std::string& digest) {
  std::vector<const SendRec*> out;
  for (const auto& s : td.sends)
    if (s.type == "prevote" && s.h == h && s.r == r && s.digest == digest && !s.views.empty())
      out.push_back(&s);
  return out;
}

/// Every tx of `txids` properly endorsed under `record` (conditional views
/// already invalidated by the caller where applicable).
bool all_endorsed(const TraceData& td, const policy::EndorsementRecord& record,
                  const std::vector<TxId>& txids) {
  for (const auto& id : txids) {
    const Transaction* tx = td.tx(id);
    if (!tx) return false;
    auto applicable = policy::applicable_policies(*tx, nullptr, td.sc.policies);
    if (!policy::is_properly_endorsed(applicable, td.sc.default_policy,
                                      record.endorsers_of(id)))
      return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Checks

CheckResult check_agreement(const TraceData& td) {
  CheckResult c{"agreement"};
  std::map<int64_t, const DecideRec*> first;
  for (const auto& d : td.decides) {
    if (td.byz.count(d.node)) continue;
    auto [it, fresh] = first.emplace(d.h, &d);
    if (fresh) continue;
    if (it->second->digest != d.digest)
      c.fail("height " + std::to_string(d.h) + ": " + d.node + " decided " +
             d.digest.substr(0, 12) + " but " + it->second->node + " decided " +
             it->second->digest.substr(0, 12));
    else if (it->second->txids != d.txids)
      c.fail("height " + std::to_string(d.h) + ": decide tx lists diverge between " + d.node +
             " and " + it->second->node);
  }
  return c;
}

CheckResult check_safety_endorsement(const TraceData& td) {
  CheckResult c{"safety_with_endorsement"};
  if (td.sc.mode == Mode::Eov) {
    c.status = CheckStatus::NotApplicable;
    c.details.push_back("endorsement disabled in eov mode");
    return c;
  }
  std::set<std::tuple<int64_t, int64_t, std::string>> seen;
  for (const auto& d : td.decides) {
    if (td.byz.count(d.node)) continue;
    if (!seen.emplace(d.h, d.r, d.digest).second) continue;

    // The committing round's proposal tells us which earlier round (if any)
    // is allowed to carry the endorsements.
    std::set<int64_t> ref_rounds;
    for (const auto& s : td.sends)
      if (s.type == "proposal" && s.h == d.h && s.r == d.r && s.digest == d.digest && s.rr >= 0)
        ref_rounds.insert(s.rr);

    bool ok = false;
    // Commit-round record for the decided digest itself.
    {
      auto rec = make_record(prevotes_at(td, d.h, d.r, d.digest), d.txids);
      ok = all_endorsed(td, rec, d.txids);
    }
    // Referenced-round record: either for the same digest (valid-value
    // re-proposal) or for an examined superset the decided value was
    // extracted from, with conditional opposition reset for the drops.
    for (int64_t rr : ref_rounds) {
      if (ok) break;
      {
        auto rec = make_record(prevotes_at(td, d.h, rr, d.digest), d.txids);
        ok = all_endorsed(td, rec, d.txids);
      }
      if (ok) break;
      for (const auto& [dig, ptxids] : td.txids_by_digest) {
        if (dig == d.digest || !is_subsequence(d.txids, ptxids)) continue;
        auto rec = make_record(prevotes_at(td, d.h, rr, dig), ptxids);
        std::set<TxId> removed(ptxids.begin(), ptxids.end());
        for (const auto& id : d.txids) removed.erase(id);
        policy::invalidate_conditional_views(rec, ptxids, removed);
        if (all_endorsed(td, rec, d.txids)) {
          ok = true;
          break;
        }
      }
    }
    if (!ok)
      c.fail("height " + std::to_string(d.h) + " round " + std::to_string(d.r) +
             ": committed value " + d.digest.substr(0, 12) +
             " has no round record endorsing every tx");
  }
  return c;
}

CheckResult check_invariant_1(const TraceData& td) {
  CheckResult c{"examined_value_removability"};
  if (td.sc.mode == Mode::Eov) {
    c.status = CheckStatus::NotApplicable;
    c.details.push_back("endorsement disabled in eov mode");
    return c;
  }
  int quorum = quorum_size(td.sc.cluster);
  int fplus1 = removal_threshold(td.sc.cluster);

  // A value counts as examined once n-f distinct senders precommitted it.
  std::map<std::tuple<int64_t, int64_t, std::string>, std::set<NodeId>> precommitters;
  for (const auto& s : td.sends)
    if (s.type == "precommit" && !s.digest.empty())
      precommitters[{s.h, s.r, s.digest}].insert(s.from);

  for (const auto& [key, senders] : precommitters) {
    if (static_cast<int>(senders.size()) < quorum) continue;
    const auto& [h, r, digest] = key;
    auto vit = td.txids_by_digest.find(digest);
    if (vit == td.txids_by_digest.end()) continue; // value bytes never hit the wire
    const std::vector<TxId>& txids = vit->second;

    auto rec = make_record(prevotes_at(td, h, r, digest), txids);
    if (all_endorsed(td, rec, txids)) continue;

    // Not provably endorsed: some tx must have gathered f+1 removal
    // suggestions in this round's precommits.
    std::map<TxId, std::set<NodeId>> suggesters;
    for (const auto& s : td.sends)
      if (s.type == "precommit" && s.h == h && s.r == r && s.digest == digest)
        for (const auto& [txid, _] : s.exclusions) suggesters[txid].insert(s.from);
    bool removable = false;
    for (const auto& [txid, who] : suggesters)
      if (static_cast<int>(who.size()) >= fplus1) {
        removable = true;
        break;
      }
    if (!removable)
      c.fail("height " + std::to_string(h) + " round " + std::to_string(r) + ": examined value " +
             digest.substr(0, 12) + " is neither endorsed nor removable");
  }
  return c;
}

CheckResult check_invariant_2(const TraceData& td, bool delivery_bound_ok) {
  CheckResult c{"post_gst_no_censorship"};
  auto na = [&](std::string why) {
    c.status = CheckStatus::NotApplicable;
    c.details.push_back(std::move(why));
    return c;
  };
  if (td.sc.mode == Mode::Eov) return na("endorsement disabled in eov mode");
  if (td.sc.sim.fanout != sim::Fanout::All)
    return na("single-hop latency bound needs full fanout");
  if (td.sc.timers.prevote_base < 2 * td.sc.sim.delta)
    return na("prevote timer below 2*delta");
  if (!delivery_bound_ok) return na("post-gst delivery bound did not hold");

  bool any_post_gst_round = false;
  for (const auto& [key, t] : td.round_start)
    if (t >= td.sc.sim.gst) any_post_gst_round = true;
  if (!any_post_gst_round) return na("no round started after gst");

  // A correct node may suggest removal only for txs its own received record
  // leaves unendorsed at that moment. Replay each suggester's view.
  for (const auto& s : td.sends) {
    if (s.type != "precommit" || s.exclusions.empty() || td.byz.count(s.from)) continue;
    auto rs = td.round_start.find({s.h, s.r});
    if (rs == td.round_start.end() || rs->second < td.sc.sim.gst) continue; // pre-gst round

    auto vit = td.txids_by_digest.find(s.digest);
    if (vit == td.txids_by_digest.end()) continue;
    const std::vector<TxId>& txids = vit->second;

    std::vector<const SendRec*> visible;
    for (const auto& own : td.sends)
      if (own.type == "prevote" && own.from == s.from && own.h == s.h && own.r == s.r &&
          own.digest == s.digest && !own.views.empty() && own.i < s.i)
        visible.push_back(&own);
    for (const auto& d : td.delivers) {
      if (d.to != s.from || d.i >= s.i) continue;
      auto mit = td.send_by_mid.find(d.mid);
      if (mit == td.send_by_mid.end()) continue;
      const SendRec& src = td.sends[mit->second];
      if (src.type == "prevote" && src.h == s.h && src.r == s.r && src.digest == s.digest &&
          !src.views.empty())
        visible.push_back(&src);
    }
    auto rec = make_record(visible, txids);
    auto statuses = policy::mutual_exclusion_check(rec, td.pseudo_value(txids), td.sc.policies,
                                                   td.sc.default_policy, td.all_nodes());
    for (const auto& [txid, _] : s.exclusions) {
      auto stc = statuses.find(txid);
      if (stc != statuses.end() && stc->second == policy::TxStatus::Endorsed)
        c.fail(s.from + " suggested removing " + txid + " at height " + std::to_string(s.h) +
               " round " + std::to_string(s.r) +
               " although its own record showed it endorsed and unvetoed");
    }
  }
  return c;
}

CheckResult check_remove_only(const TraceData& td) {
  CheckResult c{"remove_only_evolution"};
  for (const auto& s : td.sends) {
    if (s.type != "proposal" || s.rr < 0 || !s.full) continue;
    // The reference must shrink (or repeat) a value proposed in that round.
    bool ok = false;
    bool found_parent = false;
    for (const auto& p : td.sends) {
      if (p.type != "proposal" || p.h != s.h || p.r != s.rr || !p.full) continue;
      found_parent = true;
      if (is_subsequence(s.txids, p.txids)) {
        ok = true;
        break;
      }
    }
    if (found_parent && !ok)
      c.fail(s.from + " proposed at height " + std::to_string(s.h) + " round " +
             std::to_string(s.r) + " referencing round " + std::to_string(s.rr) +
             " with txs that are not a subsequence of any value proposed there");
  }
  return c;
}

CheckResult check_post_gst_delivery(const TraceData& td) {
  CheckResult c{"post_gst_delivery_bound"};
  for (const auto& d : td.delivers) {
    if (d.sent_at < td.sc.sim.gst) continue;
    if (td.byz.count(d.relayer) || td.byz.count(d.to)) continue;
    if (d.t - d.sent_at > td.sc.sim.delta)
      c.fail("message " + std::to_string(d.mid) + " from " + d.relayer + " to " + d.to +
             " sent at " + std::to_string(d.sent_at) + " took " + std::to_string(d.t - d.sent_at) +
             " > delta ticks");
  }
  return c;
}

CheckResult check_eventual_delivery(const TraceData& td) {
  CheckResult c{"eventual_delivery"};
  std::map<uint64_t, std::set<NodeId>> holders;
  std::map<uint64_t, NodeId> origin_of;
  for (const auto& s : td.sends) {
    if (s.mid == 0) continue;
    origin_of.emplace(s.mid, s.from);
    holders[s.mid].insert(s.from);
  }
  for (const auto& d : td.delivers) {
    holders[d.mid].insert(d.to);
    origin_of.emplace(d.mid, d.origin);
  }
  for (const auto& [mid, held] : holders) {
    bool correct_holder = false;
    for (const auto& n : held)
      if (td.is_correct(n)) correct_holder = true;
    if (!correct_holder) continue; // adversary-internal message, no guarantee
    for (const auto& n : td.sc.cluster.node_ids) {
      if (!td.is_correct(n)) continue;
      if (!held.count(n))
        c.fail("message " + std::to_string(mid) + " from " + origin_of[mid] +
               " never reached correct node " + n);
    }
  }
  return c;
}

} // namespace

AuditReport audit_trace(const std::string& jsonl) {
  AuditReport report;
  TraceData td;
  try {
    td = parse_trace(jsonl);
  } catch (const Corrupt& e) {
    report.corrupt = true;
    report.corrupt_reason = e.msg;
    return report;
  }
  report.checks.push_back(check_agreement(td));
  report.checks.push_back(check_safety_endorsement(td));
  report.checks.push_back(check_invariant_1(td));
  CheckResult delivery = check_post_gst_delivery(td);
  report.checks.push_back(check_invariant_2(td, delivery.status == CheckStatus::Pass));
  report.checks.push_back(check_remove_only(td));
  report.checks.push_back(delivery);
  report.checks.push_back(check_eventual_delivery(td));
  return report;
}

AuditReport audit_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    AuditReport r;
    r.corrupt = true;
    r.corrupt_reason = path + ": cannot open trace file";
    return r;
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return audit_trace(ss.str());
}

} // namespace flextender::harness
