#include "harness/audit.hpp"
#include "harness/runner.hpp"

#include <doctest.h>

#include <sstream>
#include <string>
#include <vector>

using namespace flextender;
using namespace flextender::harness;
using nlohmann::ordered_json;

namespace {

Scenario sc_of(const std::string& text) { return Scenario::parse(text, "test"); }

const CheckResult& check_named(const AuditReport& rep, const std::string& name) {
  for (const auto& c : rep.checks)
    if (c.name == name) return c;
  static CheckResult missing{"<missing>"};
  REQUIRE(false);
  return missing;
}

std::vector<std::string> trace_lines(const std::string& trace) {
  std::vector<std::string> out;
  std::istringstream in(trace);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

} // namespace

TEST_CASE("uncontested run commits everything in round zero") {
  auto sc = sc_of(R"({
    "cluster": {"nodes": ["n0", "n1", "n2", "n3"], "f": 1},
    "workload": {"kind": "conflict_free", "tx_count": 8, "batch": 8},
    "target_heights": 2
  })");
  RunResult r = run_scenario(sc);
  REQUIRE(r.ok());
  CHECK(r.failure.empty());
  CHECK(r.metrics.committed_txs == 4); // heights 0,1 drain n0 and n1 pools (2 txs each)
  CHECK(r.metrics.heights == 2);
  CHECK(r.metrics.rounds_per_height.at(1) == 2); // both heights decided in round 0
  CHECK(r.metrics.removals_veto == 0);
  CHECK(r.metrics.removals_timeout == 0);
  CHECK(r.metrics.throughput > 0.0);

  AuditReport rep = audit_trace(r.trace);
  CHECK(!rep.corrupt);
  CHECK(rep.passed());
  for (const auto& c : rep.checks) CHECK(c.status != CheckStatus::Fail);
}

TEST_CASE("identical seeds give byte-identical traces, different seeds diverge") {
  auto sc = sc_of(R"({
    "cluster": {"nodes": ["n0", "n1", "n2", "n3"], "f": 1},
    "sim": {"seed": 11, "delta": 50, "gst": 400, "pre_gst_min": 5, "pre_gst_max": 120},
    "workload": {"kind": "zipf", "tx_count": 12, "accounts": 16, "skew": 1.0, "batch": 4},
    "target_heights": 2
  })");
  RunResult a = run_scenario(sc);
  RunResult b = run_scenario(sc);
  REQUIRE(a.ok());
  CHECK(a.trace == b.trace);
  CHECK(a.metrics.to_json().dump() == b.metrics.to_json().dump());
  RunResult c = run_scenario(sc, 12);
  CHECK(c.metrics.seed == 12);
  CHECK(a.trace != c.trace);
}

TEST_CASE("a too-small time budget reports a liveness failure") {
  auto sc = sc_of(R"({
    "cluster": {"nodes": ["n0", "n1", "n2", "n3"], "f": 1},
    "sim": {"gst": 100000, "max_sim_time": 300},
    "workload": {"kind": "conflict_free", "tx_count": 4},
    "target_heights": 50
  })");
  RunResult r = run_scenario(sc);
  CHECK(!r.reached_target);
  CHECK(!r.ok());
  CHECK(r.failure.find("MAX_TIME_EXCEEDED") != std::string::npos);
  CHECK(!r.trace.empty()); // partial trace still produced for post-mortems
}

TEST_CASE("vetoed tx is removed and the trimmed value commits") {
  // t0 touches account x0 whose policy requires n1; n1 opposes it outright.
  auto sc = sc_of(R"({
    "cluster": {"nodes": ["n0", "n1", "n2", "n3"], "f": 1},
    "workload": {"kind": "scripted", "batch": 8, "txs": [
      {"txid": "t0", "from": "x0", "to": "y0", "amount": 5},
      {"txid": "t1", "from": "x1", "to": "y1", "amount": 5},
      {"txid": "t2", "from": "x2", "to": "y2", "amount": 5},
      {"txid": "t3", "from": "x3", "to": "y3", "amount": 5},
      {"txid": "t4", "from": "x4", "to": "y4", "amount": 5},
      {"txid": "t5", "from": "x5", "to": "y5", "amount": 5},
      {"txid": "t6", "from": "x6", "to": "y6", "amount": 5},
      {"txid": "t7", "from": "x7", "to": "y7", "amount": 5}]},
    "policies": [{"target": "x0", "policy": {"node": "n1"}, "trigger": "always"}],
    "verdicts": {"n1": {"t0": "oppose_always"}},
    "target_heights": 1
  })");
  RunResult r = run_scenario(sc);
  REQUIRE(r.ok());
  // n0's pool held t0 and t4; the veto drops t0 and [t4] commits.
  CHECK(r.committed.at(0) == std::vector<TxId>{"t4"});
  CHECK(r.metrics.removals_veto == 1);
  CHECK(r.metrics.removals_timeout == 0);
  CHECK(r.metrics.rounds_per_height.count(1) == 0); // round 0 could not commit

  AuditReport rep = audit_trace(r.trace);
  CHECK(rep.passed());
}

TEST_CASE("withheld endorsement leads to a timeout removal, audit stays green") {
  auto sc = sc_of(R"({
    "cluster": {"nodes": ["n0", "n1", "n2", "n3"], "f": 1},
    "workload": {"kind": "scripted", "batch": 8, "txs": [
      {"txid": "t0", "from": "x0", "to": "y0", "amount": 5},
      {"txid": "t1", "from": "x1", "to": "y1", "amount": 5},
      {"txid": "t2", "from": "x2", "to": "y2", "amount": 5},
      {"txid": "t3", "from": "x3", "to": "y3", "amount": 5},
      {"txid": "t4", "from": "x4", "to": "y4", "amount": 5},
      {"txid": "t5", "from": "x5", "to": "y5", "amount": 5},
      {"txid": "t6", "from": "x6", "to": "y6", "amount": 5},
      {"txid": "t7", "from": "x7", "to": "y7", "amount": 5}]},
    "policies": [{"target": "x0", "policy": {"node": "n1"}, "trigger": "always"}],
    "adversaries": {"n1": [{"kind": "withhold_endorsement"}]},
    "target_heights": 1
  })");
  RunResult r = run_scenario(sc);
  REQUIRE(r.ok());
  CHECK(r.committed.at(0) == std::vector<TxId>{"t4"});
  CHECK(r.metrics.removals_timeout == 1);
  CHECK(r.metrics.removals_veto == 0);

  AuditReport rep = audit_trace(r.trace);
  CHECK(rep.passed());
  // The censorship check must have been exercised for real, not skipped.
  CHECK(check_named(rep, "post_gst_no_censorship").status == CheckStatus::Pass);
}

TEST_CASE("crashed proposer costs exactly one extra round at its height") {
  auto sc = sc_of(R"({
    "cluster": {"nodes": ["n0", "n1", "n2", "n3"], "f": 1},
    "workload": {"kind": "conflict_free", "tx_count": 16, "batch": 4},
    "adversaries": {"n3": [{"kind": "crash", "at": 0}]},
    "target_heights": 4
  })");
  RunResult r = run_scenario(sc);
  REQUIRE(r.ok());
  CHECK(r.metrics.rounds_per_height.at(1) == 3); // h0..h2: live proposers
  CHECK(r.metrics.rounds_per_height.at(2) == 1); // h3: n3 silent, round 1 recovers
  AuditReport rep = audit_trace(r.trace);
  CHECK(rep.passed());
}

TEST_CASE("eov mode aborts every conflicting sibling in a block") {
  auto sc = sc_of(R"({
    "mode": "eov",
    "cluster": {"nodes": ["n0", "n1", "n2", "n3"], "f": 1},
    "workload": {"kind": "all_conflict", "tx_count": 16, "batch": 16},
    "target_heights": 1
  })");
  RunResult r = run_scenario(sc);
  REQUIRE(r.ok());
  // n0's pool has t0,t4,t8,t12 (all touching a0->a1): one survives validation.
  CHECK(r.metrics.validated_txs == 4);
  CHECK(r.metrics.committed_txs == 1);
  CHECK(r.metrics.aborted_txs == 3);
  CHECK(r.metrics.abort_rate == doctest::Approx(3.0 / 4.0));

  AuditReport rep = audit_trace(r.trace);
  CHECK(rep.passed());
  CHECK(check_named(rep, "safety_with_endorsement").status == CheckStatus::NotApplicable);
  CHECK(check_named(rep, "examined_value_removability").status == CheckStatus::NotApplicable);
  CHECK(check_named(rep, "post_gst_no_censorship").status == CheckStatus::NotApplicable);
}

TEST_CASE("aborted eov txs are requeued and commit in a later block") {
  auto sc = sc_of(R"({
    "mode": "eov",
    "cluster": {"nodes": ["n0", "n1", "n2", "n3"], "f": 1},
    "workload": {"kind": "all_conflict", "tx_count": 8, "batch": 8},
    "target_heights": 6
  })");
  RunResult r = run_scenario(sc);
  REQUIRE(r.ok());
  // Every tx moves a0->a1; one commits per occupied block until all are done.
  CHECK(r.metrics.committed_txs + r.metrics.aborted_txs >= 8);
  std::set<TxId> committed;
  for (const auto& [h, txs] : r.committed)
    for (const auto& t : txs) CHECK(committed.insert(t).second); // nothing commits twice
  CHECK(committed.size() == 8);
}

TEST_CASE("audit rejects malformed traces") {
  AuditReport rep = audit_trace("this is not json\n");
  CHECK(rep.corrupt);
  CHECK(!rep.passed());

  rep = audit_trace(R"({"i": 0, "t": 0, "node": "n0", "kind": "SEND", "p": {}})" "\n");
  CHECK(rep.corrupt);
  CHECK(rep.corrupt_reason.find("META") != std::string::npos);
  CHECK(rep.text().find("TRACE_CORRUPT") != std::string::npos);
}

TEST_CASE("audit flags index gaps and time reversals") {
  auto sc = sc_of(R"({
    "cluster": {"nodes": ["n0", "n1", "n2", "n3"], "f": 1},
    "workload": {"kind": "conflict_free", "tx_count": 4, "batch": 4}
  })");
  RunResult r = run_scenario(sc);
  REQUIRE(r.ok());
  auto lines = trace_lines(r.trace);
  REQUIRE(lines.size() > 10);

  SUBCASE("renumbered record") {
    ordered_json j = ordered_json::parse(lines[5]);
    j["i"] = 9999;
    lines[5] = j.dump();
  }
  SUBCASE("time going backwards") {
    ordered_json j = ordered_json::parse(lines.back());
    j["t"] = -1;
    lines.back() = j.dump();
  }
  SUBCASE("unknown node") {
    ordered_json j = ordered_json::parse(lines[3]);
    j["node"] = "intruder";
    lines[3] = j.dump();
  }
  std::string tampered;
  for (const auto& l : lines) tampered += l + "\n";
  AuditReport rep = audit_trace(tampered);
  CHECK(rep.corrupt);
}

TEST_CASE("audit catches a forged decision") {
  auto sc = sc_of(R"({
    "cluster": {"nodes": ["n0", "n1", "n2", "n3"], "f": 1},
    "workload": {"kind": "conflict_free", "tx_count": 4, "batch": 4}
  })");
  RunResult r = run_scenario(sc);
  REQUIRE(r.ok());
  auto lines = trace_lines(r.trace);
  // Rewrite the last DECIDE to disagree with everyone else.
  bool forged = false;
  for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
    ordered_json j = ordered_json::parse(*it);
    if (j.value("kind", "") == "DECIDE") {
      j["p"]["digest"] = std::string(64, 'f');
      j["p"]["txids"] = std::vector<std::string>{"phantom"};
      *it = j.dump();
      forged = true;
      break;
    }
  }
  REQUIRE(forged);
  std::string tampered;
  for (const auto& l : lines) tampered += l + "\n";
  AuditReport rep = audit_trace(tampered);
  CHECK(!rep.corrupt);
  CHECK(!rep.passed());
  CHECK(check_named(rep, "agreement").status == CheckStatus::Fail);
}

TEST_CASE("trace structure: meta first, sends precede their deliveries") {
  auto sc = sc_of(R"({
    "cluster": {"nodes": ["n0", "n1", "n2", "n3"], "f": 1},
    "workload": {"kind": "conflict_free", "tx_count": 4, "batch": 4}
  })");
  RunResult r = run_scenario(sc);
  REQUIRE(r.ok());
  auto lines = trace_lines(r.trace);
  ordered_json meta = ordered_json::parse(lines[0]);
  CHECK(meta["kind"] == "META");
  CHECK(meta["scenario"]["cluster"]["nodes"].size() == 4);

  std::set<uint64_t> sent;
  int delivers = 0;
  for (size_t i = 1; i < lines.size(); ++i) {
    ordered_json j = ordered_json::parse(lines[i]);
    if (j["kind"] == "SEND") sent.insert(j["p"]["mid"].get<uint64_t>());
    if (j["kind"] == "DELIVER") {
      ++delivers;
      CHECK(sent.count(j["p"]["mid"].get<uint64_t>()));
    }
  }
  CHECK(delivers > 0);
}
