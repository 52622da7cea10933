#include "harness/scenario.hpp"
#include "harness/trace.hpp"
#include "harness/workload.hpp"

#include <doctest.h>

#include <set>
#include <sstream>
#include <string>

using namespace flextender;
using namespace flextender::harness;
using nlohmann::json;

namespace {

std::string minimal(const std::string& extra = "") {
  std::string s = R"({"cluster": {"nodes": ["n0", "n1", "n2", "n3"], "f": 1})";
  if (!extra.empty()) s += ", " + extra;
  return s + "}";
}

std::string error_of(const std::string& text) {
  try {
    Scenario::parse(text, "sc");
    return "";
  } catch (const Error& e) {
    return e.what();
  }
}

} // namespace

TEST_CASE("minimal scenario parses with defaults") {
  Scenario sc = Scenario::parse(minimal(), "sc");
  CHECK(sc.mode == Mode::Flextender);
  CHECK(sc.cluster.n() == 4);
  CHECK(sc.sim.delta == 100);
  CHECK(sc.sim.seed == 1);
  CHECK(sc.timers.prevote_base == 2 * sc.sim.delta);
  CHECK(sc.target_heights == 1);
  CHECK(sc.workload.kind == WorkloadKind::ConflictFree);
  CHECK(sc.hash_only_reproposal);
  // The implicit default policy is any-quorum.
  CHECK(sc.default_policy.kind == policy::PolicyExpr::Kind::Threshold);
}

TEST_CASE("parse errors carry a path to the offending field") {
  CHECK(error_of("{") == "sc: [json.exception.parse_error.101] parse error at line 1, column 2: "
                         "syntax error while parsing object key - unexpected end of input; "
                         "expected string literal");
  CHECK(error_of(minimal(R"("modus": "x")")).find("sc/modus") != std::string::npos);
  CHECK(error_of(minimal(R"("mode": "both")")).find("sc/mode") != std::string::npos);
  CHECK(error_of(minimal(R"("sim": {"delta": -4})")).find("delta must be") != std::string::npos);
  CHECK(error_of(minimal(R"("target_heights": 0)")).find("target_heights") != std::string::npos);
  CHECK(error_of(R"({"cluster": {"nodes": ["a"], "f": 0}})").find("at least 2") !=
        std::string::npos);
  CHECK(error_of(R"({"cluster": {"nodes": ["a","b","c"], "f": 1}})").find("3f+1") !=
        std::string::npos);
}

TEST_CASE("scenario-level cross checks") {
  // More adversaries than f.
  std::string two_byz = minimal(
      R"("adversaries": {"n0": [{"kind": "silent"}], "n1": [{"kind": "silent"}]})");
  CHECK(error_of(two_byz).find("adversar") != std::string::npos);
  // Partition naming an unknown node.
  CHECK(error_of(minimal(R"("sim": {"gst": 10, "partitions": [{"node": "nx", "from": 0, "until": 5}]})"))
            .find("nx") != std::string::npos);
  // Verdicts for an unknown node.
  CHECK(error_of(minimal(R"("verdicts": {"nx": {"tx0": "endorse"}})")).find("nx") !=
        std::string::npos);
  // Policy naming an endorser outside the cluster.
  CHECK(error_of(minimal(
            R"("policies": [{"target": "acct", "policy": {"node": "nx"}, "trigger": "always"}])"))
            .find("nx") != std::string::npos);
}

TEST_CASE("default policy spellings resolve") {
  Scenario q = Scenario::parse(minimal(R"("default_policy": "quorum")"), "sc");
  Scenario f1 = Scenario::parse(minimal(R"("default_policy": "f_plus_1")"), "sc");
  CHECK(q.default_policy.t == quorum_size(q.cluster));
  CHECK(f1.default_policy.t == removal_threshold(f1.cluster));
  Scenario leaf = Scenario::parse(minimal(R"("default_policy": {"node": "n2"})"), "sc");
  CHECK(leaf.default_policy.kind == policy::PolicyExpr::Kind::Leaf);
}

TEST_CASE("to_json round-trips byte-for-byte") {
  std::string text = minimal(
      R"("mode": "eov", "workload": {"kind": "zipf", "tx_count": 10, "accounts": 8, "skew": 1.25},
         "adversaries": {"n2": [{"kind": "crash", "at": 500}]},
         "verdicts": {"n0": {"tx1": "oppose_always"}},
         "target_heights": 3, "eov": {"sign_cost_per_tx": 2})");
  Scenario sc = Scenario::parse(text, "sc");
  std::string dumped = sc.to_json().dump();
  Scenario again = Scenario::parse(dumped, "sc2");
  CHECK(again.to_json().dump() == dumped);
  CHECK(again.mode == Mode::Eov);
  CHECK(again.eov_sign_cost_per_tx == 2);
  CHECK(again.adversaries.at("n2").at(0).crash_at == 500);
  CHECK(again.verdicts.at("n0").at("tx1") == policy::View::OpposeAlways);
}

TEST_CASE("scripted workload takes the tx list verbatim") {
  std::string text = minimal(
      R"("workload": {"kind": "scripted", "txs": [
           {"txid": "a", "from": "x", "to": "y", "amount": 7},
           {"txid": "b", "from": "y", "to": "z", "amount": 3}]})");
  Scenario sc = Scenario::parse(text, "sc");
  CHECK(sc.workload.tx_count == 2);
  GeneratedWorkload wl = generate_workload(sc.workload, sc.cluster, 9);
  REQUIRE(wl.all.size() == 2);
  CHECK(wl.all[0].txid == "a");
  CHECK(wl.all[1].amount == 3);
  // Round-robin assignment over the cluster.
  CHECK(wl.per_node.at("n0").size() == 1);
  CHECK(wl.per_node.at("n1").size() == 1);
  CHECK(wl.per_node.at("n2").empty());
}

TEST_CASE("workload generation is a pure function of spec and seed") {
  Scenario sc = Scenario::parse(
      minimal(R"("workload": {"kind": "zipf", "tx_count": 64, "accounts": 32, "skew": 1.0})"),
      "sc");
  GeneratedWorkload a = generate_workload(sc.workload, sc.cluster, 42);
  GeneratedWorkload b = generate_workload(sc.workload, sc.cluster, 42);
  GeneratedWorkload c = generate_workload(sc.workload, sc.cluster, 43);
  CHECK(a.all == b.all);
  CHECK(a.all != c.all);
}

TEST_CASE("workload kinds have the advertised conflict structure") {
  ClusterConfig cl{{"n0", "n1", "n2", "n3"}, 1};
  WorkloadSpec cf{WorkloadKind::ConflictFree};
  cf.tx_count = 20;
  auto free_txs = generate_workload(cf, cl, 7).all;
  std::set<AccountId> seen;
  for (const auto& tx : free_txs) {
    CHECK(!seen.count(tx.from));
    CHECK(!seen.count(tx.to));
    seen.insert(tx.from);
    seen.insert(tx.to);
  }

  WorkloadSpec ac{WorkloadKind::AllConflict};
  ac.tx_count = 20;
  for (const auto& tx : generate_workload(ac, cl, 7).all) {
    CHECK(tx.from == "a0");
    CHECK(tx.to == "a1");
  }

  WorkloadSpec hot{WorkloadKind::Zipf};
  hot.tx_count = 400;
  hot.accounts = 50;
  hot.skew = 1.4;
  WorkloadSpec mild = hot;
  mild.skew = 0.4;
  double hot_share = top_account_share(generate_workload(hot, cl, 7).all);
  double mild_share = top_account_share(generate_workload(mild, cl, 7).all);
  CHECK(hot_share > mild_share);
}

TEST_CASE("trace writer emits meta first and a strict global order") {
  TraceWriter tw;
  tw.meta({{"hello", 1}});
  tw.add(5, "n0", "SEND", {{"mid", 1}});
  tw.add(5, "n1", "DELIVER", {{"mid", 1}});
  tw.add(9, "n1", "PHASE", {{"event", "lock"}});
  std::istringstream in(tw.str());
  std::string line;
  std::vector<json> rec;
  while (std::getline(in, line)) rec.push_back(json::parse(line));
  REQUIRE(rec.size() == 4);
  CHECK(rec[0]["kind"] == "META");
  CHECK(rec[0]["v"] == 1);
  CHECK(rec[0]["scenario"]["hello"] == 1);
  for (size_t i = 1; i < rec.size(); ++i) CHECK(rec[i]["i"] == i - 1);
  CHECK(rec[1]["t"] == 5);
  CHECK(rec[2]["node"] == "n1");
  CHECK(rec[3]["p"]["event"] == "lock");
}
