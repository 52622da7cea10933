#include "policy/policy.hpp"

#include <doctest.h>

#include <random>

using namespace flextender;
using namespace flextender::policy;

namespace {

// Independent reference evaluator, deliberately written as a plain recursive
// interpreter so structural bugs in satisfied_by cannot hide.
bool ref_eval(const PolicyExpr& p, const std::set<NodeId>& s) {
  switch (p.kind) {
    case PolicyExpr::Kind::Leaf: return s.count(p.node) > 0;
    case PolicyExpr::Kind::And: {
      for (const auto& c : p.children) {
        if (!ref_eval(c, s)) return false;
      }
      return true;
    }
    case PolicyExpr::Kind::Or: {
      for (const auto& c : p.children) {
        if (ref_eval(c, s)) return true;
      }
      return false;
    }
    case PolicyExpr::Kind::Threshold: {
      int hits = 0;
      for (const auto& c : p.children) {
        if (ref_eval(c, s)) ++hits;
      }
      return hits >= p.t;
    }
  }
  return false;
}

const std::vector<NodeId> kUniverse = {"a", "b", "c", "d", "e"};

std::set<NodeId> subset_from_mask(unsigned mask) {
  std::set<NodeId> s;
  for (size_t i = 0; i < kUniverse.size(); ++i) {
    if (mask & (1u << i)) s.insert(kUniverse[i]);
  }
  return s;
}

PolicyExpr random_policy(std::mt19937_64& rng, int depth) {
  auto pick = [&](uint64_t n) { return static_cast<int>(rng() % n); };
  if (depth == 0 || pick(3) == 0) {
    return PolicyExpr::leaf(kUniverse[static_cast<size_t>(pick(kUniverse.size()))]);
  }
  int n_children = 1 + pick(3);
  std::vector<PolicyExpr> cs;
  for (int i = 0; i < n_children; ++i) cs.push_back(random_policy(rng, depth - 1));
  switch (pick(3)) {
    case 0: return PolicyExpr::all_of(std::move(cs));
    case 1: return PolicyExpr::any_of(std::move(cs));
    default: return PolicyExpr::threshold(1 + pick(static_cast<uint64_t>(n_children)), std::move(cs));
  }
}

} // namespace

TEST_CASE("satisfied_by agrees with reference evaluator on random policies") {
  std::mt19937_64 rng(20240817);
  for (int trial = 0; trial < 200; ++trial) {
    PolicyExpr p = random_policy(rng, 3);
    for (unsigned mask = 0; mask < 32; ++mask) {
      auto s = subset_from_mask(mask);
      CAPTURE(trial);
      CAPTURE(p.to_json().dump());
      REQUIRE(p.satisfied_by(s) == ref_eval(p, s));
    }
  }
}

TEST_CASE("policies are monotone") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    PolicyExpr p = random_policy(rng, 3);
    for (unsigned mask = 0; mask < 32; ++mask) {
      if (!p.satisfied_by(subset_from_mask(mask))) continue;
      for (unsigned sup = mask; sup < 32; sup = (sup + 1) | mask) {
        CHECK(p.satisfied_by(subset_from_mask(sup)));
        if (sup == 31) break;
      }
    }
  }
}

TEST_CASE("veto check equals brute-force unsatisfiability") {
  std::mt19937_64 rng(99);
  std::set<NodeId> all(kUniverse.begin(), kUniverse.end());
  for (int trial = 0; trial < 150; ++trial) {
    PolicyExpr p = random_policy(rng, 3);
    PolicyBinding b{"acct", p, Trigger{}};
    std::vector<const PolicyBinding*> applicable = {&b};
    for (unsigned omask = 0; omask < 32; ++omask) {
      auto opposers = subset_from_mask(omask);
      // Brute force: can ANY subset of the non-opposers satisfy the policy?
      bool satisfiable = false;
      for (unsigned wmask = 0; wmask < 32 && !satisfiable; ++wmask) {
        auto w = subset_from_mask(wmask);
        bool disjoint = true;
        for (const auto& n : w) {
          if (opposers.count(n)) disjoint = false;
        }
        if (disjoint && p.satisfied_by(w)) satisfiable = true;
      }
      PolicyExpr unused_default = PolicyExpr::leaf("a");
      CAPTURE(p.to_json().dump());
      REQUIRE(is_vetoed(applicable, unused_default, opposers, all) == !satisfiable);
    }
  }
}

TEST_CASE("policy json round trip") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    PolicyExpr p = random_policy(rng, 3);
    PolicyExpr back = PolicyExpr::from_json(p.to_json());
    for (unsigned mask = 0; mask < 32; ++mask) {
      auto s = subset_from_mask(mask);
      CHECK(p.satisfied_by(s) == back.satisfied_by(s));
    }
    CHECK(p.leaves() == back.leaves());
  }
  CHECK_THROWS_AS(PolicyExpr::from_json(nlohmann::json{{"nonsense", 1}}), Error);
  CHECK_THROWS_AS(PolicyExpr::from_json(nlohmann::json::array()), Error);
}

TEST_CASE("policy validation rejects bad thresholds and unknown nodes") {
  ClusterConfig c{{"a", "b", "c", "d"}, 1};
  auto t = PolicyExpr::threshold(2, {PolicyExpr::leaf("a"), PolicyExpr::leaf("b")});
  CHECK_NOTHROW(t.validate(c));
  auto t0 = PolicyExpr::threshold(0, {PolicyExpr::leaf("a")});
  CHECK_THROWS_AS(t0.validate(c), Error);
  auto t3 = PolicyExpr::threshold(3, {PolicyExpr::leaf("a"), PolicyExpr::leaf("b")});
  CHECK_THROWS_AS(t3.validate(c), Error);
  auto unknown = PolicyExpr::leaf("zz");
  CHECK_THROWS_AS(unknown.validate(c), Error);
}

TEST_CASE("default policies") {
  ClusterConfig c{{"a", "b", "c", "d"}, 1};
  auto q = default_quorum_policy(c);
  CHECK_FALSE(q.satisfied_by({"a", "b"}));
  CHECK(q.satisfied_by({"a", "b", "c"}));
  auto f1 = default_f_plus_1_policy(c);
  CHECK_FALSE(f1.satisfied_by({"a"}));
  CHECK(f1.satisfied_by({"a", "d"}));
}

TEST_CASE("triggers") {
  Transaction tx{"t1", "alice", "bob", 100, ""};
  ExecResult ok{"t1", {}, {}, ExecStatus::Ok};
  ExecResult bad{"t1", {}, {}, ExecStatus::Insufficient};

  Trigger always{TriggerKind::Always, 0, ""};
  CHECK(always.fires(tx, nullptr));
  CHECK_FALSE(always.result_dependent());

  Trigger amount{TriggerKind::AmountExceeds, 100, ""};
  CHECK_FALSE(amount.fires(tx, nullptr)); // strictly greater than the limit
  Transaction big = tx;
  big.amount = 101;
  CHECK(amount.fires(big, nullptr));

  Trigger insufficient{TriggerKind::Custom, 0, "insufficient"};
  CHECK(insufficient.result_dependent());
  CHECK_FALSE(insufficient.fires(tx, &ok));
  CHECK(insufficient.fires(tx, &bad));
  CHECK_FALSE(insufficient.fires(tx, nullptr)); // no result, cannot fire

  Trigger any{TriggerKind::Custom, 0, "any"};
  CHECK(any.fires(tx, &ok));

  CHECK(custom_predicate_known("insufficient"));
  CHECK(custom_predicate_known("any"));
  CHECK_FALSE(custom_predicate_known("no-such-predicate"));

  // JSON round trip
  for (const Trigger& t : {always, amount, insufficient}) {
    Trigger back = Trigger::from_json(t.to_json());
    CHECK(back.kind == t.kind);
    CHECK(back.limit == t.limit);
    CHECK(back.custom_id == t.custom_id);
  }
}

TEST_CASE("applicable policies filter by account and trigger") {
  std::vector<PolicyBinding> bindings;
  bindings.push_back({"alice", PolicyExpr::leaf("a"), Trigger{TriggerKind::Always, 0, ""}});
  bindings.push_back({"bob", PolicyExpr::leaf("b"), Trigger{TriggerKind::AmountExceeds, 50, ""}});
  bindings.push_back({"carol", PolicyExpr::leaf("c"), Trigger{TriggerKind::Always, 0, ""}});

  Transaction tx{"t1", "alice", "bob", 10, ""};
  auto app = applicable_policies(tx, nullptr, bindings);
  REQUIRE(app.size() == 1); // bob's binding does not fire at amount 10
  CHECK(app[0]->target == "alice");

  tx.amount = 60;
  app = applicable_policies(tx, nullptr, bindings);
  CHECK(app.size() == 2);

  Transaction other{"t2", "dave", "erin", 10, ""};
  CHECK(applicable_policies(other, nullptr, bindings).empty());
}

TEST_CASE("proper endorsement uses default when nothing applies") {
  ClusterConfig c{{"a", "b", "c", "d"}, 1};
  auto dflt = default_quorum_policy(c);
  std::vector<const PolicyBinding*> none;
  CHECK_FALSE(is_properly_endorsed(none, dflt, {"a", "b"}));
  CHECK(is_properly_endorsed(none, dflt, {"a", "b", "d"}));

  PolicyBinding b1{"x", PolicyExpr::leaf("a"), Trigger{}};
  PolicyBinding b2{"x", PolicyExpr::leaf("b"), Trigger{}};
  std::vector<const PolicyBinding*> both = {&b1, &b2};
  CHECK_FALSE(is_properly_endorsed(both, dflt, {"a"}));
  CHECK(is_properly_endorsed(both, dflt, {"a", "b"})); // every applicable policy
}

TEST_CASE("aggregation dedupes identical and punishes differing duplicates") {
  std::vector<TxId> value = {"t1", "t2"};

  SUBCASE("identical duplicates collapse") {
    std::vector<PrevoteViews> msgs = {
        {"a", {{"t1", View::Endorse}}},
        {"a", {{"t1", View::Endorse}}},
    };
    auto rec = aggregate_prevotes(msgs, value);
    CHECK(rec.endorse_all.empty());
    CHECK(rec.endorsers_of("t1") == std::set<NodeId>{"a"});
    CHECK(rec.endorsers_of("t2").empty());
  }

  SUBCASE("differing duplicates endorse everything") {
    std::vector<PrevoteViews> msgs = {
        {"a", {{"t1", View::OpposeAlways}}},
        {"a", {{"t2", View::OpposeResult}}},
    };
    auto rec = aggregate_prevotes(msgs, value);
    CHECK(rec.endorse_all == std::set<NodeId>{"a"});
    CHECK(rec.endorsers_of("t1") == std::set<NodeId>{"a"});
    CHECK(rec.endorsers_of("t2") == std::set<NodeId>{"a"});
    // The equivocator no longer counts as an opposer anywhere.
    CHECK(rec.opposers_of("t1").empty());
    CHECK(rec.always_opposers_of("t1").empty());
    CHECK(rec.participants() == std::set<NodeId>{"a"});
  }

  SUBCASE("views on txs outside the value are ignored") {
    std::vector<PrevoteViews> msgs = {{"a", {{"tX", View::Endorse}}}};
    auto rec = aggregate_prevotes(msgs, value);
    CHECK(rec.endorsers_of("tX").empty());
    CHECK(rec.by_tx.find("tX") == rec.by_tx.end());
  }

  SUBCASE("third distinct message from one sender is not aggregated") {
    std::vector<PrevoteViews> msgs = {
        {"a", {{"t1", View::Endorse}}},
        {"a", {{"t1", View::OpposeAlways}}},
        {"a", {{"t2", View::OpposeAlways}}},
    };
    auto rec = aggregate_prevotes(msgs, value);
    // Two differing messages already prove equivocation; the third is noise
    // and must not flip the outcome back.
    CHECK(rec.endorse_all == std::set<NodeId>{"a"});
    CHECK(rec.endorsers_of("t2") == std::set<NodeId>{"a"});
  }
}

TEST_CASE("conditional opposition resets when a preceding tx is removed") {
  std::vector<TxId> order = {"t1", "t2", "t3"};
  EndorsementRecord rec;
  rec.by_tx["t1"]["a"] = View::Endorse;
  rec.by_tx["t2"]["b"] = View::OpposeResult;
  rec.by_tx["t2"]["c"] = View::OpposeAlways;
  rec.by_tx["t3"]["b"] = View::OpposeResult;

  SUBCASE("removing the first tx resets later conditional views") {
    invalidate_conditional_views(rec, order, {"t1"});
    CHECK(rec.by_tx["t2"].count("b") == 0);       // conditional view dropped
    CHECK(rec.by_tx["t2"].at("c") == View::OpposeAlways); // standing opposition kept
    CHECK(rec.by_tx["t3"].count("b") == 0);
  }

  SUBCASE("removing the last tx leaves earlier views alone") {
    invalidate_conditional_views(rec, order, {"t3"});
    CHECK(rec.by_tx["t2"].at("b") == View::OpposeResult);
    CHECK(rec.by_tx["t1"].at("a") == View::Endorse);
  }
}

TEST_CASE("mutual exclusion classification") {
  ClusterConfig c{{"a", "b", "c", "d"}, 1};
  std::set<NodeId> all = {"a", "b", "c", "d"};
  auto dflt = default_quorum_policy(c);

  Value v;
  v.txs = {{"t1", "x1", "y1", 1, ""}, {"t2", "x2", "y2", 1, ""}};
  v.exec_results = {{"t1", {}, {}, ExecStatus::Ok}, {"t2", {}, {}, ExecStatus::Ok}};

  std::vector<PolicyBinding> bindings;
  bindings.push_back({"x1", PolicyExpr::leaf("a"), Trigger{}});
  bindings.push_back({"x2", PolicyExpr::leaf("b"), Trigger{}});

  SUBCASE("endorsed beats vetoed") {
    EndorsementRecord rec;
    rec.by_tx["t1"]["a"] = View::Endorse; // satisfies policy AND is its only leaf
    auto st = mutual_exclusion_check(rec, v, bindings, dflt, all);
    CHECK(st.at("t1") == TxStatus::Endorsed);
    CHECK(st.at("t2") == TxStatus::Pending);
  }

  SUBCASE("sole endorser opposing forever vetoes") {
    EndorsementRecord rec;
    rec.by_tx["t1"]["a"] = View::OpposeAlways;
    auto st = mutual_exclusion_check(rec, v, bindings, dflt, all);
    CHECK(st.at("t1") == TxStatus::Vetoed);
  }

  SUBCASE("conditional opposition from the sole endorser also vetoes for now") {
    EndorsementRecord rec;
    rec.by_tx["t1"]["a"] = View::OpposeResult;
    auto st = mutual_exclusion_check(rec, v, bindings, dflt, all);
    CHECK(st.at("t1") == TxStatus::Vetoed);
  }
}
