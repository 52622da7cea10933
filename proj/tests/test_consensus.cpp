#include "consensus/node.hpp"

#include <doctest.h>

#include <memory>

using namespace flextender;
using namespace flextender::consensus;

namespace {

const std::vector<NodeId> kIds = {"n0", "n1", "n2", "n3"};

ClusterConfig cluster4() { return ClusterConfig{kIds, 1}; }

exec::WorldState rich_genesis() {
  exec::WorldState w;
  for (const char* a : {"a", "b", "c", "d", "x", "y"}) w.balances[a] = 1000;
  return w;
}

NodeConfig base_config(const NodeId& id) {
  NodeConfig cfg;
  cfg.id = id;
  cfg.cluster = cluster4();
  cfg.default_policy = policy::default_quorum_policy(cfg.cluster);
  cfg.timers = TimerConfig::defaults(100);
  return cfg;
}

// Synchronous in-process router: every send is delivered to every other node
// in FIFO order; timers are held until the test fires them.
struct MiniNet {
  std::map<NodeId, std::unique_ptr<Node>> nodes;
  std::deque<std::pair<NodeId, Message>> wire;
  std::vector<std::tuple<NodeId, TimerKind, int64_t, int64_t>> timers;
  std::set<NodeId> muted; // senders whose outbound traffic is dropped
  std::vector<std::pair<NodeId, NoteRec>> notes;
  std::vector<std::tuple<NodeId, int64_t, int64_t, Value>> decides; // node, h, r

  void add(NodeConfig cfg, exec::WorldState genesis) {
    NodeId id = cfg.id;
    nodes.emplace(id, std::make_unique<Node>(std::move(cfg), std::move(genesis)));
  }

  void collect(const NodeId& from, std::vector<Action> acts) {
    for (auto& a : acts) {
      switch (a.kind) {
        case Action::Kind::Send:
          if (!muted.count(from)) wire.emplace_back(from, std::move(a.msg));
          break;
        case Action::Kind::Timer:
          timers.emplace_back(from, a.timer, a.timer_height, a.timer_round);
          break;
        case Action::Kind::Decide:
          decides.emplace_back(from, a.decide_height, a.decide_round, std::move(a.decided));
          break;
        case Action::Kind::Note:
          notes.emplace_back(from, std::move(a.note));
          break;
      }
    }
  }

  void start_all() {
    for (const auto& id : kIds) {
      if (nodes.count(id)) collect(id, nodes.at(id)->start());
    }
  }

  // Zero-latency delivery makes consecutive empty heights commit in a single
  // cascade, so unconditional draining never terminates: callers that expect
  // a decision pass a stop predicate.
  void pump(const std::function<bool()>& done = nullptr, int max_msgs = 200000) {
    while (!wire.empty() && max_msgs-- > 0) {
      if (done && done()) return;
      auto [from, m] = std::move(wire.front());
      wire.pop_front();
      for (auto& [id, n] : nodes) {
        if (id != from) collect(id, n->on_message(m));
      }
    }
    REQUIRE(max_msgs > 0); // runaway message storm means a protocol bug
  }

  bool all_decided(int64_t h) const {
    for (const auto& [id, n] : nodes) {
      if (!n->decisions().count(h)) return false;
    }
    return true;
  }

  void inject(const Message& m) { wire.emplace_back(m.from, m); }

  void fire_timers(TimerKind k) {
    auto pending = std::move(timers);
    timers.clear();
    for (auto& [id, kind, h, r] : pending) {
      if (kind != k) {
        timers.emplace_back(id, kind, h, r);
        continue;
      }
      collect(id, nodes.at(id)->on_timer(kind, h, r));
    }
  }

  int count_notes(const std::string& event) const {
    int n = 0;
    for (const auto& [id, rec] : notes) {
      if (rec.event == event) ++n;
    }
    return n;
  }
};

Message craft_prevote(const NodeId& from, int64_t h, int64_t r, std::optional<Digest> d,
                      std::optional<std::map<TxId, policy::View>> views, bool con = true) {
  Message m;
  m.type = MsgType::Prevote;
  m.height = h;
  m.round = r;
  m.from = from;
  m.digest = std::move(d);
  m.endorsements = std::move(views);
  m.con = con;
  return m;
}

} // namespace

TEST_CASE("happy path commits in round zero") {
  MiniNet net;
  for (const auto& id : kIds) net.add(base_config(id), rich_genesis());
  net.nodes.at("n0")->push_tx({"t0", "a", "b", 5, ""});
  net.nodes.at("n0")->push_tx({"t1", "c", "d", 7, ""});
  net.start_all();
  net.pump([&] { return net.all_decided(0); });

  REQUIRE(net.decides.size() >= 4);
  for (const auto& id : kIds) {
    auto& n = *net.nodes.at(id);
    REQUIRE(n.decisions().count(0) == 1);
    CHECK(n.decisions().at(0).txids() == std::vector<TxId>{"t0", "t1"});
    CHECK(n.height() >= 1);
    CHECK(n.world().balance("a") == 995);
    CHECK(n.world().balance("d") == 1007);
  }
  // Every node decided height 0 in round 0.
  for (const auto& [id, h, r, v] : net.decides) {
    if (h == 0) CHECK(r == 0);
  }
}

TEST_CASE("standing veto removes the tx via rapid removal") {
  MiniNet net;
  for (const auto& id : kIds) {
    auto cfg = base_config(id);
    cfg.bindings.push_back({"x", policy::PolicyExpr::leaf("n1"), policy::Trigger{}});
    if (id == "n1") cfg.verdicts["t0"] = policy::View::OpposeAlways;
    net.add(std::move(cfg), rich_genesis());
  }
  net.nodes.at("n0")->push_tx({"t0", "x", "y", 5, ""});
  net.nodes.at("n0")->push_tx({"t1", "c", "d", 7, ""});
  net.start_all();
  net.pump([&] { return net.all_decided(0); });

  for (const auto& id : kIds) {
    auto& n = *net.nodes.at(id);
    REQUIRE(n.decisions().count(0) == 1);
    CHECK(n.decisions().at(0).txids() == std::vector<TxId>{"t1"});
    CHECK(n.world().balance("x") == 1000); // vetoed tx never applied
  }
  // The decision lands in round 1, after one examined round.
  for (const auto& [id, h, r, v] : net.decides) {
    if (h == 0) CHECK(r == 1);
  }
  // Removal was flagged as a veto with standing (always) effect.
  bool saw_veto_note = false;
  for (const auto& [id, rec] : net.notes) {
    if (rec.event == "remove_suggest" && rec.extra.at("txid") == "t0") {
      saw_veto_note = true;
      CHECK(rec.extra.at("cause") == "veto");
      CHECK(rec.extra.at("kind") == "always");
    }
  }
  CHECK(saw_veto_note);
  CHECK(net.count_notes("ref_update") >= 3);

  // Reference checks against a participant's log: dropping the vetoed tx is
  // justified, dropping the endorsed one is not.
  auto& n2 = *net.nodes.at("n2");
  // Height 0 state is pruned after commit, so rebuild expectations at the API
  // level instead: the decided value must not contain t0.
  CHECK(n2.decisions().at(0).txids() == std::vector<TxId>{"t1"});
}

TEST_CASE("withheld endorsement falls back to timeout removal") {
  MiniNet net;
  for (const auto& id : {"n0", "n1", "n2"}) {
    auto cfg = base_config(id);
    cfg.bindings.push_back({"x", policy::PolicyExpr::leaf("n3"), policy::Trigger{}});
    net.add(std::move(cfg), rich_genesis());
  }
  net.nodes.at("n0")->push_tx({"t0", "x", "y", 5, ""});
  net.nodes.at("n0")->push_tx({"t1", "c", "d", 7, ""});
  net.start_all();
  net.pump();

  // The test plays the withholding endorser n3: it prevotes for the value but
  // only submits a view on t1, staying silent about t0 round after round.
  Value proposed;
  {
    auto& n0 = *net.nodes.at("n0");
    REQUIRE(n0.decisions().empty());
    // Reconstruct the proposed value: t0 then t1, with n0's world results.
  }
  // All three honest nodes are stuck at step prevote without endorsement of t0.
  for (const auto& id : {"n0", "n1", "n2"}) {
    CHECK(net.nodes.at(id)->step() == Step::Prevote);
    CHECK(net.nodes.at(id)->round() == 0);
  }

  // n3's crafted prevote (endorses only t1) keeps t0 pending, not vetoed.
  exec::WorldState w = rich_genesis();
  Value v;
  v.txs = {{"t0", "x", "y", 5, ""}, {"t1", "c", "d", 7, ""}};
  auto out = exec::execute_block(w, v.txs);
  v.exec_results = out.results;
  v.origin_height = 0;
  Digest d = value_digest(v);
  net.inject(craft_prevote("n3", 0, 0, d, std::map<TxId, policy::View>{{"t1", policy::View::Endorse}}));
  net.pump();

  // Still no progress to precommit: the quorum exists but t0 is unresolved.
  for (const auto& id : {"n0", "n1", "n2"}) CHECK(net.nodes.at(id)->step() == Step::Prevote);

  // Prevote timers were armed once a full quorum of prevotes was visible.
  net.fire_timers(TimerKind::Prevote);
  net.pump([&] { return net.all_decided(0); });

  for (const auto& id : {"n0", "n1", "n2"}) {
    auto& n = *net.nodes.at(id);
    REQUIRE(n.decisions().count(0) == 1);
    CHECK(n.decisions().at(0).txids() == std::vector<TxId>{"t1"});
  }
  bool saw_timeout_note = false;
  for (const auto& [id, rec] : net.notes) {
    if (rec.event == "remove_suggest" && rec.extra.at("txid") == "t0") {
      saw_timeout_note = true;
      CHECK(rec.extra.at("cause") == "timeout");
      CHECK(rec.extra.at("kind") == "if_first");
    }
  }
  CHECK(saw_timeout_note);
}

TEST_CASE("silent proposer forces a nil round, next round commits") {
  MiniNet net;
  for (const auto& id : kIds) net.add(base_config(id), rich_genesis());
  net.muted.insert("n0"); // round-0 proposer looks crashed to everyone else
  net.nodes.at("n0")->push_tx({"t0", "a", "b", 5, ""});
  net.nodes.at("n1")->push_tx({"t1", "c", "d", 7, ""});
  net.start_all();
  net.pump();

  net.fire_timers(TimerKind::Propose);
  net.pump();
  // Nil prevote quorum pushes everyone straight to precommit nil.
  for (const auto& id : {"n1", "n2", "n3"}) {
    CHECK(net.nodes.at(id)->step() == Step::Precommit);
  }
  net.fire_timers(TimerKind::Precommit);
  net.pump([&] { return net.all_decided(0); });

  for (const auto& id : kIds) {
    auto& n = *net.nodes.at(id);
    REQUIRE(n.decisions().count(0) == 1);
    CHECK(n.decisions().at(0).txids() == std::vector<TxId>{"t1"});
  }
  for (const auto& [id, h, r, v] : net.decides) {
    if (h == 0) CHECK(r == 1);
  }
}

TEST_CASE("requeued proposal is accepted on prior-round endorsement") {
  MiniNet net;
  auto cfg = base_config("n2");
  net.add(std::move(cfg), rich_genesis());
  auto& n2 = *net.nodes.at("n2");
  net.collect("n2", n2.start());

  exec::WorldState w = rich_genesis();
  Value v;
  v.txs = {{"t0", "a", "b", 5, ""}};
  v.exec_results = exec::execute_block(w, v.txs).results;
  v.origin_height = 0;
  Digest d = value_digest(v);

  // Round 0: proposal plus a full endorsing prevote quorum reach n2.
  Message prop;
  prop.type = MsgType::Proposal;
  prop.height = 0;
  prop.round = 0;
  prop.from = "n0";
  prop.value = v;
  net.collect("n2", n2.on_message(prop));
  std::map<TxId, policy::View> endorse = {{"t0", policy::View::Endorse}};
  for (const NodeId& sender : {"n0", "n1", "n3"}) {
    net.collect("n2", n2.on_message(craft_prevote(sender, 0, 0, d, endorse)));
  }
  CHECK(n2.locked_round() == 0);
  CHECK(n2.valid_round() == 0);
  CHECK(n2.ref_round() == 0);
  CHECK(n2.step() == Step::Precommit);

  // Round 1: n1 requeues the same value, vouching for round 0.
  Message re;
  re.type = MsgType::Proposal;
  re.height = 0;
  re.round = 1;
  re.from = "n1";
  re.value = v;
  re.vr = 0;
  re.rr = 0;
  net.collect("n2", n2.on_message(re));
  // A second distinct round-1 sender moves n2 off round 0 (f+1 rule).
  net.collect("n2", n2.on_message(craft_prevote("n3", 0, 1, d, std::nullopt)));
  CHECK(n2.round() == 1);

  // n2's own round-1 prevote must carry no views: the value rides on its
  // round-0 endorsement record.
  bool saw_prevote = false;
  for (auto& [from, m] : net.wire) {
    if (m.type == MsgType::Prevote && m.round == 1 && m.from == "n2" && m.con) {
      saw_prevote = true;
      CHECK(m.digest == std::optional<Digest>(d));
      CHECK_FALSE(m.endorsements.has_value());
    }
  }
  CHECK(saw_prevote);

  // A third bare round-1 prevote completes the quorum; n2 locks and
  // precommits cleanly, then commits on a clean precommit quorum.
  net.collect("n2", n2.on_message(craft_prevote("n0", 0, 1, d, std::nullopt)));
  CHECK(n2.locked_round() == 1);
  for (const NodeId& sender : {"n1", "n3"}) {
    Message pc;
    pc.type = MsgType::Precommit;
    pc.height = 0;
    pc.round = 1;
    pc.from = sender;
    pc.digest = d;
    net.collect("n2", n2.on_message(pc));
  }
  REQUIRE(n2.decisions().count(0) == 1);
  CHECK(n2.decisions().at(0).txids() == std::vector<TxId>{"t0"});
}

TEST_CASE("plain mode commits snapshot blocks and applies only survivors") {
  MiniNet net;
  for (const auto& id : kIds) {
    auto cfg = base_config(id);
    cfg.endorsement_enabled = false;
    net.add(std::move(cfg), rich_genesis());
  }
  // Two conflicting spends from the same account: snapshot execution lets both
  // through; serial validation at commit keeps only the first.
  net.nodes.at("n0")->push_tx({"t0", "a", "b", 600, ""});
  net.nodes.at("n0")->push_tx({"t1", "a", "c", 600, ""});
  net.start_all();
  net.pump([&] { return net.all_decided(0); });

  for (const auto& id : kIds) {
    auto& n = *net.nodes.at(id);
    REQUIRE(n.decisions().count(0) == 1);
    CHECK(n.decisions().at(0).txids() == std::vector<TxId>{"t0", "t1"});
    CHECK(n.world().balance("a") == 400); // only t0 applied
    CHECK(n.world().balance("b") == 1600);
    CHECK(n.world().balance("c") == 1000); // t1 aborted at validation
  }
  for (const auto& [id, h, r, v] : net.decides) {
    if (h == 0) CHECK(r == 0);
  }
}
