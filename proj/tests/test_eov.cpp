#include "eov/eovsim.hpp"

#include <doctest.h>

#include <random>

using namespace flextender;
using namespace flextender::eov;

namespace {

Value make_block(const exec::WorldState& w, std::vector<Transaction> txs, int64_t height) {
  Value v;
  v.txs = std::move(txs);
  v.exec_results = pre_execute(w, v.txs);
  v.origin_height = height;
  return v;
}

} // namespace

TEST_CASE("pre-execution is snapshot-isolated") {
  exec::WorldState w;
  w.balances = {{"a", 10}, {"b", 0}, {"c", 0}};
  // Both txs spend from the same account; each sees the full balance.
  auto res = pre_execute(w, {{"t0", "a", "b", 10, ""}, {"t1", "a", "c", 10, ""}});
  REQUIRE(res.size() == 2);
  CHECK(res[0].status == ExecStatus::Ok);
  CHECK(res[1].status == ExecStatus::Ok); // blind to t0's spend
  CHECK(res[0].write_set.at("a") == 0);
  CHECK(res[1].write_set.at("a") == 0);
}

TEST_CASE("validation aborts on read-write conflicts with preceding txs") {
  exec::WorldState w;
  w.balances = {{"a", 10}, {"b", 0}, {"c", 0}};
  auto block = make_block(w, {{"t0", "a", "b", 5, ""}, {"t1", "a", "c", 5, ""}}, 0);
  auto out = validate_and_apply(w, block, 0);
  CHECK(out.committed == std::vector<TxId>{"t0"});
  CHECK(out.aborted == std::vector<TxId>{"t1"}); // t1 read account a, which t0 wrote
  CHECK(out.new_state.balance("a") == 5);
  CHECK(out.new_state.balance("b") == 5);
  CHECK(out.new_state.balance("c") == 0);
  CHECK(out.new_state.version == 0);
}

TEST_CASE("disjoint transactions all commit and match serial execution") {
  std::mt19937_64 rng(2025);
  for (int trial = 0; trial < 100; ++trial) {
    exec::WorldState w;
    int n = 8;
    for (int i = 0; i < n * 2; ++i) {
      w.balances["p" + std::to_string(i)] = static_cast<int64_t>(rng() % 400);
    }
    // Pairwise-disjoint transfers.
    std::vector<Transaction> txs;
    for (int i = 0; i < n; ++i) {
      txs.push_back({"t" + std::to_string(i), "p" + std::to_string(2 * i),
                     "p" + std::to_string(2 * i + 1), static_cast<int64_t>(rng() % 100), ""});
    }
    auto block = make_block(w, txs, 0);
    auto out = validate_and_apply(w, block, 0);
    REQUIRE(out.aborted.empty());
    REQUIRE(out.committed.size() == txs.size());

    // Committed effects must equal a serial execution of the same block.
    auto serial = exec::execute_block(w, txs);
    auto applied = exec::apply_committed(w, serial.results, 0);
    CHECK(out.new_state.balances == applied.balances);
  }
}

TEST_CASE("all-conflict chain keeps exactly the first tx") {
  exec::WorldState w;
  int k = 16;
  w.balances["hot"] = 1'000'000;
  for (int i = 0; i < k; ++i) w.balances["s" + std::to_string(i)] = 0;
  std::vector<Transaction> txs;
  for (int i = 0; i < k; ++i) {
    txs.push_back({"t" + std::to_string(i), "hot", "s" + std::to_string(i), 10, ""});
  }
  auto block = make_block(w, txs, 0);
  auto out = validate_and_apply(w, block, 0);
  CHECK(out.committed == std::vector<TxId>{"t0"});
  CHECK(out.aborted.size() == static_cast<size_t>(k - 1));
}

TEST_CASE("validation outcome is equivalent to serially executing survivors") {
  std::mt19937_64 rng(777);
  for (int trial = 0; trial < 200; ++trial) {
    exec::WorldState w;
    for (int i = 0; i < 5; ++i) {
      w.balances["acct" + std::to_string(i)] = static_cast<int64_t>(rng() % 300);
    }
    std::vector<Transaction> txs;
    int n_txs = 1 + static_cast<int>(rng() % 10);
    for (int i = 0; i < n_txs; ++i) {
      Transaction tx;
      tx.txid = "t" + std::to_string(i);
      tx.from = "acct" + std::to_string(rng() % 5);
      do {
        tx.to = "acct" + std::to_string(rng() % 5);
      } while (tx.to == tx.from);
      tx.amount = static_cast<int64_t>(rng() % 150);
      txs.push_back(tx);
    }
    auto block = make_block(w, txs, 0);
    auto out = validate_and_apply(w, block, 0);

    // Survivors committed their snapshot write sets; because survivors are
    // pairwise non-conflicting, this equals serially executing just them.
    std::vector<Transaction> survivors;
    for (const auto& tx : txs) {
      if (std::find(out.committed.begin(), out.committed.end(), tx.txid) != out.committed.end()) {
        survivors.push_back(tx);
      }
    }
    auto serial = exec::execute_block(w, survivors);
    auto applied = exec::apply_committed(w, serial.results, 0);
    CAPTURE(trial);
    REQUIRE(out.new_state.balances == applied.balances);
  }
}

TEST_CASE("version sequencing is enforced") {
  exec::WorldState w;
  w.balances = {{"a", 10}, {"b", 0}};
  auto block = make_block(w, {{"t0", "a", "b", 1, ""}}, 3);
  CHECK_THROWS_AS(validate_and_apply(w, block, 3), Error); // state is at version -1
  auto mismatched = make_block(w, {{"t0", "a", "b", 1, ""}}, 0);
  mismatched.exec_results.pop_back();
  CHECK_THROWS_AS(validate_and_apply(w, mismatched, 0), Error);
}
