#pragma once

#include "harness/metrics.hpp"
#include "harness/scenario.hpp"

#include <optional>
#include <string>

namespace flextender::harness {

struct RunResult {
  bool reached_target = false;
  std::string failure;             // liveness detail when the target was missed
  std::string invariant_violation; // non-empty if agreement broke mid-run
  std::string trace;               // full JSONL including the META line
  Metrics metrics;
  std::map<int64_t, std::vector<TxId>> committed; // per height, first decision
  sim::Tick end_time = 0;                          // includes the drain phase

  bool ok() const { return reached_target && invariant_violation.empty(); }
};

/// Execute one scenario to completion: wire nodes, adversary controllers and
/// the network scheduler together, pump events until every correct node
/// reaches target_heights (or time runs out), then drain outstanding traffic
/// so eventual-delivery holds on the emitted trace.
RunResult run_scenario(Scenario sc, std::optional<uint64_t> seed_override = std::nullopt);

} // namespace flextender::harness
