#pragma once

#include "core/types.hpp"
#include "sim/netsim.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <string>

namespace flextender::harness {

/// Run-level counters. Throughput is simulated: committed txs per 10^6 ticks
/// of protocol time (the drain phase after the last target decision does not
/// count). rounds_per_height maps "rounds consumed" (decide round + 1, taken
/// from the first decision of each height) to how many heights used that many.
struct Metrics {
  std::string mode;
  uint64_t seed = 0;
  bool reached_target = false;
  int64_t heights = 0;
  int64_t committed_txs = 0;
  sim::Tick elapsed = 0;
  double throughput = 0.0;
  std::map<int64_t, int64_t> rounds_per_height;
  int64_t removals_veto = 0;
  int64_t removals_timeout = 0;
  int64_t aborted_txs = 0;    // eov
  int64_t validated_txs = 0;  // eov: committed + aborted
  double abort_rate = 0.0;    // eov: aborted / validated
  int64_t recompute_total = 0; // tx executions performed by correct nodes; the
                               // dependency-limited re-execution optimization
                               // shows up as a drop in this counter

  nlohmann::ordered_json to_json() const;
};

} // namespace flextender::harness
