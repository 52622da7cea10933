#include "harness/metrics.hpp"

namespace flextender::harness {

using nlohmann::ordered_json;

ordered_json Metrics::to_json() const {
  ordered_json j;
  j["mode"] = mode;
  j["seed"] = seed;
  j["reached_target"] = reached_target;
  j["heights"] = heights;
  j["committed_txs"] = committed_txs;
  j["elapsed_ticks"] = elapsed;
  j["throughput_per_1e6_ticks"] = throughput;
  ordered_json rph;
  for (const auto& [rounds, count] : rounds_per_height) rph[std::to_string(rounds)] = count;
  j["rounds_per_height"] = std::move(rph);
  j["removals"] = ordered_json{{"veto", removals_veto}, {"timeout", removals_timeout}};
  j["aborted_txs"] = aborted_txs;
  j["validated_txs"] = validated_txs;
  j["abort_rate"] = abort_rate;
  j["recompute_total"] = recompute_total;
  return j;
}

} // namespace flextender::harness
