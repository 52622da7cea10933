#pragma once

#include "core/types.hpp"
#include "sim/netsim.hpp"

#include <nlohmann/json.hpp>

#include <string>

namespace flextender::harness {

/// Append-only JSONL log of one run. The first line is a META record carrying
/// the effective scenario; every following line is {"i", "t", "node", "kind",
/// "p"} where "i" is a global insertion index (the deterministic total order
/// auditors rely on when events share a tick) and "p" the kind-specific
/// payload. Field order is fixed, so identical runs produce identical bytes.
class TraceWriter {
public:
  void meta(const nlohmann::ordered_json& scenario_json);
  void add(sim::Tick t, const NodeId& node, const char* kind, nlohmann::ordered_json payload);

  const std::string& str() const { return buf_; }
  uint64_t records() const { return next_index_; }

private:
  std::string buf_;
  uint64_t next_index_ = 0;
};

} // namespace flextender::harness
