#include "harness/trace.hpp"

namespace flextender::harness {

using nlohmann::ordered_json;

void TraceWriter::meta(const ordered_json& scenario_json) {
  ordered_json line{{"kind", "META"}, {"v", 1}, {"scenario", scenario_json}};
  buf_ += line.dump();
  buf_ += '\n';
}

void TraceWriter::add(sim::Tick t, const NodeId& node, const char* kind, ordered_json payload) {
  ordered_json line{{"i", next_index_++}, {"t", t}, {"node", node}, {"kind", kind}};
  line["p"] = std::move(payload);
  buf_ += line.dump();
  buf_ += '\n';
}

} // namespace flextender::harness
