#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace flextender::harness {

enum class CheckStatus : uint8_t { Pass, Fail, NotApplicable };

std::string check_status_name(CheckStatus s);

struct CheckResult {
  std::string name;
  CheckStatus status = CheckStatus::Pass;
  std::vector<std::string> details; // failure descriptions, or the n/a reason

  void fail(std::string what) {
    status = CheckStatus::Fail;
    details.push_back(std::move(what));
  }
};

struct AuditReport {
  bool corrupt = false;
  std::string corrupt_reason;
  std::vector<CheckResult> checks;

  bool passed() const;
  nlohmann::ordered_json to_json() const;
  std::string text() const;
};

/// Re-derive the run's correctness claims from the trace alone (plus the
/// scenario embedded in its META line): agreement, endorsement safety of
/// every commit, the examined-value removability invariant, the post-GST
/// no-censorship invariant, remove-only value evolution, the post-GST hop
/// latency bound, and gossip eventual delivery.
AuditReport audit_trace(const std::string& jsonl);
AuditReport audit_file(const std::string& path);

} // namespace flextender::harness
