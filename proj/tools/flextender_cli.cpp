// Command-line front end, written against the public C API only.
//
// Exit codes:
//   0  success (run reached its height target / audit fully green)
//   1  bad invocation, unreadable input, invalid scenario, or corrupt trace
//   2  liveness failure: the run ended before every node hit the target
//   3  a consensus property was violated (run) or an audit check failed
#include <flextender.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

namespace {

using nlohmann::json;

constexpr int kExitBadInput = 1;
constexpr int kExitLiveness = 2;
constexpr int kExitViolation = 3;

struct ScenarioDeleter {
  void operator()(ft_scenario* p) const { ft_scenario_free(p); }
};
struct ResultDeleter {
  void operator()(ft_run_result* p) const { ft_result_free(p); }
};
struct AuditDeleter {
  void operator()(ft_audit_report* p) const { ft_audit_free(p); }
};
using ScenarioPtr = std::unique_ptr<ft_scenario, ScenarioDeleter>;
using ResultPtr = std::unique_ptr<ft_run_result, ResultDeleter>;
using AuditPtr = std::unique_ptr<ft_audit_report, AuditDeleter>;

int fail_input(const std::string& what) {
  std::cerr << "error: " << what << "\n";
  return kExitBadInput;
}

bool write_file(const std::string& path, const char* content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) return false;
  out << content;
  return out.good();
}

ScenarioPtr load_scenario(const std::string& path, const std::string& mode,
                          bool has_seed, uint64_t seed, int64_t target_heights) {
  ScenarioPtr sc(ft_scenario_load_file(path.c_str()));
  if (!sc) return nullptr;
  if (!mode.empty() && ft_scenario_set_mode(sc.get(), mode.c_str()) != FT_OK) return nullptr;
  if (has_seed && ft_scenario_set_seed(sc.get(), seed) != FT_OK) return nullptr;
  if (target_heights > 0 &&
      ft_scenario_set_target_heights(sc.get(), target_heights) != FT_OK)
    return nullptr;
  return sc;
}

int run_exit_code(ft_status st) {
  switch (st) {
  case FT_OK: return 0;
  case FT_ERR_LIVENESS: return kExitLiveness;
  case FT_ERR_INVARIANT: return kExitViolation;
  default: return kExitBadInput;
  }
}

int cmd_run(const std::string& scenario_path, const std::string& mode, bool has_seed,
            uint64_t seed, int64_t target_heights, const std::string& trace_path,
            const std::string& metrics_path, bool quiet) {
  ScenarioPtr sc = load_scenario(scenario_path, mode, has_seed, seed, target_heights);
  if (!sc) return fail_input(ft_last_error());
  ResultPtr res(ft_run(sc.get()));
  if (!res) return fail_input(ft_last_error());

  // Outputs are written even for failed runs; the partial trace is the
  // natural starting point of any post-mortem.
  if (!trace_path.empty() && !write_file(trace_path, ft_result_trace(res.get())))
    return fail_input("cannot write trace to " + trace_path);
  if (!metrics_path.empty() && !write_file(metrics_path, ft_result_metrics_json(res.get())))
    return fail_input("cannot write metrics to " + metrics_path);
  if (!quiet && metrics_path.empty())
    std::cout << ft_result_metrics_json(res.get()) << "\n";

  ft_status st = ft_result_status(res.get());
  if (st != FT_OK) std::cerr << "error: " << ft_result_failure(res.get()) << "\n";
  return run_exit_code(st);
}

int cmd_audit(const std::string& trace_path, bool as_json) {
  AuditPtr rep(ft_audit_file(trace_path.c_str()));
  if (!rep) return fail_input(ft_last_error());
  std::cout << (as_json ? ft_audit_json(rep.get()) : ft_audit_text(rep.get()));
  if (as_json) std::cout << "\n";
  if (ft_audit_corrupt(rep.get())) return kExitBadInput;
  return ft_audit_passed(rep.get()) ? 0 : kExitViolation;
}

struct ModeStats {
  int runs = 0;
  double throughput_sum = 0.0;
  double abort_rate_sum = 0.0;
  int64_t committed = 0;
  int64_t removals = 0;
  double rounds_sum = 0.0; // average rounds per height, summed over runs
};

int compare_one(ft_scenario* sc, const char* mode, uint64_t seed, ModeStats& agg) {
  if (ft_scenario_set_mode(sc, mode) != FT_OK) return fail_input(ft_last_error());
  if (ft_scenario_set_seed(sc, seed) != FT_OK) return fail_input(ft_last_error());
  ResultPtr res(ft_run(sc));
  if (!res) return fail_input(ft_last_error());
  ft_status st = ft_result_status(res.get());
  if (st != FT_OK) {
    std::cerr << "error: " << mode << " run with seed " << seed << ": "
              << ft_result_failure(res.get()) << "\n";
    return run_exit_code(st);
  }
  json m = json::parse(ft_result_metrics_json(res.get()));
  agg.runs += 1;
  agg.throughput_sum += m["throughput_per_1e6_ticks"].get<double>();
  agg.abort_rate_sum += m["abort_rate"].get<double>();
  agg.committed += m["committed_txs"].get<int64_t>();
  agg.removals += m["removals"]["veto"].get<int64_t>() + m["removals"]["timeout"].get<int64_t>();
  double heights = 0, rounds = 0;
  for (const auto& [k, v] : m["rounds_per_height"].items()) {
    heights += v.get<double>();
    rounds += std::stod(k) * v.get<double>();
  }
  agg.rounds_sum += heights > 0 ? rounds / heights : 0.0;
  return 0;
}

int cmd_compare(const std::string& scenario_path, int seeds, uint64_t base_seed) {
  if (seeds < 1) return fail_input("--seeds must be >= 1");
  ScenarioPtr sc(ft_scenario_load_file(scenario_path.c_str()));
  if (!sc) return fail_input(ft_last_error());

  ModeStats flex, eov;
  for (int i = 0; i < seeds; ++i) {
    if (int rc = compare_one(sc.get(), "flextender", base_seed + i, flex)) return rc;
    if (int rc = compare_one(sc.get(), "eov", base_seed + i, eov)) return rc;
  }
  auto mean = [](double sum, int n) { return n ? sum / n : 0.0; };
  json out{
      {"scenario", scenario_path},
      {"seeds", seeds},
      {"flextender",
       {{"mean_throughput_per_1e6_ticks", mean(flex.throughput_sum, flex.runs)},
        {"committed_txs", flex.committed},
        {"removals", flex.removals},
        {"mean_rounds_per_height", mean(flex.rounds_sum, flex.runs)}}},
      {"eov",
       {{"mean_throughput_per_1e6_ticks", mean(eov.throughput_sum, eov.runs)},
        {"committed_txs", eov.committed},
        {"mean_abort_rate", mean(eov.abort_rate_sum, eov.runs)},
        {"mean_rounds_per_height", mean(eov.rounds_sum, eov.runs)}}},
  };
  double f = mean(flex.throughput_sum, flex.runs);
  double e = mean(eov.throughput_sum, eov.runs);
  out["throughput_ratio_flextender_over_eov"] = e > 0 ? f / e : 0.0;
  std::cout << out.dump(2) << "\n";
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string("flextender consensus simulator (library ") + ft_version() + ")"};
  app.require_subcommand(1);

  std::string scenario_path, mode, trace_path, metrics_path;
  uint64_t seed = 0;
  bool has_seed = false;
  int64_t target_heights = 0;
  bool quiet = false;

  auto* run = app.add_subcommand("run", "execute one scenario and report metrics");
  run->add_option("--scenario", scenario_path, "scenario JSON file")->required();
  run->add_option("--seed", seed, "override the scenario seed")->each([&](const std::string&) {
    has_seed = true;
  });
  run->add_option("--mode", mode, "override the mode: flextender or eov");
  run->add_option("--target-heights", target_heights, "override the height target");
  run->add_option("--trace", trace_path, "write the JSONL trace here");
  run->add_option("--metrics", metrics_path, "write metrics JSON here instead of stdout");
  run->add_flag("--quiet", quiet, "suppress metrics on stdout");

  std::string audit_trace_path;
  bool audit_json = false;
  auto* audit = app.add_subcommand("audit", "re-check the invariants of a recorded trace");
  audit->add_option("--trace", audit_trace_path, "JSONL trace file")->required();
  audit->add_flag("--json", audit_json, "emit the report as JSON");

  std::string cmp_path;
  int cmp_seeds = 5;
  uint64_t cmp_base_seed = 1;
  auto* cmp = app.add_subcommand("compare",
                                 "run the same scenario in both modes over several seeds");
  cmp->add_option("--scenario", cmp_path, "scenario JSON file")->required();
  cmp->add_option("--seeds", cmp_seeds, "number of seeds per mode (default 5)");
  cmp->add_option("--base-seed", cmp_base_seed, "first seed (default 1)");

  CLI11_PARSE(app, argc, argv);

  if (run->parsed())
    return cmd_run(scenario_path, mode, has_seed, seed, target_heights, trace_path,
                   metrics_path, quiet);
  if (audit->parsed()) return cmd_audit(audit_trace_path, audit_json);
  return cmd_compare(cmp_path, cmp_seeds, cmp_base_seed);
}
