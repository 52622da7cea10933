#include "flextender.h"

#include "harness/audit.hpp"
#include "harness/runner.hpp"
#include "harness/scenario.hpp"

#include <string>

using namespace flextender;

struct ft_scenario {
  harness::Scenario sc;
  std::string json_cache;
};

struct ft_run_result {
  ft_status status = FT_OK;
  harness::RunResult r;
  std::string metrics_json;
};

struct ft_audit_report {
  harness::AuditReport rep;
  std::string json_cache;
  std::string text_cache;
};

namespace {

thread_local std::string g_last_error;

ft_status status_of(const Error& e) {
  switch (e.code()) {
  case ErrorCode::Config:
  case ErrorCode::InvalidArgument: return FT_ERR_CONFIG;
  case ErrorCode::Io: return FT_ERR_IO;
  case ErrorCode::MaxTimeExceeded: return FT_ERR_LIVENESS;
  default: return FT_ERR_INTERNAL;
  }
}

ft_status set_error(ft_status st, const std::string& what) {
  g_last_error = what;
  return st;
}

template <typename Fn>
auto guarded(Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    set_error(status_of(e), e.what());
  } catch (const std::exception& e) {
    set_error(FT_ERR_INTERNAL, e.what());
  }
  return nullptr;
}

} // namespace

extern "C" {

const char* ft_version(void) { return "1.0.0"; }

const char* ft_last_error(void) { return g_last_error.c_str(); }

ft_scenario* ft_scenario_parse(const char* json_text, const char* origin) {
  if (!json_text) {
    set_error(FT_ERR_ARGUMENT, "json_text is NULL");
    return nullptr;
  }
  return guarded([&]() -> ft_scenario* {
    return new ft_scenario{
        harness::Scenario::parse(json_text, origin ? origin : "scenario"), {}};
  });
}

ft_scenario* ft_scenario_load_file(const char* path) {
  if (!path) {
    set_error(FT_ERR_ARGUMENT, "path is NULL");
    return nullptr;
  }
  return guarded([&]() -> ft_scenario* {
    return new ft_scenario{harness::Scenario::load_file(path), {}};
  });
}

ft_status ft_scenario_set_seed(ft_scenario* sc, uint64_t seed) {
  if (!sc) return set_error(FT_ERR_ARGUMENT, "scenario is NULL");
  sc->sc.sim.seed = seed;
  return FT_OK;
}

ft_status ft_scenario_set_mode(ft_scenario* sc, const char* mode) {
  if (!sc || !mode) return set_error(FT_ERR_ARGUMENT, "scenario or mode is NULL");
  try {
    sc->sc.mode = harness::mode_from_name(mode);
  } catch (const Error& e) {
    return set_error(FT_ERR_CONFIG, e.what());
  }
  return FT_OK;
}

ft_status ft_scenario_set_target_heights(ft_scenario* sc, int64_t heights) {
  if (!sc) return set_error(FT_ERR_ARGUMENT, "scenario is NULL");
  if (heights < 1) return set_error(FT_ERR_ARGUMENT, "target_heights must be >= 1");
  sc->sc.target_heights = heights;
  return FT_OK;
}

const char* ft_scenario_json(ft_scenario* sc) {
  if (!sc) {
    set_error(FT_ERR_ARGUMENT, "scenario is NULL");
    return nullptr;
  }
  sc->json_cache = sc->sc.to_json().dump(2);
  return sc->json_cache.c_str();
}

void ft_scenario_free(ft_scenario* sc) { delete sc; }

ft_run_result* ft_run(const ft_scenario* sc) {
  if (!sc) {
    set_error(FT_ERR_ARGUMENT, "scenario is NULL");
    return nullptr;
  }
  return guarded([&]() -> ft_run_result* {
    auto* out = new ft_run_result;
    out->r = harness::run_scenario(sc->sc);
    if (!out->r.invariant_violation.empty())
      out->status = FT_ERR_INVARIANT;
    else if (!out->r.reached_target)
      out->status = FT_ERR_LIVENESS;
    out->metrics_json = out->r.metrics.to_json().dump(2);
    return out;
  });
}

ft_status ft_result_status(const ft_run_result* r) {
  return r ? r->status : FT_ERR_ARGUMENT;
}

const char* ft_result_failure(const ft_run_result* r) {
  if (!r) return "";
  return r->status == FT_ERR_INVARIANT ? r->r.invariant_violation.c_str()
                                       : r->r.failure.c_str();
}

const char* ft_result_trace(const ft_run_result* r) { return r ? r->r.trace.c_str() : ""; }

const char* ft_result_metrics_json(const ft_run_result* r) {
  return r ? r->metrics_json.c_str() : "";
}

void ft_result_free(ft_run_result* r) { delete r; }

ft_audit_report* ft_audit_trace(const char* jsonl) {
  if (!jsonl) {
    set_error(FT_ERR_ARGUMENT, "jsonl is NULL");
    return nullptr;
  }
  return guarded([&]() -> ft_audit_report* {
    return new ft_audit_report{harness::audit_trace(jsonl), {}, {}};
  });
}

ft_audit_report* ft_audit_file(const char* path) {
  if (!path) {
    set_error(FT_ERR_ARGUMENT, "path is NULL");
    return nullptr;
  }
  return guarded([&]() -> ft_audit_report* {
    return new ft_audit_report{harness::audit_file(path), {}, {}};
  });
}

int ft_audit_passed(const ft_audit_report* rep) { return rep && rep->rep.passed() ? 1 : 0; }

int ft_audit_corrupt(const ft_audit_report* rep) { return rep && rep->rep.corrupt ? 1 : 0; }

const char* ft_audit_json(const ft_audit_report* rep) {
  if (!rep) return "";
  auto* mut = const_cast<ft_audit_report*>(rep);
  mut->json_cache = rep->rep.to_json().dump(2);
  return mut->json_cache.c_str();
}

const char* ft_audit_text(const ft_audit_report* rep) {
  if (!rep) return "";
  auto* mut = const_cast<ft_audit_report*>(rep);
  mut->text_cache = rep->rep.text();
  return mut->text_cache.c_str();
}

void ft_audit_free(ft_audit_report* rep) { delete rep; }

} // extern "C"
