/* C interface to the flextender consensus simulator.
 *
 * All functions are thread-compatible: distinct handles may be used from
 * distinct threads, but a single handle must not be shared without external
 * locking. Strings returned as `const char*` are owned by the handle they
 * came from and stay valid until that handle is freed. On failure,
 * constructors return NULL and ft_last_error() (thread-local) explains why.
 */
#ifndef FLEXTENDER_H
#define FLEXTENDER_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ft_status {
  FT_OK = 0,
  FT_ERR_CONFIG = 1,    /* malformed or semantically invalid scenario */
  FT_ERR_IO = 2,        /* file could not be read or written */
  FT_ERR_LIVENESS = 3,  /* simulation ended before every node hit the height target */
  FT_ERR_INVARIANT = 4, /* correct nodes disagreed during the run */
  FT_ERR_ARGUMENT = 5,  /* NULL handle or out-of-range parameter */
  FT_ERR_INTERNAL = 6
} ft_status;

typedef struct ft_scenario ft_scenario;
typedef struct ft_run_result ft_run_result;
typedef struct ft_audit_report ft_audit_report;

/* Library version, e.g. "1.0.0". */
const char* ft_version(void);

/* Message for the last failed call on this thread ("" if none yet). */
const char* ft_last_error(void);

/* --- scenarios ----------------------------------------------------------- */

/* Parse a scenario from JSON text. `origin` labels the source in error
 * messages (a filename, "<stdin>", ...); may be NULL. */
ft_scenario* ft_scenario_parse(const char* json_text, const char* origin);
ft_scenario* ft_scenario_load_file(const char* path);

ft_status ft_scenario_set_seed(ft_scenario* sc, uint64_t seed);
/* mode is "flextender" or "eov". */
ft_status ft_scenario_set_mode(ft_scenario* sc, const char* mode);
ft_status ft_scenario_set_target_heights(ft_scenario* sc, int64_t heights);

/* Canonical JSON of the effective scenario (defaults filled in). */
const char* ft_scenario_json(ft_scenario* sc);
void ft_scenario_free(ft_scenario* sc);

/* --- runs ---------------------------------------------------------------- */

/* Execute the scenario to completion. A liveness miss still yields a result
 * (with its partial trace); NULL is returned only for invalid arguments or
 * internal failures. */
ft_run_result* ft_run(const ft_scenario* sc);

/* FT_OK, FT_ERR_LIVENESS or FT_ERR_INVARIANT. */
ft_status ft_result_status(const ft_run_result* r);
/* Human-readable failure detail; "" on a clean run. */
const char* ft_result_failure(const ft_run_result* r);
/* Full JSONL trace including the leading META line. */
const char* ft_result_trace(const ft_run_result* r);
/* Run counters (throughput, rounds per height, removals, ...) as JSON. */
const char* ft_result_metrics_json(const ft_run_result* r);
void ft_result_free(ft_run_result* r);

/* --- audits -------------------------------------------------------------- */

/* Re-check a finished run's trace: agreement, endorsement safety, the
 * removability and no-censorship invariants, remove-only evolution, delivery
 * bounds. Works on traces produced by any ft_run-compatible writer. */
ft_audit_report* ft_audit_trace(const char* jsonl);
ft_audit_report* ft_audit_file(const char* path);

int ft_audit_passed(const ft_audit_report* rep);  /* 1 = no check failed */
int ft_audit_corrupt(const ft_audit_report* rep); /* 1 = trace unreadable */
const char* ft_audit_json(const ft_audit_report* rep);
const char* ft_audit_text(const ft_audit_report* rep);
void ft_audit_free(ft_audit_report* rep);

#ifdef __cplusplus
}
#endif

#endif /* FLEXTENDER_H */
