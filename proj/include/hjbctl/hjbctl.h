/* C interface to the hjbctl library.
 *
 * Every function returning hjbctl_status reports failure through the status
 * code; hjbctl_last_error() then describes the failure. The message is
 * thread-local and stays valid until the next failing call on the same
 * thread. Handles are opaque and must be released with their _free function.
 */
#ifndef HJBCTL_HJBCTL_H_
#define HJBCTL_HJBCTL_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define HJBCTL_API __declspec(dllexport)
#else
#define HJBCTL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum hjbctl_status {
  HJBCTL_OK = 0,
  HJBCTL_ERR_CONFIG = 1,   /* invalid configuration or input files */
  HJBCTL_ERR_RUNTIME = 2,  /* numerical or I/O failure while running */
  HJBCTL_ERR_ARGUMENT = 3  /* null pointer or out-of-range argument */
} hjbctl_status;

typedef struct hjbctl_config hjbctl_config;
typedef struct hjbctl_system hjbctl_system;

typedef struct hjbctl_run_summary {
  uint64_t pde_solves;   /* training solves (validation excluded) */
  double final_mean_J;   /* mean validation objective at the end */
  size_t validations;    /* number of validation measurements */
  double wall_seconds;
} hjbctl_run_summary;

HJBCTL_API const char* hjbctl_version(void);
HJBCTL_API const char* hjbctl_last_error(void);

/* 0 restores the default (HJBCTL_WORKERS or the hardware thread count). */
HJBCTL_API void hjbctl_set_workers(size_t n);
HJBCTL_API size_t hjbctl_workers(void);
/* Process-wide count of counted forward solves. */
HJBCTL_API uint64_t hjbctl_pde_solves(void);

/* Configs. NULL or "" json gives the fully defaulted config. */
HJBCTL_API hjbctl_status hjbctl_config_from_json(const char* json, hjbctl_config** out);
HJBCTL_API hjbctl_status hjbctl_config_from_file(const char* path, hjbctl_config** out);
/* Dotted key, JSON value ("rl.lr0", "1e-4"); the config is unchanged on error. */
HJBCTL_API hjbctl_status hjbctl_config_set(hjbctl_config* config, const char* key,
                                           const char* value);
/* Fully defaulted JSON; release with hjbctl_string_free. */
HJBCTL_API hjbctl_status hjbctl_config_to_json(const hjbctl_config* config, char** out);
HJBCTL_API void hjbctl_config_free(hjbctl_config* config);
HJBCTL_API void hjbctl_string_free(char* s);

/* Trains (or, for method "baseline", solves) and writes the run directory.
 * baseline_cache and summary may be NULL. */
HJBCTL_API hjbctl_status hjbctl_run(const hjbctl_config* config, const char* out_dir,
                                    const char* baseline_cache, hjbctl_run_summary* summary);

/* Solves-to-threshold table over run directories. Thresholds are absolute
 * objectives; relative entries multiply the baseline mean, which needs
 * baseline_csv (a cache file or a baseline run's baseline.csv). Writes to
 * out_csv when non-NULL and returns the text in *text when non-NULL. */
HJBCTL_API hjbctl_status hjbctl_compare(const char* const* run_dirs, size_t n_runs,
                                        const double* thresholds, size_t n_thresholds,
                                        const double* relative, size_t n_relative,
                                        const char* baseline_csv, const char* out_csv,
                                        char** text);

HJBCTL_API hjbctl_status hjbctl_evaluate(const char* run_dir, const char* out_csv,
                                         double* mean_J);

/* Writes <prefix>.csv and <prefix>.grid for validation problem `problem`. */
HJBCTL_API hjbctl_status hjbctl_dump_episode(const char* run_dir, size_t problem,
                                             const char* prefix, int zero_control,
                                             double* objective);

/* One assembled problem instance; v must be 0 for the horizontal setup. */
HJBCTL_API hjbctl_status hjbctl_system_create(const hjbctl_config* config, double x1, double x2,
                                              double v, hjbctl_system** out);
HJBCTL_API size_t hjbctl_system_nodes(const hjbctl_system* sys);
HJBCTL_API size_t hjbctl_system_steps(const hjbctl_system* sys);
/* Objective of an open-loop sequence (u1_0, u2_0, u1_1, ...) of length
 * 2 * steps; grad (same length) may be NULL. */
HJBCTL_API hjbctl_status hjbctl_system_objective(const hjbctl_system* sys, const double* controls,
                                                 size_t n, double* J, double* grad);
HJBCTL_API void hjbctl_system_free(hjbctl_system* sys);

#ifdef __cplusplus
}
#endif

#endif /* HJBCTL_HJBCTL_H_ */
