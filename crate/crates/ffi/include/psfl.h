#ifndef PSFL_H
#define PSFL_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum PsflStatus {
  PSFL_STATUS_OK = 0,
  PSFL_STATUS_NULL_POINTER = 1,
  PSFL_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Invalid configuration, scenario or input file.
   */
  PSFL_STATUS_CONFIG = 3,
  /**
   * Failure while simulating or writing outputs.
   */
  PSFL_STATUS_RUNTIME = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  PSFL_STATUS_PANIC = 5,
} PsflStatus;

/**
 * Experiment configuration.
 */
typedef struct PsflConfig PsflConfig;

/**
 * Cluster plan of one round.
 */
typedef struct PsflPlan PsflPlan;

/**
 * A simulation in progress together with the metrics of its finished rounds.
 */
typedef struct PsflSimulation PsflSimulation;

/**
 * Metrics of one finished round.
 */
typedef struct PsflRoundMetrics {
  /**
   * 1-based round index.
   */
  uint64_t round;
  double sim_time;
  double intra_waiting;
  double inter_waiting;
  uint64_t traffic_bytes;
  double test_accuracy;
} PsflRoundMetrics;

/**
 * Summary of one cluster of a plan.
 */
typedef struct PsflClusterInfo {
  size_t top_worker;
  /**
   * Number of bottom workers; 0 for a worker training alone.
   */
  size_t num_members;
  uint32_t tau;
} PsflClusterInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *psfl_version(void);

/**
 * Length in bytes of the calling thread's last error message, excluding the
 * terminating nul; 0 when the last call succeeded.
 */
size_t psfl_last_error_length(void);

/**
 * Copies the last error message, truncated to fit and nul-terminated, into
 * `buf` of `len` bytes. Returns the number of bytes written without the nul.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t psfl_last_error_message(char *buf, size_t len);

/**
 * Frees a string returned by this library.
 *
 * # Safety
 * `s` must be null or a string obtained from this library, freed once.
 */
void psfl_string_free(char *s);

/**
 * Parses a JSON configuration.
 *
 * # Safety
 * `json` must be a valid nul-terminated string; `out` must be writable.
 */
enum PsflStatus psfl_config_from_json(const char *json, struct PsflConfig **out);

/**
 * Named scenario: `iid` or `noniid-p<level>`.
 *
 * # Safety
 * `name` must be a valid nul-terminated string; `out` must be writable.
 */
enum PsflStatus psfl_config_preset(const char *name, struct PsflConfig **out);

/**
 * Serializes the configuration; free the result with [`psfl_string_free`].
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum PsflStatus psfl_config_to_json(const struct PsflConfig *cfg, char **out);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
enum PsflStatus psfl_config_set_seed(struct PsflConfig *cfg, uint64_t seed);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
enum PsflStatus psfl_config_set_rounds(struct PsflConfig *cfg, uint64_t rounds);

/**
 * Strategy by name: `parallel-sfl`, `random-cluster`, `fixed-frequency`
 * or `single-cluster-sfl`.
 *
 * # Safety
 * `cfg` must be a live handle; `name` a valid nul-terminated string.
 */
enum PsflStatus psfl_config_set_strategy(struct PsflConfig *cfg, const char *name);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void psfl_config_free(struct PsflConfig *cfg);

/**
 * Builds the dataset, partition and fleet of a configuration. The
 * configuration handle stays owned by the caller.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum PsflStatus psfl_simulation_new(const struct PsflConfig *cfg, struct PsflSimulation **out);

/**
 * Runs one round. `metrics` receives its metrics; when `plan` is not null
 * it receives a new plan handle to free with [`psfl_plan_free`].
 *
 * # Safety
 * `sim` must be a live handle; `metrics` writable; `plan` null or writable.
 */
enum PsflStatus psfl_simulation_step(struct PsflSimulation *sim,
                                     struct PsflRoundMetrics *metrics,
                                     struct PsflPlan **plan);

/**
 * Number of rounds finished so far.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
uint64_t psfl_simulation_rounds_completed(const struct PsflSimulation *sim);

/**
 * Writes the metrics of the finished rounds as CSV.
 *
 * # Safety
 * `sim` must be a live handle; `path` a valid nul-terminated string.
 */
enum PsflStatus psfl_simulation_write_metrics_csv(const struct PsflSimulation *sim,
                                                  const char *path);

/**
 * # Safety
 * `sim` must be null or a handle not yet freed.
 */
void psfl_simulation_free(struct PsflSimulation *sim);

/**
 * Number of clusters in the plan; 0 for a null handle.
 *
 * # Safety
 * `plan` must be null or a live handle.
 */
size_t psfl_plan_cluster_count(const struct PsflPlan *plan);

/**
 * # Safety
 * `plan` must be a live handle; `out` writable.
 */
enum PsflStatus psfl_plan_cluster(const struct PsflPlan *plan,
                                  size_t index,
                                  struct PsflClusterInfo *out);

/**
 * Copies up to `len` member ids of cluster `index` into `buf` and stores
 * the full member count in `count`.
 *
 * # Safety
 * `plan` must be a live handle; `buf` null or `len` writable slots;
 * `count` writable.
 */
enum PsflStatus psfl_plan_members(const struct PsflPlan *plan,
                                  size_t index,
                                  size_t *buf,
                                  size_t len,
                                  size_t *count);

/**
 * Serializes the plan; free the result with [`psfl_string_free`].
 *
 * # Safety
 * `plan` must be a live handle; `out` writable.
 */
enum PsflStatus psfl_plan_to_json(const struct PsflPlan *plan, char **out);

/**
 * # Safety
 * `plan` must be null or a handle not yet freed.
 */
void psfl_plan_free(struct PsflPlan *plan);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PSFL_H */
