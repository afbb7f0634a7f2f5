#ifndef LORLAB_H
#define LORLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  LORLAB_CAUSAL_CLASS_TIMELIKE = 0,
  LORLAB_CAUSAL_CLASS_LIGHTLIKE = 1,
  LORLAB_CAUSAL_CLASS_SPACELIKE = 2,
  LORLAB_CAUSAL_CLASS_PAST_CAUSAL = 3,
  LORLAB_CAUSAL_CLASS_ZERO = 4,
} LorlabCausalClass;

typedef enum {
  LORLAB_EXT_KIND_NEG_INF = 0,
  LORLAB_EXT_KIND_FINITE = 1,
  LORLAB_EXT_KIND_POS_INF = 2,
} LorlabExtKind;

typedef enum {
  LORLAB_STATUS_OK = 0,
  LORLAB_STATUS_USAGE = 1,
  LORLAB_STATUS_DOMAIN = 2,
  LORLAB_STATUS_INTERNAL = 3,
  LORLAB_STATUS_CONFIG = 4,
  LORLAB_STATUS_IO = 5,
  LORLAB_STATUS_NULL_POINTER = 6,
  LORLAB_STATUS_PANIC = 7,
} LorlabStatus;

/**
 * Model chart built from a config.
 */
typedef struct LorlabChart LorlabChart;

/**
 * Parsed experiment config.
 */
typedef struct LorlabConfig LorlabConfig;

/**
 * Causal graph on a grid over a chart.
 */
typedef struct LorlabGraph LorlabGraph;

/**
 * Extended real; `value` is meaningful only when `kind` is `Finite`.
 */
typedef struct {
  LorlabExtKind kind;
  double value;
} LorlabExtReal;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *lorlab_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`) and returns the full length
 * including the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t lorlab_last_error(char *buf, size_t len);

/**
 * Parses config text (`key = value` lines).
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
LorlabStatus lorlab_config_parse(const char *text_ptr, LorlabConfig **out_config);

/**
 * # Safety
 * `config` must come from `lorlab_config_parse` or be null.
 */
void lorlab_config_free(LorlabConfig *config);

/**
 * Builds the model chart named in a config; `grid.lo`/`grid.hi` set the box.
 *
 * # Safety
 * `config` must be a live handle and `out` a valid pointer.
 */
LorlabStatus lorlab_chart_from_config(const LorlabConfig *config, LorlabChart **out_chart);

/**
 * # Safety
 * `chart` must come from `lorlab_chart_from_config` or be null.
 */
void lorlab_chart_free(LorlabChart *chart);

/**
 * Chart dimension, or 0 for a null handle.
 *
 * # Safety
 * `chart` must be a live handle or null.
 */
size_t lorlab_chart_dim(const LorlabChart *chart);

/**
 * Causal class of `v` at `x`.
 *
 * # Safety
 * `x` and `v` must point to `n` doubles; `out` must be valid.
 */
LorlabStatus lorlab_classify(const LorlabChart *chart,
                             const double *x,
                             const double *v,
                             size_t n,
                             LorlabCausalClass *out_class);

/**
 * Finsler norm of `v` at `x`: `sqrt(g(v,v))` on the future cone, `-∞` off it.
 *
 * # Safety
 * `x` and `v` must point to `n` doubles; `out` must be valid.
 */
LorlabStatus lorlab_f_norm(const LorlabChart *chart,
                           const double *x,
                           const double *v,
                           size_t n,
                           LorlabExtReal *out_norm);

/**
 * Hessian of the Hamiltonian at covector `w` for exponent `p`: the
 * row-major `n*n` matrix and its ascending eigenvalues.
 *
 * # Safety
 * `x` and `w` must point to `n` doubles, `out_matrix` to `n*n` and
 * `out_eigenvalues` to `n` writable doubles.
 */
LorlabStatus lorlab_hamiltonian_hessian(const LorlabChart *chart,
                                        const double *x,
                                        const double *w,
                                        size_t n,
                                        double p,
                                        double *out_matrix,
                                        double *out_eigenvalues);

/**
 * Euclidean residual of the Legendre round trip at timelike `v`.
 *
 * # Safety
 * `x` and `v` must point to `n` doubles; `out` must be valid.
 */
LorlabStatus lorlab_legendre_residual(const LorlabChart *chart,
                                      const double *x,
                                      const double *v,
                                      size_t n,
                                      double p,
                                      double *out_residual);

/**
 * Ricci tensor (row-major `n*n`) and scalar curvature at `x`, from the
 * closed-form metric derivatives when the model has them and from
 * Richardson-extrapolated differences otherwise.
 *
 * # Safety
 * `x` must point to `n` doubles, `out_ricci` to `n*n` writable doubles and
 * `out_scalar` must be valid.
 */
LorlabStatus lorlab_curvature(const LorlabChart *chart,
                              const double *x,
                              size_t n,
                              double *out_ricci,
                              double *out_scalar);

/**
 * Causal graph on a `shape` grid over `[lo, hi]` with stencil `radius`.
 *
 * # Safety
 * `shape`, `lo` and `hi` must point to `n` entries; `out` must be valid.
 */
LorlabStatus lorlab_graph_new(const LorlabChart *chart,
                              const size_t *shape,
                              const double *lo,
                              const double *hi,
                              size_t n,
                              size_t radius,
                              LorlabGraph **out_graph);

/**
 * # Safety
 * `graph` must come from `lorlab_graph_new` or be null.
 */
void lorlab_graph_free(LorlabGraph *graph);

/**
 * Time separation `ℓ(x, y)` from the grid longest path refined with
 * q-action exponent `q`. `out_grid` may be null.
 *
 * # Safety
 * `x` and `y` must point to `n` doubles; `out` must be valid.
 */
LorlabStatus lorlab_time_separation(const LorlabGraph *graph,
                                    const double *x,
                                    const double *y,
                                    size_t n,
                                    double q,
                                    LorlabExtReal *out_value,
                                    LorlabExtReal *out_grid);

/**
 * Runs an experiment and returns its JSON report (free it with
 * `lorlab_string_free`) and the exit code the command-line tool would use.
 * `experiment` may be null to use the one named in the config. A run that
 * completes with failing checks still returns `Ok`.
 *
 * # Safety
 * `config` must be a live handle, `experiment` null or NUL-terminated, and
 * both out pointers valid.
 */
LorlabStatus lorlab_run_experiment(const LorlabConfig *config,
                                   const char *experiment,
                                   char **out_report,
                                   int32_t *out_exit_code);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void lorlab_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LORLAB_H */
