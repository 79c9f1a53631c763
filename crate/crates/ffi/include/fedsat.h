#ifndef FEDSAT_H
#define FEDSAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FedsatStatus {
  FEDSAT_STATUS_OK = 0,
  FEDSAT_STATUS_NULL_POINTER = 1,
  FEDSAT_STATUS_INVALID_ARGUMENT = 2,
  FEDSAT_STATUS_IO = 3,
  FEDSAT_STATUS_FORMAT = 4,
  FEDSAT_STATUS_SHAPE_MISMATCH = 5,
  FEDSAT_STATUS_NUMERIC = 6,
  FEDSAT_STATUS_PANIC = 7,
} FedsatStatus;

// Opaque model handle.
typedef struct FedsatModel FedsatModel;

// Opaque handle to a finished simulation run.
typedef struct FedsatRun FedsatRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Valid until the
// next call into the library on this thread.
const char *fedsat_last_error_message(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void fedsat_string_free(char *s);

// Static library version string.
const char *fedsat_version(void);

// Glorot-initialised MLP. Activation codes: 0 ELU, 1 ReLU, 2 tanh.
//
// # Safety
// `layer_sizes` must point to `num_sizes` values; `out` must be writable.
enum FedsatStatus fedsat_model_init(const size_t *layer_sizes,
                                    size_t num_sizes,
                                    uint32_t activation,
                                    uint64_t seed,
                                    struct FedsatModel **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum FedsatStatus fedsat_model_load(const char *path, struct FedsatModel **out);

// # Safety
// `model` must be a live handle; `path` a NUL-terminated string.
enum FedsatStatus fedsat_model_save(const struct FedsatModel *model, const char *path);

// Number of weight layers.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum FedsatStatus fedsat_model_num_layers(const struct FedsatModel *model, size_t *out);

// Predicted class per row of a row-major `rows x cols` matrix.
//
// # Safety
// `features` must hold `rows * cols` values and `out_labels` `rows` slots.
enum FedsatStatus fedsat_model_predict(const struct FedsatModel *model,
                                       const double *features,
                                       size_t rows,
                                       size_t cols,
                                       size_t *out_labels);

// # Safety
// `model` must come from this library; NULL is ignored.
void fedsat_model_free(struct FedsatModel *model);

// Runs a full simulation described by a JSON run config. Relative dataset
// paths resolve against the working directory.
//
// # Safety
// `config_json` must be a NUL-terminated string; `out` must be writable.
enum FedsatStatus fedsat_run_from_json(const char *config_json, struct FedsatRun **out);

// # Safety
// `run` must be a live handle and `out` writable.
enum FedsatStatus fedsat_run_num_rounds(const struct FedsatRun *run, size_t *out);

// Global test accuracy after `round`.
//
// # Safety
// `run` must be a live handle and `out` writable.
enum FedsatStatus fedsat_run_accuracy(const struct FedsatRun *run, size_t round, double *out);

// Metrics CSV text. Free with [`fedsat_string_free`].
//
// # Safety
// `run` must be a live handle and `out` writable.
enum FedsatStatus fedsat_run_metrics_csv(const struct FedsatRun *run, char **out);

// Copy of the best-accuracy global model as a new handle.
//
// # Safety
// `run` must be a live handle and `out` writable.
enum FedsatStatus fedsat_run_best_model(const struct FedsatRun *run, struct FedsatModel **out);

// # Safety
// `run` must come from this library; NULL is ignored.
void fedsat_run_free(struct FedsatRun *run);

// Statistical weight computation over worker class counts.
//
// `stats_json` maps client id to that client's worker reports, each
// `{"predicted": [...], "true_positive": [...], "target": [...],
// "worker_id": w, "client_id": k}`. `config_json` may be NULL for the
// default aggregation settings. The result is the priority report as JSON.
//
// # Safety
// Strings must be NUL-terminated; `out` must be writable.
enum FedsatStatus fedsat_statistical_weights_json(const char *stats_json,
                                                  const char *config_json,
                                                  char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDSAT_H */
