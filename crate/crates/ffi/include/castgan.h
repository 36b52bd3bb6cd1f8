#ifndef CASTGAN_H
#define CASTGAN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by every fallible function.
typedef enum CastganStatus {
  CASTGAN_STATUS_OK = 0,
  // A pointer was null or an argument was out of range.
  CASTGAN_STATUS_INVALID_ARGUMENT = 1,
  // A file could not be read or written.
  CASTGAN_STATUS_IO = 2,
  // A CSV or schema did not match expectations.
  CASTGAN_STATUS_DATA = 3,
  // A configuration value was rejected.
  CASTGAN_STATUS_CONFIG = 4,
  // A model container was corrupt or of an unsupported version.
  CASTGAN_STATUS_FORMAT = 5,
  // Shapes of inputs did not agree.
  CASTGAN_STATUS_SHAPE = 6,
  // An internal panic was caught at the boundary.
  CASTGAN_STATUS_PANIC = 7,
} CastganStatus;

// Trained model handle.
typedef struct CastganModel CastganModel;

// Table handle.
typedef struct CastganTable CastganTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *castgan_version(void);

// Message of the last failure on this thread (empty if none). The pointer
// stays valid until the next failing call on the same thread.
const char *castgan_last_error(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void castgan_string_free(char *s);

// Loads a CSV whose columns follow the schema file (TOML).
//
// # Safety
// Paths must be NUL-terminated; `out` must be writable.
enum CastganStatus castgan_table_load_csv(const char *schema_path,
                                          const char *csv_path,
                                          struct CastganTable **out);

// Writes a table as CSV with a header row.
//
// # Safety
// `table` must be a live handle; `csv_path` NUL-terminated.
enum CastganStatus castgan_table_write_csv(const struct CastganTable *table, const char *csv_path);

// Number of data rows, or 0 for a null handle.
//
// # Safety
// `table` must be null or a live handle.
size_t castgan_table_rows(const struct CastganTable *table);

// Number of columns, or 0 for a null handle.
//
// # Safety
// `table` must be null or a live handle.
size_t castgan_table_columns(const struct CastganTable *table);

// Releases a table. Null is ignored.
//
// # Safety
// `table` must come from this library and not have been freed.
void castgan_table_free(struct CastganTable *table);

// Trains a model on `table`. `config_json` holds training overrides as a
// JSON object (null or "{}" keeps every default); `epsilon` is the
// auxiliary-label perturbation fraction; `threads` of 0 means one.
//
// # Safety
// `table` must be a live handle; `config_json` null or NUL-terminated;
// `out` writable.
enum CastganStatus castgan_model_fit(const struct CastganTable *table,
                                     const char *config_json,
                                     double epsilon,
                                     uint64_t perturbation_seed,
                                     size_t threads,
                                     struct CastganModel **out);

// Loads a model container.
//
// # Safety
// `model_path` NUL-terminated; `out` writable.
enum CastganStatus castgan_model_load(const char *model_path, struct CastganModel **out);

// Saves a model container.
//
// # Safety
// `model` must be a live handle; `model_path` NUL-terminated.
enum CastganStatus castgan_model_save(const struct CastganModel *model, const char *model_path);

// Number of columns the model generates, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t castgan_model_columns(const struct CastganModel *model);

// Samples `rows` synthetic rows; identical seeds give identical tables.
//
// # Safety
// `model` must be a live handle; `out` writable.
enum CastganStatus castgan_model_sample(const struct CastganModel *model,
                                        size_t rows,
                                        uint64_t seed,
                                        struct CastganTable **out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from this library and not have been freed.
void castgan_model_free(struct CastganModel *model);

// Scores `synth` against `real` and returns the report as JSON. `train`
// may be null, in which case `real` is the reference for UPCC and pair
// rules.
//
// # Safety
// Handles must be live (or null for `train`); `out_json` writable.
enum CastganStatus castgan_evaluate(const struct CastganTable *synth,
                                    const struct CastganTable *real,
                                    const struct CastganTable *train,
                                    uint64_t seed,
                                    char **out_json);

// Runs the white-box attack on `synth` with the model's auxiliary learners
// and returns the distance report as JSON.
//
// # Safety
// Handles must be live; `out_json` writable.
enum CastganStatus castgan_attack(const struct CastganModel *model,
                                  const struct CastganTable *synth,
                                  const struct CastganTable *train,
                                  size_t iterations,
                                  double fraction,
                                  bool access_preprocessors,
                                  uint64_t seed,
                                  char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CASTGAN_H */
