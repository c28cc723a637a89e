/* C interface to the popgrid library. All functions are thread-safe unless a
 * handle is shared between threads. On failure a function returns a non-zero
 * pg_status and pg_last_error() describes the failure on the calling thread. */
#ifndef POPGRID_POPGRID_H
#define POPGRID_POPGRID_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define PG_API __declspec(dllexport)
#else
#define PG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pg_status {
  PG_OK = 0,
  PG_ERR_PARSE = 1,
  PG_ERR_DIMENSION,
  PG_ERR_IO,
  PG_ERR_FORMAT,
  PG_ERR_UNSUPPORTED,
  PG_ERR_COREGISTRATION,
  PG_ERR_ALIGNMENT,
  PG_ERR_BOUNDS,
  PG_ERR_EDGE_SKIP,
  PG_ERR_ARGUMENT,
  PG_ERR_DOMAIN,
  PG_ERR_SHAPE,
  PG_ERR_PROTOCOL,
  PG_ERR_POISONED_UPDATE,
  PG_ERR_DIVERGENCE,
  PG_ERR_UNDEFINED_METRIC,
  PG_ERR_EMPTY_SPLIT,
  PG_ERR_USAGE,
  PG_ERR_INTERNAL
} pg_status;

PG_API const char* pg_version(void);
PG_API const char* pg_last_error(void);
PG_API const char* pg_status_string(pg_status status);

/* Runs a pipeline stage ("synth", "ingest", "patchify", "split", "train",
 * "predict", "evaluate", "sweep", "render"). options_json is a JSON object of
 * snake_case option names; it may be NULL for no options. */
PG_API pg_status pg_run_stage(const char* stage, const char* options_json);

/* Population grids ------------------------------------------------------- */

typedef struct pg_grid pg_grid;

typedef struct pg_grid_header {
  size_t n_rows;
  size_t n_cols;
  double cell_size; /* arc-seconds */
  double origin_lat; /* upper-left corner */
  double origin_lon;
  double nodata_value;
} pg_grid_header;

PG_API pg_status pg_grid_create(const pg_grid_header* header, const double* values, pg_grid** out);
PG_API pg_status pg_grid_read_ascii(const char* path, pg_grid** out);
PG_API pg_status pg_grid_write_ascii(const pg_grid* grid, const char* path);
PG_API void pg_grid_free(pg_grid* grid);
PG_API pg_status pg_grid_header_get(const pg_grid* grid, pg_grid_header* out);
/* Row-major values, valid until the grid is freed. */
PG_API const double* pg_grid_values(const pg_grid* grid);
/* mode: 0 = sum, 1 = mean. */
PG_API pg_status pg_grid_aggregate(const pg_grid* grid, size_t factor, int mode, pg_grid** out);
PG_API pg_status pg_grid_combine_ambient(const pg_grid* day, const pg_grid* night, pg_grid** out);

/* Band stacks ------------------------------------------------------------ */

typedef struct pg_stack pg_stack;

PG_API pg_status pg_stack_read(const char* path, pg_stack** out);
PG_API pg_status pg_stack_write(const pg_stack* stack, const char* path);
PG_API void pg_stack_free(pg_stack* stack);
PG_API pg_status pg_stack_header_get(const pg_stack* stack, pg_grid_header* out);

/* Numerics --------------------------------------------------------------- */

PG_API double pg_info_proportion(size_t n);
PG_API pg_status pg_log_transform(double count, double* out);
PG_API pg_status pg_split_counts(size_t total, size_t* train, size_t* valid, size_t* test);
/* base: 10 or 0 for natural log. */
PG_API pg_status pg_log_cosh_loss(const double* pred, const double* truth, size_t len, int base,
                                  double* out);
PG_API double pg_student_t_p(double t, double dof);

typedef struct pg_metrics {
  size_t m;
  int has_r_squared;
  double r_squared;
  int has_coe;
  double coe;
  double mioa;
  int has_bias;
  double alpha;
  double beta;
  int has_pearson;
  double pearson_r;
  double p_value;
} pg_metrics;

PG_API pg_status pg_evaluate(const double* truth, const double* pred, size_t len, pg_metrics* out);

#ifdef __cplusplus
}
#endif

#endif
