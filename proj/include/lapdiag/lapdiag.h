/* C interface to the Laplace-approximation diagnostic. */
#ifndef LAPDIAG_H
#define LAPDIAG_H

#include <stddef.h>

#if defined(LAPDIAG_BUILDING)
#define LAPDIAG_API __attribute__((visibility("default")))
#else
#define LAPDIAG_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum lapdiag_status {
  LAPDIAG_OK = 0,
  LAPDIAG_ERR_INVALID_ARGUMENT = 1,
  LAPDIAG_ERR_NOT_NEGATIVE_DEFINITE = 2,
  LAPDIAG_ERR_NON_FINITE_HESSIAN = 3,
  LAPDIAG_ERR_NON_FINITE_LOGF = 4,
  LAPDIAG_ERR_GRAM_NOT_PD = 5,
  LAPDIAG_ERR_REDUCED_SYSTEM_SINGULAR = 6,
  LAPDIAG_ERR_DIMENSION_MISMATCH = 7,
  LAPDIAG_ERR_DEGENERATE_CALIBRATION = 8,
  LAPDIAG_ERR_OPTIMIZATION_DIVERGED = 9,
  LAPDIAG_ERR_ALL_CANDIDATES_FAILED = 10,
  LAPDIAG_ERR_ALL_WEIGHTS_ZERO = 11,
  LAPDIAG_ERR_CELL_COUNT_OVERFLOW = 12,
  LAPDIAG_ERR_IO = 13,
  LAPDIAG_ERR_EVALUATOR = 14,
  LAPDIAG_ERR_INTERNAL = 15
} lapdiag_status;

typedef struct lapdiag_integrand lapdiag_integrand;
typedef struct lapdiag_grid lapdiag_grid;
typedef struct lapdiag_config lapdiag_config;
typedef struct lapdiag_report lapdiag_report;

/* Library version string, static storage. */
LAPDIAG_API const char* lapdiag_version(void);
LAPDIAG_API const char* lapdiag_status_name(lapdiag_status status);
/* Message of the last failed call on this thread; empty after success. */
LAPDIAG_API const char* lapdiag_last_error(void);
/* Interrogation point tied to the last failure, or -1. */
LAPDIAG_API long long lapdiag_last_error_point(void);
/* Reciprocal condition estimate tied to the last failure, or NaN. */
LAPDIAG_API double lapdiag_last_error_rcond(void);
/* Frees strings returned through char** out-parameters. */
LAPDIAG_API void lapdiag_string_free(char* s);

/* Integrands ------------------------------------------------------------ */

/* "banana", "mvt:nu=38,d=2", "product_t:nu=25921,d=72", "gaussian:d=10". */
LAPDIAG_API lapdiag_status lapdiag_integrand_builtin(const char* name, lapdiag_integrand** out);

/* Returns log f(x); may return -INFINITY. Must be safe to call from several
   threads at once. */
typedef double (*lapdiag_logf_fn)(const double* x, int dim, void* user);

/* hessian is row-major dim*dim, or NULL for a finite-difference Hessian with
   per-axis scale hint scale_hint (NULL means all ones). */
LAPDIAG_API lapdiag_status lapdiag_integrand_callback(const char* name, int dim, lapdiag_logf_fn fn, void* user,
                                                      const double* mode, const double* hessian,
                                                      const double* scale_hint, lapdiag_integrand** out);

/* JSON sidecar {dim, mode, hessian | "finite-difference", evaluator: {exec, args}}. */
LAPDIAG_API lapdiag_status lapdiag_integrand_from_spec_file(const char* path, lapdiag_integrand** out);
LAPDIAG_API void lapdiag_integrand_free(lapdiag_integrand* integrand);
LAPDIAG_API int lapdiag_integrand_dim(const lapdiag_integrand* integrand);
LAPDIAG_API lapdiag_status lapdiag_integrand_log_laplace(const lapdiag_integrand* integrand, double* out);

/* Grids ----------------------------------------------------------------- */

/* family: "cross2d", "ckf" or "gh2". scale is used by gh2. */
LAPDIAG_API lapdiag_status lapdiag_grid_create(const char* family, int dim, double scale, lapdiag_grid** out);
LAPDIAG_API lapdiag_status lapdiag_grid_from_json(const char* json, lapdiag_grid** out);
LAPDIAG_API lapdiag_status lapdiag_grid_to_json(const lapdiag_grid* grid, char** out);
LAPDIAG_API long long lapdiag_grid_size(const lapdiag_grid* grid);
LAPDIAG_API int lapdiag_grid_dim(const lapdiag_grid* grid);
/* Copies the points row-major into out, which holds at least size*dim values. */
LAPDIAG_API lapdiag_status lapdiag_grid_points(const lapdiag_grid* grid, double* out, size_t capacity);
LAPDIAG_API void lapdiag_grid_free(lapdiag_grid* grid);

/* Calibration ----------------------------------------------------------- */

typedef struct lapdiag_calibrate_options {
  const char* method;     /* NULL picks by dimension; "l2_optimized", "target_m1", "fixed" */
  double lambda;          /* used by "fixed" */
  double gamma;           /* NaN applies the gamma rule */
  double la_threshold;    /* 0.95 */
  double quantile;        /* 1.96 */
  const char* solver;     /* NULL or "auto", "dense", "fskq" */
  double l2_halfwidth;    /* 10 */
  double l2_step;         /* 0.01 */
  const double* candidates; /* NULL uses 0.5, 0.6, ..., 10 */
  size_t n_candidates;
} lapdiag_calibrate_options;

LAPDIAG_API void lapdiag_calibrate_options_init(lapdiag_calibrate_options* opts);
LAPDIAG_API lapdiag_status lapdiag_calibrate(const lapdiag_grid* grid, const lapdiag_calibrate_options* opts,
                                             lapdiag_config** out);
/* A configuration with explicit hyperparameters (method "fixed", no nu). */
LAPDIAG_API lapdiag_status lapdiag_config_create(const lapdiag_grid* grid, double lambda, double gamma,
                                                 double log_alpha, lapdiag_config** out);
LAPDIAG_API lapdiag_status lapdiag_config_from_json(const char* json, lapdiag_config** out);
LAPDIAG_API lapdiag_status lapdiag_config_to_json(const lapdiag_config* config, char** out);
/* Sweep / L2 start table of the calibration, CSV; empty when absent. */
LAPDIAG_API lapdiag_status lapdiag_config_table_csv(const lapdiag_config* config, char** out);

typedef struct lapdiag_config_info {
  int dim;
  long long n_points;
  double nu;
  double gamma;
  double lambda;
  double log_alpha;
  double quantile;
  double achieved_m1;
  double boundary_residual;
  double rcond;
} lapdiag_config_info;

LAPDIAG_API lapdiag_status lapdiag_config_get(const lapdiag_config* config, lapdiag_config_info* out);
LAPDIAG_API lapdiag_status lapdiag_config_set_solver(lapdiag_config* config, const char* solver);
LAPDIAG_API lapdiag_status lapdiag_config_set_jitter(lapdiag_config* config, int enabled);
LAPDIAG_API lapdiag_status lapdiag_config_set_quantile(lapdiag_config* config, double quantile);
LAPDIAG_API void lapdiag_config_free(lapdiag_config* config);

/* Diagnosis ------------------------------------------------------------- */

typedef struct lapdiag_summary {
  int dim;
  long long n_points;
  int reject;
  int boundary;
  double m1;
  double c1;
  double m1_rel;
  double c1_rel;
  double la;
  double delta;
  double epsilon;
  double p_value;
  double log_p_value;
  double boundary_residual;
  double rcond;
  double seconds_evaluate;
  double seconds_solve;
} lapdiag_summary;

/* threads <= 0 uses LG_THREADS or the hardware concurrency. */
LAPDIAG_API lapdiag_status lapdiag_diagnose(const lapdiag_integrand* integrand, const lapdiag_config* config,
                                            int threads, lapdiag_report** out);
LAPDIAG_API lapdiag_status lapdiag_report_summary(const lapdiag_report* report, lapdiag_summary* out);
LAPDIAG_API lapdiag_status lapdiag_report_json(const lapdiag_report* report, char** out);
LAPDIAG_API lapdiag_status lapdiag_report_orbit_csv(const lapdiag_report* report, char** out);
LAPDIAG_API void lapdiag_report_free(lapdiag_report* report);

/* Calibration building blocks and oracles ------------------------------- */

LAPDIAG_API lapdiag_status lapdiag_find_nu(int dim, double la_threshold, int* out);
LAPDIAG_API lapdiag_status lapdiag_gamma_rule(double nu, int dim, double* out);
LAPDIAG_API lapdiag_status lapdiag_mvt_laplace(double nu, int dim, double* out);

/* m1 of tau_{nu,d} per lambda as CSV "lambda,m1,m1_rel,rcond,ok,error".
   nu <= 0 applies the nu rule; gamma NaN applies the gamma rule. */
LAPDIAG_API lapdiag_status lapdiag_lambda_sweep_csv(const lapdiag_grid* grid, double nu, double gamma,
                                                    const double* lambdas, size_t n, char** out);

typedef struct lapdiag_is_result {
  double estimate;
  double std_error;
  double ci_lo;
  double ci_hi;
  long long n_samples;
  double max_weight_fraction;
  double ess;
} lapdiag_is_result;

/* histogram_csv may be NULL. */
LAPDIAG_API lapdiag_status lapdiag_oracle_importance(const lapdiag_integrand* integrand, long long n_samples, double df,
                                                     unsigned long long seed, lapdiag_is_result* out,
                                                     char** histogram_csv);
LAPDIAG_API lapdiag_status lapdiag_oracle_riemann(const lapdiag_integrand* integrand, double halfwidth, double step,
                                                  double* out);
/* surface_csv may be NULL; csv_stride = 0 skips it. */
LAPDIAG_API lapdiag_status lapdiag_oracle_l2(const lapdiag_config* config, const lapdiag_integrand* integrand,
                                             double halfwidth, double step, int csv_stride, double* out,
                                             char** surface_csv);

#ifdef __cplusplus
}
#endif

#endif /* LAPDIAG_H */
