#ifndef VASENSE_H
#define VASENSE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define VS_API __declspec(dllexport)
#else
#define VS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Return codes. Every int-returning call gives VS_OK or one of these; the
   message for the most recent failure on the calling thread is available from
   vs_last_error(). */
enum {
  VS_OK = 0,
  VS_ERR_INVALID_ARGUMENT = 1,
  VS_ERR_SINGULAR = 2,
  VS_ERR_NUMERICAL = 3,
  VS_ERR_IO = 4,
  VS_ERR_CONFIG = 5,
  VS_ERR_CALIBRATION = 6,
  VS_ERR_ABORTED = 7,
  VS_ERR_INTERNAL = 8
};

typedef struct vs_config vs_config;

VS_API const char* vs_version(void);
VS_API const char* vs_last_error(void);
VS_API const char* vs_status_name(int status);

/* Configuration handle. */
VS_API int vs_config_create(vs_config** out);
VS_API int vs_config_load(const char* path, vs_config** out);
VS_API int vs_config_parse(const char* yaml_text, vs_config** out);
VS_API void vs_config_destroy(vs_config* config);
VS_API int vs_config_set_seed(vs_config* config, uint64_t seed);
VS_API int vs_config_set_trials(vs_config* config, int trials);
VS_API int vs_config_set_threads(vs_config* config, int threads);
VS_API int vs_config_set_snr_grid(vs_config* config, const double* snr_db, int count);
VS_API int vs_config_get_seed(const vs_config* config, uint64_t* seed);
VS_API int vs_config_get_trials(const vs_config* config, int* trials);
VS_API int vs_config_get_output_dir(const vs_config* config, char* buffer, size_t size);
/* 16 hex digits plus terminator. */
VS_API int vs_config_hash(const vs_config* config, char* buffer, size_t size);
/* Canonical YAML; *needed receives the size including the terminator. */
VS_API int vs_config_dump(const vs_config* config, char* buffer, size_t size, size_t* needed);

/* Experiments. Each writes its CSV files into out_dir (created if missing). */
typedef struct {
  double snr_db;
  double rmse_oracle, rmse_imu, rmse_ekf;
  double ci_oracle, ci_imu, ci_ekf;
  double sqrt_crb, sqrt_bcrb;
  int trials, failures;
} vs_rmse_record;

/* rmse_vs_snr.csv and rmse_trials.csv. `records` may be NULL; otherwise up to
   `capacity` rows are copied and *count receives the number of SNR points. */
VS_API int vs_run_rmse_sweep(const vs_config* config, const char* out_dir, vs_rmse_record* records, int capacity,
                             int* count);

/* eirp_vs_distance.csv */
VS_API int vs_run_eirp_curves(const vs_config* config, const char* out_dir);

typedef struct {
  double snr_db, sqrt_trace_crb, sqrt_trace_bcrb;
  int floor;
} vs_bounds_row;

/* bounds_table.csv */
VS_API int vs_run_bounds_table(const vs_config* config, const char* out_dir, vs_bounds_row* rows, int capacity,
                               int* count);

typedef struct {
  double peak_oracle, peak_imu, peak_ekf;             /* at the localized target */
  double image_peak_oracle, image_peak_imu, image_peak_ekf;
  double error_oracle, error_imu, error_ekf;          /* metres; NaN if that estimator failed */
  double max_dev_imu, max_dev_ekf;
} vs_demo_summary;

/* trajectory.csv, targets.csv, autofocus.csv, image_{oracle,imu,ekf}.{csv,pgm},
   summary.csv. `summary` may be NULL. */
VS_API int vs_run_imaging_demo(const vs_config* config, const char* out_dir, vs_demo_summary* summary);

typedef struct {
  char name[32];
  char detail[160];
  int pass;
} vs_selftest_line;

/* Built-in checks; writes selftest.csv when out_dir is not NULL. */
VS_API int vs_run_selftest(const char* out_dir, vs_selftest_line* lines, int capacity, int* count, int* failures);

/* Low-level helpers. */
VS_API double vs_dirichlet(double nu, int subcarriers);
VS_API int vs_eirp_mpe_limit(double distance_m, double power_density_limit, double* eirp_w);
VS_API int vs_effective_distance(double measured_m, double range_variance_m2, double guard, double* out_m);
/* Proposed EIRP under the config's exposure policy. */
VS_API int vs_eirp_proposed(const vs_config* config, double measured_m, double range_variance_m2, double* eirp_w);
/* Entry (i, j) of the temporal IMU error covariance, 1-based acquisition indices. */
VS_API int vs_imu_error_covariance(double accel_noise_std, double bias_std, double interval_s, int acquisitions,
                                   int i, int j, double* value);

#ifdef __cplusplus
}
#endif

#endif
