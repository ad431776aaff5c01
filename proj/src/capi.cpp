#include "vasense/vasense.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <new>
#include <string>

#include "vasense/csv.hpp"
#include "vasense/experiments.hpp"

struct vs_config {
  vasense::ExperimentConfig cfg;
};

namespace {

thread_local std::string g_last_error;

int set_error(int code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return VS_OK;
  } catch (const vasense::Error& e) {
    return set_error(static_cast<int>(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(VS_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(VS_ERR_INTERNAL, e.what());
  } catch (...) {
    return set_error(VS_ERR_INTERNAL, "unknown error");
  }
}

void copy_string(const std::string& s, char* buffer, std::size_t size) {
  if (s.size() + 1 > size) vasense::fail(vasense::ErrorCode::kInvalidArgument, "buffer too small");
  std::memcpy(buffer, s.c_str(), s.size() + 1);
}

void need(const void* p, const char* what) {
  if (!p) vasense::fail(vasense::ErrorCode::kInvalidArgument, std::string(what) + " is null");
}

std::filesystem::path prepare_dir(const char* out_dir) {
  need(out_dir, "out_dir");
  std::filesystem::path dir(out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) vasense::fail(vasense::ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

template <typename Fn>
void write_to(const std::filesystem::path& path, Fn&& fn) {
  std::ofstream out(path);
  if (!out) vasense::fail(vasense::ErrorCode::kIo, "cannot write " + path.string());
  fn(out);
  out.close();
  if (!out) vasense::fail(vasense::ErrorCode::kIo, "write failed for " + path.string());
}

void copy_name(char* dst, std::size_t cap, const std::string& s) {
  const std::size_t n = std::min(cap - 1, s.size());
  std::memcpy(dst, s.data(), n);
  dst[n] = '\0';
}

}  // namespace

extern "C" {

const char* vs_version(void) { return "1.0.0"; }

const char* vs_last_error(void) { return g_last_error.c_str(); }

const char* vs_status_name(int status) {
  switch (status) {
    case VS_OK: return "ok";
    case VS_ERR_INVALID_ARGUMENT: return "invalid argument";
    case VS_ERR_SINGULAR: return "singular matrix";
    case VS_ERR_NUMERICAL: return "numerical failure";
    case VS_ERR_IO: return "i/o error";
    case VS_ERR_CONFIG: return "configuration error";
    case VS_ERR_CALIBRATION: return "calibration failure";
    case VS_ERR_ABORTED: return "aborted";
    default: return "internal error";
  }
}

int vs_config_create(vs_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    *out = new vs_config{vasense::default_config()};
  });
}

int vs_config_load(const char* path, vs_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    *out = new vs_config{vasense::load_config(path)};
  });
}

int vs_config_parse(const char* yaml_text, vs_config** out) {
  return guarded([&] {
    need(yaml_text, "yaml_text");
    need(out, "out");
    *out = nullptr;
    *out = new vs_config{vasense::parse_config(yaml_text)};
  });
}

void vs_config_destroy(vs_config* config) { delete config; }

int vs_config_set_seed(vs_config* config, uint64_t seed) {
  return guarded([&] {
    need(config, "config");
    config->cfg.seed = seed;
  });
}

int vs_config_set_trials(vs_config* config, int trials) {
  return guarded([&] {
    need(config, "config");
    if (trials < 1) vasense::fail(vasense::ErrorCode::kInvalidArgument, "trials must be at least 1");
    config->cfg.trials = trials;
  });
}

int vs_config_set_threads(vs_config* config, int threads) {
  return guarded([&] {
    need(config, "config");
    if (threads < 1) vasense::fail(vasense::ErrorCode::kInvalidArgument, "threads must be at least 1");
    config->cfg.threads = threads;
  });
}

int vs_config_set_snr_grid(vs_config* config, const double* snr_db, int count) {
  return guarded([&] {
    need(config, "config");
    need(snr_db, "snr_db");
    if (count < 1) vasense::fail(vasense::ErrorCode::kInvalidArgument, "SNR grid must not be empty");
    config->cfg.snr_db.assign(snr_db, snr_db + count);
  });
}

int vs_config_get_seed(const vs_config* config, uint64_t* seed) {
  return guarded([&] {
    need(config, "config");
    need(seed, "seed");
    *seed = config->cfg.seed;
  });
}

int vs_config_get_trials(const vs_config* config, int* trials) {
  return guarded([&] {
    need(config, "config");
    need(trials, "trials");
    *trials = config->cfg.trials;
  });
}

int vs_config_get_output_dir(const vs_config* config, char* buffer, size_t size) {
  return guarded([&] {
    need(config, "config");
    need(buffer, "buffer");
    copy_string(config->cfg.output_dir, buffer, size);
  });
}

int vs_config_hash(const vs_config* config, char* buffer, size_t size) {
  return guarded([&] {
    need(config, "config");
    need(buffer, "buffer");
    copy_string(vasense::hash_hex(vasense::config_hash(config->cfg)), buffer, size);
  });
}

int vs_config_dump(const vs_config* config, char* buffer, size_t size, size_t* needed) {
  return guarded([&] {
    need(config, "config");
    const std::string text = vasense::dump_config(config->cfg);
    if (needed) *needed = text.size() + 1;
    if (buffer) copy_string(text, buffer, size);
  });
}

int vs_run_rmse_sweep(const vs_config* config, const char* out_dir, vs_rmse_record* records, int capacity,
                      int* count) {
  return guarded([&] {
    need(config, "config");
    const auto dir = prepare_dir(out_dir);
    const auto sweep = vasense::run_rmse_vs_snr(config->cfg);
    write_to(dir / "rmse_vs_snr.csv", [&](std::ostream& os) { vasense::write_rmse_csv(os, config->cfg, sweep); });
    write_to(dir / "rmse_trials.csv", [&](std::ostream& os) { vasense::write_trials_csv(os, config->cfg, sweep); });
    if (count) *count = int(sweep.records.size());
    if (records)
      for (int i = 0; i < std::min(capacity, int(sweep.records.size())); ++i) {
        const auto& r = sweep.records[i];
        records[i] = {r.snr_db,  r.rmse_oracle, r.rmse_imu, r.rmse_ekf,  r.ci_oracle, r.ci_imu,
                      r.ci_ekf,  r.sqrt_crb,    r.sqrt_bcrb, r.trials,   r.failures};
      }
  });
}

int vs_run_eirp_curves(const vs_config* config, const char* out_dir) {
  return guarded([&] {
    need(config, "config");
    const auto dir = prepare_dir(out_dir);
    const auto curve = vasense::run_eirp_vs_distance(config->cfg);
    write_to(dir / "eirp_vs_distance.csv", [&](std::ostream& os) { vasense::write_eirp_csv(os, config->cfg, curve); });
  });
}

int vs_run_bounds_table(const vs_config* config, const char* out_dir, vs_bounds_row* rows, int capacity,
                        int* count) {
  return guarded([&] {
    need(config, "config");
    const auto dir = prepare_dir(out_dir);
    const auto table = vasense::run_bounds_table(config->cfg);
    write_to(dir / "bounds_table.csv", [&](std::ostream& os) { vasense::write_bounds_csv(os, config->cfg, table); });
    if (count) *count = int(table.size());
    if (rows)
      for (int i = 0; i < std::min(capacity, int(table.size())); ++i)
        rows[i] = {table[i].snr_db, table[i].sqrt_trace_crb, table[i].sqrt_trace_bcrb, table[i].floor ? 1 : 0};
  });
}

int vs_run_imaging_demo(const vs_config* config, const char* out_dir, vs_demo_summary* summary) {
  return guarded([&] {
    need(config, "config");
    const auto dir = prepare_dir(out_dir);
    const auto demo = vasense::run_imaging_demo(config->cfg, dir);
    if (summary) {
      const auto& r = demo.result;
      auto err = [](const std::optional<vasense::Vec3>& e) {
        return e ? e->norm() : std::numeric_limits<double>::quiet_NaN();
      };
      *summary = {r.peak_oracle,        r.peak_imu,        r.peak_ekf,         demo.image_peak_oracle,
                  demo.image_peak_imu,  demo.image_peak_ekf, err(r.err_oracle), err(r.err_imu),
                  err(r.err_ekf),       r.max_dev_imu,     r.max_dev_ekf};
    }
  });
}

int vs_run_selftest(const char* out_dir, vs_selftest_line* lines, int capacity, int* count, int* failures) {
  return guarded([&] {
    const auto result = vasense::run_selftest();
    int failed = 0;
    for (const auto& l : result) failed += l.pass ? 0 : 1;
    if (count) *count = int(result.size());
    if (failures) *failures = failed;
    if (lines)
      for (int i = 0; i < std::min(capacity, int(result.size())); ++i) {
        copy_name(lines[i].name, sizeof lines[i].name, result[i].name);
        copy_name(lines[i].detail, sizeof lines[i].detail, result[i].detail);
        lines[i].pass = result[i].pass ? 1 : 0;
      }
    if (out_dir) {
      const auto dir = prepare_dir(out_dir);
      write_to(dir / "selftest.csv", [&](std::ostream& os) {
        vasense::csv::header(os, {"check", "pass", "detail"});
        for (const auto& l : result) vasense::csv::Row(os) << l.name << (l.pass ? 1 : 0) << ("\"" + l.detail + "\"");
      });
    }
  });
}

double vs_dirichlet(double nu, int subcarriers) {
  if (subcarriers < 1) {
    g_last_error = "subcarriers must be positive";
    return std::numeric_limits<double>::quiet_NaN();
  }
  return vasense::dirichlet_kernel(nu, subcarriers);
}

int vs_eirp_mpe_limit(double distance_m, double power_density_limit, double* eirp_w) {
  return guarded([&] {
    need(eirp_w, "eirp_w");
    *eirp_w = vasense::eirp_mpe_limit(distance_m, power_density_limit);
  });
}

int vs_effective_distance(double measured_m, double range_variance_m2, double guard, double* out_m) {
  return guarded([&] {
    need(out_m, "out_m");
    *out_m = vasense::effective_distance(measured_m, range_variance_m2, guard);
  });
}

int vs_eirp_proposed(const vs_config* config, double measured_m, double range_variance_m2, double* eirp_w) {
  return guarded([&] {
    need(config, "config");
    need(eirp_w, "eirp_w");
    *eirp_w = vasense::eirp_proposed(measured_m, range_variance_m2, config->cfg.policy);
  });
}

int vs_imu_error_covariance(double accel_noise_std, double bias_std, double interval_s, int acquisitions, int i,
                            int j, double* value) {
  return guarded([&] {
    need(value, "value");
    const vasense::ImuSpec spec{accel_noise_std, bias_std, interval_s};
    if (i < 1 || j < 1 || i >= acquisitions || j >= acquisitions)
      vasense::fail(vasense::ErrorCode::kInvalidArgument, "covariance index out of range");
    *value = vasense::error_covariance(spec, acquisitions).temporal(i - 1, j - 1);
  });
}

}  // extern "C"
