#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vasense/vasense.h"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::optional<int> threads;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "YAML configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "master RNG seed");
  cmd->add_option("--out", c.out, "output directory (default: output_dir from the config)");
  cmd->add_option("--trials", c.trials, "Monte Carlo trials per SNR point")->check(CLI::PositiveNumber);
  cmd->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
}

int report(int status, const char* what) {
  if (status != VS_OK) std::fprintf(stderr, "vasense %s: %s (%s)\n", what, vs_last_error(), vs_status_name(status));
  return status;
}

using ConfigPtr = std::unique_ptr<vs_config, decltype(&vs_config_destroy)>;

// Loads the config and applies command-line overrides; returns null on error.
ConfigPtr open_config(const Common& c, std::string& out_dir) {
  vs_config* raw = nullptr;
  int st = c.config.empty() ? vs_config_create(&raw) : vs_config_load(c.config.c_str(), &raw);
  ConfigPtr cfg(raw, vs_config_destroy);
  if (report(st, "config") != VS_OK) return ConfigPtr(nullptr, vs_config_destroy);
  if (c.seed && report(vs_config_set_seed(cfg.get(), *c.seed), "--seed")) return ConfigPtr(nullptr, vs_config_destroy);
  if (c.trials && report(vs_config_set_trials(cfg.get(), *c.trials), "--trials"))
    return ConfigPtr(nullptr, vs_config_destroy);
  if (c.threads && report(vs_config_set_threads(cfg.get(), *c.threads), "--threads"))
    return ConfigPtr(nullptr, vs_config_destroy);
  if (c.out.empty()) {
    char buf[4096];
    if (report(vs_config_get_output_dir(cfg.get(), buf, sizeof buf), "config")) return ConfigPtr(nullptr, vs_config_destroy);
    out_dir = buf;
  } else {
    out_dir = c.out;
  }
  char hash[32];
  vs_config_hash(cfg.get(), hash, sizeof hash);
  std::printf("config %s -> %s\n", hash, out_dir.c_str());
  return cfg;
}

double mm(double m) { return m * 1e3; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Virtual-aperture near-field sensing simulator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(vs_version()));

  Common rmse_opts, eirp_opts, demo_opts, bounds_opts, selftest_opts;

  auto* rmse = app.add_subcommand("rmse-sweep", "localization RMSE versus SNR for oracle, IMU and EKF autofocus");
  auto* eirp = app.add_subcommand("eirp-curves", "EIRP ceilings versus distance for each aperture length");
  auto* demo = app.add_subcommand("imaging-demo", "single-trial images and trajectories");
  auto* bounds = app.add_subcommand("bounds-table", "CRB and BCRB versus SNR");
  auto* selftest = app.add_subcommand("selftest", "built-in consistency checks");
  add_common(rmse, rmse_opts);
  add_common(eirp, eirp_opts);
  add_common(demo, demo_opts);
  add_common(bounds, bounds_opts);
  // the checks have fixed inputs; the common flags are accepted, only --out matters
  add_common(selftest, selftest_opts);
  selftest->get_option("--out")->description("write selftest.csv into this directory");

  CLI11_PARSE(app, argc, argv);

  std::string out;
  if (rmse->parsed()) {
    auto cfg = open_config(rmse_opts, out);
    if (!cfg) return 2;
    std::vector<vs_rmse_record> rows(64);
    int count = 0;
    if (report(vs_run_rmse_sweep(cfg.get(), out.c_str(), rows.data(), int(rows.size()), &count), "rmse-sweep"))
      return 1;
    std::printf("%8s %12s %12s %12s %12s %12s %8s\n", "snr_db", "oracle_mm", "imu_mm", "ekf_mm", "crb_mm",
                "bcrb_mm", "failed");
    for (int i = 0; i < std::min<int>(count, int(rows.size())); ++i) {
      const auto& r = rows[i];
      std::printf("%8.1f %12.4f %12.4f %12.4f %12.4f %12.4f %8d\n", r.snr_db, mm(r.rmse_oracle), mm(r.rmse_imu),
                  mm(r.rmse_ekf), mm(r.sqrt_crb), mm(r.sqrt_bcrb), r.failures);
    }
    return 0;
  }
  if (eirp->parsed()) {
    auto cfg = open_config(eirp_opts, out);
    if (!cfg) return 2;
    if (report(vs_run_eirp_curves(cfg.get(), out.c_str()), "eirp-curves")) return 1;
    std::printf("wrote %s/eirp_vs_distance.csv\n", out.c_str());
    return 0;
  }
  if (demo->parsed()) {
    auto cfg = open_config(demo_opts, out);
    if (!cfg) return 2;
    vs_demo_summary s{};
    if (report(vs_run_imaging_demo(cfg.get(), out.c_str(), &s), "imaging-demo")) return 1;
    std::printf("%-8s %12s %14s %14s\n", "variant", "peak", "error_mm", "max_dev_mm");
    std::printf("%-8s %12.6g %14.4f %14.4f\n", "oracle", s.peak_oracle, mm(s.error_oracle), 0.0);
    std::printf("%-8s %12.6g %14.4f %14.4f\n", "imu", s.peak_imu, mm(s.error_imu), mm(s.max_dev_imu));
    std::printf("%-8s %12.6g %14.4f %14.4f\n", "ekf", s.peak_ekf, mm(s.error_ekf), mm(s.max_dev_ekf));
    return 0;
  }
  if (bounds->parsed()) {
    auto cfg = open_config(bounds_opts, out);
    if (!cfg) return 2;
    std::vector<vs_bounds_row> rows(64);
    int count = 0;
    if (report(vs_run_bounds_table(cfg.get(), out.c_str(), rows.data(), int(rows.size()), &count), "bounds-table"))
      return 1;
    std::printf("%8s %14s %14s %6s\n", "snr_db", "sqrt_crb_mm", "sqrt_bcrb_mm", "floor");
    for (int i = 0; i < std::min<int>(count, int(rows.size())); ++i)
      std::printf("%8.1f %14.6f %14.6f %6d\n", rows[i].snr_db, mm(rows[i].sqrt_trace_crb),
                  mm(rows[i].sqrt_trace_bcrb), rows[i].floor);
    return 0;
  }
  if (selftest->parsed()) {
    std::vector<vs_selftest_line> lines(32);
    int count = 0, failures = 0;
    if (report(vs_run_selftest(selftest_opts.out.empty() ? nullptr : selftest_opts.out.c_str(), lines.data(),
                               int(lines.size()), &count, &failures),
               "selftest"))
      return 1;
    for (int i = 0; i < std::min<int>(count, int(lines.size())); ++i)
      std::printf("%s %-18s %s\n", lines[i].pass ? "PASS" : "FAIL", lines[i].name, lines[i].detail);
    return failures == 0 ? 0 : 1;
  }
  return 0;
}
