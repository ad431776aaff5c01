#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "support.hpp"
#include "vasense/experiments.hpp"

using namespace vasense;
namespace fs = std::filesystem;

namespace {

int data_rows(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  int rows = -1;  // header
  while (std::getline(is, line))
    if (!line.empty() && line[0] != '#') ++rows;
  return rows;
}

ErrorCode config_error(const std::string& yaml) {
  try {
    parse_config(yaml);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kOk;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vasense_unit_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_SUITE("experiments") {

TEST_CASE("defaults carry the link-budget table values") {
  const auto c = default_config();
  CHECK(c.radio.carrier_hz() == 28e9);
  CHECK(c.radio.bandwidth_hz() == 200e6);
  CHECK(c.policy.power_density_limit == 10.0);
  CHECK(c.policy.trigger_distance_m == 0.025);
  CHECK(c.policy.off_body_distance_m == 0.5);
  CHECK(c.elements == 4);
  CHECK(c.aperture_m == 0.05);
  CHECK(c.trials == 100);
  CHECK(c.snr_db.size() == 9);
  CHECK(c.imu.accel_noise_std == 0.05);
  CHECK(c.imu.bias_std == 0.02);
}

TEST_CASE("config round trip and hash") {
  const auto c = default_config();
  const std::string dump = dump_config(c);
  const auto back = parse_config(dump);
  CHECK(dump_config(back) == dump);
  CHECK(config_hash(back) == config_hash(c));
  CHECK(hash_hex(config_hash(c)).size() == 16);

  auto d = c;
  d.threads = 8;
  d.output_dir = "elsewhere";
  CHECK(config_hash(d) == config_hash(c));
  d.seed = 2;
  CHECK(config_hash(d) != config_hash(c));
}

TEST_CASE("shipped configuration files parse; default.yaml equals the built-in default") {
  const fs::path dir = fs::path(VASENSE_SOURCE_DIR) / "configs";
  const auto def = load_config(dir / "default.yaml");
  CHECK(config_hash(def) == config_hash(default_config()));
  const auto three = load_config(dir / "three_scatterers.yaml");
  CHECK(three.scatterers.size() == 3);
  const auto full = load_config(dir / "fig4_full.yaml");
  CHECK(full.trials == 500);
  CHECK_THROWS_AS(load_config(dir / "missing.yaml"), Error);
}

TEST_CASE("config parsing rejects unknown keys and bad values") {
  CHECK(config_error("seed: 3\n") == ErrorCode::kOk);
  CHECK(config_error("sede: 3\n") == ErrorCode::kConfig);
  CHECK(config_error("radio:\n  carrier: 28e9\n") == ErrorCode::kConfig);
  CHECK(config_error("imu:\n  preset: military\n") == ErrorCode::kConfig);
  CHECK(config_error("trials: 0\n") == ErrorCode::kConfig);
  CHECK(config_error("sweep:\n  snr_db: []\n") == ErrorCode::kConfig);
  CHECK(config_error("trajectory:\n  kind: spiral\n") == ErrorCode::kConfig);
  CHECK(config_error("seed: [1, 2\n") == ErrorCode::kConfig);
  CHECK(config_error("imaging:\n  taps: 100\n") == ErrorCode::kConfig);
  CHECK(config_error("scene:\n  target: 4\n") == ErrorCode::kConfig);

  const auto c = parse_config("imu:\n  accel_noise_std: 0.01\n  bias_std: 0.002\nexposure:\n  eirp_base_override_dbm: null\n");
  CHECK(c.imu_preset == "custom");
  CHECK(c.imu.accel_noise_std == 0.01);
  CHECK_FALSE(c.policy.eirp_base_override_w.has_value());
  const auto h = parse_config("trajectory:\n  interval_s: 0.01\nimu:\n  preset: high\n");
  CHECK(h.imu.bias_std == 1e-3);
  CHECK(h.imu.interval_s == 0.01);
}

TEST_CASE("snr definition and metadata") {
  const auto c = default_config();
  const cd a = complex_amplitude(c.target_scatterer(), c.link, c.radio);
  const double r0 = c.target_scatterer().position.norm();
  CHECK(testing::rel_err(noise_power_for_snr(c, 10.0), std::norm(a) / std::pow(r0, 4) / 10.0) < 1e-12);
  std::ostringstream os;
  write_metadata(os, c);
  const std::string m = os.str();
  CHECK(m.find("# config_hash: " + hash_hex(config_hash(c))) != std::string::npos);
  CHECK(m.find("# seed: 1") != std::string::npos);
  CHECK(m.find("# snr_definition:") != std::string::npos);
}

TEST_CASE("smoke sweep: two trials at one SNR") {
  auto c = default_config();
  c.trials = 2;
  c.snr_db = {0.0};
  const auto t0 = std::chrono::steady_clock::now();
  const auto sweep = run_rmse_vs_snr(c);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 60.0);
  REQUIRE(sweep.records.size() == 1);
  CHECK(sweep.trials.size() == 2);
  std::ostringstream os;
  write_rmse_csv(os, c, sweep);
  CHECK(data_rows(os.str()) == 1);
  const auto& r = sweep.records[0];
  CHECK(r.rmse_oracle > 0.0);
  CHECK(r.sqrt_crb > 0.0);
  CHECK(r.sqrt_bcrb >= r.sqrt_crb);
}

TEST_CASE("without trajectory error the three estimators coincide") {
  auto c = parse_config("imu:\n  accel_noise_std: 0\n  bias_std: 0\n");
  c.trials = 4;
  c.snr_db = {10.0};
  const auto sweep = run_rmse_vs_snr(c);
  const auto& r = sweep.records[0];
  CHECK(r.failures == 0);
  CHECK(r.rmse_imu == r.rmse_oracle);
  CHECK(r.rmse_ekf == r.rmse_oracle);
  CHECK(testing::rel_err(r.sqrt_bcrb, r.sqrt_crb) < 1e-9);
}

TEST_CASE("sweeps are deterministic and independent of the thread count") {
  auto c = default_config();
  c.trials = 3;
  c.snr_db = {0.0, 20.0};
  auto render = [](const ExperimentConfig& cfg) {
    const auto sweep = run_rmse_vs_snr(cfg);
    std::ostringstream a;
    write_rmse_csv(a, cfg, sweep);
    write_trials_csv(a, cfg, sweep);
    return a.str();
  };
  const std::string one = render(c);
  CHECK(render(c) == one);
  c.threads = 3;
  CHECK(render(c) == one);
}

TEST_CASE("trial pairing: estimators share the same data") {
  const auto c = default_config();
  TrialArtifacts a, b;
  run_trial(c, 5, 0, 10.0, &a);
  run_trial(c, 5, 1, 20.0, &b);
  // same IMU draw across SNR points, different noise
  for (int m = 0; m < a.truth.size(); ++m) CHECK(a.imu.estimated[m] == b.imu.estimated[m]);
  CHECK(a.cube.data() != b.cube.data());
}

TEST_CASE("bounds table") {
  auto c = default_config();
  const auto rows = run_bounds_table(c);
  REQUIRE(rows.size() == c.snr_db.size());
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i].sqrt_trace_crb < rows[i - 1].sqrt_trace_crb);
    CHECK(rows[i].sqrt_trace_bcrb <= rows[i - 1].sqrt_trace_bcrb);
    CHECK(rows[i].sqrt_trace_bcrb >= rows[i].sqrt_trace_crb);
  }
  CHECK(rows.back().floor);
  std::ostringstream os;
  write_bounds_csv(os, c, rows);
  CHECK(data_rows(os.str()) == int(rows.size()));
  CHECK(os.str().find("snr_db,sqrt_trace_crb,sqrt_trace_bcrb,floor_flag") != std::string::npos);
}

TEST_CASE("exposure curves never exceed the MPE limit at the true distance") {
  auto c = default_config();
  c.r_step_m = 0.025;
  const auto curve = run_eirp_vs_distance(c);
  REQUIRE(curve.size() == 24);
  for (const auto& p : curve) {
    REQUIRE(p.proposed_w.size() == 3);
    for (double w : p.proposed_w) {
      CHECK(w <= p.mpe_w * (1 + 1e-12));
      CHECK(w <= c.policy.eirp_max_w * (1 + 1e-12));
    }
  }
  std::ostringstream os;
  write_eirp_csv(os, c, curve);
  CHECK(data_rows(os.str()) == 24);
}

TEST_CASE("imaging demo writes every artifact") {
  auto c = default_config();
  const fs::path dir = scratch("demo");
  const auto demo = run_imaging_demo(c, dir);
  for (const char* f : {"trajectory.csv", "targets.csv", "autofocus.csv", "image_oracle.csv", "image_imu.csv",
                        "image_ekf.csv", "image_oracle.pgm", "image_imu.pgm", "image_ekf.pgm", "summary.csv"})
    CHECK(fs::exists(dir / f));
  CHECK(data_rows(slurp(dir / "summary.csv")) == 3);
  CHECK(slurp(dir / "image_ekf.pgm").rfind("P5\n", 0) == 0);
  CHECK(demo.result.err_ekf.has_value());
  fs::remove_all(dir);
}

TEST_CASE("selftest passes") {
  for (const auto& l : run_selftest()) {
    INFO(l.name << ": " << l.detail);
    CHECK(l.pass);
  }
}

}
