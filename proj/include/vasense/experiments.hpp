#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vasense/autofocus.hpp"
#include "vasense/bounds.hpp"
#include "vasense/common.hpp"
#include "vasense/exposure.hpp"
#include "vasense/imaging.hpp"
#include "vasense/trajectory.hpp"
#include "vasense/waveform.hpp"

namespace vasense {

struct ExperimentConfig {
  std::uint64_t seed = 1;
  int trials = 100;
  int threads = 1;
  std::string output_dir = "out";

  RadioConfig radio{28e9, 200e6, 64};
  LinkBudget link;

  // Scene; `target` indexes the scatterer that is localized.
  std::vector<Scatterer> scatterers;
  int target = 0;
  cd self_interference{0.0, 0.0};
  SelfInterferenceMode si_mode = SelfInterferenceMode::kOracle;

  int elements = 4;
  double element_pitch_m = 0.0;  // 0 = lambda/2
  Vec3 element_axis = Vec3::UnitZ();

  TrajectoryKind trajectory = TrajectoryKind::kLinearSweep;
  TrajectoryShape shape;
  double aperture_m = 0.05;
  double interval_s = 50e-3;  // lambda/4 steps at about 5 cm/s

  std::string imu_preset = "consumer";  // consumer | high | custom
  ImuSpec imu;                          // resolved from the preset unless custom
  IntegrationScheme scheme = IntegrationScheme::kRectangle;

  std::vector<double> snr_db{-10, -5, 0, 5, 10, 15, 20, 25, 30};

  // Localization: coarse grid around the nominal target, then zoomed grids.
  double grid_spacing_m = 0.0;    // image grids; 0 = lambda/4
  double coarse_spacing_m = 0.0;  // first localization grid; 0 = lambda/2
  double search_half_width_m = 0.1;
  int zoom_levels = 2;
  int zoom_cells = 9;
  double zoom_factor = 4.0;
  int taps = 0;  // 0 = band-limited interpolation over all K bins

  // Autofocus.
  int provisional_acquisitions = 4;
  int calibration_points = 1;
  double calibration_separation_m = 0.05;
  double calibration_floor = 0.1;
  double phase_inflation = 1.5;
  double threshold_sigma = 3.0;
  double calibration_margin_m = 0.05;
  double calibration_spacing_m = 0.0;  // 0 = lambda/4

  // Exposure curves.
  MpePolicy policy;
  double eirp_snr_db = 5.0;
  std::vector<double> eirp_apertures_m{0.005, 0.05, 0.5};
  double r_min_m = 0.025;
  double r_max_m = 0.6;
  double r_step_m = 0.005;

  // Imaging demo.
  double demo_snr_db = 10.0;
  int demo_trial = 0;
  double demo_spacing_m = 0.0;  // 0 = lambda/4

  void validate() const;
  ArrayGeometry array() const;
  double grid_spacing() const;
  double coarse_spacing() const;
  const Scatterer& target_scatterer() const { return scatterers.at(std::size_t(target)); }
};

ExperimentConfig default_config();
ExperimentConfig parse_config(const std::string& yaml_text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Canonical YAML of every setting that affects results.
std::string dump_config(const ExperimentConfig& config);
std::uint64_t config_hash(const ExperimentConfig& config);
std::string hash_hex(std::uint64_t h);

// Per-subcarrier sample noise variance giving `snr_db` for the target at its
// range from the aperture centre: SNR = |alpha / r0^2|^2 / sigma_w^2.
double noise_power_for_snr(const ExperimentConfig& config, double snr_db);

struct TargetFix {
  Vec3 position = Vec3::Zero();
  double peak = 0.0;
};

// Coarse grid (spacing, +-half_width in x and y around `centre`), zoomed grids
// around the running maximum, then maximize_in_plane in the plane z = centre.z.
TargetFix localize_target(const RangeCube& cube, std::span<const Vec3> trajectory, const ArrayGeometry& array,
                          const Vec3& centre, const ExperimentConfig& config);

ImageGrid scene_grid(const ExperimentConfig& config, double spacing, double margin);

struct TrialResult {
  double snr_db = 0.0;
  int trial = 0;
  std::optional<Vec3> err_oracle, err_imu, err_ekf;  // estimate - truth
  double peak_oracle = 0.0, peak_imu = 0.0, peak_ekf = 0.0;
  double max_dev_imu = 0.0, max_dev_ekf = 0.0;  // max_m ||q^ - q||
  std::string failure;
};

struct TrialArtifacts {
  Trajectory truth;
  ImuRun imu;
  RangeCube cube;
  AutofocusResult autofocus;
};

// One seeded trial; IMU draws depend on (seed, trial) and noise on
// (seed, trial, snr_index), so the three estimators see the same data.
TrialResult run_trial(const ExperimentConfig& config, int trial, int snr_index, double snr_db,
                      TrialArtifacts* artifacts = nullptr);

BcrbReport target_bounds(const ExperimentConfig& config, double snr_db);

struct RmseRecord {
  double snr_db = 0.0;
  double rmse_oracle = 0.0, rmse_imu = 0.0, rmse_ekf = 0.0;
  double ci_oracle = 0.0, ci_imu = 0.0, ci_ekf = 0.0;
  double sqrt_crb = 0.0, sqrt_bcrb = 0.0;
  int trials = 0;
  int failures = 0;
};

struct RmseSweep {
  std::vector<RmseRecord> records;
  std::vector<TrialResult> trials;  // sorted by (snr index, trial)
};

RmseSweep run_rmse_vs_snr(const ExperimentConfig& config);
void write_rmse_csv(std::ostream& os, const ExperimentConfig& config, const RmseSweep& sweep);
void write_trials_csv(std::ostream& os, const ExperimentConfig& config, const RmseSweep& sweep);

struct EirpPoint {
  double r_m = 0.0;
  double baseline_w = 0.0;
  double mpe_w = 0.0;
  std::vector<double> proposed_w;   // per aperture
  std::vector<double> range_std_m;  // per aperture
};

std::vector<EirpPoint> run_eirp_vs_distance(const ExperimentConfig& config);
void write_eirp_csv(std::ostream& os, const ExperimentConfig& config, const std::vector<EirpPoint>& curve);

struct BoundsRow {
  double snr_db = 0.0;
  double sqrt_trace_crb = 0.0;
  double sqrt_trace_bcrb = 0.0;
  bool floor = false;  // prior dominates: trace CRB / trace BCRB < 0.5
};

std::vector<BoundsRow> run_bounds_table(const ExperimentConfig& config);
void write_bounds_csv(std::ostream& os, const ExperimentConfig& config, const std::vector<BoundsRow>& rows);

struct ImagingDemo {
  TrialResult result;
  double image_peak_oracle = 0.0, image_peak_imu = 0.0, image_peak_ekf = 0.0;
};

// Writes trajectory.csv, targets.csv, autofocus.csv, image_{oracle,imu,ekf}.{csv,pgm}
// and summary.csv into `out_dir`.
ImagingDemo run_imaging_demo(const ExperimentConfig& config, const std::filesystem::path& out_dir);

struct SelftestLine {
  std::string name;
  bool pass = false;
  std::string detail;
};

std::vector<SelftestLine> run_selftest();

// Metadata comment lines shared by every CSV output.
void write_metadata(std::ostream& os, const ExperimentConfig& config);

}  // namespace vasense
