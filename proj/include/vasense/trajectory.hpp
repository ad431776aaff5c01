#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "vasense/common.hpp"
#include "vasense/waveform.hpp"

namespace vasense {

enum class TrajectoryKind { kLinearSweep, kArc, kSinusoidalPerturbed };

struct TrajectoryShape {
  double arc_radius_m = 0.25;
  double perturbation_amplitude_m = 1e-3;
  double perturbation_cycles = 1.0;
};

// Phase-centre path sampled every `interval_s`. Samples sit at the midpoints
// of M equal arc-length cells of a path of length `aperture_m`, centred on
// the origin and swept along +x; spacing is aperture/M <= lambda/4.
struct Trajectory {
  std::vector<Vec3> positions;
  double interval_s = 0.0;
  double aperture_m = 0.0;

  int size() const { return static_cast<int>(positions.size()); }
};

// M = ceil(4A / lambda).
int aperture_samples(double aperture_m, double wavelength_m);

Trajectory generate_trajectory(TrajectoryKind kind, double aperture_m, const RadioConfig& radio,
                               double interval_s, const TrajectoryShape& shape = {});

struct ImuSpec {
  double accel_noise_std = 0.0;  // sigma_a, m/s^2 per sample
  double bias_std = 0.0;         // sigma_b, m/s^2
  double interval_s = 20e-3;

  void validate() const;

  // MEMS-class and tactical-class accelerometer figures.
  static ImuSpec consumer(double interval_s) { return {5e-2, 2e-2, interval_s}; }
  static ImuSpec high_grade(double interval_s) { return {5e-3, 1e-3, interval_s}; }
};

// Rectangle integrates the sample at the current index on both stages and is
// the convention under which the closed-form error covariance is exact.
// Trapezoid averages adjacent samples.
enum class IntegrationScheme { kRectangle, kTrapezoid };

struct ImuRun {
  std::vector<Vec3> estimated;      // q^_m
  std::vector<Vec3> errors;         // delta_m = q^_m - q_m, delta_0 = 0
  std::vector<Vec3> measured_accel; // a~_m = a_m + b + n_m
  Vec3 bias = Vec3::Zero();
};

ImuRun simulate_imu(const Trajectory& trajectory, const ImuSpec& spec, Rng& rng,
                    IntegrationScheme scheme = IntegrationScheme::kRectangle);

// Temporal correlation C_t of the stacked error [delta_1 .. delta_{M-1}];
// the full covariance is C_t kron I_3.
struct ErrorPrior {
  Eigen::MatrixXd temporal;

  int acquisitions() const { return int(temporal.rows()) + 1; }
  Eigen::MatrixXd expanded() const;
  ErrorPrior scaled(double factor) const { return {temporal * factor}; }
};

ErrorPrior error_covariance(const ImuSpec& spec, int acquisitions);

// Draw of the stacked 3(M-1) error vector, laid out [d1x d1y d1z d2x ...].
Eigen::VectorXd sample_errors(const ErrorPrior& prior, Rng& rng);

// Columns m,qx,qy,qz,qhx,qhy,qhz.
void write_trajectory_csv(std::ostream& os, const Trajectory& trajectory, const ImuRun& run);

}  // namespace vasense
