#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "vasense/common.hpp"
#include "vasense/imaging.hpp"
#include "vasense/trajectory.hpp"
#include "vasense/waveform.hpp"

namespace vasense {

struct PhaseEstimate {
  cd amplitude{0.0, 0.0};
  double phase = 0.0;
  double snr = 0.0;  // |amplitude|^2 / noise_power
  bool valid = false;
};

// alpha = sum_l z[l] S(l - nu) over the full profile. Valid when |alpha|
// exceeds threshold_sigma noise standard deviations (and is nonzero).
PhaseEstimate matched_filter_phase(std::span<const cd> profile, double nu, double noise_power,
                                   double threshold_sigma = 3.0);

// Phases of every (element n, calibration point q) pair at one acquisition,
// stored at n * points + q.
struct PhaseSet {
  int antennas = 0;
  int points = 0;
  std::vector<double> phase;
  std::vector<double> sigma;  // phase standard deviation, rad
  std::vector<bool> valid;
};

PhaseSet measure_phases(const RangeCube& cube, int m, std::span<const Vec3> calibration, const Vec3& centre,
                        const ArrayGeometry& array, double noise_power, double inflation = 1.5,
                        double threshold_sigma = 3.0);

struct PhaseObservation {
  Eigen::VectorXd psi;    // wrapped to (-pi, pi]
  Eigen::VectorXd sigma;  // per-entry std, rad
  std::vector<bool> valid;

  int size() const { return int(psi.size()); }
  int valid_count() const;
};

// psi = wrap(phi_m - phi_0); an entry is valid only if both parents are.
PhaseObservation differential_phases(const PhaseSet& current, const PhaseSet& reference);

// [delta; velocity error; accelerometer bias], each 3-D.
struct EkfState {
  Eigen::Matrix<double, 9, 1> x = Eigen::Matrix<double, 9, 1>::Zero();
  Eigen::Matrix<double, 9, 9> P = Eigen::Matrix<double, 9, 9>::Zero();

  Vec3 delta() const { return x.head<3>(); }
};

// delta_0 = 0 and zero velocity error exactly; bias variance sigma_b^2.
EkfState initial_state(const ImuSpec& spec);

// Rectangle: delta+ = delta + T v + T^2 b, v+ = v + T b (the recursion behind
// the closed-form error covariance). Trapezoid: delta+ = delta + T v + T^2/2 b.
Eigen::Matrix<double, 9, 9> transition(const ImuSpec& spec, IntegrationScheme scheme);
Eigen::Matrix<double, 9, 9> process_noise(const ImuSpec& spec, IntegrationScheme scheme);

EkfState predict(const EkfState& state, const ImuSpec& spec, IntegrationScheme scheme = IntegrationScheme::kRectangle);

// Predicted differential phase g(delta) = -kappa (r_m(delta) - r_0) for each
// (n, q), with the true antenna position q^_m - delta + d_n.
Eigen::VectorXd predicted_phases(const Vec3& delta, std::span<const Vec3> calibration, const Vec3& estimate_m,
                                 const Vec3& estimate_0, const ArrayGeometry& array, const RadioConfig& radio);

struct UpdateResult {
  EkfState state;
  bool applied = false;
  int rows = 0;
  double innovation_rms = 0.0;
  Eigen::VectorXd innovation;  // valid rows only
};

UpdateResult update(const EkfState& predicted, const PhaseObservation& obs, std::span<const Vec3> calibration,
                    const Vec3& estimate_m, const Vec3& estimate_0, const ArrayGeometry& array,
                    const RadioConfig& radio);

struct AutofocusOptions {
  int provisional_acquisitions = 0;  // M0; 0 = max(8, ceil(M/10))
  int calibration_points = 3;
  double calibration_separation_m = 0.0;  // minimum distance between calibration points
  double calibration_floor = 0.0;         // minimum magnitude relative to the strongest point
  double phase_inflation = 1.5;
  double threshold_sigma = 3.0;
  double noise_power = 0.0;  // compressed-profile variance; <= 0 estimates it from the cube
  IntegrationScheme scheme = IntegrationScheme::kRectangle;
  BackprojectOptions backprojection;
  // Region searched for calibration points; must be set by the caller.
  ImageGrid search_grid;
  // Known calibration points; when non-empty the provisional image is skipped.
  std::vector<Vec3> calibration;
};

struct AutofocusStep {
  int m = 0;
  Vec3 delta_hat = Vec3::Zero();
  double trace_p = 0.0;
  double innovation_rms = 0.0;
  int rows = 0;
};

struct AutofocusResult {
  std::vector<Vec3> corrected;
  std::vector<EkfState> states;
  std::vector<AutofocusStep> steps;
  CalibrationSet calibration;
  ImageGrid provisional;
  double noise_power = 0.0;
  int skipped_updates = 0;
};

int default_provisional_acquisitions(int acquisitions);

// Median-based estimate of the per-bin noise variance of a range cube.
double estimate_noise_power(const RangeCube& cube);

AutofocusResult run_autofocus(const RangeCube& cube, std::span<const Vec3> estimate, const ArrayGeometry& array,
                              const ImuSpec& imu, const AutofocusOptions& options);

// Columns m,dhx,dhy,dhz,dx,dy,dz,trace_P,innovation_rms; `truth` holds
// delta_m for m = 0..M-1.
void write_autofocus_csv(std::ostream& os, const AutofocusResult& result, std::span<const Vec3> truth);

}  // namespace vasense
