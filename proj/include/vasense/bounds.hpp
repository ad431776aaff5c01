#pragma once

#include <array>
#include <vector>

#include <Eigen/Core>

#include "vasense/common.hpp"
#include "vasense/trajectory.hpp"
#include "vasense/waveform.hpp"

namespace vasense {

// Noiseless range-compressed response of one point scatterer seen from the
// true phase-centre positions. With the default single element at the phase
// centre this is the single-antenna model; extra elements add independent
// observations of the same (p, delta, alpha).
struct MeanModel {
  cd reflectivity{1.0, 0.0};
  Vec3 target = Vec3::Zero();
  std::vector<Vec3> positions;
  ArrayGeometry array;
  RadioConfig radio;

  int acquisitions() const { return static_cast<int>(positions.size()); }
  double range(int m, int n = 0) const;
  Vec3 look(int m, int n = 0) const;  // (p - p_nm) / r
};

// [s(nu)]_l = S(l - nu) and [s'(nu)]_l = S'(l - nu) (kernel derivative, so
// d s / d r = -(2B/c) s').
Eigen::VectorXd steering(double nu, int subcarriers);
Eigen::VectorXd steering_derivative(double nu, int subcarriers);

Eigen::VectorXcd mu_vector(const MeanModel& model, int m, int n = 0);
Eigen::VectorXcd mu_radial_derivative(const MeanModel& model, int m, int n = 0);
double radial_sensitivity(const MeanModel& model, int m, int n = 0);

// Fisher information for theta = [p (3), delta_1..delta_{M-1} (3 each),
// Re alpha, Im alpha]. J_dd is block diagonal and kept as its 3x3 blocks.
struct FimBlocks {
  int acquisitions = 0;
  Mat3 pp = Mat3::Zero();
  Eigen::MatrixXd pd;                 // 3 x 3(M-1)
  std::vector<Mat3> dd;               // M-1 diagonal blocks
  Eigen::Matrix<double, 3, 2> pa = Eigen::Matrix<double, 3, 2>::Zero();
  Eigen::MatrixXd da;                 // 3(M-1) x 2
  Eigen::Matrix2d aa = Eigen::Matrix2d::Zero();
  std::vector<double> sensitivity;    // I_m, element 0

  int size() const { return 3 + 3 * (acquisitions - 1) + 2; }
  Eigen::MatrixXd dense() const;
};

// noise_power is the per-sample variance of the range-compressed profile.
FimBlocks fisher_blocks(const MeanModel& model, double noise_power);

struct BcrbOptions {
  // Position components being estimated; the others are treated as known.
  std::array<bool, 3> axes{true, true, true};
  bool delta_posterior = false;
};

struct BcrbReport {
  Mat3 crb_known = Mat3::Zero();   // trajectory known, alpha nuisance
  Mat3 bcrb = Mat3::Zero();        // trajectory prior, alpha nuisance
  Mat3 bcrb_known_reflectivity = Mat3::Zero();
  Vec3 axis_std = Vec3::Zero();
  std::vector<double> sensitivity;
  Eigen::VectorXd delta_posterior_var;  // diag of Psi^-1 when requested

  double sqrt_trace_crb() const { return std::sqrt(crb_known.trace()); }
  double sqrt_trace_bcrb() const { return std::sqrt(bcrb.trace()); }
  double directional_variance(const Vec3& u) const { return u.dot(bcrb * u); }
};

BcrbReport bcrb_position(const FimBlocks& blocks, const ErrorPrior& prior, const BcrbOptions& options = {});

// Convenience: SNR |alpha / r0^2|^2 / sigma_w^2 per subcarrier sample,
// converted to the compressed-profile variance sigma_w^2 / K.
double compressed_noise_power(cd reflectivity, double reference_range, double snr_linear, int subcarriers);

}  // namespace vasense
