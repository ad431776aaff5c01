#include "vasense/autofocus.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <Eigen/Dense>

#include "vasense/csv.hpp"

namespace vasense {

using Mat9 = Eigen::Matrix<double, 9, 9>;

PhaseEstimate matched_filter_phase(std::span<const cd> profile, double nu, double noise_power,
                                   double threshold_sigma) {
  const int K = int(profile.size());
  require(K >= 2, "matched_filter_phase: profile too short");
  PhaseEstimate out;
  cd acc{0.0, 0.0};
  for (int l = 0; l < K; ++l) acc += profile[l] * dirichlet_kernel(l - nu, K);
  out.amplitude = acc;
  out.phase = std::arg(acc);
  const double mag = std::abs(acc);
  // ||s(nu)|| = 1, so the filtered noise has the per-bin variance.
  const double floor = threshold_sigma * std::sqrt(std::max(noise_power, 0.0));
  out.valid = mag > 0.0 && mag >= floor;
  out.snr = noise_power > 0.0 ? mag * mag / noise_power : std::numeric_limits<double>::infinity();
  return out;
}

PhaseSet measure_phases(const RangeCube& cube, int m, std::span<const Vec3> calibration, const Vec3& centre,
                        const ArrayGeometry& array, double noise_power, double inflation,
                        double threshold_sigma) {
  require(cube.antennas() == array.size(), "measure_phases: cube and array disagree on element count");
  PhaseSet set;
  set.antennas = array.size();
  set.points = int(calibration.size());
  const std::size_t total = std::size_t(set.antennas) * set.points;
  set.phase.resize(total);
  set.sigma.resize(total);
  set.valid.resize(total);
  for (int n = 0; n < set.antennas; ++n)
    for (int q = 0; q < set.points; ++q) {
      const double r = (calibration[q] - (centre + array.offsets[n])).norm();
      const auto est = matched_filter_phase(cube.profile(n, m), cube.radio().delay_bins(r), noise_power,
                                            threshold_sigma);
      const std::size_t i = std::size_t(n) * set.points + q;
      set.phase[i] = est.phase;
      set.valid[i] = est.valid;
      set.sigma[i] = std::isfinite(est.snr) && est.snr > 0.0 ? inflation / std::sqrt(2.0 * est.snr) : 0.0;
    }
  return set;
}

int PhaseObservation::valid_count() const { return int(std::count(valid.begin(), valid.end(), true)); }

PhaseObservation differential_phases(const PhaseSet& current, const PhaseSet& reference) {
  require(current.antennas == reference.antennas && current.points == reference.points,
          "differential_phases: phase sets have different shapes");
  const int n = int(current.phase.size());
  PhaseObservation obs;
  obs.psi.resize(n);
  obs.sigma.resize(n);
  obs.valid.resize(n);
  for (int i = 0; i < n; ++i) {
    obs.psi[i] = wrap_phase(current.phase[i] - reference.phase[i]);
    obs.sigma[i] = std::hypot(current.sigma[i], reference.sigma[i]);
    obs.valid[i] = current.valid[i] && reference.valid[i];
  }
  return obs;
}

EkfState initial_state(const ImuSpec& spec) {
  spec.validate();
  EkfState s;
  s.P.bottomRightCorner<3, 3>() = spec.bias_std * spec.bias_std * Mat3::Identity();
  return s;
}

Mat9 transition(const ImuSpec& spec, IntegrationScheme scheme) {
  const double T = spec.interval_s;
  const double db = scheme == IntegrationScheme::kRectangle ? T * T : 0.5 * T * T;
  Mat9 F = Mat9::Identity();
  F.block<3, 3>(0, 3) = T * Mat3::Identity();
  F.block<3, 3>(0, 6) = db * Mat3::Identity();
  F.block<3, 3>(3, 6) = T * Mat3::Identity();
  return F;
}

Mat9 process_noise(const ImuSpec& spec, IntegrationScheme scheme) {
  const double T = spec.interval_s;
  const double s2 = spec.accel_noise_std * spec.accel_noise_std;
  // Noise enters as the bias does: T^2 (or T^2/2) on delta, T on velocity.
  const double gd = scheme == IntegrationScheme::kRectangle ? T * T : 0.5 * T * T;
  const double gv = T;
  Mat9 Q = Mat9::Zero();
  Q.block<3, 3>(0, 0) = s2 * gd * gd * Mat3::Identity();
  Q.block<3, 3>(0, 3) = s2 * gd * gv * Mat3::Identity();
  Q.block<3, 3>(3, 0) = s2 * gd * gv * Mat3::Identity();
  Q.block<3, 3>(3, 3) = s2 * gv * gv * Mat3::Identity();
  return Q;
}

EkfState predict(const EkfState& state, const ImuSpec& spec, IntegrationScheme scheme) {
  spec.validate();
  const Mat9 F = transition(spec, scheme);
  EkfState out;
  out.x = F * state.x;
  out.P = F * state.P * F.transpose() + process_noise(spec, scheme);
  out.P = 0.5 * (out.P + out.P.transpose());
  return out;
}

Eigen::VectorXd predicted_phases(const Vec3& delta, std::span<const Vec3> calibration, const Vec3& estimate_m,
                                 const Vec3& estimate_0, const ArrayGeometry& array, const RadioConfig& radio) {
  const int Q = int(calibration.size());
  Eigen::VectorXd g(array.size() * Q);
  for (int n = 0; n < array.size(); ++n)
    for (int q = 0; q < Q; ++q) {
      const double r_m = (calibration[q] - (estimate_m - delta + array.offsets[n])).norm();
      const double r_0 = (calibration[q] - (estimate_0 + array.offsets[n])).norm();
      g[n * Q + q] = -radio.wavenumber() * (r_m - r_0);
    }
  return g;
}

UpdateResult update(const EkfState& predicted, const PhaseObservation& obs, std::span<const Vec3> calibration,
                    const Vec3& estimate_m, const Vec3& estimate_0, const ArrayGeometry& array,
                    const RadioConfig& radio) {
  const int Q = int(calibration.size());
  require(obs.size() == array.size() * Q, "update: observation size does not match array and calibration set");
  UpdateResult result;
  result.state = predicted;
  const int rows = obs.valid_count();
  result.rows = rows;
  if (rows == 0) return result;

  const Vec3 delta = predicted.delta();
  const Eigen::VectorXd g = predicted_phases(delta, calibration, estimate_m, estimate_0, array, radio);
  const double kappa = radio.wavenumber();

  // Whitened rows: H~ = R^-1/2 H, y~ = R^-1/2 y. The floor keeps sigma -> 0 usable.
  constexpr double kSigmaFloor = 1e-12;
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(rows, 9);
  Eigen::VectorXd y(rows), w(rows);
  int row = 0;
  for (int n = 0; n < array.size(); ++n)
    for (int q = 0; q < Q; ++q) {
      const int i = n * Q + q;
      if (!obs.valid[i]) continue;
      const Vec3 d = calibration[q] - (estimate_m - delta + array.offsets[n]);
      const Vec3 u = d / d.norm();
      const double s = std::max(obs.sigma[i], kSigmaFloor);
      // g = -kappa (r - r0) and dr/d delta = +u.
      H.block(row, 0, 1, 3) = (-kappa / s) * u.transpose();
      y[row] = wrap_phase(obs.psi[i] - g[i]) / s;
      w[row] = s;
      ++row;
    }

  const Eigen::MatrixXd PHt = predicted.P * H.transpose();
  Eigen::MatrixXd S = H * PHt;
  S.diagonal().array() += 1.0;
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success) fail(ErrorCode::kNumerical, "update: innovation covariance is not positive definite");
  const Eigen::MatrixXd K = llt.solve(PHt.transpose()).transpose();  // 9 x rows, whitened

  result.state.x = predicted.x + K * y;
  const Mat9 IKH = Mat9::Identity() - K * H;
  Mat9 P = IKH * predicted.P * IKH.transpose() + K * K.transpose();
  result.state.P = 0.5 * (P + P.transpose());

  result.innovation = y.cwiseProduct(w);
  result.innovation_rms = std::sqrt(result.innovation.squaredNorm() / rows);
  result.applied = true;
  return result;
}

int default_provisional_acquisitions(int acquisitions) {
  return std::max(8, int(std::ceil(acquisitions / 10.0)));
}

double estimate_noise_power(const RangeCube& cube) {
  std::vector<double> p;
  p.reserve(cube.data().size());
  for (const cd& v : cube.data()) p.push_back(std::norm(v));
  require(!p.empty(), "estimate_noise_power: empty cube");
  auto mid = p.begin() + p.size() / 2;
  std::nth_element(p.begin(), mid, p.end());
  // |z|^2 of circular Gaussian noise is exponential with median sigma^2 ln 2.
  return *mid / std::log(2.0);
}

AutofocusResult run_autofocus(const RangeCube& cube, std::span<const Vec3> estimate, const ArrayGeometry& array,
                              const ImuSpec& imu, const AutofocusOptions& options) {
  const int M = cube.acquisitions();
  require(int(estimate.size()) == M, "run_autofocus: trajectory length differs from cube");
  require(options.calibration_points >= 1, "run_autofocus: need at least one calibration point");
  const int M0 = options.provisional_acquisitions > 0 ? options.provisional_acquisitions
                                                      : default_provisional_acquisitions(M);
  require(M0 >= 2, "run_autofocus: provisional aperture needs at least two acquisitions");

  AutofocusResult result;
  result.noise_power = options.noise_power > 0.0 ? options.noise_power : estimate_noise_power(cube);

  if (!options.calibration.empty()) {
    result.calibration.points = options.calibration;
    result.calibration.magnitudes.assign(options.calibration.size(), 0.0);
    result.calibration.complete = true;
  } else {
    require(M > M0, "run_autofocus: aperture must be longer than the provisional aperture");
    result.provisional = options.search_grid;
    result.provisional.values.assign(result.provisional.voxels(), cd(0.0, 0.0));
    BackprojectOptions bp = options.backprojection;
    bp.acquisitions = M0;
    backproject(cube, estimate, array, result.provisional, bp);
    result.calibration = extract_calibration(result.provisional, options.calibration_points,
                                             options.calibration_separation_m, options.calibration_floor);
    if (result.calibration.size() == 0)
      fail(ErrorCode::kCalibration, "run_autofocus: no calibration points found in the provisional image");
  }
  const auto& calib = result.calibration.points;

  const PhaseSet reference = measure_phases(cube, 0, calib, estimate[0], array, result.noise_power,
                                            options.phase_inflation, options.threshold_sigma);

  EkfState state = initial_state(imu);
  result.states.push_back(state);
  result.corrected.push_back(estimate[0]);
  result.steps.push_back({0, Vec3::Zero(), state.P.trace(), 0.0, 0});

  for (int m = 1; m < M; ++m) {
    state = predict(state, imu, options.scheme);
    const Vec3 centre = estimate[m] - state.delta();
    const PhaseSet current = measure_phases(cube, m, calib, centre, array, result.noise_power,
                                            options.phase_inflation, options.threshold_sigma);
    const PhaseObservation obs = differential_phases(current, reference);
    const UpdateResult up = update(state, obs, calib, estimate[m], estimate[0], array, cube.radio());
    if (!up.applied) ++result.skipped_updates;
    state = up.state;
    result.states.push_back(state);
    result.corrected.push_back(estimate[m] - state.delta());
    result.steps.push_back({m, state.delta(), state.P.trace(), up.innovation_rms, up.rows});
  }
  return result;
}

void write_autofocus_csv(std::ostream& os, const AutofocusResult& result, std::span<const Vec3> truth) {
  require(truth.size() == result.steps.size(), "write_autofocus_csv: truth length differs from result");
  csv::header(os, {"m", "dhx", "dhy", "dhz", "dx", "dy", "dz", "trace_P", "innovation_rms"});
  for (std::size_t i = 0; i < result.steps.size(); ++i) {
    const auto& s = result.steps[i];
    csv::Row(os) << s.m << s.delta_hat.x() << s.delta_hat.y() << s.delta_hat.z() << truth[i].x() << truth[i].y()
                 << truth[i].z() << s.trace_p << s.innovation_rms;
  }
}

}  // namespace vasense
