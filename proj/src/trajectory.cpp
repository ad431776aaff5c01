#include "vasense/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <Eigen/Cholesky>

#include "vasense/csv.hpp"

namespace vasense {

int aperture_samples(double aperture_m, double wavelength_m) {
  require(aperture_m > 0.0, "trajectory: aperture must be positive");
  require(wavelength_m > 0.0, "trajectory: wavelength must be positive");
  // The tolerance keeps A = lambda/4 from rounding up to 2 samples.
  return int(std::ceil(4.0 * aperture_m / wavelength_m - 1e-9));
}

namespace {

// Points on y = a sin(2 pi c x / L), x in [-L/2, L/2], at the requested arc
// lengths, from a dense polyline.
std::vector<Vec3> sample_sinusoid(double length_x, double amplitude, double cycles,
                                  const std::vector<double>& arc) {
  constexpr int kDense = 20000;
  std::vector<double> xs(kDense + 1), cum(kDense + 1, 0.0);
  auto y_of = [&](double x) { return amplitude * std::sin(2.0 * kPi * cycles * x / length_x); };
  for (int i = 0; i <= kDense; ++i) xs[i] = -0.5 * length_x + length_x * i / kDense;
  for (int i = 1; i <= kDense; ++i)
    cum[i] = cum[i - 1] + std::hypot(xs[i] - xs[i - 1], y_of(xs[i]) - y_of(xs[i - 1]));

  std::vector<Vec3> out;
  out.reserve(arc.size());
  for (double s : arc) {
    auto it = std::lower_bound(cum.begin(), cum.end(), s);
    std::size_t i = std::clamp<std::size_t>(std::size_t(it - cum.begin()), 1, kDense);
    const double t = (s - cum[i - 1]) / (cum[i] - cum[i - 1]);
    const double x = xs[i - 1] + t * (xs[i] - xs[i - 1]);
    out.emplace_back(x, y_of(x), 0.0);
  }
  return out;
}

double sinusoid_length(double length_x, double amplitude, double cycles) {
  constexpr int kDense = 20000;
  double total = 0.0;
  double px = -0.5 * length_x, py = 0.0;
  for (int i = 1; i <= kDense; ++i) {
    const double x = -0.5 * length_x + length_x * i / kDense;
    const double y = amplitude * std::sin(2.0 * kPi * cycles * x / length_x);
    total += std::hypot(x - px, y - py);
    px = x;
    py = y;
  }
  return total;
}

}  // namespace

Trajectory generate_trajectory(TrajectoryKind kind, double aperture_m, const RadioConfig& radio,
                               double interval_s, const TrajectoryShape& shape) {
  require(aperture_m > 0.0, "trajectory: aperture must be positive");
  require(interval_s > 0.0, "trajectory: sampling interval must be positive");
  const int M = aperture_samples(aperture_m, radio.wavelength());
  require(M >= 2, "trajectory: aperture shorter than two lambda/4 samples");

  const double ds = aperture_m / M;
  std::vector<double> arc(M);
  for (int m = 0; m < M; ++m) arc[m] = (m + 0.5) * ds;

  Trajectory t;
  t.interval_s = interval_s;
  t.aperture_m = aperture_m;
  t.positions.reserve(M);

  switch (kind) {
    case TrajectoryKind::kLinearSweep:
      for (double s : arc) t.positions.emplace_back(s - 0.5 * aperture_m, 0.0, 0.0);
      break;
    case TrajectoryKind::kArc: {
      const double R = shape.arc_radius_m;
      require(R > 0.0, "trajectory: arc radius must be positive");
      for (double s : arc) {
        const double phi = (s - 0.5 * aperture_m) / R;
        t.positions.emplace_back(R * std::sin(phi), R * std::cos(phi) - R, 0.0);
      }
      break;
    }
    case TrajectoryKind::kSinusoidalPerturbed: {
      const double a = shape.perturbation_amplitude_m;
      const double c = shape.perturbation_cycles;
      // Bisect the x-extent so the curve length equals the aperture.
      double lo = 0.0, hi = aperture_m;
      for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        (sinusoid_length(mid, a, c) < aperture_m ? lo : hi) = mid;
      }
      t.positions = sample_sinusoid(0.5 * (lo + hi), a, c, arc);
      break;
    }
  }
  return t;
}

void ImuSpec::validate() const {
  require(accel_noise_std >= 0.0 && bias_std >= 0.0, "imu: standard deviations must be non-negative");
  require(interval_s > 0.0, "imu: sampling interval must be positive");
}

ImuRun simulate_imu(const Trajectory& trajectory, const ImuSpec& spec, Rng& rng, IntegrationScheme scheme) {
  spec.validate();
  const int M = trajectory.size();
  require(M >= 2, "simulate_imu: need at least two samples");
  const double T = spec.interval_s;

  std::normal_distribution<double> normal(0.0, 1.0);
  ImuRun run;
  for (int a = 0; a < 3; ++a) run.bias[a] = spec.bias_std * normal(rng);

  std::vector<Vec3> accel_error(M);
  for (int m = 0; m < M; ++m) {
    Vec3 n;
    for (int a = 0; a < 3; ++a) n[a] = spec.accel_noise_std * normal(rng);
    accel_error[m] = run.bias + n;
  }

  // Error-state integration; by linearity identical to integrating the
  // corrupted acceleration from the true initial state.
  run.errors.assign(M, Vec3::Zero());
  Vec3 vel = Vec3::Zero();
  for (int m = 1; m < M; ++m) {
    if (scheme == IntegrationScheme::kRectangle) {
      vel += T * accel_error[m];
      run.errors[m] = run.errors[m - 1] + T * vel;
    } else {
      const Vec3 prev = vel;
      vel += 0.5 * T * (accel_error[m] + accel_error[m - 1]);
      run.errors[m] = run.errors[m - 1] + 0.5 * T * (vel + prev);
    }
  }

  run.estimated.resize(M);
  run.measured_accel.resize(M);
  for (int m = 0; m < M; ++m) {
    run.estimated[m] = trajectory.positions[m] + run.errors[m];
    Vec3 a = Vec3::Zero();
    if (m >= 2)
      a = (trajectory.positions[m] - 2.0 * trajectory.positions[m - 1] + trajectory.positions[m - 2]) / (T * T);
    run.measured_accel[m] = a + accel_error[m];
  }
  return run;
}

Eigen::MatrixXd ErrorPrior::expanded() const {
  const Eigen::Index n = temporal.rows();
  Eigen::MatrixXd full = Eigen::MatrixXd::Zero(3 * n, 3 * n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      for (int a = 0; a < 3; ++a) full(3 * i + a, 3 * j + a) = temporal(i, j);
  return full;
}

ErrorPrior error_covariance(const ImuSpec& spec, int acquisitions) {
  spec.validate();
  require(acquisitions >= 2, "error_covariance: need at least two acquisitions");
  const int n = acquisitions - 1;
  const double T4 = std::pow(spec.interval_s, 4);
  const double sb2 = spec.bias_std * spec.bias_std;
  const double sa2 = spec.accel_noise_std * spec.accel_noise_std;

  ErrorPrior prior{Eigen::MatrixXd(n, n)};
  for (int i = 1; i <= n; ++i)
    for (int j = i; j <= n; ++j) {
      // sum_{l=1}^{k} (a-l)(b-l) with a=i+1, b=j+1, k=min(i,j), in exact integers
      const long long k = i, a = i + 1, b = j + 1;
      const long long noise_sum = k * a * b - (a + b) * k * (k + 1) / 2 + k * (k + 1) * (2 * k + 1) / 6;
      const double bias_term = sb2 * T4 / 4.0 * double(i) * (i + 1) * double(j) * (j + 1);
      const double v = bias_term + sa2 * T4 * double(noise_sum);
      prior.temporal(i - 1, j - 1) = v;
      prior.temporal(j - 1, i - 1) = v;
    }
  return prior;
}

Eigen::VectorXd sample_errors(const ErrorPrior& prior, Rng& rng) {
  const Eigen::Index n = prior.temporal.rows();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(prior.temporal);
  if (ldlt.info() != Eigen::Success) fail(ErrorCode::kNumerical, "sample_errors: factorisation failed");
  const Eigen::VectorXd d = ldlt.vectorD();
  const double scale = std::max(d.cwiseAbs().maxCoeff(), 0.0);
  if (d.minCoeff() < -1e-10 * scale)
    fail(ErrorCode::kNumerical, "sample_errors: temporal covariance is not positive semidefinite");
  const Eigen::VectorXd sqrt_d = d.cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd L = ldlt.matrixL();

  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd out(3 * n);
  for (int a = 0; a < 3; ++a) {
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
    const Eigen::VectorXd x = ldlt.transpositionsP().transpose() * (L * sqrt_d.cwiseProduct(z));
    for (Eigen::Index i = 0; i < n; ++i) out[3 * i + a] = x[i];
  }
  return out;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& trajectory, const ImuRun& run) {
  csv::header(os, {"m", "qx", "qy", "qz", "qhx", "qhy", "qhz"});
  for (int m = 0; m < trajectory.size(); ++m) {
    const Vec3& q = trajectory.positions[m];
    const Vec3& h = run.estimated[m];
    csv::Row(os) << m << q.x() << q.y() << q.z() << h.x() << h.y() << h.z();
  }
}

}  // namespace vasense
