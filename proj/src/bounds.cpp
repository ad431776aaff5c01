#include "vasense/bounds.hpp"

#include <cmath>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

namespace vasense {

double MeanModel::range(int m, int n) const {
  return (target - (positions[m] + array.offsets[n])).norm();
}

Vec3 MeanModel::look(int m, int n) const {
  const Vec3 d = target - (positions[m] + array.offsets[n]);
  return d / d.norm();
}

Eigen::VectorXd steering(double nu, int subcarriers) {
  Eigen::VectorXd s(subcarriers);
  for (int l = 0; l < subcarriers; ++l) s[l] = dirichlet_kernel(l - nu, subcarriers);
  return s;
}

Eigen::VectorXd steering_derivative(double nu, int subcarriers) {
  Eigen::VectorXd s(subcarriers);
  for (int l = 0; l < subcarriers; ++l) s[l] = dirichlet_derivative(l - nu, subcarriers);
  return s;
}

namespace {

struct Geometry {
  double r;
  double nu;
  cd carrier;  // exp(-j kappa r) / r^2
};

Geometry geometry(const MeanModel& model, int m, int n) {
  require(m >= 0 && m < model.acquisitions(), "mean model: acquisition index out of range");
  require(n >= 0 && n < model.array.size(), "mean model: element index out of range");
  const double r = model.range(m, n);
  require(r > 0.0, "mean model: target coincides with antenna");
  return {r, model.radio.delay_bins(r), std::polar(1.0 / (r * r), -model.radio.wavenumber() * r)};
}

// beta s - (2B/c) s'
Eigen::VectorXcd radial_shape(const MeanModel& model, const Geometry& g) {
  const int K = model.radio.subcarriers();
  const cd beta(-2.0 / g.r, -model.radio.wavenumber());
  const double slope = 2.0 * model.radio.bandwidth_hz() / kSpeedOfLight;
  return beta * steering(g.nu, K).cast<cd>() - slope * steering_derivative(g.nu, K).cast<cd>();
}

}  // namespace

Eigen::VectorXcd mu_vector(const MeanModel& model, int m, int n) {
  const Geometry g = geometry(model, m, n);
  return (model.reflectivity * g.carrier) * steering(g.nu, model.radio.subcarriers()).cast<cd>();
}

Eigen::VectorXcd mu_radial_derivative(const MeanModel& model, int m, int n) {
  const Geometry g = geometry(model, m, n);
  return (model.reflectivity * g.carrier) * radial_shape(model, g);
}

double radial_sensitivity(const MeanModel& model, int m, int n) {
  const Geometry g = geometry(model, m, n);
  return radial_shape(model, g).squaredNorm() / steering(g.nu, model.radio.subcarriers()).squaredNorm();
}

Eigen::MatrixXd FimBlocks::dense() const {
  const int D = 3 * (acquisitions - 1);
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(size(), size());
  J.block(0, 0, 3, 3) = pp;
  J.block(0, 3, 3, D) = pd;
  J.block(3, 0, D, 3) = pd.transpose();
  for (int i = 0; i < acquisitions - 1; ++i) J.block(3 + 3 * i, 3 + 3 * i, 3, 3) = dd[i];
  J.block(0, 3 + D, 3, 2) = pa;
  J.block(3 + D, 0, 2, 3) = pa.transpose();
  J.block(3, 3 + D, D, 2) = da;
  J.block(3 + D, 3, 2, D) = da.transpose();
  J.block(3 + D, 3 + D, 2, 2) = aa;
  return J;
}

FimBlocks fisher_blocks(const MeanModel& model, double noise_power) {
  require(noise_power > 0.0, "fisher_blocks: noise power must be positive");
  const int M = model.acquisitions();
  require(M >= 2, "fisher_blocks: need at least two acquisitions");
  model.array.validate();
  const int K = model.radio.subcarriers();
  const double scale = 2.0 / noise_power;

  FimBlocks J;
  J.acquisitions = M;
  J.pd = Eigen::MatrixXd::Zero(3, 3 * (M - 1));
  J.dd.assign(M - 1, Mat3::Zero());
  J.da = Eigen::MatrixXd::Zero(3 * (M - 1), 2);
  J.sensitivity.resize(M);

  for (int m = 0; m < M; ++m) {
    for (int n = 0; n < model.array.size(); ++n) {
      const Geometry g = geometry(model, m, n);
      const Vec3 u = model.look(m, n);
      const Eigen::VectorXcd shape = radial_shape(model, g);
      const Eigen::VectorXcd a_re = g.carrier * steering(g.nu, K).cast<cd>();  // d mu / d Re(alpha)
      const Eigen::VectorXcd v = model.reflectivity * g.carrier * shape;     // d mu / d r
      if (n == 0) J.sensitivity[m] = shape.squaredNorm() / steering(g.nu, K).squaredNorm();

      const double w = scale * v.squaredNorm();
      const cd va = v.dot(a_re);  // v^H a_re
      // d mu / d Im(alpha) = j a_re, so Re(v^H j a_re) = -Im(v^H a_re).
      const Eigen::Vector2d c(scale * va.real(), -scale * va.imag());
      const Mat3 uu = u * u.transpose();

      J.pp += w * uu;
      J.pa += u * c.transpose();
      J.aa += scale * a_re.squaredNorm() * Eigen::Matrix2d::Identity();
      if (m >= 1) {
        const int i = m - 1;
        J.pd.block(0, 3 * i, 3, 3) += w * uu;
        J.dd[i] += w * uu;
        J.da.block(3 * i, 0, 3, 2) += u * c.transpose();
      }
    }
  }
  return J;
}

namespace {

Mat3 invert_axes(const Mat3& info, const std::array<bool, 3>& axes, const std::string& what) {
  int idx[3];
  int n = 0;
  for (int a = 0; a < 3; ++a)
    if (axes[a]) idx[n++] = a;
  require(n > 0, "bcrb: at least one position axis must be estimated");
  Eigen::MatrixXd sub(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) sub(i, j) = 0.5 * (info(idx[i], idx[j]) + info(idx[j], idx[i]));
  Eigen::LLT<Eigen::MatrixXd> llt(sub);
  if (llt.info() != Eigen::Success) fail(ErrorCode::kSingular, "bcrb: " + what + " is singular");
  const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(n, n));
  Mat3 out = Mat3::Zero();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out(idx[i], idx[j]) = inv(i, j);
  return out;
}

// R with C = R R^T from the eigendecomposition; tolerates a semidefinite C.
Eigen::MatrixXd prior_sqrt(const Eigen::MatrixXd& C) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(C);
  if (eig.info() != Eigen::Success) fail(ErrorCode::kNumerical, "bcrb: prior factorisation failed");
  const Eigen::VectorXd d = eig.eigenvalues();
  const double tol = 1e-10 * std::max(d.cwiseAbs().maxCoeff(), 0.0);
  if (d.size() > 0 && d.minCoeff() < -tol)
    fail(ErrorCode::kNumerical, "bcrb: trajectory prior is not positive semidefinite");
  return eig.eigenvectors() * d.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

}  // namespace

BcrbReport bcrb_position(const FimBlocks& blocks, const ErrorPrior& prior, const BcrbOptions& options) {
  const int M = blocks.acquisitions;
  require(M >= 2, "bcrb: need at least two acquisitions");
  require(prior.acquisitions() == M, "bcrb: prior size does not match the Fisher blocks");
  const int n = M - 1;
  const int D = 3 * n;

  BcrbReport report;
  report.sensitivity = blocks.sensitivity;

  Eigen::LLT<Eigen::Matrix2d> aa(blocks.aa);
  if (aa.info() != Eigen::Success) fail(ErrorCode::kSingular, "bcrb: reflectivity block J_aa is singular");
  const Mat3 info_known = blocks.pp - blocks.pa * aa.solve(blocks.pa.transpose());
  report.crb_known = invert_axes(info_known, options.axes, "known-trajectory position information");

  // Psi^-1 = R (I + R^T J_dd R)^-1 R^T with C_delta = R R^T, R = R_t kron I_3.
  // This never inverts C_t, so a nearly singular prior stays well posed.
  const Eigen::MatrixXd Rt = prior_sqrt(prior.temporal);
  Eigen::MatrixXd inner = Eigen::MatrixXd::Identity(D, D);
  for (int a = 0; a < 3; ++a)
    for (int b = a; b < 3; ++b) {
      Eigen::VectorXd jab(n);
      for (int k = 0; k < n; ++k) jab[k] = blocks.dd[k](a, b);
      const Eigen::MatrixXd t = Rt.transpose() * jab.asDiagonal() * Rt;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          inner(3 * i + a, 3 * j + b) += t(i, j);
          if (a != b) inner(3 * i + b, 3 * j + a) += t(j, i);
        }
    }
  Eigen::LLT<Eigen::MatrixXd> llt(inner);
  if (llt.info() != Eigen::Success) fail(ErrorCode::kSingular, "bcrb: prior-augmented block Psi is singular");

  // Whitened cross terms W = L^-1 R^T [J_dp J_da].
  Eigen::MatrixXd X(D, 5);
  X.leftCols(3) = blocks.pd.transpose();
  X.rightCols(2) = blocks.da;
  Eigen::MatrixXd RX(D, 5);
  for (int a = 0; a < 3; ++a) {
    Eigen::MatrixXd xa(n, 5);
    for (int k = 0; k < n; ++k) xa.row(k) = X.row(3 * k + a);
    const Eigen::MatrixXd ya = Rt.transpose() * xa;
    for (int k = 0; k < n; ++k) RX.row(3 * k + a) = ya.row(k);
  }
  const Eigen::MatrixXd W = llt.matrixL().solve(RX);
  const Eigen::MatrixXd gram = W.transpose() * W;

  const Mat3 lost_pp = gram.topLeftCorner(3, 3);
  const Eigen::Matrix<double, 3, 2> lost_pa = gram.topRightCorner(3, 2);
  const Eigen::Matrix2d s_alpha = blocks.aa - gram.bottomRightCorner(2, 2);
  Eigen::LLT<Eigen::Matrix2d> sa(s_alpha);
  if (sa.info() != Eigen::Success) fail(ErrorCode::kSingular, "bcrb: reflectivity Schur complement S_alpha is singular");
  const Eigen::Matrix<double, 3, 2> G = blocks.pa - lost_pa;

  const Mat3 info_refl = blocks.pp - lost_pp;
  const Mat3 info = info_refl - G * sa.solve(G.transpose());
  report.bcrb = invert_axes(info, options.axes, "position information matrix");
  report.bcrb_known_reflectivity = invert_axes(info_refl, options.axes, "known-reflectivity position information");
  for (int a = 0; a < 3; ++a) report.axis_std[a] = std::sqrt(std::max(report.bcrb(a, a), 0.0));

  if (options.delta_posterior) {
    Eigen::MatrixXd RtD = Eigen::MatrixXd::Zero(D, D);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k)
        for (int a = 0; a < 3; ++a) RtD(3 * i + a, 3 * k + a) = Rt(k, i);
    const Eigen::MatrixXd B = llt.matrixL().solve(RtD);
    report.delta_posterior_var = B.colwise().squaredNorm().transpose();
  }
  return report;
}

double compressed_noise_power(cd reflectivity, double reference_range, double snr_linear, int subcarriers) {
  require(reference_range > 0.0 && snr_linear > 0.0 && subcarriers >= 1,
          "compressed_noise_power: invalid arguments");
  const double signal = std::norm(reflectivity) / std::pow(reference_range, 4);
  return signal / snr_linear / subcarriers;
}

}  // namespace vasense
