#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "vasense/bounds.hpp"

namespace testing {

// Stack of mean vectors over (m, n) with theta = [p, delta_1..delta_{M-1}, Re a, Im a].
// delta_m enters through the true position q^_m - delta_m, so moving delta_m
// by +h moves the antenna by -h.
inline Eigen::VectorXcd mean_stack(const vasense::MeanModel& base, const Eigen::VectorXd& theta) {
  vasense::MeanModel m = base;
  const int M = base.acquisitions();
  m.target = base.target + theta.head<3>();
  for (int i = 1; i < M; ++i) m.positions[i] = base.positions[i] - theta.segment<3>(3 * i);
  m.reflectivity = base.reflectivity + vasense::cd(theta[3 * M], theta[3 * M + 1]);
  const int K = base.radio.subcarriers();
  const int N = base.array.size();
  Eigen::VectorXcd out(std::size_t(M) * N * K);
  for (int i = 0; i < M; ++i)
    for (int n = 0; n < N; ++n) out.segment((std::size_t(i) * N + n) * K, K) = vasense::mu_vector(m, i, n);
  return out;
}

// Central-difference Fisher matrix in the same parameter order as FimBlocks::dense().
inline Eigen::MatrixXd finite_difference_fisher(const vasense::MeanModel& model, double noise_power,
                                                double h_position = 1e-7) {
  const int M = model.acquisitions();
  const int P = 3 * M + 2;
  const double h_alpha = 1e-3 * std::abs(model.reflectivity) + 1e-30;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(P);
  const Eigen::Index len = mean_stack(model, theta).size();
  Eigen::MatrixXcd D(len, P);
  for (int i = 0; i < P; ++i) {
    const double h = i < 3 * M ? h_position : h_alpha;
    Eigen::VectorXd tp = theta, tm = theta;
    tp[i] += h;
    tm[i] -= h;
    D.col(i) = (mean_stack(model, tp) - mean_stack(model, tm)) / (2.0 * h);
  }
  return (2.0 / noise_power) * (D.adjoint() * D).real();
}

// max_ij |A - B|_ij / sqrt(B_ii B_jj): scale-free error over blocks of very
// different magnitude.
inline double normalized_max_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < b.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      const double scale = std::sqrt(std::abs(b(i, i) * b(j, j)));
      if (scale > 0.0) worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / scale);
    }
  return worst;
}

// Position block of the inverse of the dense Fisher matrix with C_delta^-1
// added to the delta block (C_t must be invertible).
inline Eigen::Matrix3d dense_bcrb(const vasense::FimBlocks& J, const vasense::ErrorPrior& prior) {
  Eigen::MatrixXd full = J.dense();
  const Eigen::MatrixXd cinv = prior.temporal.inverse();
  const int n = int(cinv.rows());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int a = 0; a < 3; ++a) full(3 + 3 * i + a, 3 + 3 * j + a) += cinv(i, j);
  return full.inverse().topLeftCorner<3, 3>();
}

}  // namespace testing
