#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "doctest.h"
#include "shared_trials.hpp"
#include "support.hpp"
#include "vasense/autofocus.hpp"
#include "vasense/trajectory.hpp"

using namespace vasense;

namespace {

using Mat9 = Eigen::Matrix<double, 9, 9>;

Vec3 random_point(Rng& rng) {
  std::uniform_real_distribution<double> x(-0.2, 0.2), y(0.1, 0.5), z(-0.15, 0.15);
  return {x(rng), y(rng), z(rng)};
}

PhaseObservation observation(const Eigen::VectorXd& psi, double sigma) {
  PhaseObservation o;
  o.psi = psi.unaryExpr([](double v) { return wrap_phase(v); });
  o.sigma = Eigen::VectorXd::Constant(psi.size(), sigma);
  o.valid.assign(std::size_t(psi.size()), true);
  return o;
}

EkfState isotropic(double var) {
  EkfState s;
  s.P = var * Mat9::Identity();
  return s;
}

}  // namespace

TEST_SUITE("autofocus.property") {

TEST_CASE("innovations are wrapped before the gain") {
  const RadioConfig radio = testing::table_radio();
  const ArrayGeometry array = ArrayGeometry::uniform_linear(2, 0.5 * radio.wavelength(), Vec3::UnitZ());
  Rng rng = make_stream(51);
  std::uniform_real_distribution<double> big(-40.0, 40.0), small(-3e-4, 3e-4);
  std::uniform_int_distribution<int> wraps(-5, 5);
  for (int t = 0; t < 500; ++t) {
    const std::vector<Vec3> calib{random_point(rng), random_point(rng), random_point(rng)};
    const Vec3 est0(small(rng), 0.0, 0.0), est_m(0.02 + small(rng), small(rng), 0.0);
    EkfState prior = isotropic(1e-6);
    prior.x.head<3>() = Vec3(small(rng), small(rng), small(rng));
    Eigen::VectorXd psi(6);
    for (int i = 0; i < 6; ++i) psi[i] = big(rng);
    const auto r = update(prior, observation(psi, 0.05), calib, est_m, est0, array, radio);
    REQUIRE(r.innovation.size() == 6);
    for (int i = 0; i < 6; ++i) {
      REQUIRE(r.innovation[i] > -kPi);
      REQUIRE(r.innovation[i] <= kPi);
    }
    Eigen::VectorXd shifted = psi;
    for (int i = 0; i < 6; ++i) shifted[i] += 2 * kPi * wraps(rng);
    PhaseObservation o = observation(psi, 0.05);
    o.psi = shifted;  // unwrapped on purpose
    const auto r2 = update(prior, o, calib, est_m, est0, array, radio);
    REQUIRE((r2.state.x - r.state.x).norm() <= 1e-9 * (1.0 + r.state.x.norm()));
  }
}

TEST_CASE("covariance stays symmetric PSD over 10^4 steps") {
  const RadioConfig radio = testing::table_radio();
  const ArrayGeometry array = ArrayGeometry::uniform_linear(4, 0.5 * radio.wavelength(), Vec3::UnitZ());
  Rng rng = make_stream(52);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> sig(1e-3, 0.5);
  const ImuSpec spec = ImuSpec::consumer(0.05);
  EkfState st = initial_state(spec);
  const Vec3 est0 = Vec3::Zero();
  double worst = 0.0;
  for (int m = 1; m <= 10000; ++m) {
    st = predict(st, spec);
    const std::vector<Vec3> calib{random_point(rng), random_point(rng), random_point(rng)};
    const Vec3 est_m(1e-3 * g(rng), 1e-3 * g(rng), 1e-3 * g(rng));
    Eigen::VectorXd psi(12);
    for (int i = 0; i < 12; ++i) psi[i] = g(rng);
    PhaseObservation o = observation(psi, sig(rng));
    for (int i = 0; i < 12; ++i) o.valid[std::size_t(i)] = (m + i) % 5 != 0;
    st = update(st, o, calib, est_m, est0, array, radio).state;
    const double asym = (st.P - st.P.transpose()).norm();
    REQUIRE(asym <= 1e-12 * st.P.norm());
    const double tr = st.P.trace();
    const double lo = Eigen::SelfAdjointEigenSolver<Mat9>(0.5 * (st.P + st.P.transpose())).eigenvalues().minCoeff();
    worst = std::min(worst, lo / tr);
    REQUIRE(lo >= -1e-10 * tr);
  }
  MESSAGE("min eigenvalue / trace over the run: " << worst);
}

TEST_CASE("observability: spanning looks shrink every axis; collinear looks leave the normal plane alone") {
  const RadioConfig radio = testing::table_radio();
  const ArrayGeometry single = ArrayGeometry::single();
  Rng rng = make_stream(53);
  std::uniform_real_distribution<double> s(0.15, 0.6);
  for (int t = 0; t < 200; ++t) {
    const Vec3 est0 = Vec3::Zero(), est_m(0.01, 0.0, 0.0);
    const EkfState prior = isotropic(1e-6);
    Eigen::VectorXd psi = Eigen::VectorXd::Zero(3);

    // spanning: three independent directions
    std::vector<Vec3> calib{random_point(rng), random_point(rng), random_point(rng)};
    Mat3 U;
    for (int q = 0; q < 3; ++q) U.row(q) = (calib[q] - est_m).normalized();
    if (std::abs(U.determinant()) < 0.05) continue;
    const auto r = update(prior, observation(psi, 0.05), calib, est_m, est0, single, radio);
    for (int a = 0; a < 3; ++a) REQUIRE(r.state.P(a, a) < prior.P(a, a));

    // collinear: all points on one ray from the antenna
    const Vec3 u = (random_point(rng) - est_m).normalized();
    const std::vector<Vec3> ray{est_m + s(rng) * u, est_m + s(rng) * u, est_m + s(rng) * u};
    const auto rc = update(prior, observation(psi, 0.05), ray, est_m, est0, single, radio);
    const Vec3 v = u.unitOrthogonal(), w = u.cross(v);
    const Mat3 P0 = prior.P.topLeftCorner<3, 3>(), P1 = rc.state.P.topLeftCorner<3, 3>();
    REQUIRE(std::abs(v.dot(P1 * v) - v.dot(P0 * v)) <= 1e-9 * prior.P(0, 0));
    REQUIRE(std::abs(w.dot(P1 * w) - w.dot(P0 * w)) <= 1e-9 * prior.P(0, 0));
    REQUIRE(u.dot(P1 * u) < u.dot(P0 * u));
  }
}

TEST_CASE("differential phases ignore a constant reflectivity phase") {
  Rng rng = make_stream(54);
  std::uniform_real_distribution<double> ph(-kPi, kPi);
  for (int t = 0; t < 1000; ++t) {
    PhaseSet cur, ref;
    cur.antennas = ref.antennas = 2;
    cur.points = ref.points = 3;
    for (int i = 0; i < 6; ++i) {
      cur.phase.push_back(ph(rng));
      ref.phase.push_back(ph(rng));
      cur.sigma.push_back(0.1);
      ref.sigma.push_back(0.1);
      cur.valid.push_back(true);
      ref.valid.push_back(true);
    }
    const auto base = differential_phases(cur, ref);
    PhaseSet c2 = cur, r2 = ref;
    for (int q = 0; q < 3; ++q) {
      const double theta = ph(rng);
      for (int n = 0; n < 2; ++n) {
        c2.phase[std::size_t(n * 3 + q)] = wrap_phase(c2.phase[std::size_t(n * 3 + q)] + theta);
        r2.phase[std::size_t(n * 3 + q)] = wrap_phase(r2.phase[std::size_t(n * 3 + q)] + theta);
      }
    }
    const auto moved = differential_phases(c2, r2);
    for (int i = 0; i < 6; ++i) REQUIRE(std::abs(wrap_phase(moved.psi[i] - base.psi[i])) < 1e-12);
  }
}

TEST_CASE("measured differential phases ignore a common reflectivity phase") {
  const RadioConfig radio = testing::table_radio();
  const ArrayGeometry array = ArrayGeometry::uniform_linear(4, 0.5 * radio.wavelength(), Vec3::UnitZ());
  const auto traj = generate_trajectory(TrajectoryKind::kLinearSweep, 0.05, radio, 0.05);
  Rng rng = make_stream(55);
  std::uniform_real_distribution<double> ph(-kPi, kPi);
  for (int t = 0; t < 5; ++t) {
    Scene a;
    a.noise_power = 0.0;
    for (int q = 0; q < 3; ++q) a.scatterers.push_back({random_point(rng), 0.01, 1.0, ph(rng)});
    Scene b = a;
    const double common = ph(rng);
    for (auto& sc : b.scatterers) sc.phase_rad += common;
    const RangeCube ca = simulate_cube(a, array, traj.positions, radio, rng);
    const RangeCube cb = simulate_cube(b, array, traj.positions, radio, rng);
    std::vector<Vec3> calib;
    for (const auto& sc : a.scatterers) calib.push_back(sc.position);
    const auto ref_a = measure_phases(ca, 0, calib, traj.positions[0], array, 1e-30);
    const auto ref_b = measure_phases(cb, 0, calib, traj.positions[0], array, 1e-30);
    for (int m = 1; m < traj.size(); ++m) {
      const auto pa = differential_phases(measure_phases(ca, m, calib, traj.positions[m], array, 1e-30), ref_a);
      const auto pb = differential_phases(measure_phases(cb, m, calib, traj.positions[m], array, 1e-30), ref_b);
      for (int i = 0; i < pa.size(); ++i) REQUIRE(std::abs(wrap_phase(pa.psi[i] - pb.psi[i])) < 1e-9);
    }
  }
}

TEST_CASE("end to end: the filter beats raw IMU on matched seeds") {
  const auto& trials = shared_trials();
  int wins = 0;
  for (const auto& t : trials)
    if (t.err_ekf && t.err_imu && t.err_ekf->norm() <= t.err_imu->norm()) ++wins;
  MESSAGE("EKF <= IMU on " << wins << " of " << trials.size() << " pairs");
  CHECK(trials.size() == 200);
  CHECK(wins >= 0.95 * double(trials.size()));
}

}
