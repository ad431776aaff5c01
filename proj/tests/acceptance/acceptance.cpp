// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "fisher_oracle.hpp"
#include "vasense/experiments.hpp"

using namespace vasense;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int threads() { return std::max(1u, std::thread::hardware_concurrency()); }

// 1. analytic Fisher blocks against central differences
Outcome fisher_vs_fd() {
  Rng rng = make_stream(1001);
  std::uniform_real_distribution<double> x(-0.1, 0.1), y(0.15, 0.4), z(-0.05, 0.05), A(0.02, 0.06), ph(-kPi, kPi),
      snr(-10.0, 30.0);
  double worst = 0.0;
  for (int s = 0; s < 20; ++s) {
    MeanModel m;
    m.radio = {28e9, 200e6, 64};
    m.target = Vec3(x(rng), y(rng), z(rng));
    m.reflectivity = std::polar(2.4e-5, ph(rng));
    m.positions = generate_trajectory(TrajectoryKind::kLinearSweep, A(rng), m.radio, 0.05).positions;
    m.array = ArrayGeometry::uniform_linear(4, 0.5 * m.radio.wavelength(), Vec3::UnitZ());
    const double noise =
        compressed_noise_power(m.reflectivity, m.target.norm(), db_to_linear(snr(rng)), m.radio.subcarriers());
    const Eigen::MatrixXd J = fisher_blocks(m, noise).dense();
    worst = std::max(worst, testing::normalized_max_error(J, testing::finite_difference_fisher(m, noise)));
  }
  return {worst < 1e-4, fmt("20 scenes, max |J - J_fd|_ij / sqrt(J_ii J_jj) = %.3g (< 1e-4)", worst)};
}

// 2. Monte Carlo IMU error covariance against the closed form
Outcome imu_covariance() {
  const RadioConfig radio{28e9, 200e6, 64};
  const int M = 50;
  // ceil(4A / lambda) = 50
  const auto traj = generate_trajectory(TrajectoryKind::kLinearSweep, 49.5 * radio.wavelength() / 4, radio, 0.05);
  if (traj.size() != M) return {false, fmt("trajectory has %d acquisitions, wanted %d", traj.size(), M)};
  bool ok = true;
  std::string detail;
  int preset = 0;
  for (const ImuSpec& spec : {ImuSpec::consumer(0.05), ImuSpec::high_grade(0.05)}) {
    const Eigen::MatrixXd C = error_covariance(spec, M).temporal;
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(M - 1, M - 1);
    Rng rng = make_stream(1002, std::uint64_t(preset));
    const int runs = 10000;
    for (int r = 0; r < runs; ++r) {
      const auto run = simulate_imu(traj, spec, rng, IntegrationScheme::kRectangle);
      for (int a = 0; a < 3; ++a) {
        Eigen::VectorXd d(M - 1);
        for (int m = 1; m < M; ++m) d[m - 1] = run.errors[m][a];
        acc += d * d.transpose();
      }
    }
    acc /= 3.0 * runs;
    double diag = 0.0, scaled = 0.0, raw = 0.0;
    for (int i = 0; i < M - 1; ++i)
      for (int j = 0; j < M - 1; ++j) {
        const double e = std::abs(acc(i, j) - C(i, j));
        scaled = std::max(scaled, e / std::sqrt(C(i, i) * C(j, j)));
        raw = std::max(raw, e / std::abs(C(i, j)));
        if (i == j) diag = std::max(diag, e / C(i, i));
      }
    ok = ok && diag < 0.05 && raw < 0.05 && scaled < 0.05;
    detail += fmt("%s%s: diag %.3g, entries/sqrt(C_ii C_jj) %.3g (entrywise %.3g)", preset ? "; " : "",
                  preset ? "high" : "consumer", diag, scaled, raw);
    ++preset;
  }
  return {ok, detail + " (< 0.05, 10^4 runs, M = 50)"};
}

// 3. CRB scales as 1/SNR; BCRB monotone with a floor
Outcome bound_scaling() {
  const auto c = default_config();
  const double ref = target_bounds(c, 0.0).crb_known.trace();
  double dev = 0.0;
  bool monotone = true;
  double last = std::numeric_limits<double>::infinity(), at20 = 0.0, at30 = 0.0;
  for (double db = -10.0; db <= 30.0; db += 1.0) {
    const auto b = target_bounds(c, db);
    dev = std::max(dev, std::abs(b.crb_known.trace() * db_to_linear(db) / ref - 1.0));
    monotone = monotone && b.bcrb.trace() <= last * (1 + 1e-12);
    last = b.bcrb.trace();
    if (db == 20.0) at20 = last;
    if (db == 30.0) at30 = last;
  }
  const double change = std::abs(at30 - at20) / at20;
  return {dev < 1e-9 && monotone && change < 0.01,
          fmt("CRB x SNR max deviation %.2g (< 1e-9); BCRB monotone: %s; BCRB trace change 20->30 dB %.3g%% (< 1%%)",
              dev, monotone ? "yes" : "no", 100 * change)};
}

// 4. RMSE versus SNR at desk scale
std::vector<Outcome> rmse_sweep(double& seconds) {
  auto c = default_config();
  c.threads = threads();
  const auto t0 = std::chrono::steady_clock::now();
  const auto sweep = run_rmse_vs_snr(c);
  seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::map<double, RmseRecord> at;
  for (const auto& r : sweep.records) at[r.snr_db] = r;

  Outcome a{true, ""};
  for (double db : {0.0, 5.0, 10.0, 15.0, 20.0}) {
    const double ratio = at[db].rmse_oracle / at[db].sqrt_crb;
    a.pass = a.pass && ratio >= 1.0 && ratio <= 2.0;
    a.detail += fmt("%s%g dB %.3f", a.detail.empty() ? "" : ", ", db, ratio);
  }
  a.detail = "oracle RMSE / sqrt CRB: " + a.detail + " (in [1, 2])";

  const double floor = at[30.0].sqrt_bcrb, imu = at[30.0].rmse_imu;
  Outcome b{imu >= 0.5 * floor && imu <= 2.0 * floor,
            fmt("IMU RMSE at 30 dB %.4g m vs BCRB floor %.4g m, ratio %.2f (in [0.5, 2])", imu, floor, imu / floor)};

  Outcome cc{true, ""};
  for (double db : {10.0, 15.0, 20.0, 25.0, 30.0}) {
    const double ratio = at[db].rmse_ekf / at[db].rmse_imu;
    cc.pass = cc.pass && ratio <= 0.3;
    cc.detail += fmt("%s%g dB %.3f", cc.detail.empty() ? "" : ", ", db, ratio);
  }
  cc.detail = "EKF / IMU RMSE: " + cc.detail + " (<= 0.3)";

  const double ekf = at[30.0].rmse_ekf / at[20.0].rmse_ekf, crb = at[30.0].sqrt_crb / at[20.0].sqrt_crb;
  Outcome d{ekf > 0.7 && std::abs(crb - 0.32) < 0.01,
            fmt("EKF RMSE 30/20 dB %.3f (> 0.7), CRB ratio %.3f (about 0.32); sweep took %.0f s (< 1800 s)", ekf, crb,
                seconds)};
  if (seconds >= 1800) a.pass = b.pass = cc.pass = d.pass = false;
  return {a, b, cc, d};
}

// 5. imaging demo ordering
Outcome imaging_demo(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto demo = run_imaging_demo(default_config(), work / "demo");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double o = demo.image_peak_oracle, e = demo.image_peak_ekf, i = demo.image_peak_imu;
  const auto& r = demo.result;
  if (!r.err_imu || !r.err_ekf) return {false, "demo trial failed: " + r.failure};
  const double ei = r.err_imu->norm(), ee = r.err_ekf->norm();
  const bool ok = o >= e && e >= 0.9 * o && 0.9 * o >= i && ei > ee && secs < 300;
  return {ok, fmt("peaks oracle %.4g, EKF %.4g (%.3f of oracle), IMU %.4g (%.3f); error IMU %.4g m > EKF %.4g m; %.0f s",
                  o, e, e / o, i, i / o, ei, ee, secs)};
}

// 6. EIRP gain of the 50 cm aperture
Outcome eirp_gain() {
  auto c = default_config();
  const auto t0 = std::chrono::steady_clock::now();
  const auto curve = run_eirp_vs_distance(c);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto it = std::find(c.eirp_apertures_m.begin(), c.eirp_apertures_m.end(), 0.5);
  if (it == c.eirp_apertures_m.end()) return {false, "no 50 cm aperture in the default curve set"};
  const std::size_t k = std::size_t(it - c.eirp_apertures_m.begin());
  const double cap = c.policy.eirp_max_w;
  double best = -1e9;
  bool in_band = false, saturated = true;
  for (const auto& p : curve) {
    const double gain = watts_to_dbm(p.proposed_w[k]) - watts_to_dbm(p.baseline_w);
    if (p.r_m >= 0.10 - 1e-12 && p.r_m <= 0.20 + 1e-12) {
      best = std::max(best, gain);
      in_band = in_band || std::abs(gain - 8.0) <= 2.0;
    }
    if (p.r_m >= 0.20 - 1e-12) saturated = saturated && std::abs(p.proposed_w[k] - cap) <= 1e-9 * cap;
  }
  return {in_band && saturated && secs < 120,
          fmt("A = 50 cm: largest gain in [10, 20] cm %.2f dB, a point within 8 +- 2 dB: %s; at EIRP_max for r >= 20 cm: "
              "%s; %.1f s",
              best, in_band ? "yes" : "no", saturated ? "yes" : "no", secs)};
}

// 7. coverage of the guard margin
Outcome coverage() {
  const auto c = default_config();
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng = make_stream(c.seed, 7);
  std::uniform_real_distribution<double> r(0.03, 0.6), sd(1e-4, 2e-2);
  std::normal_distribution<double> g;
  const int draws = 10000;
  int covered = 0;
  for (int t = 0; t < draws; ++t) {
    const double truth = r(rng), s = sd(rng);
    const double measured = truth + s * g(rng);
    if (truth >= effective_distance(measured, s * s, 2.58)) ++covered;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double p = double(covered) / draws;
  return {p >= 0.985 && p <= 0.995 && secs < 10,
          fmt("Pr{r_true >= r_eff} = %.4f over %d draws, k = 2.58 (in [0.985, 0.995]); %.2f s", p, draws, secs)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::map<std::string, std::string> csv_files(const fs::path& dir) {
  std::map<std::string, std::string> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".csv") out[e.path().filename().string()] = slurp(e.path());
  return out;
}

// 8. every subcommand twice with one seed
Outcome cli_determinism(const fs::path& work) {
  const std::vector<std::pair<std::string, std::string>> runs{
      {"rmse-sweep", "--trials 3"}, {"eirp-curves", ""}, {"imaging-demo", ""}, {"bounds-table", ""}, {"selftest", ""}};
  bool ok = true;
  std::string detail;
  for (const auto& [cmd, extra] : runs) {
    std::vector<std::map<std::string, std::string>> got;
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path out = work / "cli" / (cmd + "_" + std::to_string(rep));
      fs::remove_all(out);
      fs::create_directories(out);
      const std::string line = std::string("\"") + VASENSE_CLI + "\" " + cmd + " --seed 1 --out \"" + out.string() +
                               "\" " + extra + " > \"" + (out / "stdout.txt").string() + "\" 2>&1";
      // selftest exits nonzero when a check fails; the CSV is still written
      const int rc = std::system(line.c_str());
      if (rc != 0 && cmd != "selftest") ok = false;
      got.push_back(csv_files(out));
    }
    const bool same = !got[0].empty() && got[0] == got[1];
    ok = ok && same;
    detail += fmt("%s%s %zu csv %s", detail.empty() ? "" : ", ", cmd.c_str(), got[0].size(),
                  same ? "identical" : "DIFFER");
  }
  return {ok, detail};
}

// 9. property suites
Outcome property_suites(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string line = std::string("\"") + VASENSE_PROPERTY_TESTS + "\" > \"" +
                           (work / "property.txt").string() + "\" 2>&1";
  const int rc = std::system(line.c_str());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::string summary;
  std::istringstream in(slurp(work / "property.txt"));
  for (std::string l; std::getline(in, l);)
    if (l.find("test cases:") != std::string::npos) summary = l.substr(l.find("test cases:"));
  return {rc == 0 && secs < 300, fmt("%s; %.0f s (< 300 s); log %s", summary.c_str(), secs,
                                     (work / "property.txt").string().c_str())};
}

}  // namespace

int main() {
  const fs::path work = ACCEPTANCE_WORK_DIR;
  fs::create_directories(work);
  int failed = 0;
  auto report = [&](const std::string& id, const Outcome& o) {
    std::printf("%s criterion %s: %s\n", o.pass ? "PASS" : "FAIL", id.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  };
  auto guarded = [&](const std::string& id, const std::function<Outcome()>& fn) {
    try {
      report(id, fn());
    } catch (const std::exception& e) {
      report(id, {false, std::string("exception: ") + e.what()});
    }
  };
  auto timed = [](double limit, const std::function<Outcome()>& fn) {
    return [=] {
      const auto t0 = std::chrono::steady_clock::now();
      Outcome o = fn();
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      o.detail += fmt("; %.1f s (< %.0f s)", secs, limit);
      o.pass = o.pass && secs < limit;
      return o;
    };
  };

  guarded("1", timed(60, fisher_vs_fd));
  guarded("2", timed(60, imu_covariance));
  guarded("3", bound_scaling);
  try {
    double secs = 0.0;
    const auto parts = rmse_sweep(secs);
    const char* ids[] = {"4a", "4b", "4c", "4d"};
    for (int i = 0; i < 4; ++i) report(ids[i], parts[std::size_t(i)]);
  } catch (const std::exception& e) {
    report("4", {false, std::string("exception: ") + e.what()});
  }
  guarded("5", [&] { return imaging_demo(work); });
  guarded("6", eirp_gain);
  guarded("7", coverage);
  guarded("8", [&] { return cli_determinism(work); });
  guarded("9", [&] { return property_suites(work); });

  std::printf("%d criteria failed\n", failed);
  return failed ? 1 : 0;
}
