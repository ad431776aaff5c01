#include "vasense/waveform.hpp"

#include <cmath>
#include <cstdlib>

namespace vasense {

RadioConfig::RadioConfig(double carrier_hz, double bandwidth_hz, int subcarriers)
    : carrier_hz_(carrier_hz), bandwidth_hz_(bandwidth_hz), subcarriers_(subcarriers) {
  require(carrier_hz > 0.0, "radio: carrier frequency must be positive");
  require(bandwidth_hz > 0.0, "radio: bandwidth must be positive");
  require(subcarriers >= 2, "radio: need at least two subcarriers");
}

namespace {

// nu = j*K + x with |x| <= K/2. S(jK + x) = (-1)^{j(K-1)} S(x).
struct Reduced {
  double x;
  double sign;
};

Reduced reduce(double nu, int subcarriers) {
  const double k = subcarriers;
  const double j = std::round(nu / k);
  const long long jj = std::llabs(static_cast<long long>(j));
  const bool odd = (jj % 2 == 1) && ((subcarriers - 1) % 2 == 1);
  return {nu - j * k, odd ? -1.0 : 1.0};
}

// Below this |x| the log-series is used; it also covers the removable
// singularity where sin(pi x / K) vanishes.
constexpr double kSeriesLimit = 1e-3;

struct Series {
  double a2;
  double a4;
};

Series series_coefficients(int subcarriers) {
  const double k2 = double(subcarriers) * subcarriers;
  const double pi2 = kPi * kPi;
  return {pi2 / 6.0 * (1.0 - 1.0 / k2), pi2 * pi2 / 180.0 * (1.0 - 1.0 / (k2 * k2))};
}

}  // namespace

double dirichlet_kernel(double nu, int subcarriers) {
  const auto [x, sign] = reduce(nu, subcarriers);
  if (std::abs(x) < kSeriesLimit) {
    const auto c = series_coefficients(subcarriers);
    const double x2 = x * x;
    return sign * std::exp(-c.a2 * x2 - c.a4 * x2 * x2);
  }
  return sign * std::sin(kPi * x) / (subcarriers * std::sin(kPi * x / subcarriers));
}

double dirichlet_derivative(double nu, int subcarriers) {
  const auto [x, sign] = reduce(nu, subcarriers);
  if (x == 0.0) return 0.0;
  if (std::abs(x) < kSeriesLimit) {
    const auto c = series_coefficients(subcarriers);
    const double x2 = x * x;
    const double s = std::exp(-c.a2 * x2 - c.a4 * x2 * x2);
    return sign * s * (-2.0 * c.a2 * x - 4.0 * c.a4 * x2 * x);
  }
  const double k = subcarriers;
  const double sn = std::sin(kPi * x), cn = std::cos(kPi * x);
  const double sd = std::sin(kPi * x / k), cdn = std::cos(kPi * x / k);
  return sign * kPi * (cn * sd - sn * cdn / k) / (k * sd * sd);
}

cd complex_amplitude(const Scatterer& scatterer, const LinkBudget& link, const RadioConfig& radio) {
  require(link.tx_power_w > 0.0 && link.tx_gain > 0.0 && link.rx_gain > 0.0,
          "complex_amplitude: powers and gains must be positive");
  require(scatterer.rcs_m2 >= 0.0, "complex_amplitude: negative RCS");
  const double lambda = radio.wavelength();
  const double four_pi_cubed = std::pow(4.0 * kPi, 3);
  const double magnitude =
      std::sqrt(link.tx_power_w * link.tx_gain * link.rx_gain * lambda * lambda * scatterer.rcs_m2 /
                four_pi_cubed) *
      scatterer.cross_pol;
  return std::polar(magnitude, scatterer.phase_rad);
}

void Scene::validate() const {
  require(noise_power >= 0.0, "scene: noise power must be non-negative");
  for (const auto& s : scatterers) {
    require(s.rcs_m2 >= 0.0, "scene: negative RCS");
    require(std::abs(s.cross_pol) <= 1.0, "scene: |cross_pol| must not exceed 1");
  }
}

void ArrayGeometry::validate() const {
  require(!offsets.empty(), "array: need at least one element");
  Vec3 mean = Vec3::Zero();
  for (const auto& d : offsets) mean += d;
  mean /= double(offsets.size());
  require(mean.norm() < 1e-9, "array: offsets must be centred on the phase centre");
}

ArrayGeometry ArrayGeometry::uniform_linear(int n, double pitch, const Vec3& axis) {
  require(n >= 1, "array: need at least one element");
  ArrayGeometry g;
  g.offsets.clear();
  const Vec3 dir = axis.normalized();
  for (int i = 0; i < n; ++i) g.offsets.push_back((i - 0.5 * (n - 1)) * pitch * dir);
  return g;
}

std::vector<cd> qpsk_symbols(int subcarriers, Rng& rng) {
  std::uniform_int_distribution<int> quadrant(0, 3);
  std::vector<cd> out(subcarriers);
  for (auto& s : out) s = std::polar(1.0, kPi / 4.0 + kPi / 2.0 * quadrant(rng));
  return out;
}

SubcarrierBlock synthesize_received(const Scene& scene, const ArrayGeometry& array, const Vec3& centre,
                                    std::span<const cd> symbols, const RadioConfig& radio, Rng& rng) {
  const int K = radio.subcarriers();
  const int N = array.size();
  require(int(symbols.size()) == K, "synthesize_received: symbol count must equal K");

  std::vector<cd> amplitudes;
  amplitudes.reserve(scene.scatterers.size());
  for (const auto& s : scene.scatterers) amplitudes.push_back(complex_amplitude(s, scene.link, radio));

  const double kappa = radio.wavenumber();
  SubcarrierBlock y = SubcarrierBlock::Zero(N, K);
  for (int n = 0; n < N; ++n) {
    const Vec3 antenna = centre + array.offsets[n];
    for (std::size_t q = 0; q < scene.scatterers.size(); ++q) {
      const double r = (scene.scatterers[q].position - antenna).norm();
      if (r < 1e-9) fail(ErrorCode::kInvalidArgument, "synthesize_received: scatterer coincides with antenna");
      const cd gain = amplitudes[q] / (r * r);
      const double nu = radio.delay_bins(r);
      // 2 pi f_k tau = kappa r + 2 pi k_c nu / K
      for (int k = 0; k < K; ++k) {
        const double phase = kappa * r + 2.0 * kPi * radio.centred_index(k) * nu / K;
        y(n, k) += gain * std::polar(1.0, -phase);
      }
    }
    for (int k = 0; k < K; ++k) y(n, k) = (y(n, k) + scene.self_interference) * symbols[k];
  }

  if (scene.noise_power > 0.0) {
    std::normal_distribution<double> normal(0.0, std::sqrt(scene.noise_power / 2.0));
    for (int n = 0; n < N; ++n)
      for (int k = 0; k < K; ++k) {
        const double re = normal(rng);
        const double im = normal(rng);
        y(n, k) += cd(re, im);
      }
  }
  return y;
}

SubcarrierBlock equalize_and_cancel(const SubcarrierBlock& received, std::span<const cd> symbols,
                                    cd self_interference_estimate) {
  require(int(symbols.size()) == received.cols(), "equalize_and_cancel: symbol count mismatch");
  SubcarrierBlock out(received.rows(), received.cols());
  for (Eigen::Index k = 0; k < received.cols(); ++k) {
    if (symbols[k] == cd(0.0, 0.0)) fail(ErrorCode::kInvalidArgument, "equalize_and_cancel: zero symbol");
    for (Eigen::Index n = 0; n < received.rows(); ++n)
      out(n, k) = received(n, k) / symbols[k] - self_interference_estimate;
  }
  return out;
}

namespace {

// W(k, l) = exp(j 2 pi k_c l / K) / K, phase reduced exactly on the integer
// numerator (2k - K + 1) l mod 2K.
Eigen::MatrixXcd idft_matrix(int K) {
  Eigen::MatrixXcd w(K, K);
  const long long two_k = 2LL * K;
  for (int k = 0; k < K; ++k)
    for (int l = 0; l < K; ++l) {
      long long num = (2LL * k - K + 1) * l % two_k;
      if (num < 0) num += two_k;
      w(k, l) = std::polar(1.0 / K, 2.0 * kPi * double(num) / double(two_k));
    }
  return w;
}

}  // namespace

SubcarrierBlock range_compress(const SubcarrierBlock& equalized) {
  const int K = int(equalized.cols());
  require(K >= 1, "range_compress: empty block");
  thread_local int cached_k = -1;
  thread_local Eigen::MatrixXcd cached;
  if (cached_k != K) {
    cached = idft_matrix(K);
    cached_k = K;
  }
  return equalized * cached;
}

cd estimate_self_interference(std::span<const SubcarrierBlock> frames,
                              std::span<const std::vector<cd>> symbols) {
  require(!frames.empty() && frames.size() == symbols.size(),
          "estimate_self_interference: need matching frames and symbols");
  cd sum{0.0, 0.0};
  double count = 0.0;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto eq = equalize_and_cancel(frames[f], symbols[f], cd(0.0, 0.0));
    sum += eq.sum();
    count += double(eq.size());
  }
  return sum / count;
}

RangeCube::RangeCube(int antennas, int acquisitions, const RadioConfig& radio)
    : antennas_(antennas), acquisitions_(acquisitions), radio_(radio) {
  require(antennas >= 1 && acquisitions >= 1, "range cube: dimensions must be positive");
  data_.assign(std::size_t(antennas) * acquisitions * radio.subcarriers(), cd(0.0, 0.0));
}

void RangeCube::set_acquisition(int m, const SubcarrierBlock& compressed) {
  require(compressed.rows() == antennas_ && compressed.cols() == bins(),
          "range cube: acquisition block has wrong shape");
  for (int n = 0; n < antennas_; ++n)
    for (int l = 0; l < bins(); ++l) at(n, m, l) = compressed(n, l);
}

RangeCube simulate_cube(const Scene& scene, const ArrayGeometry& array, std::span<const Vec3> positions,
                        const RadioConfig& radio, Rng& rng, const CubeOptions& options) {
  scene.validate();
  array.validate();
  const int M = int(positions.size());
  const int K = radio.subcarriers();

  cd gamma_hat = scene.self_interference;
  if (options.si_mode == SelfInterferenceMode::kEstimated) {
    Scene empty = scene;
    empty.scatterers.clear();
    std::vector<SubcarrierBlock> frames;
    std::vector<std::vector<cd>> syms;
    for (int f = 0; f < options.si_calibration_frames; ++f) {
      syms.push_back(qpsk_symbols(K, rng));
      frames.push_back(synthesize_received(empty, array, positions.front(), syms.back(), radio, rng));
    }
    gamma_hat = estimate_self_interference(frames, syms);
  }

  RangeCube cube(array.size(), M, radio);
  for (int m = 0; m < M; ++m) {
    const auto symbols = qpsk_symbols(K, rng);
    const auto y = synthesize_received(scene, array, positions[m], symbols, radio, rng);
    cube.set_acquisition(m, range_compress(equalize_and_cancel(y, symbols, gamma_hat)));
  }
  return cube;
}

}  // namespace vasense
