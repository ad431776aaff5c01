#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "vasense/common.hpp"

namespace vasense {

// OFDM grid. Subcarrier k sits at carrier_hz + (k - (K-1)/2) * spacing, i.e.
// carrier_hz is the band centre and the fast-time kernel is the real
// Dirichlet kernel.
class RadioConfig {
 public:
  RadioConfig() = default;
  RadioConfig(double carrier_hz, double bandwidth_hz, int subcarriers);

  double carrier_hz() const { return carrier_hz_; }
  double bandwidth_hz() const { return bandwidth_hz_; }
  int subcarriers() const { return subcarriers_; }

  double spacing_hz() const { return bandwidth_hz_ / subcarriers_; }
  double wavelength() const { return kSpeedOfLight / carrier_hz_; }
  // Round-trip carrier wavenumber 4*pi/lambda.
  double wavenumber() const { return 4.0 * kPi / wavelength(); }
  double range_resolution() const { return kSpeedOfLight / (2.0 * bandwidth_hz_); }

  // Centred subcarrier index k - (K-1)/2.
  double centred_index(int k) const { return k - 0.5 * (subcarriers_ - 1); }
  double subcarrier_hz(int k) const { return carrier_hz_ + centred_index(k) * spacing_hz(); }
  // Range expressed in range-compressed bins, 2*B*r/c.
  double delay_bins(double range_m) const {
    return 2.0 * bandwidth_hz_ * range_m / kSpeedOfLight;
  }

 private:
  double carrier_hz_ = 28e9;
  double bandwidth_hz_ = 200e6;
  int subcarriers_ = 64;
};

// S(nu) = sin(pi nu) / (K sin(pi nu / K)); finite at nu = jK by continuity.
double dirichlet_kernel(double nu, int subcarriers);
double dirichlet_derivative(double nu, int subcarriers);

struct Scatterer {
  Vec3 position = Vec3::Zero();
  double rcs_m2 = 0.01;
  double cross_pol = 1.0;  // chi in (0, 1]
  double phase_rad = 0.0;
};

struct LinkBudget {
  double tx_power_w = 1.0;
  double tx_gain = 1.0;
  double rx_gain = 1.0;
};

cd complex_amplitude(const Scatterer& scatterer, const LinkBudget& link, const RadioConfig& radio);

struct Scene {
  std::vector<Scatterer> scatterers;
  LinkBudget link;
  cd self_interference{0.0, 0.0};
  double noise_power = 1.0;  // sigma_w^2 per subcarrier sample

  void validate() const;
};

// Element offsets from the array phase centre.
struct ArrayGeometry {
  std::vector<Vec3> offsets{Vec3::Zero()};

  int size() const { return static_cast<int>(offsets.size()); }
  void validate() const;

  static ArrayGeometry single() { return {}; }
  // n elements spaced `pitch` apart along `axis`, centred on the origin.
  static ArrayGeometry uniform_linear(int n, double pitch, const Vec3& axis);
};

// Rows: antenna n, columns: subcarrier k.
using SubcarrierBlock = Eigen::MatrixXcd;

std::vector<cd> qpsk_symbols(int subcarriers, Rng& rng);

// Frequency-domain received samples for one acquisition with the phase
// centre at `centre`. Noise is drawn from `rng` only when noise_power > 0.
SubcarrierBlock synthesize_received(const Scene& scene, const ArrayGeometry& array, const Vec3& centre,
                                    std::span<const cd> symbols, const RadioConfig& radio, Rng& rng);

SubcarrierBlock equalize_and_cancel(const SubcarrierBlock& received, std::span<const cd> symbols,
                                    cd self_interference_estimate);

// z_n[l] = (1/K) sum_k Y~_n[k] exp(j 2 pi (k - (K-1)/2) l / K).
SubcarrierBlock range_compress(const SubcarrierBlock& equalized);

// Mean of Y/S over all samples of target-free calibration frames.
cd estimate_self_interference(std::span<const SubcarrierBlock> frames,
                              std::span<const std::vector<cd>> symbols);

// Range-compressed profiles z_{n,m}[l].
class RangeCube {
 public:
  RangeCube() = default;
  RangeCube(int antennas, int acquisitions, const RadioConfig& radio);

  int antennas() const { return antennas_; }
  int acquisitions() const { return acquisitions_; }
  int bins() const { return radio_.subcarriers(); }
  const RadioConfig& radio() const { return radio_; }

  cd& at(int n, int m, int l) { return data_[offset(n, m) + l]; }
  cd at(int n, int m, int l) const { return data_[offset(n, m) + l]; }

  std::span<cd> profile(int n, int m) { return {data_.data() + offset(n, m), std::size_t(bins())}; }
  std::span<const cd> profile(int n, int m) const {
    return {data_.data() + offset(n, m), std::size_t(bins())};
  }

  void set_acquisition(int m, const SubcarrierBlock& compressed);

  std::vector<cd>& data() { return data_; }
  const std::vector<cd>& data() const { return data_; }

 private:
  std::size_t offset(int n, int m) const {
    return (std::size_t(m) * antennas_ + n) * std::size_t(bins());
  }

  int antennas_ = 0;
  int acquisitions_ = 0;
  RadioConfig radio_;
  std::vector<cd> data_;
};

enum class SelfInterferenceMode { kOracle, kEstimated };

struct CubeOptions {
  SelfInterferenceMode si_mode = SelfInterferenceMode::kOracle;
  int si_calibration_frames = 4;
};

// Runs synthesis, equalisation and range compression for every acquisition
// along `positions` (true phase-centre positions).
RangeCube simulate_cube(const Scene& scene, const ArrayGeometry& array, std::span<const Vec3> positions,
                        const RadioConfig& radio, Rng& rng, const CubeOptions& options = {});

}  // namespace vasense
