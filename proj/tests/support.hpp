#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "vasense/common.hpp"
#include "vasense/waveform.hpp"

namespace testing {

using vasense::cd;
using vasense::Vec3;

inline vasense::RadioConfig table_radio() { return {28e9, 200e6, 64}; }

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }
inline double rel_err(cd a, cd b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// Range that puts a scatterer exactly on bin `bins` of the compressed profile.
inline double range_for_bins(const vasense::RadioConfig& radio, double bins) {
  return bins * vasense::kSpeedOfLight / (2.0 * radio.bandwidth_hz());
}

inline std::vector<cd> ones(int n) { return std::vector<cd>(std::size_t(n), cd(1.0, 0.0)); }

}  // namespace testing
