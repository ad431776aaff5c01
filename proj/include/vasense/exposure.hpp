#pragma once

#include <optional>

#include "vasense/common.hpp"

namespace vasense {

struct MpePolicy {
  double power_density_limit = 10.0;  // S_lim, W/m^2
  double trigger_distance_m = 0.025;  // r_s
  double off_body_distance_m = 0.5;   // r_off
  double eirp_max_w = dbm_to_watts(34.0);
  double guard = 2.58;                // k
  std::optional<double> eirp_base_override_w = dbm_to_watts(25.0);

  void validate() const;
  // 4 pi S_lim r_s^2 unless overridden.
  double eirp_base() const;
};

// 4 pi S_lim r^2.
double eirp_mpe_limit(double distance_m, double power_density_limit);

// EIRP_base for r <= r_off, EIRP_max beyond.
double eirp_baseline(double distance_m, const MpePolicy& policy);

// max(r^ - k sqrt(crb_r), 0).
double effective_distance(double measured_m, double range_variance_m2, double guard);

// min(4 pi S_lim r_eff^2, EIRP_max).
double eirp_proposed(double measured_m, double range_variance_m2, const MpePolicy& policy);

}  // namespace vasense
