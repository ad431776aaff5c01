#include "vasense/exposure.hpp"

#include <algorithm>
#include <cmath>

namespace vasense {

void MpePolicy::validate() const {
  require(power_density_limit > 0.0, "policy: power density limit must be positive");
  require(trigger_distance_m > 0.0 && trigger_distance_m < off_body_distance_m,
          "policy: need 0 < r_s < r_off");
  require(guard >= 0.0, "policy: guard multiplier must be non-negative");
  require(eirp_max_w > eirp_mpe_limit(trigger_distance_m, power_density_limit),
          "policy: EIRP_max must exceed the MPE limit at r_s");
  if (eirp_base_override_w) require(*eirp_base_override_w > 0.0, "policy: base EIRP override must be positive");
}

double MpePolicy::eirp_base() const {
  return eirp_base_override_w ? *eirp_base_override_w : eirp_mpe_limit(trigger_distance_m, power_density_limit);
}

double eirp_mpe_limit(double distance_m, double power_density_limit) {
  require(distance_m > 0.0, "eirp_mpe_limit: distance must be positive");
  require(power_density_limit > 0.0, "eirp_mpe_limit: power density limit must be positive");
  return 4.0 * kPi * power_density_limit * distance_m * distance_m;
}

double eirp_baseline(double distance_m, const MpePolicy& policy) {
  require(distance_m > 0.0, "eirp_baseline: distance must be positive");
  return distance_m <= policy.off_body_distance_m ? policy.eirp_base() : policy.eirp_max_w;
}

double effective_distance(double measured_m, double range_variance_m2, double guard) {
  require(measured_m > 0.0, "effective_distance: measured distance must be positive");
  require(range_variance_m2 >= 0.0, "effective_distance: variance must be non-negative");
  require(guard >= 0.0, "effective_distance: guard must be non-negative");
  return std::max(measured_m - guard * std::sqrt(range_variance_m2), 0.0);
}

double eirp_proposed(double measured_m, double range_variance_m2, const MpePolicy& policy) {
  const double r_eff = effective_distance(measured_m, range_variance_m2, policy.guard);
  const double limit = 4.0 * kPi * policy.power_density_limit * r_eff * r_eff;
  return std::min(limit, policy.eirp_max_w);
}

}  // namespace vasense
