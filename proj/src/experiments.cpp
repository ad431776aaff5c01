#include "vasense/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <yaml-cpp/yaml.h>

#include "vasense/csv.hpp"

namespace vasense {

namespace {

constexpr const char* kSnrDefinition =
    "per-subcarrier echo SNR |alpha/r0^2|^2/sigma_w^2, r0 = target distance from aperture centre";

const char* kind_name(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::kLinearSweep: return "linear-sweep";
    case TrajectoryKind::kArc: return "arc";
    case TrajectoryKind::kSinusoidalPerturbed: return "sinusoidal-perturbed";
  }
  return "linear-sweep";
}

TrajectoryKind parse_kind(const std::string& s) {
  if (s == "linear-sweep") return TrajectoryKind::kLinearSweep;
  if (s == "arc") return TrajectoryKind::kArc;
  if (s == "sinusoidal-perturbed") return TrajectoryKind::kSinusoidalPerturbed;
  fail(ErrorCode::kConfig, "config: unknown trajectory kind '" + s + "'");
}

const char* scheme_name(IntegrationScheme s) { return s == IntegrationScheme::kRectangle ? "rectangle" : "trapezoid"; }

IntegrationScheme parse_scheme(const std::string& s) {
  if (s == "rectangle") return IntegrationScheme::kRectangle;
  if (s == "trapezoid") return IntegrationScheme::kTrapezoid;
  fail(ErrorCode::kConfig, "config: unknown integration scheme '" + s + "'");
}

const char* si_name(SelfInterferenceMode m) { return m == SelfInterferenceMode::kOracle ? "oracle" : "estimated"; }

SelfInterferenceMode parse_si(const std::string& s) {
  if (s == "oracle") return SelfInterferenceMode::kOracle;
  if (s == "estimated") return SelfInterferenceMode::kEstimated;
  fail(ErrorCode::kConfig, "config: unknown self-interference mode '" + s + "'");
}

void resolve_imu(ExperimentConfig& c) {
  if (c.imu_preset == "consumer") {
    c.imu = ImuSpec::consumer(c.interval_s);
  } else if (c.imu_preset == "high") {
    c.imu = ImuSpec::high_grade(c.interval_s);
  } else if (c.imu_preset == "custom") {
    c.imu.interval_s = c.interval_s;
  } else {
    fail(ErrorCode::kConfig, "config: unknown IMU preset '" + c.imu_preset + "'");
  }
}

void check_keys(const YAML::Node& node, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!node) return;
  if (!node.IsMap()) fail(ErrorCode::kConfig, "config: section '" + section + "' must be a mapping");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!ok.count(key)) fail(ErrorCode::kConfig, "config: unknown key '" + key + "' in " + section);
  }
}

template <typename T>
void read(const YAML::Node& node, const char* key, T& out) {
  if (node && node[key]) {
    try {
      out = node[key].as<T>();
    } catch (const YAML::Exception& e) {
      fail(ErrorCode::kConfig, std::string("config: bad value for '") + key + "': " + e.what());
    }
  }
}

Vec3 read_vec3(const YAML::Node& n, const std::string& what) {
  if (!n.IsSequence() || n.size() != 3) fail(ErrorCode::kConfig, "config: " + what + " must be a 3-element list");
  return {n[0].as<double>(), n[1].as<double>(), n[2].as<double>()};
}

void emit_vec3(YAML::Emitter& e, const Vec3& v) {
  e << YAML::Flow << YAML::BeginSeq << v.x() << v.y() << v.z() << YAML::EndSeq;
}

void emit_list(YAML::Emitter& e, const std::vector<double>& v) {
  e << YAML::Flow << YAML::BeginSeq;
  for (double x : v) e << x;
  e << YAML::EndSeq;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (trials < 1) fail(ErrorCode::kConfig, "config: trials must be at least 1");
  if (threads < 1) fail(ErrorCode::kConfig, "config: threads must be at least 1");
  if (snr_db.empty()) fail(ErrorCode::kConfig, "config: SNR grid is empty");
  if (scatterers.empty()) fail(ErrorCode::kConfig, "config: scene needs at least one scatterer");
  if (target < 0 || target >= int(scatterers.size())) fail(ErrorCode::kConfig, "config: target index out of range");
  if (elements < 1) fail(ErrorCode::kConfig, "config: need at least one array element");
  if (aperture_m <= 0.0 || interval_s <= 0.0) fail(ErrorCode::kConfig, "config: aperture and interval must be positive");
  if (search_half_width_m <= 0.0 || zoom_cells < 3 || zoom_factor <= 1.0 || zoom_levels < 0)
    fail(ErrorCode::kConfig, "config: invalid localization grid settings");
  if (taps < 0 || taps > radio.subcarriers()) fail(ErrorCode::kConfig, "config: taps must be in [0, K]");
  if (eirp_apertures_m.empty()) fail(ErrorCode::kConfig, "config: exposure aperture list is empty");
  if (!(r_min_m > 0.0 && r_max_m >= r_min_m && r_step_m > 0.0)) fail(ErrorCode::kConfig, "config: invalid distance grid");
  try {
    imu.validate();
    policy.validate();
    Scene s{scatterers, link, self_interference, 1.0};
    s.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kConfig, std::string("config: ") + e.what());
  }
}

ArrayGeometry ExperimentConfig::array() const {
  const double pitch = element_pitch_m > 0.0 ? element_pitch_m : 0.5 * radio.wavelength();
  return ArrayGeometry::uniform_linear(elements, pitch, element_axis);
}

double ExperimentConfig::grid_spacing() const {
  return grid_spacing_m > 0.0 ? grid_spacing_m : 0.25 * radio.wavelength();
}

double ExperimentConfig::coarse_spacing() const {
  return coarse_spacing_m > 0.0 ? coarse_spacing_m : 0.5 * radio.wavelength();
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  auto polar_xy = [](double r, double deg) {
    const double t = deg * kPi / 180.0;
    return Vec3(r * std::sin(t), r * std::cos(t), 0.0);
  };
  // One isolated point target at broadside; see configs/three_scatterers.yaml
  // for the multi-scatterer scene.
  c.scatterers = {{polar_xy(0.25, 0.0), 0.01, 1.0, 0.0}};
  c.target = 0;
  resolve_imu(c);
  c.validate();
  return c;
}

ExperimentConfig parse_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    fail(ErrorCode::kConfig, std::string("config: YAML parse error: ") + e.what());
  }
  ExperimentConfig c = default_config();
  if (!root || root.IsNull()) return c;
  check_keys(root, "top level",
             {"seed", "trials", "threads", "output_dir", "radio", "link", "scene", "array", "trajectory", "imu",
              "sweep", "imaging", "autofocus", "exposure", "demo"});
  try {
    read(root, "seed", c.seed);
    read(root, "trials", c.trials);
    read(root, "threads", c.threads);
    read(root, "output_dir", c.output_dir);

    if (auto n = root["radio"]) {
      check_keys(n, "radio", {"carrier_hz", "bandwidth_hz", "subcarriers"});
      double fc = c.radio.carrier_hz(), b = c.radio.bandwidth_hz();
      int k = c.radio.subcarriers();
      read(n, "carrier_hz", fc);
      read(n, "bandwidth_hz", b);
      read(n, "subcarriers", k);
      c.radio = RadioConfig(fc, b, k);
    }
    if (auto n = root["link"]) {
      check_keys(n, "link", {"tx_power_w", "tx_gain", "rx_gain"});
      read(n, "tx_power_w", c.link.tx_power_w);
      read(n, "tx_gain", c.link.tx_gain);
      read(n, "rx_gain", c.link.rx_gain);
    }
    if (auto n = root["scene"]) {
      check_keys(n, "scene", {"target", "self_interference", "si_mode", "scatterers"});
      read(n, "target", c.target);
      if (n["self_interference"]) {
        const auto s = n["self_interference"];
        if (!s.IsSequence() || s.size() != 2) fail(ErrorCode::kConfig, "config: self_interference must be [re, im]");
        c.self_interference = {s[0].as<double>(), s[1].as<double>()};
      }
      if (n["si_mode"]) c.si_mode = parse_si(n["si_mode"].as<std::string>());
      if (n["scatterers"]) {
        c.scatterers.clear();
        for (const auto& s : n["scatterers"]) {
          check_keys(s, "scene.scatterers", {"position", "rcs_m2", "cross_pol", "phase_rad"});
          Scatterer sc;
          if (!s["position"]) fail(ErrorCode::kConfig, "config: scatterer needs a position");
          sc.position = read_vec3(s["position"], "scatterer position");
          read(s, "rcs_m2", sc.rcs_m2);
          read(s, "cross_pol", sc.cross_pol);
          read(s, "phase_rad", sc.phase_rad);
          c.scatterers.push_back(sc);
        }
      }
    }
    if (auto n = root["array"]) {
      check_keys(n, "array", {"elements", "pitch_m", "axis"});
      read(n, "elements", c.elements);
      read(n, "pitch_m", c.element_pitch_m);
      if (n["axis"]) c.element_axis = read_vec3(n["axis"], "array axis");
    }
    if (auto n = root["trajectory"]) {
      check_keys(n, "trajectory",
                 {"kind", "aperture_m", "interval_s", "arc_radius_m", "perturbation_amplitude_m",
                  "perturbation_cycles"});
      if (n["kind"]) c.trajectory = parse_kind(n["kind"].as<std::string>());
      read(n, "aperture_m", c.aperture_m);
      read(n, "interval_s", c.interval_s);
      read(n, "arc_radius_m", c.shape.arc_radius_m);
      read(n, "perturbation_amplitude_m", c.shape.perturbation_amplitude_m);
      read(n, "perturbation_cycles", c.shape.perturbation_cycles);
    }
    std::optional<double> accel, bias;
    if (auto n = root["imu"]) {
      check_keys(n, "imu", {"preset", "accel_noise_std", "bias_std", "scheme"});
      read(n, "preset", c.imu_preset);
      if (n["accel_noise_std"]) accel = n["accel_noise_std"].as<double>();
      if (n["bias_std"]) bias = n["bias_std"].as<double>();
      if (n["scheme"]) c.scheme = parse_scheme(n["scheme"].as<std::string>());
    }
    resolve_imu(c);
    if ((accel && *accel != c.imu.accel_noise_std) || (bias && *bias != c.imu.bias_std)) {
      // Explicit figures override the preset; matching ones (as in a dump) keep it.
      if (accel) c.imu.accel_noise_std = *accel;
      if (bias) c.imu.bias_std = *bias;
      c.imu_preset = "custom";
    }
    if (auto n = root["sweep"]) {
      check_keys(n, "sweep", {"snr_db"});
      read(n, "snr_db", c.snr_db);
    }
    if (auto n = root["imaging"]) {
      check_keys(n, "imaging",
                 {"grid_spacing_m", "coarse_spacing_m", "search_half_width_m", "zoom_levels", "zoom_cells", "zoom_factor", "taps"});
      read(n, "grid_spacing_m", c.grid_spacing_m);
      read(n, "coarse_spacing_m", c.coarse_spacing_m);
      read(n, "search_half_width_m", c.search_half_width_m);
      read(n, "zoom_levels", c.zoom_levels);
      read(n, "zoom_cells", c.zoom_cells);
      read(n, "zoom_factor", c.zoom_factor);
      read(n, "taps", c.taps);
    }
    if (auto n = root["autofocus"]) {
      check_keys(n, "autofocus",
                 {"provisional_acquisitions", "calibration_points", "calibration_separation_m", "calibration_floor",
                  "phase_inflation", "threshold_sigma",
                  "calibration_margin_m", "calibration_spacing_m"});
      read(n, "provisional_acquisitions", c.provisional_acquisitions);
      read(n, "calibration_points", c.calibration_points);
      read(n, "calibration_separation_m", c.calibration_separation_m);
      read(n, "calibration_floor", c.calibration_floor);
      read(n, "phase_inflation", c.phase_inflation);
      read(n, "threshold_sigma", c.threshold_sigma);
      read(n, "calibration_margin_m", c.calibration_margin_m);
      read(n, "calibration_spacing_m", c.calibration_spacing_m);
    }
    if (auto n = root["exposure"]) {
      check_keys(n, "exposure",
                 {"power_density_limit", "trigger_distance_m", "off_body_distance_m", "eirp_max_dbm",
                  "eirp_base_override_dbm", "guard", "snr_db", "apertures_m", "r_min_m", "r_max_m", "r_step_m"});
      read(n, "power_density_limit", c.policy.power_density_limit);
      read(n, "trigger_distance_m", c.policy.trigger_distance_m);
      read(n, "off_body_distance_m", c.policy.off_body_distance_m);
      if (n["eirp_max_dbm"]) c.policy.eirp_max_w = dbm_to_watts(n["eirp_max_dbm"].as<double>());
      if (n["eirp_base_override_dbm"]) {
        if (n["eirp_base_override_dbm"].IsNull())
          c.policy.eirp_base_override_w.reset();
        else
          c.policy.eirp_base_override_w = dbm_to_watts(n["eirp_base_override_dbm"].as<double>());
      }
      read(n, "guard", c.policy.guard);
      read(n, "snr_db", c.eirp_snr_db);
      read(n, "apertures_m", c.eirp_apertures_m);
      read(n, "r_min_m", c.r_min_m);
      read(n, "r_max_m", c.r_max_m);
      read(n, "r_step_m", c.r_step_m);
    }
    if (auto n = root["demo"]) {
      check_keys(n, "demo", {"snr_db", "trial", "spacing_m"});
      read(n, "snr_db", c.demo_snr_db);
      read(n, "trial", c.demo_trial);
      read(n, "spacing_m", c.demo_spacing_m);
    }
  } catch (const YAML::Exception& e) {
    fail(ErrorCode::kConfig, std::string("config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfig) throw;
    fail(ErrorCode::kConfig, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const ExperimentConfig& c) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  e << YAML::Key << "seed" << YAML::Value << c.seed;
  e << YAML::Key << "trials" << YAML::Value << c.trials;
  e << YAML::Key << "radio" << YAML::Value << YAML::BeginMap << YAML::Key << "carrier_hz" << YAML::Value
    << c.radio.carrier_hz() << YAML::Key << "bandwidth_hz" << YAML::Value << c.radio.bandwidth_hz() << YAML::Key
    << "subcarriers" << YAML::Value << c.radio.subcarriers() << YAML::EndMap;
  e << YAML::Key << "link" << YAML::Value << YAML::BeginMap << YAML::Key << "tx_power_w" << YAML::Value
    << c.link.tx_power_w << YAML::Key << "tx_gain" << YAML::Value << c.link.tx_gain << YAML::Key << "rx_gain"
    << YAML::Value << c.link.rx_gain << YAML::EndMap;

  e << YAML::Key << "scene" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "target" << YAML::Value << c.target;
  e << YAML::Key << "self_interference" << YAML::Value << YAML::Flow << YAML::BeginSeq
    << c.self_interference.real() << c.self_interference.imag() << YAML::EndSeq;
  e << YAML::Key << "si_mode" << YAML::Value << si_name(c.si_mode);
  e << YAML::Key << "scatterers" << YAML::Value << YAML::BeginSeq;
  for (const auto& s : c.scatterers) {
    e << YAML::BeginMap << YAML::Key << "position" << YAML::Value;
    emit_vec3(e, s.position);
    e << YAML::Key << "rcs_m2" << YAML::Value << s.rcs_m2 << YAML::Key << "cross_pol" << YAML::Value << s.cross_pol
      << YAML::Key << "phase_rad" << YAML::Value << s.phase_rad << YAML::EndMap;
  }
  e << YAML::EndSeq << YAML::EndMap;

  e << YAML::Key << "array" << YAML::Value << YAML::BeginMap << YAML::Key << "elements" << YAML::Value << c.elements
    << YAML::Key << "pitch_m" << YAML::Value << c.element_pitch_m << YAML::Key << "axis" << YAML::Value;
  emit_vec3(e, c.element_axis);
  e << YAML::EndMap;

  e << YAML::Key << "trajectory" << YAML::Value << YAML::BeginMap << YAML::Key << "kind" << YAML::Value
    << kind_name(c.trajectory) << YAML::Key << "aperture_m" << YAML::Value << c.aperture_m << YAML::Key
    << "interval_s" << YAML::Value << c.interval_s << YAML::Key << "arc_radius_m" << YAML::Value
    << c.shape.arc_radius_m << YAML::Key << "perturbation_amplitude_m" << YAML::Value
    << c.shape.perturbation_amplitude_m << YAML::Key << "perturbation_cycles" << YAML::Value
    << c.shape.perturbation_cycles << YAML::EndMap;

  e << YAML::Key << "imu" << YAML::Value << YAML::BeginMap << YAML::Key << "preset" << YAML::Value << c.imu_preset
    << YAML::Key << "accel_noise_std" << YAML::Value << c.imu.accel_noise_std << YAML::Key << "bias_std"
    << YAML::Value << c.imu.bias_std << YAML::Key << "scheme" << YAML::Value << scheme_name(c.scheme)
    << YAML::EndMap;

  e << YAML::Key << "sweep" << YAML::Value << YAML::BeginMap << YAML::Key << "snr_db" << YAML::Value;
  emit_list(e, c.snr_db);
  e << YAML::EndMap;

  e << YAML::Key << "imaging" << YAML::Value << YAML::BeginMap << YAML::Key << "grid_spacing_m" << YAML::Value
    << c.grid_spacing_m << YAML::Key << "coarse_spacing_m" << YAML::Value << c.coarse_spacing_m << YAML::Key
    << "search_half_width_m" << YAML::Value << c.search_half_width_m << YAML::Key
    << "zoom_levels" << YAML::Value << c.zoom_levels << YAML::Key << "zoom_cells" << YAML::Value << c.zoom_cells
    << YAML::Key << "zoom_factor" << YAML::Value << c.zoom_factor << YAML::Key << "taps" << YAML::Value << c.taps
    << YAML::EndMap;

  e << YAML::Key << "autofocus" << YAML::Value << YAML::BeginMap << YAML::Key << "provisional_acquisitions"
    << YAML::Value << c.provisional_acquisitions << YAML::Key << "calibration_points" << YAML::Value
    << c.calibration_points << YAML::Key << "calibration_separation_m" << YAML::Value << c.calibration_separation_m
    << YAML::Key << "calibration_floor" << YAML::Value << c.calibration_floor << YAML::Key << "phase_inflation" << YAML::Value << c.phase_inflation << YAML::Key
    << "threshold_sigma" << YAML::Value << c.threshold_sigma << YAML::Key << "calibration_margin_m" << YAML::Value
    << c.calibration_margin_m << YAML::Key << "calibration_spacing_m" << YAML::Value << c.calibration_spacing_m
    << YAML::EndMap;

  e << YAML::Key << "exposure" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "power_density_limit" << YAML::Value << c.policy.power_density_limit;
  e << YAML::Key << "trigger_distance_m" << YAML::Value << c.policy.trigger_distance_m;
  e << YAML::Key << "off_body_distance_m" << YAML::Value << c.policy.off_body_distance_m;
  e << YAML::Key << "eirp_max_dbm" << YAML::Value << watts_to_dbm(c.policy.eirp_max_w);
  e << YAML::Key << "eirp_base_override_dbm" << YAML::Value;
  if (c.policy.eirp_base_override_w)
    e << watts_to_dbm(*c.policy.eirp_base_override_w);
  else
    e << YAML::Null;
  e << YAML::Key << "guard" << YAML::Value << c.policy.guard;
  e << YAML::Key << "snr_db" << YAML::Value << c.eirp_snr_db;
  e << YAML::Key << "apertures_m" << YAML::Value;
  emit_list(e, c.eirp_apertures_m);
  e << YAML::Key << "r_min_m" << YAML::Value << c.r_min_m << YAML::Key << "r_max_m" << YAML::Value << c.r_max_m
    << YAML::Key << "r_step_m" << YAML::Value << c.r_step_m;
  e << YAML::EndMap;

  e << YAML::Key << "demo" << YAML::Value << YAML::BeginMap << YAML::Key << "snr_db" << YAML::Value
    << c.demo_snr_db << YAML::Key << "trial" << YAML::Value << c.demo_trial << YAML::Key << "spacing_m"
    << YAML::Value << c.demo_spacing_m << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

std::uint64_t config_hash(const ExperimentConfig& config) {
  // FNV-1a over the canonical dump.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : dump_config(config)) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_metadata(std::ostream& os, const ExperimentConfig& config) {
  csv::comment(os, "config_hash", hash_hex(config_hash(config)));
  csv::comment(os, "seed", std::to_string(config.seed));
  csv::comment(os, "snr_definition", kSnrDefinition);
}

double noise_power_for_snr(const ExperimentConfig& config, double snr_db) {
  const auto& t = config.target_scatterer();
  const cd alpha = complex_amplitude(t, config.link, config.radio);
  const double r0 = t.position.norm();
  require(r0 > 0.0, "noise_power_for_snr: target at the aperture centre");
  return std::norm(alpha) / std::pow(r0, 4) / db_to_linear(snr_db);
}

TargetFix localize_target(const RangeCube& cube, std::span<const Vec3> trajectory, const ArrayGeometry& array,
                          const Vec3& centre, const ExperimentConfig& config) {
  BackprojectOptions bp;
  bp.taps = config.taps;
  double spacing = config.coarse_spacing();
  const int half = int(std::ceil(config.search_half_width_m / spacing));
  ImageGrid grid = ImageGrid::centred(centre, Vec3::Constant(spacing), {2 * half + 1, 2 * half + 1, 1});
  backproject(cube, trajectory, array, grid, bp);
  Localization fix = localize(grid);
  for (int level = 0; level < config.zoom_levels; ++level) {
    spacing /= config.zoom_factor;
    Vec3 c = fix.position;
    c.z() = centre.z();
    grid = ImageGrid::centred(c, Vec3::Constant(spacing), {config.zoom_cells, config.zoom_cells, 1});
    backproject(cube, trajectory, array, grid, bp);
    fix = localize(grid);
  }
  // the point response is a long radial ridge at this bandwidth, so a grid
  // argmax drifts along it; finish with a continuous search in the plane
  Vec3 start = fix.position;
  start.z() = centre.z();
  Vec3 middle = Vec3::Zero();
  for (const auto& p : trajectory) middle += p;
  middle /= double(trajectory.size());
  const PointImager image(cube, trajectory, array, bp);
  const double coarse = config.coarse_spacing();
  fix = maximize_in_plane(image, start, middle, 4 * coarse, coarse);
  return {fix.position, fix.peak};
}

ImageGrid scene_grid(const ExperimentConfig& config, double spacing, double margin) {
  Vec3 lo = config.scatterers.front().position, hi = lo;
  for (const auto& s : config.scatterers) {
    lo = lo.cwiseMin(s.position);
    hi = hi.cwiseMax(s.position);
  }
  const Vec3 centre = 0.5 * (lo + hi);
  std::array<int, 3> dims{1, 1, 1};
  for (int a = 0; a < 2; ++a) dims[a] = 2 * int(std::ceil((0.5 * (hi[a] - lo[a]) + margin) / spacing)) + 1;
  Vec3 c = centre;
  c.z() = config.target_scatterer().position.z();
  return ImageGrid::centred(c, Vec3::Constant(spacing), dims);
}

namespace {

double max_deviation(std::span<const Vec3> a, std::span<const Vec3> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, (a[i] - b[i]).norm());
  return m;
}

}  // namespace

TrialResult run_trial(const ExperimentConfig& config, int trial, int snr_index, double snr_db,
                      TrialArtifacts* artifacts) {
  TrialResult out;
  out.snr_db = snr_db;
  out.trial = trial;

  Rng imu_rng = make_stream(config.seed, std::uint64_t(trial), 0, 1);
  Rng noise_rng = make_stream(config.seed, std::uint64_t(trial), std::uint64_t(snr_index) + 1, 2);

  const Trajectory truth =
      generate_trajectory(config.trajectory, config.aperture_m, config.radio, config.interval_s, config.shape);
  const ImuRun imu = simulate_imu(truth, config.imu, imu_rng, config.scheme);
  const ArrayGeometry array = config.array();

  Scene scene;
  scene.scatterers = config.scatterers;
  scene.link = config.link;
  scene.self_interference = config.self_interference;
  scene.noise_power = noise_power_for_snr(config, snr_db);
  CubeOptions cube_opts;
  cube_opts.si_mode = config.si_mode;
  RangeCube cube = simulate_cube(scene, array, truth.positions, config.radio, noise_rng, cube_opts);

  const Vec3 p = config.target_scatterer().position;
  std::vector<std::string> failures;
  auto attempt = [&](const char* name, auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      failures.push_back(std::string(name) + ": " + e.what());
    }
  };

  attempt("oracle", [&] {
    const auto fix = localize_target(cube, truth.positions, array, p, config);
    out.err_oracle = fix.position - p;
    out.peak_oracle = fix.peak;
  });
  attempt("imu", [&] {
    const auto fix = localize_target(cube, imu.estimated, array, p, config);
    out.err_imu = fix.position - p;
    out.peak_imu = fix.peak;
  });
  out.max_dev_imu = max_deviation(imu.estimated, truth.positions);

  AutofocusResult af;
  attempt("ekf", [&] {
    AutofocusOptions opts;
    opts.provisional_acquisitions = config.provisional_acquisitions;
    opts.calibration_points = config.calibration_points;
    opts.calibration_separation_m = config.calibration_separation_m;
    opts.calibration_floor = config.calibration_floor;
    opts.phase_inflation = config.phase_inflation;
    opts.threshold_sigma = config.threshold_sigma;
    opts.noise_power = scene.noise_power / config.radio.subcarriers();
    opts.scheme = config.scheme;
    opts.backprojection.taps = config.taps;
    const double spacing = config.calibration_spacing_m > 0.0 ? config.calibration_spacing_m
                                                              : 0.25 * config.radio.wavelength();
    opts.search_grid = scene_grid(config, spacing, config.calibration_margin_m);
    af = run_autofocus(cube, imu.estimated, array, config.imu, opts);
    out.max_dev_ekf = max_deviation(af.corrected, truth.positions);
    const auto fix = localize_target(cube, af.corrected, array, p, config);
    out.err_ekf = fix.position - p;
    out.peak_ekf = fix.peak;
  });

  for (std::size_t i = 0; i < failures.size(); ++i) out.failure += (i ? "; " : "") + failures[i];
  if (artifacts) {
    artifacts->truth = truth;
    artifacts->imu = imu;
    artifacts->cube = std::move(cube);
    artifacts->autofocus = std::move(af);
  }
  return out;
}

BcrbReport target_bounds(const ExperimentConfig& config, double snr_db) {
  const Trajectory truth =
      generate_trajectory(config.trajectory, config.aperture_m, config.radio, config.interval_s, config.shape);
  MeanModel model;
  model.reflectivity = complex_amplitude(config.target_scatterer(), config.link, config.radio);
  model.target = config.target_scatterer().position;
  model.positions = truth.positions;
  model.array = config.array();
  model.radio = config.radio;
  const double noise = noise_power_for_snr(config, snr_db) / config.radio.subcarriers();
  const FimBlocks J = fisher_blocks(model, noise);
  BcrbOptions opts;
  opts.axes = {true, true, false};  // localization runs in the target's z-plane
  return bcrb_position(J, error_covariance(config.imu, truth.size()), opts);
}

namespace {

struct Stat {
  double sum = 0.0, sum2 = 0.0;
  int n = 0;

  void add(const std::optional<Vec3>& e) {
    if (!e) return;
    const double s = e->squaredNorm();
    sum += s;
    sum2 += s * s;
    ++n;
  }
  double rmse() const { return n ? std::sqrt(sum / n) : std::nan(""); }
  // 95% half-width on RMSE from the spread of squared errors (delta method).
  double ci() const {
    if (n < 2) return std::nan("");
    const double mean = sum / n;
    const double var = std::max(sum2 / n - mean * mean, 0.0) * n / (n - 1);
    const double rm = std::sqrt(mean);
    return rm > 0.0 ? 1.96 * std::sqrt(var / n) / (2.0 * rm) : 0.0;
  }
};

template <typename Fn>
void parallel_for(int count, int threads, Fn&& fn) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

RmseSweep run_rmse_vs_snr(const ExperimentConfig& config) {
  config.validate();
  const int S = int(config.snr_db.size());
  const int T = config.trials;
  RmseSweep sweep;
  sweep.trials.resize(std::size_t(S) * T);
  parallel_for(S * T, config.threads, [&](int job) {
    const int s = job / T, t = job % T;
    sweep.trials[job] = run_trial(config, t, s, config.snr_db[s]);
  });

  for (int s = 0; s < S; ++s) {
    Stat o, i, e;
    RmseRecord rec;
    rec.snr_db = config.snr_db[s];
    for (int t = 0; t < T; ++t) {
      const auto& r = sweep.trials[std::size_t(s) * T + t];
      o.add(r.err_oracle);
      i.add(r.err_imu);
      e.add(r.err_ekf);
      if (!r.failure.empty()) ++rec.failures;
    }
    if (rec.failures * 10 > T)
      fail(ErrorCode::kAborted, "rmse sweep: more than 10% of trials failed at SNR " + csv::num(rec.snr_db) + " dB");
    rec.trials = T - rec.failures;
    rec.rmse_oracle = o.rmse();
    rec.rmse_imu = i.rmse();
    rec.rmse_ekf = e.rmse();
    rec.ci_oracle = o.ci();
    rec.ci_imu = i.ci();
    rec.ci_ekf = e.ci();
    const auto b = target_bounds(config, rec.snr_db);
    rec.sqrt_crb = b.sqrt_trace_crb();
    rec.sqrt_bcrb = b.sqrt_trace_bcrb();
    sweep.records.push_back(rec);
  }
  return sweep;
}

void write_rmse_csv(std::ostream& os, const ExperimentConfig& config, const RmseSweep& sweep) {
  write_metadata(os, config);
  csv::comment(os, "trials_per_point", std::to_string(config.trials));
  csv::comment(os, "imu", config.imu_preset + " accel_noise_std=" + csv::num(config.imu.accel_noise_std) +
                              " bias_std=" + csv::num(config.imu.bias_std) + " interval_s=" + csv::num(config.interval_s));
  csv::comment(os, "aperture_m", csv::num(config.aperture_m));
  csv::comment(os, "rmse", "in-plane (x, y) position error, metres; CI = 95% half-width");
  csv::header(os, {"snr_db", "rmse_oracle_af", "rmse_imu_af", "rmse_ekf_af", "sqrt_crb", "sqrt_bcrb", "trials",
                   "failures", "ci_oracle_af", "ci_imu_af", "ci_ekf_af"});
  for (const auto& r : sweep.records)
    csv::Row(os) << r.snr_db << r.rmse_oracle << r.rmse_imu << r.rmse_ekf << r.sqrt_crb << r.sqrt_bcrb << r.trials
                 << r.failures << r.ci_oracle << r.ci_imu << r.ci_ekf;
}

void write_trials_csv(std::ostream& os, const ExperimentConfig& config, const RmseSweep& sweep) {
  write_metadata(os, config);
  csv::header(os, {"snr_db", "trial", "err_oracle", "err_imu", "err_ekf", "peak_oracle", "peak_imu", "peak_ekf",
                   "max_dev_imu", "max_dev_ekf", "failure"});
  auto norm = [](const std::optional<Vec3>& e) { return e ? e->norm() : std::nan(""); };
  for (const auto& t : sweep.trials)
    csv::Row(os) << t.snr_db << t.trial << norm(t.err_oracle) << norm(t.err_imu) << norm(t.err_ekf) << t.peak_oracle
                 << t.peak_imu << t.peak_ekf << t.max_dev_imu << t.max_dev_ekf
                 << (t.failure.empty() ? std::string("") : "\"" + t.failure + "\"");
}

std::vector<EirpPoint> run_eirp_vs_distance(const ExperimentConfig& config) {
  config.validate();
  std::vector<double> rs;
  const int steps = int(std::floor((config.r_max_m - config.r_min_m) / config.r_step_m + 1e-9));
  for (int i = 0; i <= steps; ++i) rs.push_back(config.r_min_m + i * config.r_step_m);

  std::vector<EirpPoint> curve(rs.size());
  for (std::size_t i = 0; i < rs.size(); ++i) {
    curve[i].r_m = rs[i];
    curve[i].baseline_w = eirp_baseline(rs[i], config.policy);
    curve[i].mpe_w = eirp_mpe_limit(rs[i], config.policy.power_density_limit);
    curve[i].proposed_w.resize(config.eirp_apertures_m.size());
    curve[i].range_std_m.resize(config.eirp_apertures_m.size());
  }

  const Scatterer& proto = config.target_scatterer();
  const ArrayGeometry array = config.array();
  for (std::size_t a = 0; a < config.eirp_apertures_m.size(); ++a) {
    const Trajectory traj = generate_trajectory(config.trajectory, config.eirp_apertures_m[a], config.radio,
                                                config.interval_s, config.shape);
    const ErrorPrior prior = error_covariance(config.imu, traj.size());
    parallel_for(int(rs.size()), config.threads, [&](int i) {
      const double r = rs[i];
      Scatterer s = proto;
      s.position = Vec3(0.0, r, 0.0);
      MeanModel model;
      model.reflectivity = complex_amplitude(s, config.link, config.radio);
      model.target = s.position;
      model.positions = traj.positions;
      model.array = array;
      model.radio = config.radio;
      const double sigma_w2 = std::norm(model.reflectivity) / std::pow(r, 4) / db_to_linear(config.eirp_snr_db);
      const FimBlocks J = fisher_blocks(model, sigma_w2 / config.radio.subcarriers());
      BcrbOptions opts;
      opts.axes = {true, true, false};
      const BcrbReport b = bcrb_position(J, prior, opts);
      const double var_r = b.directional_variance(Vec3::UnitY());
      curve[i].range_std_m[a] = std::sqrt(var_r);
      curve[i].proposed_w[a] = eirp_proposed(r, var_r, config.policy);
    });
  }
  return curve;
}

void write_eirp_csv(std::ostream& os, const ExperimentConfig& config, const std::vector<EirpPoint>& curve) {
  write_metadata(os, config);
  csv::comment(os, "eirp_snr_db", csv::num(config.eirp_snr_db));
  csv::comment(os, "guard_k", csv::num(config.policy.guard));
  csv::comment(os, "eirp_max_dbm", csv::num(watts_to_dbm(config.policy.eirp_max_w)));
  csv::comment(os, "eirp_base_dbm", csv::num(watts_to_dbm(config.policy.eirp_base())));
  std::ostringstream head;
  head << "r_m,eirp_baseline_dbm,eirp_mpe_dbm";
  for (double a : config.eirp_apertures_m) head << ",eirp_proposed_dbm_A" << csv::num(a * 100.0) << "cm";
  for (double a : config.eirp_apertures_m) head << ",range_std_m_A" << csv::num(a * 100.0) << "cm";
  os << head.str() << '\n';
  auto dbm = [](double w) { return w > 0.0 ? watts_to_dbm(w) : -std::numeric_limits<double>::infinity(); };
  for (const auto& p : curve) {
    csv::Row row(os);
    row << p.r_m << dbm(p.baseline_w) << dbm(p.mpe_w);
    for (double w : p.proposed_w) row << dbm(w);
    for (double s : p.range_std_m) row << s;
  }
}

std::vector<BoundsRow> run_bounds_table(const ExperimentConfig& config) {
  config.validate();
  std::vector<BoundsRow> rows(config.snr_db.size());
  parallel_for(int(rows.size()), config.threads, [&](int i) {
    const auto b = target_bounds(config, config.snr_db[i]);
    rows[i].snr_db = config.snr_db[i];
    rows[i].sqrt_trace_crb = b.sqrt_trace_crb();
    rows[i].sqrt_trace_bcrb = b.sqrt_trace_bcrb();
    rows[i].floor = b.crb_known.trace() < 0.5 * b.bcrb.trace();
  });
  return rows;
}

void write_bounds_csv(std::ostream& os, const ExperimentConfig& config, const std::vector<BoundsRow>& rows) {
  write_metadata(os, config);
  csv::comment(os, "floor_flag", "1 when the trajectory prior accounts for more than half of trace(BCRB)");
  csv::header(os, {"snr_db", "sqrt_trace_crb", "sqrt_trace_bcrb", "floor_flag"});
  for (const auto& r : rows) csv::Row(os) << r.snr_db << r.sqrt_trace_crb << r.sqrt_trace_bcrb << (r.floor ? 1 : 0);
}

namespace {

void write_file(const std::filesystem::path& path, const std::function<void(std::ostream&)>& fn,
                bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  fn(out);
  if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

double image_peak(const ImageGrid& g) {
  double p = 0.0;
  for (const cd& v : g.values) p = std::max(p, std::abs(v));
  return p;
}

}  // namespace

ImagingDemo run_imaging_demo(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  std::filesystem::create_directories(out_dir);
  TrialArtifacts art;
  ImagingDemo demo;
  constexpr int kDemoStream = 1000;
  demo.result = run_trial(config, config.demo_trial, kDemoStream, config.demo_snr_db, &art);
  if (!demo.result.err_ekf) fail(ErrorCode::kCalibration, "imaging demo: autofocus failed: " + demo.result.failure);

  const ArrayGeometry array = config.array();
  const double spacing = config.demo_spacing_m > 0.0 ? config.demo_spacing_m : 0.25 * config.radio.wavelength();
  const ImageGrid tmpl = scene_grid(config, spacing, config.calibration_margin_m);
  BackprojectOptions bp;
  bp.taps = config.taps;
  bp.threads = config.threads;
  ImageGrid oracle = tmpl, imu = tmpl, ekf = tmpl;
  backproject(art.cube, art.truth.positions, array, oracle, bp);
  backproject(art.cube, art.imu.estimated, array, imu, bp);
  backproject(art.cube, art.autofocus.corrected, array, ekf, bp);
  demo.image_peak_oracle = image_peak(oracle);
  demo.image_peak_imu = image_peak(imu);
  demo.image_peak_ekf = image_peak(ekf);

  write_file(out_dir / "trajectory.csv", [&](std::ostream& os) {
    write_metadata(os, config);
    csv::header(os, {"m", "qx", "qy", "qz", "qhx", "qhy", "qhz", "qcx", "qcy", "qcz"});
    for (int m = 0; m < art.truth.size(); ++m) {
      const Vec3& q = art.truth.positions[m];
      const Vec3& h = art.imu.estimated[m];
      const Vec3& c = art.autofocus.corrected[m];
      csv::Row(os) << m << q.x() << q.y() << q.z() << h.x() << h.y() << h.z() << c.x() << c.y() << c.z();
    }
  });
  write_file(out_dir / "targets.csv", [&](std::ostream& os) {
    write_metadata(os, config);
    csv::header(os, {"kind", "index", "x", "y", "z"});
    for (std::size_t q = 0; q < config.scatterers.size(); ++q) {
      const Vec3& p = config.scatterers[q].position;
      csv::Row(os) << (int(q) == config.target ? "target" : "scatterer") << int(q) << p.x() << p.y() << p.z();
    }
    const auto& cal = art.autofocus.calibration.points;
    for (std::size_t q = 0; q < cal.size(); ++q)
      csv::Row(os) << "calibration" << int(q) << cal[q].x() << cal[q].y() << cal[q].z();
  });
  write_file(out_dir / "autofocus.csv", [&](std::ostream& os) {
    write_metadata(os, config);
    write_autofocus_csv(os, art.autofocus, art.imu.errors);
  });
  const std::pair<const char*, const ImageGrid*> images[] = {{"oracle", &oracle}, {"imu", &imu}, {"ekf", &ekf}};
  for (const auto& [name, img] : images) {
    write_file(out_dir / (std::string("image_") + name + ".csv"), [&](std::ostream& os) {
      write_metadata(os, config);
      write_image_csv(os, *img);
    });
    write_file(out_dir / (std::string("image_") + name + ".pgm"),
               [&](std::ostream& os) { write_image_pgm(os, *img); }, true);
  }
  write_file(out_dir / "summary.csv", [&](std::ostream& os) {
    write_metadata(os, config);
    csv::comment(os, "snr_db", csv::num(config.demo_snr_db));
    csv::header(os, {"variant", "target_peak", "image_peak", "localization_error_m", "max_trajectory_dev_m"});
    const auto& r = demo.result;
    auto err = [](const std::optional<Vec3>& e) { return e ? e->norm() : std::nan(""); };
    csv::Row(os) << "oracle" << r.peak_oracle << demo.image_peak_oracle << err(r.err_oracle) << 0.0;
    csv::Row(os) << "imu" << r.peak_imu << demo.image_peak_imu << err(r.err_imu) << r.max_dev_imu;
    csv::Row(os) << "ekf" << r.peak_ekf << demo.image_peak_ekf << err(r.err_ekf) << r.max_dev_ekf;
  });
  return demo;
}

std::vector<SelftestLine> run_selftest() {
  std::vector<SelftestLine> lines;
  auto check = [&](const std::string& name, bool ok, const std::string& detail) {
    lines.push_back({name, ok, detail});
  };
  auto safely = [&](const std::string& name, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      check(name, false, e.what());
    }
  };

  safely("dirichlet", [&] {
    const double s0 = dirichlet_kernel(0.0, 64), s1 = dirichlet_kernel(1.0, 64);
    check("dirichlet", std::abs(s0 - 1.0) < 1e-15 && std::abs(s1) < 1e-15,
          "S(0)=" + csv::num(s0) + " S(1)=" + csv::num(s1));
  });
  safely("error_covariance", [&] {
    const auto a = error_covariance({0.0, 1.0, 1.0}, 2).temporal(0, 0);
    const auto b = error_covariance({1.0, 0.0, 1.0}, 4).temporal(1, 2);
    check("error_covariance", a == 1.0 && b == 8.0, "C11=" + csv::num(a) + " C23=" + csv::num(b));
  });
  safely("ekf_predict", [&] {
    EkfState s;
    s.x(6) = 1.0;
    const ImuSpec spec{0.0, 0.0, 1.0};
    s = predict(predict(s, spec, IntegrationScheme::kTrapezoid), spec, IntegrationScheme::kTrapezoid);
    check("ekf_predict", std::abs(s.x(0) - 2.0) < 1e-15, "delta_x=" + csv::num(s.x(0)));
  });
  safely("exposure", [&] {
    const double w = eirp_mpe_limit(0.025, 10.0);
    const double r = effective_distance(0.10, 1e-4, 2.58);
    check("exposure", std::abs(watts_to_dbm(w) - 18.95) < 0.01 && std::abs(r - 0.0742) < 1e-12,
          "mpe=" + csv::num(watts_to_dbm(w)) + " dBm r_eff=" + csv::num(r));
  });
  safely("bounds", [&] {
    ExperimentConfig c = default_config();
    const auto lo = target_bounds(c, 0.0), hi = target_bounds(c, 10.0);
    const double ratio = hi.crb_known.trace() / lo.crb_known.trace();
    check("bounds", std::abs(ratio - 0.1) < 1e-9 && hi.bcrb.trace() <= lo.bcrb.trace(),
          "crb ratio=" + csv::num(ratio));
  });
  safely("pipeline", [&] {
    ExperimentConfig c = default_config();
    const auto r = run_trial(c, 0, 0, 20.0);
    const bool ok = r.err_oracle && r.err_oracle->norm() < c.radio.wavelength();
    check("pipeline", ok, r.err_oracle ? "oracle error=" + csv::num(r.err_oracle->norm()) + " m" : r.failure);
  });
  return lines;
}

}  // namespace vasense
