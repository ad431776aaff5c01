#include "vasense/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <thread>

#include <boost/math/tools/minima.hpp>

#include "vasense/csv.hpp"

namespace vasense {

void ImageGrid::validate() const {
  for (int a = 0; a < 3; ++a) {
    require(dims[a] >= 1, "image grid: dimensions must be at least 1");
    require(spacing[a] > 0.0, "image grid: spacing must be positive");
  }
  require(values.size() == voxels(), "image grid: value array does not match dimensions");
}

std::array<int, 3> ImageGrid::unravel(std::size_t idx) const {
  const int k = int(idx % dims[2]);
  idx /= dims[2];
  const int j = int(idx % dims[1]);
  return {int(idx / dims[1]), j, k};
}

Vec3 ImageGrid::position(int i, int j, int k) const {
  return origin + Vec3(i * spacing.x(), j * spacing.y(), k * spacing.z());
}

Vec3 ImageGrid::position(std::size_t idx) const {
  const auto v = unravel(idx);
  return position(v[0], v[1], v[2]);
}

ImageGrid ImageGrid::centred(const Vec3& centre, const Vec3& spacing, std::array<int, 3> dims) {
  ImageGrid g;
  g.spacing = spacing;
  g.dims = dims;
  for (int a = 0; a < 3; ++a) g.origin[a] = centre[a] - 0.5 * (dims[a] - 1) * spacing[a];
  g.values.assign(g.voxels(), cd(0.0, 0.0));
  g.validate();
  return g;
}

cd interpolate_profile(std::span<const cd> profile, double nu, int taps, InterpolationStats* stats) {
  const int K = int(profile.size());
  require(taps >= 1 && taps <= K, "interpolate_profile: tap count must be in [1, K]");
  if (!(nu >= 0.0 && nu < K)) {
    if (stats) ++stats->out_of_window;
    return {0.0, 0.0};
  }
  const double nearest = std::round(nu);
  if (std::abs(nu - nearest) < 1e-12) return profile[int(nearest) % K];

  // The `taps` bins nearest nu.
  const int first = taps % 2 == 0 ? int(std::floor(nu)) - taps / 2 + 1 : int(nearest) - taps / 2;
  cd num{0.0, 0.0};
  double den = 0.0;
  for (int t = 0; t < taps; ++t) {
    int l = (first + t) % K;
    if (l < 0) l += K;
    const double s = dirichlet_kernel(l - nu, K);
    num += profile[l] * s;
    den += s * s;
  }
  return den > 0.0 ? num / den : cd(0.0, 0.0);
}

std::vector<cd> profile_spectrum(std::span<const cd> profile) {
  const int K = int(profile.size());
  std::vector<cd> y(K, cd(0.0, 0.0));
  const long long two_k = 2LL * K;
  for (int k = 0; k < K; ++k)
    for (int l = 0; l < K; ++l) {
      long long num = (2LL * k - K + 1) * l % two_k;
      if (num < 0) num += two_k;
      y[k] += profile[l] * std::polar(1.0, -2.0 * kPi * double(num) / double(two_k));
    }
  return y;
}

cd interpolate_bandlimited(std::span<const cd> spectrum, double nu, InterpolationStats* stats) {
  const int K = int(spectrum.size());
  require(K >= 1, "interpolate_bandlimited: empty spectrum");
  if (!(nu >= 0.0 && nu < K)) {
    if (stats) ++stats->out_of_window;
    return {0.0, 0.0};
  }
  const double theta = 2.0 * kPi * nu / K;
  const cd step = std::polar(1.0, theta);
  cd w = std::polar(1.0, -0.5 * (K - 1) * theta);
  cd acc{0.0, 0.0};
  for (int k = 0; k < K; ++k) {
    acc += spectrum[k] * w;
    w *= step;
  }
  return acc / double(K);
}

PointImager::PointImager(const RangeCube& cube, std::span<const Vec3> trajectory, const ArrayGeometry& array,
                         const BackprojectOptions& options)
    : cube_(cube) {
  require(cube.antennas() == array.size(), "backproject: cube and array disagree on element count");
  require(int(trajectory.size()) == cube.acquisitions(), "backproject: trajectory length differs from cube");
  M_ = options.acquisitions > 0 ? std::min(options.acquisitions, cube.acquisitions()) : cube.acquisitions();
  N_ = array.size();
  taps_ = options.taps;
  kappa_ = cube.radio().wavenumber();
  antennas_.resize(std::size_t(M_) * N_);
  for (int m = 0; m < M_; ++m)
    for (int n = 0; n < N_; ++n) antennas_[std::size_t(m) * N_ + n] = trajectory[m] + array.offsets[n];
  if (taps_ == 0) {
    spectra_.resize(std::size_t(M_) * N_);
    for (int m = 0; m < M_; ++m)
      for (int n = 0; n < N_; ++n) spectra_[std::size_t(m) * N_ + n] = profile_spectrum(cube.profile(n, m));
  }
}

cd PointImager::operator()(const Vec3& r_g, InterpolationStats* stats) const {
  const RadioConfig& radio = cube_.radio();
  cd acc{0.0, 0.0};
  for (int m = 0; m < M_; ++m)
    for (int n = 0; n < N_; ++n) {
      const std::size_t i = std::size_t(m) * N_ + n;
      const double r = (r_g - antennas_[i]).norm();
      const double nu = radio.delay_bins(r);
      const cd z = taps_ == 0 ? interpolate_bandlimited(spectra_[i], nu, stats)
                              : interpolate_profile(cube_.profile(n, m), nu, taps_, stats);
      acc += z * std::polar(1.0, kappa_ * r);
    }
  return acc;
}

void backproject(const RangeCube& cube, std::span<const Vec3> trajectory, const ArrayGeometry& array,
                 ImageGrid& grid, const BackprojectOptions& options, InterpolationStats* stats) {
  grid.values.assign(grid.voxels(), cd(0.0, 0.0));
  grid.validate();
  const PointImager image(cube, trajectory, array, options);
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t v = begin; v < end; ++v) grid.values[v] = image(grid.position(v), stats);
  };

  const std::size_t total = grid.voxels();
  const int threads = std::max(1, std::min<int>(options.threads, int(total)));
  if (threads == 1) {
    run(0, total);
    return;
  }
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back(run, total * t / threads, total * (t + 1) / threads);
  for (auto& th : pool) th.join();
}

Localization maximize_in_plane(const PointImager& image, const Vec3& start, const Vec3& reference,
                               double radial_span, double tangential_span, int sweeps) {
  Localization best;
  best.position = start;
  best.peak = std::norm(image(start));
  for (int s = 0; s < sweeps; ++s) {
    Vec3 radial = best.position - reference;
    radial.z() = 0.0;
    if (radial.norm() == 0.0) radial = Vec3::UnitY();
    radial.normalize();
    const Vec3 across(-radial.y(), radial.x(), 0.0);
    for (const auto& [dir, span] : {std::pair{radial, radial_span}, std::pair{across, tangential_span}}) {
      const Vec3 from = best.position;
      auto cost = [&](double t) { return -std::norm(image(from + t * dir)); };
      const auto [t, f] = boost::math::tools::brent_find_minima(cost, -span, span, 40);
      if (-f > best.peak) {
        best.position = from + t * dir;
        best.peak = -f;
      }
    }
  }
  return best;
}

void polish_maxima(CalibrationSet& set, const PointImager& image, const Vec3& reference, double cell) {
  for (std::size_t i = 0; i < set.points.size(); ++i) {
    const auto fix = maximize_in_plane(image, set.points[i], reference, 4 * cell, cell);
    set.points[i] = fix.position;
    set.magnitudes[i] = std::sqrt(fix.peak);
  }
}

namespace {

double power_at(const ImageGrid& g, int i, int j, int k) { return std::norm(g.values[g.index(i, j, k)]); }

bool inside(const ImageGrid& g, int i, int j, int k) {
  return i >= 0 && j >= 0 && k >= 0 && i < g.dims[0] && j < g.dims[1] && k < g.dims[2];
}

bool strict_maximum(const ImageGrid& g, int i, int j, int k) {
  const double c = power_at(g, i, j, k);
  bool any = false;
  for (int di = -1; di <= 1; ++di)
    for (int dj = -1; dj <= 1; ++dj)
      for (int dk = -1; dk <= 1; ++dk) {
        if (di == 0 && dj == 0 && dk == 0) continue;
        if (!inside(g, i + di, j + dj, k + dk)) continue;
        any = true;
        if (power_at(g, i + di, j + dj, k + dk) >= c) return false;
      }
  return any;
}

}  // namespace

Vec3 refine_peak(const ImageGrid& image, std::array<int, 3> v) {
  // Separable three-point parabola through the voxel and its two neighbours on
  // each axis. A joint fit over the 3x3x3 block is ill posed along the flat
  // range ridge (curvature near zero there), so each axis is fitted on its own.
  Vec3 offset = Vec3::Zero();
  const double f0 = power_at(image, v[0], v[1], v[2]);
  for (int a = 0; a < 3; ++a) {
    if (v[a] - 1 < 0 || v[a] + 1 >= image.dims[a]) continue;
    std::array<int, 3> lo = v, hi = v;
    --lo[a];
    ++hi[a];
    const double fm = power_at(image, lo[0], lo[1], lo[2]), fp = power_at(image, hi[0], hi[1], hi[2]);
    const double curvature = fm - 2.0 * f0 + fp;
    if (curvature < 0.0) offset[a] = std::clamp(0.5 * (fm - fp) / curvature, -0.5, 0.5);
  }
  return offset;
}

CalibrationSet extract_calibration(const ImageGrid& image, int count, double min_separation_m,
                                   double min_relative) {
  require(count >= 1, "extract_calibration: count must be positive");
  require(min_separation_m >= 0.0 && min_relative >= 0.0 && min_relative <= 1.0,
          "extract_calibration: invalid separation or magnitude floor");
  image.validate();
  std::vector<std::size_t> maxima;
  for (int i = 0; i < image.dims[0]; ++i)
    for (int j = 0; j < image.dims[1]; ++j)
      for (int k = 0; k < image.dims[2]; ++k)
        if (strict_maximum(image, i, j, k)) maxima.push_back(image.index(i, j, k));
  std::stable_sort(maxima.begin(), maxima.end(), [&](std::size_t a, std::size_t b) {
    const double pa = std::norm(image.values[a]), pb = std::norm(image.values[b]);
    return pa != pb ? pa > pb : a < b;
  });

  CalibrationSet set;
  const double floor = maxima.empty() ? 0.0 : min_relative * std::abs(image.values[maxima.front()]);
  for (std::size_t idx : maxima) {
    if (set.size() == count) break;
    const double mag = std::abs(image.values[idx]);
    if (mag < floor) break;
    const Vec3 at = image.position(idx);
    const bool close = std::any_of(set.points.begin(), set.points.end(),
                                   [&](const Vec3& p) { return (p - at).norm() < min_separation_m; });
    if (close) continue;
    const Vec3 off = refine_peak(image, image.unravel(idx));
    set.points.push_back(at + off.cwiseProduct(image.spacing));
    set.magnitudes.push_back(mag);
  }
  set.complete = set.size() == count;
  return set;
}

Localization localize(const ImageGrid& image) {
  image.validate();
  std::size_t best = 0;
  double best_power = -1.0;
  for (std::size_t v = 0; v < image.voxels(); ++v) {
    const double p = std::norm(image.values[v]);
    if (p > best_power) {
      best_power = p;
      best = v;
    }
  }
  if (!(best_power > 0.0)) fail(ErrorCode::kInvalidArgument, "localize: image is all zero");
  Localization out;
  out.voxel = image.unravel(best);
  out.position = image.position(best) + refine_peak(image, out.voxel).cwiseProduct(image.spacing);
  out.peak = std::sqrt(best_power);
  return out;
}

namespace {

double max_magnitude(const ImageGrid& image) {
  double peak = 0.0;
  for (const cd& v : image.values) peak = std::max(peak, std::abs(v));
  return peak;
}

}  // namespace

void write_image_csv(std::ostream& os, const ImageGrid& image) {
  image.validate();
  const double peak = max_magnitude(image);
  csv::header(os, {"x", "y", "z", "re", "im", "mag_db"});
  for (std::size_t v = 0; v < image.voxels(); ++v) {
    const Vec3 p = image.position(v);
    const double mag = std::abs(image.values[v]);
    const double rel = (peak > 0.0 && mag > 0.0) ? 20.0 * std::log10(mag / peak) : -300.0;
    csv::Row(os) << p.x() << p.y() << p.z() << image.values[v].real() << image.values[v].imag() << rel;
  }
}

void write_image_pgm(std::ostream& os, const ImageGrid& image, double dynamic_range_db) {
  image.validate();
  require(dynamic_range_db > 0.0, "write_image_pgm: dynamic range must be positive");
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return image.dims[a] > image.dims[b]; });
  // Columns along the first of the two largest axes in x, y, z order.
  int ax_c = std::min(order[0], order[1]), ax_r = std::max(order[0], order[1]);
  const int width = image.dims[ax_c], height = image.dims[ax_r];
  const double peak = max_magnitude(image);

  os << "P5\n" << width << ' ' << height << "\n255\n";
  for (int row = height - 1; row >= 0; --row)
    for (int c = 0; c < width; ++c) {
      std::array<int, 3> v{0, 0, 0};
      v[ax_c] = c;
      v[ax_r] = row;
      const double mag = std::abs(image.values[image.index(v[0], v[1], v[2])]);
      double level = 0.0;
      if (peak > 0.0 && mag > 0.0) {
        const double db = 20.0 * std::log10(mag / peak);
        level = std::clamp(1.0 + db / dynamic_range_db, 0.0, 1.0);
      }
      os.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * level))));
    }
}

}  // namespace vasense
