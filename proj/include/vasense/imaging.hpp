#pragma once

#include <array>
#include <atomic>
#include <iosfwd>
#include <span>
#include <vector>

#include "vasense/common.hpp"
#include "vasense/waveform.hpp"

namespace vasense {

// Regular voxel grid; voxel (i, j, k) sits at origin + (i, j, k) * spacing and
// is stored at (i * ny + j) * nz + k, i.e. lexicographic order.
struct ImageGrid {
  Vec3 origin = Vec3::Zero();
  Vec3 spacing = Vec3::Constant(1e-3);
  std::array<int, 3> dims{1, 1, 1};
  std::vector<cd> values;

  void validate() const;
  std::size_t voxels() const { return std::size_t(dims[0]) * dims[1] * dims[2]; }
  std::size_t index(int i, int j, int k) const { return (std::size_t(i) * dims[1] + j) * dims[2] + k; }
  std::array<int, 3> unravel(std::size_t idx) const;
  Vec3 position(int i, int j, int k) const;
  Vec3 position(std::size_t idx) const;

  // Grid of `dims` voxels centred on `centre`; values zero-initialised.
  static ImageGrid centred(const Vec3& centre, const Vec3& spacing, std::array<int, 3> dims);
};

// Count of interpolation queries that fell outside [0, K).
struct InterpolationStats {
  std::atomic<long long> out_of_window{0};
};

// Fractional-delay read of a range profile: sum_l z[l] S(l - nu) / sum_l S(l - nu)^2
// over the `taps` bins nearest nu (indices taken modulo K). Exact at integer nu.
cd interpolate_profile(std::span<const cd> profile, double nu, int taps = 8, InterpolationStats* stats = nullptr);

// Subcarrier-domain samples Y_k of a profile, z[l] = (1/K) sum_k Y_k exp(j 2 pi k_c l / K).
std::vector<cd> profile_spectrum(std::span<const cd> profile);

// Band-limited continuation of the profile, (1/K) sum_k Y_k exp(j 2 pi k_c nu / K).
// Equal to the full-length Dirichlet sum; zero outside [0, K).
cd interpolate_bandlimited(std::span<const cd> spectrum, double nu, InterpolationStats* stats = nullptr);

struct BackprojectOptions {
  int taps = 0;  // 0 = band-limited over all K bins, else truncated Dirichlet sum
  int acquisitions = 0;  // use the first n acquisitions; 0 = all
  int threads = 1;
};

// The backprojection sum at arbitrary points. Profile spectra are computed
// once up front, so repeated point queries are cheap. Keeps a reference to `cube`.
class PointImager {
 public:
  PointImager(const RangeCube& cube, std::span<const Vec3> trajectory, const ArrayGeometry& array,
              const BackprojectOptions& options = {});
  cd operator()(const Vec3& r, InterpolationStats* stats = nullptr) const;

 private:
  const RangeCube& cube_;
  int M_ = 0, N_ = 0, taps_ = 0;
  double kappa_ = 0.0;
  std::vector<Vec3> antennas_;
  std::vector<std::vector<cd>> spectra_;
};

// I(r_g) = sum_m sum_n z_{n,m}[nu^] exp(+j kappa r^). Accumulation order is
// fixed in (m, n) per voxel, so the result does not depend on `threads`.
void backproject(const RangeCube& cube, std::span<const Vec3> trajectory, const ArrayGeometry& array,
                 ImageGrid& grid, const BackprojectOptions& options = {}, InterpolationStats* stats = nullptr);

struct CalibrationSet {
  std::vector<Vec3> points;
  std::vector<double> magnitudes;
  bool complete = false;  // false when fewer maxima than requested were found

  int size() const { return static_cast<int>(points.size()); }
};

// Strict 26-neighbourhood maxima of |I|^2, strongest first (ties by voxel
// index), each refined by a quadratic fit. A maximum is skipped when it lies
// within `min_separation_m` of a stronger accepted one or is weaker than
// `min_relative` times the strongest.
CalibrationSet extract_calibration(const ImageGrid& image, int count, double min_separation_m = 0.0,
                                   double min_relative = 0.0);

struct Localization {
  Vec3 position = Vec3::Zero();
  double peak = 0.0;
  std::array<int, 3> voxel{0, 0, 0};
};

Localization localize(const ImageGrid& image);

// Sub-voxel offset (in cells) of the |I|^2 peak around voxel `v` from a
// three-point parabola per axis, clamped to half a cell.
Vec3 refine_peak(const ImageGrid& image, std::array<int, 3> v);

// Continuous local maximum of |I|^2 in the plane z = start.z. Alternates Brent
// line searches along the in-plane direction from `reference` to the current
// point (the long axis of the point response) and across it, within
// +-radial_span and +-tangential_span. Never returns a point worse than `start`.
Localization maximize_in_plane(const PointImager& image, const Vec3& start, const Vec3& reference,
                               double radial_span, double tangential_span, int sweeps = 3);

// Moves every point of `set` to the continuous maximum found by
// maximize_in_plane (spans in multiples of `cell`), keeping the order.
void polish_maxima(CalibrationSet& set, const PointImager& image, const Vec3& reference, double cell);

// Columns x,y,z,re,im,mag_db (dB relative to the image maximum).
void write_image_csv(std::ostream& os, const ImageGrid& image);
// 8-bit binary PGM over the two largest grid axes (k = 0 slice when 3-D),
// magnitude in dB over `dynamic_range_db` below the maximum.
void write_image_pgm(std::ostream& os, const ImageGrid& image, double dynamic_range_db = 40.0);

}  // namespace vasense
