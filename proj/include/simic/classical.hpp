#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "simic/image.hpp"

namespace simic {

// Binary image; `on` holds 0/1 per pixel, row-major.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> on;

  bool at(int y, int x) const { return on[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int y, int x, bool v) { on[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
  std::size_t count() const;
};

// Threshold index maximizing between-class variance; foreground is every
// pixel >= the returned value. A single-level histogram is an error.
int otsu_threshold(const std::array<std::int64_t, 256>& hist);

// Otsu threshold followed by one 3x3 morphological opening (borders
// replicate). Errors if nothing remains in the foreground.
Mask segment(const Image& img);

// The largest 8-connected foreground component, as its own mask.
Mask largest_component(const Mask& mask);

// Ordered closed boundary of the largest component (Moore neighbor walk),
// returned as (row, col) pixel coordinates with positive signed area.
std::vector<std::pair<int, int>> trace_contour(const Mask& mask);

struct CircleFit {
  double cx = 0.0;
  double cy = 0.0;
  double r = 0.0;
};

// Algebraic least-squares circle through (x, y) points, solved about the
// centroid so translations shift the center without touching the radius.
CircleFit fit_circle(const std::vector<std::pair<double, double>>& pts);

// Contour points are boundary-pixel centers, which sit inside the continuous
// edge and pull circle fits small: rasterized disks across radii 3..20 px and
// sub-pixel placements fit 0.21-0.78 px under their true radius. This additive
// compensation recenters that band inside +/-0.5 px while keeping apex fits on
// rendered tips (where straight-flank points partially cancel the effect)
// within the 15% tolerance.
constexpr double kContourRadiusBias = 0.3;

struct TipMeasurement {
  double width_px = 0.0;   // extent at the base row
  double height_px = 0.0;  // vertical extent
  double radius_px = 0.0;  // apex circle fit plus the contour bias
};

// Full pipeline: segment, take the largest blob, trace it, measure extents,
// and fit the apex arc.
TipMeasurement measure_tip(const Image& img);

}  // namespace simic
