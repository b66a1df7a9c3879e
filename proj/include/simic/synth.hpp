#pragma once

#include <cstdint>
#include <vector>

#include "simic/image.hpp"
#include "simic/manifest.hpp"

namespace simic {

// Generator settings. Label ranges are micrometers; blur sigma is in pixels
// and noise sigma in 8-bit counts. Defaults fit a 64x64 frame at 10 nm/px.
struct SynthSpec {
  int image_size = 64;
  double nm_per_px = 10.0;
  double width_min_um = 0.20, width_max_um = 0.45;
  double height_min_um = 0.30, height_max_um = 0.55;
  double radius_min_um = 0.02, radius_max_um = 0.08;
  double blur_min_px = 0.0, blur_max_px = 0.0;
  double noise_min = 0.0, noise_max = 0.0;
  std::uint64_t seed = 0;

  void validate() const;  // nonempty ranges; radius range below width range
};

struct SynthResult {
  std::vector<Image> images;      // ordered by record
  DatasetManifest manifest;       // split column left "unsplit"
};

// Renders one bright-on-dark emitter silhouette: a trapezoidal shank of base
// width w_px rising h_px from the bottom edge, capped by a circular apex of
// radius r_px tangent to both flanks. Geometry only — no blur or noise.
Image render_tip(int size, double w_px, double h_px, double r_px);

// True when the given pixel geometry fits the frame with a margin and the
// apex circle is tangent-constructible; generate_synthetic resamples until
// this holds (bounded retries).
bool tip_fits(int size, double w_px, double h_px, double r_px);

// n samples under the spec's seed. Labels are the exact generating
// parameters in micrometers; ids are tip_00000-style and files {id}.pgm.
SynthResult generate_synthetic(const SynthSpec& spec, int n);

// Separable Gaussian blur (sigma in px; clamp-to-edge) on an 8-bit image.
Image gaussian_blur(const Image& img, double sigma);

}  // namespace simic
