#include "simic/synth.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "simic/rng.hpp"

namespace simic {

namespace {

constexpr double kForeground = 220.0;
constexpr double kBackground = 30.0;
constexpr int kMaxDrawAttempts = 100;

void check_range(double lo, double hi, bool positive, const char* name) {
  if (!(std::isfinite(lo) && std::isfinite(hi)) || lo > hi || (positive ? lo <= 0.0 : lo < 0.0))
    throw std::invalid_argument(std::string("SynthSpec: invalid ") + name + " range [" +
                                std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

// Right-flank tangent from base corner B to the apex circle; returns the
// tangent point. Throws if B lies inside the circle.
void right_tangent_point(double cx, double cy, double r, double bx, double by, double* tx,
                         double* ty) {
  const double dx = bx - cx, dy = by - cy;
  const double d2 = dx * dx + dy * dy;
  if (d2 <= r * r)
    throw std::invalid_argument("render_tip: apex circle reaches the base corner");
  const double f = r * r / d2;
  const double g = r * std::sqrt(d2 - r * r) / d2;
  // Of the two tangent points, the outer flank uses the one farther right.
  *tx = cx + f * dx + g * dy;
  *ty = cy + f * dy - g * dx;
}

}  // namespace

void SynthSpec::validate() const {
  if (image_size < 16)
    throw std::invalid_argument("SynthSpec: image_size must be at least 16");
  if (!(nm_per_px > 0.0))
    throw std::invalid_argument("SynthSpec: nm_per_px must be positive");
  check_range(width_min_um, width_max_um, true, "width");
  check_range(height_min_um, height_max_um, true, "height");
  check_range(radius_min_um, radius_max_um, true, "radius");
  check_range(blur_min_px, blur_max_px, false, "blur sigma");
  check_range(noise_min, noise_max, false, "noise sigma");
  if (radius_max_um >= width_min_um)
    throw std::invalid_argument(
        "SynthSpec: radius range upper bound must lie below the width range lower bound");
}

bool tip_fits(int size, double w_px, double h_px, double r_px) {
  if (r_px < 1.5) return false;                 // apex must rasterize
  if (w_px < 4.0 || w_px > size - 4.0) return false;
  if (h_px < 2.0 * r_px + 3.0 || h_px > size - 3.0) return false;
  if (2.0 * r_px >= w_px) return false;         // flank tangency needs R < W/2
  // Tangent constructibility from the base corner.
  const double cx = size / 2.0;
  const double cy = size - h_px + r_px;
  const double dx = w_px / 2.0, dy = size - cy;
  return dx * dx + dy * dy > r_px * r_px * 1.0001;
}

Image render_tip(int size, double w_px, double h_px, double r_px) {
  const double cx = size / 2.0;
  const double ya = size - h_px;       // top of the apex circle
  const double cy = ya + r_px;         // circle center
  const double bx = cx + w_px / 2.0;   // right base corner
  const double by = size;
  double tx = 0.0, ty = 0.0;
  right_tangent_point(cx, cy, r_px, bx, by, &tx, &ty);

  Image img;
  img.width = size;
  img.height = size;
  img.pixels.assign(static_cast<std::size_t>(size) * size, quantize_u8(kBackground));
  const std::uint8_t fg = quantize_u8(kForeground);

  for (int i = 0; i < size; ++i) {
    const double py = i + 0.5;
    if (py < ya) continue;
    // Half-width at this scanline: circle cap and/or straight flank.
    double hw = -1.0;
    const double dyc = py - cy;
    if (std::fabs(dyc) <= r_px) hw = std::sqrt(r_px * r_px - dyc * dyc);
    if (py >= ty) {
      const double t = (py - by) / (ty - by);
      const double flank = (bx + t * (tx - bx)) - cx;
      if (flank > hw) hw = flank;
    }
    if (hw < 0.0) continue;
    for (int j = 0; j < size; ++j) {
      const double px = j + 0.5;
      if (std::fabs(px - cx) <= hw) img.at(i, j) = fg;
    }
  }
  return img;
}

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int k = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> w(static_cast<std::size_t>(2 * k + 1));
  double norm = 0.0;
  for (int t = -k; t <= k; ++t) {
    w[static_cast<std::size_t>(t + k)] = std::exp(-0.5 * t * t / (sigma * sigma));
    norm += w[static_cast<std::size_t>(t + k)];
  }
  for (double& v : w) v /= norm;

  const int H = img.height, W = img.width;
  std::vector<double> tmp(static_cast<std::size_t>(H) * W);
  // Horizontal pass, clamp-to-edge.
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      double s = 0.0;
      for (int t = -k; t <= k; ++t) {
        const int jj = std::min(std::max(j + t, 0), W - 1);
        s += w[static_cast<std::size_t>(t + k)] * img.at(i, jj);
      }
      tmp[static_cast<std::size_t>(i) * W + j] = s;
    }
  Image out;
  out.height = H;
  out.width = W;
  out.pixels.resize(static_cast<std::size_t>(H) * W);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      double s = 0.0;
      for (int t = -k; t <= k; ++t) {
        const int ii = std::min(std::max(i + t, 0), H - 1);
        s += w[static_cast<std::size_t>(t + k)] * tmp[static_cast<std::size_t>(ii) * W + j];
      }
      out.at(i, j) = quantize_u8(s);
    }
  return out;
}

SynthResult generate_synthetic(const SynthSpec& spec, int n) {
  spec.validate();
  if (n < 1) throw std::invalid_argument("generate_synthetic: n must be at least 1");

  const double um_to_px = 1000.0 / spec.nm_per_px;
  Rng rng(spec.seed);
  SynthResult result;

  for (int i = 0; i < n; ++i) {
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "tip_%05d", i);
    const std::string id = idbuf;

    double w_um = 0.0, h_um = 0.0, r_um = 0.0;
    int attempt = 0;
    for (;;) {
      w_um = rng.uniform(spec.width_min_um, spec.width_max_um);
      h_um = rng.uniform(spec.height_min_um, spec.height_max_um);
      r_um = rng.uniform(spec.radius_min_um, spec.radius_max_um);
      if (tip_fits(spec.image_size, w_um * um_to_px, h_um * um_to_px, r_um * um_to_px)) break;
      if (++attempt >= kMaxDrawAttempts)
        throw std::runtime_error("generate_synthetic: " + id + ": no parameter draw fit the " +
                                 std::to_string(spec.image_size) + "px frame after " +
                                 std::to_string(kMaxDrawAttempts) +
                                 " attempts; check ranges against image size and scale");
    }

    Image img =
        render_tip(spec.image_size, w_um * um_to_px, h_um * um_to_px, r_um * um_to_px);
    const double blur_sigma = rng.uniform(spec.blur_min_px, spec.blur_max_px);
    if (blur_sigma > 0.0) img = gaussian_blur(img, blur_sigma);
    const double noise_sigma = rng.uniform(spec.noise_min, spec.noise_max);
    if (noise_sigma > 0.0)
      for (std::uint8_t& p : img.pixels) p = quantize_u8(p + rng.normal(0.0, noise_sigma));

    SampleRecord rec;
    rec.id = id;
    rec.file = id + ".pgm";
    rec.width_um = w_um;
    rec.height_um = h_um;
    rec.radius_um = r_um;
    rec.split = "unsplit";
    result.manifest.records.push_back(std::move(rec));
    result.images.push_back(std::move(img));
  }

  auto& md = result.manifest.metadata;
  md["beam_current"] = "n/a (synthetic)";
  md["acceleration_voltage"] = "n/a (synthetic)";
  md["working_distance"] = "n/a (synthetic)";
  md["tilt"] = "0";
  md["field_of_view"] =
      format_double(spec.image_size * spec.nm_per_px / 1000.0) + " um";
  md["resolution"] = std::to_string(spec.image_size) + " x " + std::to_string(spec.image_size);
  md["scale_nm_per_px"] = format_double(spec.nm_per_px);
  md["seed"] = std::to_string(spec.seed);
  md["blur_sigma_px"] = format_double(spec.blur_min_px) + ".." + format_double(spec.blur_max_px);
  md["noise_sigma"] = format_double(spec.noise_min) + ".." + format_double(spec.noise_max);
  return result;
}

}  // namespace simic
