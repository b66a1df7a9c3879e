#include "simic/classical.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

namespace simic {

std::size_t Mask::count() const {
  std::size_t n = 0;
  for (std::uint8_t v : on) n += v;
  return n;
}

int otsu_threshold(const std::array<std::int64_t, 256>& hist) {
  std::int64_t total = 0;
  int levels = 0;
  for (std::int64_t c : hist) {
    total += c;
    if (c > 0) ++levels;
  }
  if (total == 0) throw std::invalid_argument("otsu: empty histogram");
  if (levels < 2)
    throw std::invalid_argument("otsu: uniform image has no foreground/background separation");

  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) sum_all += static_cast<double>(i) * hist[i];

  // classes [0,t] and [t+1,255]; foreground starts at t+1
  double best = -1.0;
  int best_t = 0;
  std::int64_t w0 = 0;
  double sum0 = 0.0;
  for (int t = 0; t < 255; ++t) {
    w0 += hist[t];
    sum0 += static_cast<double>(t) * hist[t];
    const std::int64_t w1 = total - w0;
    if (w0 == 0 || w1 == 0) continue;
    const double mu0 = sum0 / w0;
    const double mu1 = (sum_all - sum0) / w1;
    const double between =
        static_cast<double>(w0) * static_cast<double>(w1) * (mu0 - mu1) * (mu0 - mu1);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  return best_t + 1;
}

namespace {

Mask threshold_mask(const Image& img, int threshold) {
  Mask m;
  m.height = img.height;
  m.width = img.width;
  m.on.assign(img.pixels.size(), 0);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) m.on[i] = img.pixels[i] >= threshold ? 1 : 0;
  return m;
}

// 3x3 erosion/dilation; windows clip to the image (border-replicate morphology).
Mask morph(const Mask& in, bool erode) {
  Mask out;
  out.height = in.height;
  out.width = in.width;
  out.on.assign(in.on.size(), 0);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      bool all = true, any = false;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= in.height || nx < 0 || nx >= in.width) continue;
          if (in.at(ny, nx))
            any = true;
          else
            all = false;
        }
      }
      out.set(y, x, erode ? all : any);
    }
  }
  return out;
}

}  // namespace

Mask segment(const Image& img) {
  if (img.pixels.empty()) throw std::invalid_argument("segment: empty image");
  std::array<std::int64_t, 256> hist{};
  for (std::uint8_t p : img.pixels) ++hist[p];
  const int threshold = otsu_threshold(hist);
  Mask m = morph(morph(threshold_mask(img, threshold), /*erode=*/true), /*erode=*/false);
  if (m.count() == 0)
    throw std::runtime_error("segment: no foreground survives thresholding and opening");
  return m;
}

Mask largest_component(const Mask& mask) {
  if (mask.count() == 0) throw std::invalid_argument("largest_component: empty mask");
  std::vector<int> label(mask.on.size(), -1);
  int best_label = -1;
  std::size_t best_size = 0;
  int next = 0;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(y, x) || label[static_cast<std::size_t>(y) * mask.width + x] >= 0) continue;
      const int id = next++;
      std::size_t size = 0;
      std::deque<std::pair<int, int>> queue{{y, x}};
      label[static_cast<std::size_t>(y) * mask.width + x] = id;
      while (!queue.empty()) {
        auto [cy, cx] = queue.front();
        queue.pop_front();
        ++size;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = cy + dy, nx = cx + dx;
            if (ny < 0 || ny >= mask.height || nx < 0 || nx >= mask.width) continue;
            std::size_t idx = static_cast<std::size_t>(ny) * mask.width + nx;
            if (mask.on[idx] && label[idx] < 0) {
              label[idx] = id;
              queue.emplace_back(ny, nx);
            }
          }
        }
      }
      if (size > best_size) {
        best_size = size;
        best_label = id;
      }
    }
  }
  Mask out;
  out.height = mask.height;
  out.width = mask.width;
  out.on.assign(mask.on.size(), 0);
  for (std::size_t i = 0; i < mask.on.size(); ++i) out.on[i] = label[i] == best_label ? 1 : 0;
  return out;
}

std::vector<std::pair<int, int>> trace_contour(const Mask& mask) {
  Mask comp = largest_component(mask);

  // topmost-then-leftmost start pixel
  int sy = -1, sx = -1;
  for (int y = 0; y < comp.height && sy < 0; ++y)
    for (int x = 0; x < comp.width; ++x)
      if (comp.at(y, x)) {
        sy = y;
        sx = x;
        break;
      }

  // clockwise Moore neighborhood, starting west
  static const int kDy[8] = {0, -1, -1, -1, 0, 1, 1, 1};
  static const int kDx[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
  auto fg = [&](int y, int x) {
    return y >= 0 && y < comp.height && x >= 0 && x < comp.width && comp.at(y, x);
  };

  bool isolated = true;
  for (int d = 0; d < 8; ++d)
    if (fg(sy + kDy[d], sx + kDx[d])) isolated = false;
  if (isolated) return {{sy, sx}};

  std::vector<std::pair<int, int>> contour;
  int cy = sy, cx = sx;
  int enter = 0;  // scan resumes past the backtrack neighbor; start pretends west
  int d0 = -1;    // first direction taken out of the start pixel
  const std::size_t limit = 4 * comp.count() + 8;
  while (true) {
    int found = -1;
    for (int k = 1; k <= 8; ++k) {
      const int d = (enter + k) % 8;
      if (fg(cy + kDy[d], cx + kDx[d])) {
        found = d;
        break;
      }
    }
    if (d0 < 0)
      d0 = found;
    else if (cy == sy && cx == sx && found == d0)
      break;  // about to repeat the opening move: the walk is closed
    contour.emplace_back(cy, cx);
    cy += kDy[found];
    cx += kDx[found];
    enter = (found + 5) % 8;  // one past the pixel we came from
    if (contour.size() > limit)
      throw std::logic_error("trace_contour: walk exceeded the safety bound");
  }

  // enforce the positive-signed-area convention (x=col, y=row)
  double area2 = 0.0;
  for (std::size_t i = 0; i < contour.size(); ++i) {
    const auto& [y1, x1] = contour[i];
    const auto& [y2, x2] = contour[(i + 1) % contour.size()];
    area2 += static_cast<double>(x1) * y2 - static_cast<double>(x2) * y1;
  }
  if (area2 < 0.0) std::reverse(contour.begin(), contour.end());
  return contour;
}

CircleFit fit_circle(const std::vector<std::pair<double, double>>& pts) {
  if (pts.size() < 3)
    throw std::invalid_argument("fit_circle: needs at least 3 points, got " +
                                std::to_string(pts.size()));
  const double n = static_cast<double>(pts.size());
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : pts) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;

  double suu = 0.0, svv = 0.0, suv = 0.0, suuu = 0.0, svvv = 0.0, suvv = 0.0, svuu = 0.0;
  for (const auto& [x, y] : pts) {
    const double u = x - mx, v = y - my;
    suu += u * u;
    svv += v * v;
    suv += u * v;
    suuu += u * u * u;
    svvv += v * v * v;
    suvv += u * v * v;
    svuu += v * u * u;
  }
  const double det = suu * svv - suv * suv;
  const double scale = std::max(suu, svv);
  if (!(det > 1e-12 * scale * scale))
    throw std::invalid_argument("fit_circle: degenerate (collinear) point set");
  const double rhs1 = 0.5 * (suuu + suvv);
  const double rhs2 = 0.5 * (svvv + svuu);
  const double a = (rhs1 * svv - rhs2 * suv) / det;
  const double b = (rhs2 * suu - rhs1 * suv) / det;

  CircleFit fit;
  fit.cx = a + mx;
  fit.cy = b + my;
  fit.r = std::sqrt(a * a + b * b + (suu + svv) / n);
  return fit;
}

TipMeasurement measure_tip(const Image& img) {
  Mask comp = largest_component(segment(img));
  auto contour = trace_contour(comp);

  int top = comp.height, base = -1;
  for (int y = 0; y < comp.height; ++y)
    for (int x = 0; x < comp.width; ++x)
      if (comp.at(y, x)) {
        top = std::min(top, y);
        base = std::max(base, y);
      }

  auto row_extent = [&](int y) {
    int lo = comp.width, hi = -1;
    for (int x = 0; x < comp.width; ++x)
      if (comp.at(y, x)) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
    return hi < lo ? 0 : hi - lo + 1;
  };

  TipMeasurement out;
  out.height_px = base - top + 1;
  out.width_px = row_extent(base);

  // Apex-arc window from the curvature of the topmost rows: a circle that
  // drops t rows while widening to half-width hw has radius (hw^2+t^2)/(2t).
  const int t = std::min(3, base - top);
  if (t < 1) throw std::runtime_error("measure_tip: blob is too flat to carry an apex arc");
  const double hw = row_extent(top + t) / 2.0;
  const double r_guess = (hw * hw + t * t) / (2.0 * t);

  if (row_extent(top) >= 0.9 * out.width_px && out.width_px >= 4)
    throw std::runtime_error("measure_tip: flat top, no apex arc to fit");

  auto window_points = [&](double max_row) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& [y, x] : contour)
      if (y <= max_row) pts.emplace_back(x, y);
    return pts;
  };

  std::vector<std::pair<double, double>> apex = window_points(top + 2.0 * r_guess);
  if (apex.size() < 5)
    throw std::runtime_error("measure_tip: fewer than 5 apex contour points (got " +
                             std::to_string(apex.size()) + ")");
  CircleFit fit = fit_circle(apex);
  // The first window usually reaches below the arc onto the straight flanks,
  // which only touch the apex circle at their tangent points. Those lie no
  // lower than the circle's center row, so clamping the window there and
  // refitting peels the flanks off within a few rounds.
  for (int round = 0; round < 3; ++round) {
    auto pts = window_points(std::min(top + 2.0 * r_guess, fit.cy));
    if (pts.size() < 5) break;
    fit = fit_circle(pts);
  }
  out.radius_px = fit.r + kContourRadiusBias;
  return out;
}

}  // namespace simic
