#include "simic/dataset.hpp"

#include <cmath>
#include <stdexcept>

namespace simic {

LoadedSplit load_split(const DatasetManifest& manifest, const std::string& image_dir,
                       const std::string& split) {
  LoadedSplit out;
  out.split = split;
  for (const SampleRecord& rec : manifest.records) {
    if (rec.split != split) continue;
    Image img = read_image(join_path(image_dir, rec.file));
    if (!out.images.empty() &&
        (img.width != out.images.front().width || img.height != out.images.front().height))
      throw std::runtime_error("image size mismatch in split '" + split + "': " + rec.file +
                               " is " + std::to_string(img.width) + "x" +
                               std::to_string(img.height));
    out.ids.push_back(rec.id);
    out.images.push_back(std::move(img));
    out.labels_um.push_back({rec.width_um, rec.height_um, rec.radius_um});
  }
  if (out.ids.empty())
    throw std::runtime_error("split '" + split + "' has no records in the manifest");
  return out;
}

NormStats compute_norm_stats(const LoadedSplit& train) {
  NormStats ns;
  const double n = static_cast<double>(train.size());
  for (int t = 0; t < 3; ++t) {
    double mean = 0.0;
    for (const auto& lab : train.labels_um) mean += lab[t];
    mean /= n;
    double var = 0.0;
    for (const auto& lab : train.labels_um) var += (lab[t] - mean) * (lab[t] - mean);
    var /= n;
    ns.mean[t] = mean;
    ns.stdev[t] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  return ns;
}

namespace {

void check_idx(const LoadedSplit& s, const std::vector<int>& idx) {
  if (idx.empty()) throw std::invalid_argument("batch index list is empty");
  for (int i : idx)
    if (i < 0 || i >= s.size())
      throw std::out_of_range("batch index " + std::to_string(i) + " out of range for split of " +
                              std::to_string(s.size()));
}

}  // namespace

Tensor batch_images(const LoadedSplit& s, const std::vector<int>& idx) {
  check_idx(s, idx);
  const int h = s.images.front().height;
  const int w = s.images.front().width;
  Tensor x({static_cast<int>(idx.size()), 1, h, w});
  double* d = x.data();
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const Image& img = s.images[idx[b]];
    for (std::size_t p = 0; p < img.pixels.size(); ++p)
      d[b * img.pixels.size() + p] = img.pixels[p] / 255.0;
  }
  return x;
}

Tensor batch_structure(const LoadedSplit& s, const std::vector<int>& idx, const NormStats& norm) {
  check_idx(s, idx);
  Tensor out({static_cast<int>(idx.size()), 2});
  double* d = out.data();
  for (std::size_t b = 0; b < idx.size(); ++b)
    for (int t = 0; t < 2; ++t)
      d[b * 2 + t] = (s.labels_um[idx[b]][t] - norm.mean[t]) / norm.stdev[t];
  return out;
}

Tensor batch_targets(const LoadedSplit& s, const std::vector<int>& idx, const NormStats& norm,
                     int out_dim) {
  check_idx(s, idx);
  if (out_dim != 1 && out_dim != 3)
    throw std::invalid_argument("target width must be 1 (radius) or 3 (width,height,radius)");
  Tensor out({static_cast<int>(idx.size()), out_dim});
  double* d = out.data();
  for (std::size_t b = 0; b < idx.size(); ++b) {
    if (out_dim == 3) {
      for (int t = 0; t < 3; ++t)
        d[b * 3 + t] = (s.labels_um[idx[b]][t] - norm.mean[t]) / norm.stdev[t];
    } else {
      d[b] = (s.labels_um[idx[b]][2] - norm.mean[2]) / norm.stdev[2];
    }
  }
  return out;
}

}  // namespace simic
