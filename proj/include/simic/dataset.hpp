#pragma once

#include <array>
#include <string>
#include <vector>

#include "simic/image.hpp"
#include "simic/manifest.hpp"
#include "simic/model.hpp"
#include "simic/tensor.hpp"

namespace simic {

// One manifest split pulled into memory: raw 8-bit images plus labels in
// micrometers, ordered width, height, radius.
struct LoadedSplit {
  std::string split;
  std::vector<std::string> ids;
  std::vector<Image> images;
  std::vector<std::array<double, 3>> labels_um;

  int size() const { return static_cast<int>(ids.size()); }
};

// Reads every record of `split`; image paths resolve relative to image_dir.
// All images must agree on dimensions.
LoadedSplit load_split(const DatasetManifest& manifest, const std::string& image_dir,
                       const std::string& split);

// Per-target mean and population standard deviation over a training split.
// A degenerate (constant) target keeps stdev 1 so normalization stays finite.
NormStats compute_norm_stats(const LoadedSplit& train);

// Batch assembly for the row subset `idx`, in that order.
Tensor batch_images(const LoadedSplit& s, const std::vector<int>& idx);  // [b,1,H,W] in [0,1]
Tensor batch_structure(const LoadedSplit& s, const std::vector<int>& idx,
                       const NormStats& norm);  // [b,2] normalized width,height
Tensor batch_targets(const LoadedSplit& s, const std::vector<int>& idx, const NormStats& norm,
                     int out_dim);  // [b,out_dim] normalized; out_dim 1 keeps radius only

}  // namespace simic
