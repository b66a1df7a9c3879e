#pragma once

#include <string>
#include <vector>

#include "simic/image.hpp"
#include "simic/manifest.hpp"

namespace simic {

// Brightness/contrast sweep: every (alpha, beta) pair produces one variant.
struct AugmentationSpec {
  std::vector<double> alphas{0.6, 1.1, 1.6};
  std::vector<double> betas{-40.0, 10.0, 60.0};

  void validate() const;  // nonempty lists, strictly positive alphas
};

// out pixel = round(clamp(alpha*p + beta, 0, 255)), round-half-up.
Image apply_brightness_contrast(const Image& img, double alpha, double beta);

// One variant per (alpha, beta) pair, in row-major order over (alpha, beta).
std::vector<Image> augment(const Image& img, const AugmentationSpec& spec);

// Variant id for alpha index i and beta index j: {id}_a{i}b{j}.
std::string variant_id(const std::string& id, std::size_t i, std::size_t j);

// Expands every train row into the original plus its variants (labels
// inherited); val/eval rows pass through untouched. Errors if a variant id
// is already taken. Pure manifest transform — image files are the caller's
// concern (each variant's file is {variant_id}.pgm).
DatasetManifest expand_training_set(const DatasetManifest& manifest,
                                    const AugmentationSpec& spec);

}  // namespace simic
