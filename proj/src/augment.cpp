#include "simic/augment.hpp"

#include <set>
#include <stdexcept>

namespace simic {

void AugmentationSpec::validate() const {
  if (alphas.empty() || betas.empty())
    throw std::invalid_argument("AugmentationSpec: alpha and beta lists must be nonempty");
  for (double a : alphas)
    if (!(a > 0.0))
      throw std::invalid_argument("AugmentationSpec: contrast factors must be positive, got " +
                                  std::to_string(a));
}

Image apply_brightness_contrast(const Image& img, double alpha, double beta) {
  Image out;
  out.height = img.height;
  out.width = img.width;
  out.pixels.resize(img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    out.pixels[i] = quantize_u8(alpha * img.pixels[i] + beta);
  return out;
}

std::vector<Image> augment(const Image& img, const AugmentationSpec& spec) {
  spec.validate();
  std::vector<Image> out;
  out.reserve(spec.alphas.size() * spec.betas.size());
  for (double a : spec.alphas)
    for (double b : spec.betas) out.push_back(apply_brightness_contrast(img, a, b));
  return out;
}

std::string variant_id(const std::string& id, std::size_t i, std::size_t j) {
  return id + "_a" + std::to_string(i) + "b" + std::to_string(j);
}

DatasetManifest expand_training_set(const DatasetManifest& manifest,
                                    const AugmentationSpec& spec) {
  spec.validate();
  std::set<std::string> taken;
  for (const SampleRecord& r : manifest.records) taken.insert(r.id);

  DatasetManifest out;
  out.metadata = manifest.metadata;
  for (const SampleRecord& r : manifest.records) {
    out.records.push_back(r);
    if (r.split != "train") continue;
    for (std::size_t i = 0; i < spec.alphas.size(); ++i)
      for (std::size_t j = 0; j < spec.betas.size(); ++j) {
        SampleRecord v = r;
        v.id = variant_id(r.id, i, j);
        v.file = v.id + ".pgm";
        if (!taken.insert(v.id).second)
          throw std::runtime_error("expand_training_set: variant id '" + v.id +
                                   "' collides with an existing id");
        out.records.push_back(std::move(v));
      }
  }
  return out;
}

}  // namespace simic
