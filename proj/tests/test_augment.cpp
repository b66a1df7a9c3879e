#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "simic/augment.hpp"
#include "simic/image.hpp"
#include "simic/rng.hpp"

using namespace simic;

namespace {

Image random_image(int h, int w, Rng& rng) {
  Image img;
  img.height = h;
  img.width = w;
  img.pixels.resize(static_cast<std::size_t>(h) * w);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

}  // namespace

TEST_SUITE_BEGIN("augment");

TEST_CASE("closed-form pixel values from the default parameters") {
  Image img;
  img.height = 1;
  img.width = 3;
  img.pixels = {100, 200, 50};
  CHECK(apply_brightness_contrast(img, 1.1, 10.0).pixels[0] == 120);   // 1.1*100+10
  CHECK(apply_brightness_contrast(img, 1.6, 60.0).pixels[1] == 255);   // 380 clamps
  CHECK(apply_brightness_contrast(img, 0.6, -40.0).pixels[2] == 0);    // -10 clamps
}

TEST_CASE("default spec yields 9 variants in row-major (alpha, beta) order") {
  Rng rng(31);
  Image img = random_image(8, 8, rng);
  AugmentationSpec spec;
  const std::vector<Image> variants = augment(img, spec);
  REQUIRE(variants.size() == 9);
  std::size_t k = 0;
  for (double a : spec.alphas)
    for (double b : spec.betas) {
      const Image direct = apply_brightness_contrast(img, a, b);
      CHECK(variants[k].pixels == direct.pixels);
      ++k;
    }
}

TEST_CASE("(1, 0) is the identity on any image") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    Image img = random_image(16, 16, rng);
    CHECK(apply_brightness_contrast(img, 1.0, 0.0).pixels == img.pixels);
  }
}

TEST_CASE("positive alpha preserves pixel ordering up to clamp ties") {
  Rng rng(19);
  Image img = random_image(12, 12, rng);
  for (double a : {0.6, 1.1, 1.6})
    for (double b : {-40.0, 10.0, 60.0}) {
      Image out = apply_brightness_contrast(img, a, b);
      for (std::size_t i = 0; i < img.pixels.size(); ++i)
        for (std::size_t j = 0; j < img.pixels.size(); ++j)
          if (img.pixels[i] < img.pixels[j]) CHECK(out.pixels[i] <= out.pixels[j]);
    }
}

TEST_CASE("empty parameter lists are an error") {
  AugmentationSpec spec;
  spec.alphas.clear();
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  AugmentationSpec spec2;
  spec2.alphas = {0.0, 1.0};
  CHECK_THROWS_AS(spec2.validate(), std::invalid_argument);
}

TEST_CASE("expand_training_set multiplies train rows by 10 and keeps labels") {
  DatasetManifest m;
  for (int i = 0; i < 12; ++i) {
    SampleRecord r;
    r.id = "t" + std::to_string(i);
    r.file = r.id + ".pgm";
    r.width_um = 0.3;
    r.height_um = 0.4;
    r.radius_um = 0.04 + 0.001 * i;
    r.split = i < 7 ? "train" : (i < 9 ? "val" : "eval");
    m.records.push_back(r);
  }
  AugmentationSpec spec;
  DatasetManifest out = expand_training_set(m, spec);
  std::size_t train = 0, val = 0, eval_count = 0;
  for (const SampleRecord& r : out.records) {
    if (r.split == "train") ++train;
    else if (r.split == "val") ++val;
    else ++eval_count;
  }
  CHECK(train == 70);  // 7 originals x 10
  CHECK(val == 2);
  CHECK(eval_count == 3);

  // Variant labels equal parent labels; ids follow {id}_a{i}b{j}.
  CHECK(out.records[1].id == "t0_a0b0");
  CHECK(out.records[9].id == "t0_a2b2");
  for (std::size_t k = 1; k <= 9; ++k) {
    CHECK(out.records[k].width_um == m.records[0].width_um);
    CHECK(out.records[k].radius_um == m.records[0].radius_um);
    CHECK(out.records[k].split == "train");
  }
}

TEST_CASE("expand is deterministic and collision-checked") {
  DatasetManifest m;
  SampleRecord r;
  r.id = "t0";
  r.file = "t0.pgm";
  r.width_um = 0.3;
  r.height_um = 0.4;
  r.radius_um = 0.04;
  r.split = "train";
  m.records.push_back(r);
  SampleRecord clash = r;
  clash.id = "t0_a1b2";  // occupies a variant slot
  clash.file = "x.pgm";
  m.records.push_back(clash);
  AugmentationSpec spec;
  CHECK_THROWS_WITH_AS(expand_training_set(m, spec), doctest::Contains("t0_a1b2"),
                       std::runtime_error);

  m.records.pop_back();
  DatasetManifest a = expand_training_set(m, spec);
  DatasetManifest b = expand_training_set(m, spec);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) CHECK(a.records[i].id == b.records[i].id);
}

TEST_SUITE_END();
