#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "simic/image.hpp"
#include "simic/manifest.hpp"
#include "simic/rng.hpp"
#include "simic/synth.hpp"

using namespace simic;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static int counter = 0;
  fs::path p = fs::temp_directory_path() / ("simic_dataio_" + std::to_string(counter++));
  fs::create_directories(p);
  return p;
}

std::vector<std::uint8_t> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE_BEGIN("dataio");

// ---- P5 codec ---------------------------------------------------------------

TEST_CASE("image round-trip is lossless for all 256 values") {
  Image img;
  img.height = 16;
  img.width = 16;
  img.pixels.resize(256);
  for (int i = 0; i < 256; ++i) img.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i);
  const fs::path p = temp_dir() / "all_values.pgm";
  write_image(p.string(), img);
  Image back = read_image(p.string());
  CHECK(back.height == 16);
  CHECK(back.width == 16);
  CHECK(back.pixels == img.pixels);
}

TEST_CASE("64x64 all-zero image has exactly 64*64 payload bytes") {
  Image img;
  img.height = 64;
  img.width = 64;
  img.pixels.assign(64 * 64, 0);
  const std::vector<std::uint8_t> bytes = encode_p5(img);
  const std::string header = "P5\n64 64\n255\n";
  REQUIRE(bytes.size() == header.size() + 64 * 64);
  CHECK(std::string(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(header.size())) ==
        header);
}

TEST_CASE("maxval other than 255 is rejected") {
  const std::string text = "P5\n2 2\n65535\n";
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  bytes.insert(bytes.end(), 8, 0);  // 16-bit payload
  CHECK_THROWS_WITH_AS(decode_p5(bytes, "mem"),
                       doctest::Contains("maxval"), std::runtime_error);
}

TEST_CASE("truncated payload error names the byte offset") {
  const std::string text = "P5\n4 4\n255\n";
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  bytes.insert(bytes.end(), 7, 9);  // 7 of 16 bytes
  try {
    decode_p5(bytes, "mem");
    FAIL("expected truncation error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("truncated") != std::string::npos);
    CHECK(msg.find("byte") != std::string::npos);
  }
}

TEST_CASE("bad magic and malformed headers are rejected with offsets") {
  std::vector<std::uint8_t> junk = {'P', '6', '\n'};
  CHECK_THROWS_AS(decode_p5(junk, "mem"), std::runtime_error);
  const std::string nodims = "P5\nabc\n";
  CHECK_THROWS_AS(decode_p5(std::vector<std::uint8_t>(nodims.begin(), nodims.end()), "mem"),
                  std::runtime_error);
}

TEST_CASE("header comments are tolerated") {
  const std::string text = "P5\n# a comment\n2 1\n255\n";
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  bytes.push_back(7);
  bytes.push_back(8);
  Image img = decode_p5(bytes, "mem");
  CHECK(img.width == 2);
  CHECK(img.height == 1);
  CHECK(img.pixels[0] == 7);
}

// ---- manifest ---------------------------------------------------------------

TEST_CASE("manifest round-trip preserves rows and metadata") {
  DatasetManifest m;
  m.metadata["field_of_view"] = "0.64 um";
  m.metadata["resolution"] = "64 x 64";
  for (int i = 0; i < 3; ++i) {
    SampleRecord r;
    r.id = "tip_0000" + std::to_string(i);
    r.file = r.id + ".pgm";
    r.width_um = 0.3 + 0.01 * i;
    r.height_um = 0.4;
    r.radius_um = 0.05;
    r.split = i == 0 ? "train" : (i == 1 ? "val" : "eval");
    m.records.push_back(r);
  }
  const fs::path p = temp_dir() / "manifest.csv";
  save_manifest(p.string(), m);
  DatasetManifest back = load_manifest(p.string());
  REQUIRE(back.records.size() == 3);
  CHECK(back.metadata == m.metadata);
  for (int i = 0; i < 3; ++i) {
    CHECK(back.records[static_cast<std::size_t>(i)].id == m.records[static_cast<std::size_t>(i)].id);
    CHECK(back.records[static_cast<std::size_t>(i)].width_um ==
          m.records[static_cast<std::size_t>(i)].width_um);
    CHECK(back.records[static_cast<std::size_t>(i)].split ==
          m.records[static_cast<std::size_t>(i)].split);
  }
}

TEST_CASE("duplicate id errors cite the row number") {
  const fs::path p = temp_dir() / "dup.csv";
  std::ofstream f(p);
  f << "id,file,width_um,height_um,radius_um,split\n";
  f << "a,a.pgm,0.3,0.4,0.05,train\n";
  f << "a,b.pgm,0.3,0.4,0.05,val\n";
  f.close();
  try {
    load_manifest(p.string());
    FAIL("expected duplicate id error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 3") != std::string::npos);
    CHECK(msg.find("duplicate") != std::string::npos);
  }
}

TEST_CASE("radius >= width is a validation error") {
  const fs::path p = temp_dir() / "fat_apex.csv";
  std::ofstream f(p);
  f << "id,file,width_um,height_um,radius_um,split\n";
  f << "a,a.pgm,0.3,0.4,0.35,train\n";
  f.close();
  CHECK_THROWS_WITH_AS(load_manifest(p.string()), doctest::Contains("radius_um"),
                       std::runtime_error);
}

TEST_CASE("missing column and nonpositive label are rejected") {
  const fs::path dir = temp_dir();
  {
    std::ofstream f(dir / "short.csv");
    f << "id,file,width_um,height_um,radius_um\n";  // split column missing
  }
  CHECK_THROWS_AS(load_manifest((dir / "short.csv").string()), std::runtime_error);
  {
    std::ofstream f(dir / "neg.csv");
    f << "id,file,width_um,height_um,radius_um,split\n";
    f << "a,a.pgm,0.3,-0.4,0.05,train\n";
  }
  CHECK_THROWS_WITH_AS(load_manifest((dir / "neg.csv").string()), doctest::Contains("row 2"),
                       std::runtime_error);
}

// ---- split protocol -----------------------------------------------------------

TEST_CASE("900 ids split 576/144/180") {
  std::vector<std::string> ids;
  for (int i = 0; i < 900; ++i) ids.push_back("s" + std::to_string(i));
  const auto a = split_assignment(ids, 42);
  std::map<std::string, int> counts;
  for (const auto& [id, split] : a) counts[split]++;
  CHECK(counts["train"] == 576);
  CHECK(counts["val"] == 144);
  CHECK(counts["eval"] == 180);
}

TEST_CASE("10 ids split 6/2/2") {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("s" + std::to_string(i));
  const auto a = split_assignment(ids, 1);
  std::map<std::string, int> counts;
  for (const auto& [id, split] : a) counts[split]++;
  CHECK(counts["train"] == 6);
  CHECK(counts["val"] == 2);
  CHECK(counts["eval"] == 2);
}

TEST_CASE("split is a partition and deterministic under the seed") {
  std::vector<std::string> ids;
  for (int i = 0; i < 37; ++i) ids.push_back("x" + std::to_string(i));
  const auto a = split_assignment(ids, 7);
  const auto b = split_assignment(ids, 7);
  CHECK(a == b);
  const auto c = split_assignment(ids, 8);
  CHECK(a != c);  // different seed permutes differently (overwhelmingly)
  REQUIRE(a.size() == ids.size());
  for (const std::string& id : ids) {
    const auto it = a.find(id);
    REQUIRE(it != a.end());
    const bool known = it->second == "train" || it->second == "val" || it->second == "eval";
    CHECK(known);
  }
}

TEST_CASE("split partition sizes are consistent for every n in 5..1000") {
  for (int n = 5; n <= 1000; ++n) {
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) ids.push_back(std::to_string(i));
    const auto a = split_assignment(ids, 3);
    int tr = 0, va = 0, ev = 0;
    for (const auto& [id, split] : a) {
      if (split == "train") ++tr;
      else if (split == "val") ++va;
      else ++ev;
    }
    CHECK(tr + va + ev == n);
    CHECK(ev == n - n * 8 / 10);
    CHECK(tr == (n * 8 / 10) * 8 / 10);
    CHECK(va == n * 8 / 10 - (n * 8 / 10) * 8 / 10);
    CHECK(tr >= va);
  }
}

TEST_CASE("fewer than 5 ids is an error") {
  CHECK_THROWS_AS(split_assignment({"a", "b", "c", "d"}, 0), std::invalid_argument);
  CHECK_THROWS_AS(split_assignment({"a", "a", "b", "c", "d"}, 0), std::invalid_argument);
}

// ---- synthetic generator ---------------------------------------------------

TEST_CASE("clean render: foreground present, apex row at size - H_px within 1") {
  SynthSpec spec;
  spec.seed = 99;
  Rng rng(123);
  for (int trial = 0; trial < 50; ++trial) {
    const double w_um = rng.uniform(spec.width_min_um, spec.width_max_um);
    const double h_um = rng.uniform(spec.height_min_um, spec.height_max_um);
    const double r_um = rng.uniform(spec.radius_min_um, spec.radius_max_um);
    const double f = 1000.0 / spec.nm_per_px;
    if (!tip_fits(spec.image_size, w_um * f, h_um * f, r_um * f)) continue;
    Image img = render_tip(spec.image_size, w_um * f, h_um * f, r_um * f);
    int apex_row = -1;
    int fg_count = 0;
    const std::uint8_t bg = img.pixels[0];
    for (int i = 0; i < img.height && apex_row < 0; ++i)
      for (int j = 0; j < img.width; ++j)
        if (img.at(i, j) != bg) {
          apex_row = i;
          break;
        }
    for (std::uint8_t p : img.pixels) fg_count += p != bg;
    REQUIRE(fg_count > 0);
    const double expected = spec.image_size - h_um * f;
    CHECK(std::fabs(apex_row - expected) <= 1.0);
  }
}

TEST_CASE("base row width matches W_px within a pixel") {
  const double w_px = 30.0, h_px = 40.0, r_px = 5.0;
  Image img = render_tip(64, w_px, h_px, r_px);
  int lit = 0;
  for (int j = 0; j < 64; ++j) lit += img.at(63, j) != img.at(0, 0);
  CHECK(std::fabs(lit - w_px) <= 1.0);
}

TEST_CASE("equal seeds give byte-identical files; n files decode; labels in range") {
  SynthSpec spec;
  spec.seed = 2024;
  spec.blur_min_px = 0.4;
  spec.blur_max_px = 0.9;
  spec.noise_min = 2.0;
  spec.noise_max = 6.0;
  const int n = 20;
  SynthResult a = generate_synthetic(spec, n);
  SynthResult b = generate_synthetic(spec, n);
  REQUIRE(a.images.size() == static_cast<std::size_t>(n));
  REQUIRE(a.manifest.records.size() == static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    CHECK(a.images[static_cast<std::size_t>(i)].pixels ==
          b.images[static_cast<std::size_t>(i)].pixels);
    const SampleRecord& r = a.manifest.records[static_cast<std::size_t>(i)];
    CHECK(r.width_um == b.manifest.records[static_cast<std::size_t>(i)].width_um);
    CHECK(r.width_um >= spec.width_min_um);
    CHECK(r.width_um <= spec.width_max_um);
    CHECK(r.radius_um < r.width_um);
  }

  // Through the file layer too: write both runs, compare bytes.
  const fs::path da = temp_dir(), db = temp_dir();
  for (int i = 0; i < n; ++i) {
    write_image((da / a.manifest.records[static_cast<std::size_t>(i)].file).string(),
                a.images[static_cast<std::size_t>(i)]);
    write_image((db / b.manifest.records[static_cast<std::size_t>(i)].file).string(),
                b.images[static_cast<std::size_t>(i)]);
  }
  for (int i = 0; i < n; ++i) {
    const std::string f = a.manifest.records[static_cast<std::size_t>(i)].file;
    CHECK(slurp((da / f).string()) == slurp((db / f).string()));
  }
}

TEST_CASE("generated manifest carries the acquisition metadata keys") {
  SynthSpec spec;
  spec.seed = 5;
  SynthResult r = generate_synthetic(spec, 3);
  for (const char* key : {"beam_current", "acceleration_voltage", "working_distance", "tilt",
                          "field_of_view", "resolution"})
    CHECK(r.manifest.metadata.count(key) == 1);
}

TEST_CASE("impossible ranges exhaust the retry bound with a clear error") {
  SynthSpec spec;
  spec.image_size = 16;             // validate() floor
  spec.width_min_um = 0.30;         // 30 px in a 16 px frame: never fits
  spec.width_max_um = 0.45;
  CHECK_THROWS_WITH_AS(generate_synthetic(spec, 1), doctest::Contains("attempts"),
                       std::runtime_error);
}

TEST_SUITE_END();
