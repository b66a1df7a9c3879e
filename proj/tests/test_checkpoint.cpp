#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "simic/checkpoint.hpp"
#include "simic/rng.hpp"

using namespace simic;

namespace {

ModelConfig cfg_for(const std::string& backbone, const std::string& attention,
                    const std::string& mode) {
  ModelConfig cfg;
  cfg.backbone = backbone;
  cfg.attention = attention;
  cfg.mode = mode;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.stage_widths = {3, 5, 7};
  cfg.input_size = 16;
  return cfg;
}

// Random-valued model state so a round trip proves every byte travels.
Model scrambled_model(const ModelConfig& cfg, std::uint64_t seed) {
  Model m = Model::build(cfg, seed);
  Rng rng(seed + 100);
  for (auto& [name, t] : m.named_state()) {
    const bool is_var = name.size() >= 8 && name.rfind(".run_var") == name.size() - 8;
    for (std::size_t i = 0; i < t.numel(); ++i)
      t.data()[i] = is_var ? rng.uniform(0.5, 1.5) : rng.uniform(-1.0, 1.0);
  }
  m.norm.mean = {0.31, 0.42, 0.05};
  m.norm.stdev = {0.07, 0.08, 0.018};
  return m;
}

std::vector<double> vec(const Tensor& t) {
  return std::vector<double>(t.data(), t.data() + t.numel());
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("checkpoint round trip restores every tensor and the config") {
  const std::string path = "ckpt_roundtrip.bin";
  for (const auto& [bb, att, mode] :
       std::vector<std::tuple<std::string, std::string, std::string>>{
           {"residual", "mha", "full"},
           {"depthwise", "additive", "half"},
           {"compound", "none", "full"},
           {"residual", "none", "half"}}) {
    CAPTURE(bb);
    CAPTURE(att);
    CAPTURE(mode);
    Model m = scrambled_model(cfg_for(bb, att, mode), 3);
    save_checkpoint(m, path);
    Model r = load_checkpoint(path);

    CHECK(r.config.backbone == bb);
    CHECK(r.config.attention == att);
    CHECK(r.config.mode == mode);
    CHECK(r.config.embed_dim == 8);
    CHECK(r.config.heads == 2);
    CHECK(r.config.stage_widths == std::vector<int>{3, 5, 7});
    for (int i = 0; i < 3; ++i) {
      CHECK(r.norm.mean[i] == m.norm.mean[i]);
      CHECK(r.norm.stdev[i] == m.norm.stdev[i]);
    }
    auto sa = m.named_state(), sb = r.named_state();
    REQUIRE(sa.size() == sb.size());
    for (std::size_t i = 0; i < sa.size(); ++i) {
      CHECK(sa[i].first == sb[i].first);
      CHECK(vec(sa[i].second) == vec(sb[i].second));
    }

    // forward agreement, bit for bit
    Rng rng(7);
    Tensor x({2, 1, 16, 16});
    for (std::size_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.uniform();
    Tensor s({2, 2});
    for (std::size_t i = 0; i < s.numel(); ++i) s.data()[i] = rng.normal();
    const bool half = mode == "half";
    NoGradGuard ng;
    Tensor pa = m.forward(x, half ? s : Tensor(), false).pred;
    Tensor pb = r.forward(x, half ? s : Tensor(), false).pred;
    CHECK(vec(pa) == vec(pb));
  }
  std::remove(path.c_str());
}

TEST_CASE("checkpoint files are byte-stable across saves") {
  Model m = scrambled_model(cfg_for("residual", "additive", "full"), 11);
  save_checkpoint(m, "ckpt_a.bin");
  save_checkpoint(m, "ckpt_b.bin");
  CHECK(slurp("ckpt_a.bin") == slurp("ckpt_b.bin"));
  std::remove("ckpt_a.bin");
  std::remove("ckpt_b.bin");
}

TEST_CASE("loading with a mismatched expectation names the differing field") {
  const std::string path = "ckpt_mismatch.bin";
  Model m = scrambled_model(cfg_for("residual", "mha", "full"), 5);
  save_checkpoint(m, path);

  ModelConfig wrong = cfg_for("residual", "additive", "full");
  CHECK_THROWS_WITH_AS(load_checkpoint(path, &wrong), doctest::Contains("attention"),
                       std::runtime_error);
  wrong = cfg_for("compound", "mha", "full");
  CHECK_THROWS_WITH_AS(load_checkpoint(path, &wrong), doctest::Contains("backbone"),
                       std::runtime_error);
  wrong = cfg_for("residual", "mha", "full");
  wrong.embed_dim = 16;
  CHECK_THROWS_WITH_AS(load_checkpoint(path, &wrong), doctest::Contains("embed_dim"),
                       std::runtime_error);
  ModelConfig right = cfg_for("residual", "mha", "full");
  CHECK_NOTHROW(load_checkpoint(path, &right));
  std::remove(path.c_str());
}

TEST_CASE("corrupt checkpoints are rejected with specific errors") {
  const std::string path = "ckpt_corrupt.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << "not a checkpoint\n";
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"), std::runtime_error);

  {
    std::ofstream out(path, std::ios::binary);
    out << "SIMIC-CKPT 9\n";
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"), std::runtime_error);

  Model m = scrambled_model(cfg_for("residual", "none", "full"), 2);
  save_checkpoint(m, path);
  std::string bytes = slurp(path);
  {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 64));
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("truncated"), std::runtime_error);

  CHECK_THROWS_AS(load_checkpoint("ckpt_does_not_exist.bin"), std::runtime_error);
  std::remove(path.c_str());
}
