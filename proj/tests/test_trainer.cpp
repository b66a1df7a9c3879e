#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "simic/dataset.hpp"
#include "simic/objective.hpp"
#include "simic/rng.hpp"
#include "simic/synth.hpp"
#include "simic/trainer.hpp"

using namespace simic;

namespace {

DatasetManifest write_train_fixture(const std::string& dir, int n, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  SynthSpec spec;
  spec.seed = seed;
  SynthResult res = generate_synthetic(spec, n);
  for (std::size_t i = 0; i < res.images.size(); ++i)
    write_image(join_path(dir, res.manifest.records[i].file), res.images[i]);
  assign_splits(res.manifest, seed + 1);
  save_manifest(join_path(dir, "manifest.csv"), res.manifest);
  return res.manifest;
}

ModelConfig small_cfg(const std::string& backbone, const std::string& attention,
                      const std::string& mode) {
  ModelConfig cfg;
  cfg.backbone = backbone;
  cfg.attention = attention;
  cfg.mode = mode;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.stage_widths = {3, 5, 7};
  return cfg;
}

std::vector<double> vec(const Tensor& t) {
  return std::vector<double>(t.data(), t.data() + t.numel());
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.validate();  // defaults are fine
  cfg.lr = 0.0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("lr"), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.max_epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.weight_decay = -1e-9;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.patience = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.patience = 500;  // == max_epochs
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("patience"), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.huber_delta = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("adam first step matches the closed form") {
  const double lr = 0.01, eps = 1e-8;
  SUBCASE("without weight decay") {
    Tensor p = Tensor::from_data({1}, {1.0}, /*requires_grad=*/true);
    p.grad()[0] = 0.5;
    std::vector<Tensor> params = {p};
    AdamState st;
    st.init(params);
    adam_step(params, st, lr, 0.0);
    const double m = 0.1 * 0.5, v = 0.001 * 0.25;
    const double expect = 1.0 - lr * (m / 0.1) / (std::sqrt(v / 0.001) + eps);
    CHECK(p.data()[0] == doctest::Approx(expect).epsilon(1e-14));
  }
  SUBCASE("with coupled weight decay") {
    Tensor p = Tensor::from_data({1}, {2.0}, /*requires_grad=*/true);
    p.grad()[0] = 0.5;
    std::vector<Tensor> params = {p};
    AdamState st;
    st.init(params);
    adam_step(params, st, lr, 0.1);
    const double g = 0.5 + 0.1 * 2.0;  // decay joins the gradient
    const double m = 0.1 * g, v = 0.001 * g * g;
    const double expect = 2.0 - lr * (m / 0.1) / (std::sqrt(v / 0.001) + eps);
    CHECK(p.data()[0] == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("adam matches a scalar reference over 100 steps") {
  // library side
  Tensor p = Tensor::from_data({1}, {3.0}, /*requires_grad=*/true);
  std::vector<Tensor> params = {p};
  AdamState st;
  st.init(params);
  // reference side
  double x = 3.0, m = 0.0, v = 0.0;
  const double lr = 0.05, wd = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Rng rng(4);
  for (int t = 1; t <= 100; ++t) {
    const double noise = rng.normal(0.0, 0.1);
    const double grad_lib = 2.0 * p.data()[0] + noise;  // noisy quadratic pull to 0
    p.zero_grad();
    p.grad()[0] = grad_lib;
    adam_step(params, st, lr, wd);

    const double g = 2.0 * x + noise + wd * x;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
  }
  CHECK(p.data()[0] == doctest::Approx(x).epsilon(1e-12));
}

TEST_CASE("adam walks down a quadratic bowl") {
  Rng rng(8);
  Tensor x = Tensor::from_data({4}, {2.0, -1.5, 0.7, 3.1}, /*requires_grad=*/true);
  Tensor c = Tensor::from_data({4}, {0.5, 0.5, 0.5, 0.5});
  std::vector<Tensor> params = {x};
  AdamState st;
  st.init(params);
  auto loss_value = [&]() {
    NoGradGuard ng;
    return huber_loss(x, c, 10.0).value();  // quadratic branch everywhere here
  };
  const double initial = loss_value();
  for (int t = 0; t < 300; ++t) {
    x.zero_grad();
    Tensor loss = huber_loss(x, c, 10.0);
    loss.backward();
    adam_step(params, st, 0.02, 0.0);
  }
  CHECK(loss_value() < 0.2 * initial);
}

TEST_CASE("training runs, logs every epoch, and is deterministic") {
  const std::string dir = "traintest_smoke";
  DatasetManifest manifest = write_train_fixture(dir, 20, 55);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.patience = 2;
  cfg.batch_size = 8;
  cfg.lr = 1e-3;
  cfg.seed = 9;

  auto run = [&]() {
    Model m = Model::build(small_cfg("residual", "none", "full"), 21);
    TrainLog log = train_model(m, manifest, dir, cfg);
    return std::make_pair(std::move(m), std::move(log));
  };
  auto [m1, log1] = run();
  auto [m2, log2] = run();

  REQUIRE(!log1.epochs.empty());
  CHECK(log1.epochs.size() <= 3);
  for (std::size_t i = 0; i < log1.epochs.size(); ++i) {
    CHECK(log1.epochs[i].epoch == static_cast<int>(i) + 1);
    CHECK(std::isfinite(log1.epochs[i].train_loss));
    CHECK(std::isfinite(log1.epochs[i].val_loss));
  }
  CHECK(log1.best_epoch >= 1);
  CHECK(log1.best_epoch <= static_cast<int>(log1.epochs.size()));

  // identical build seed + train seed => identical trajectory and weights
  CHECK(train_log_csv(log1) == train_log_csv(log2));
  auto s1 = m1.named_state(), s2 = m2.named_state();
  for (std::size_t i = 0; i < s1.size(); ++i) CHECK(vec(s1[i].second) == vec(s2[i].second));
  // normalization statistics were filled from the train split
  CHECK(m1.norm.mean[0] != 0.0);
  CHECK(m1.norm.stdev[0] != 1.0);
}

TEST_CASE("early stopping halts after patience exhausts") {
  const std::string dir = "traintest_stop";
  DatasetManifest manifest = write_train_fixture(dir, 20, 77);
  TrainConfig cfg;
  cfg.max_epochs = 50;
  cfg.patience = 3;
  cfg.min_delta = 1e6;  // nothing can beat this, so epoch 1 stays best
  cfg.batch_size = 16;
  Model m = Model::build(small_cfg("residual", "none", "full"), 2);
  TrainLog log = train_model(m, manifest, dir, cfg);
  CHECK(log.best_epoch == 1);
  CHECK(log.epochs.size() == 4);  // best epoch plus `patience` stale ones
}

TEST_CASE("the best-validation weights are restored after training") {
  const std::string dir = "traintest_restore";
  DatasetManifest manifest = write_train_fixture(dir, 20, 91);
  TrainConfig cfg;
  cfg.max_epochs = 5;
  cfg.patience = 4;
  cfg.batch_size = 8;
  cfg.lr = 5e-3;
  Model m = Model::build(small_cfg("residual", "none", "full"), 13);
  TrainLog log = train_model(m, manifest, dir, cfg);
  LoadedSplit val = load_split(manifest, dir, "val");
  const double restored = dataset_loss(m, val, cfg.huber_delta, cfg.batch_size);
  CHECK(restored == log.best_val);  // bitwise: same weights, same code path
  CHECK(log.best_val == log.epochs[log.best_epoch - 1].val_loss);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  const std::string dir = "traintest_nan";
  DatasetManifest manifest = write_train_fixture(dir, 20, 33);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.patience = 2;
  Model m = Model::build(small_cfg("residual", "none", "full"), 5);
  m.fc2.b.data()[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(train_model(m, manifest, dir, cfg), doctest::Contains("non-finite"),
                       std::runtime_error);
}

TEST_CASE("training requires train and val splits") {
  const std::string dir = "traintest_nosplit";
  std::filesystem::create_directories(dir);
  SynthSpec spec;
  spec.seed = 1;
  SynthResult res = generate_synthetic(spec, 4);
  for (std::size_t i = 0; i < res.images.size(); ++i)
    write_image(join_path(dir, res.manifest.records[i].file), res.images[i]);
  Model m = Model::build(small_cfg("residual", "none", "full"), 1);
  TrainConfig cfg;
  CHECK_THROWS_WITH_AS(train_model(m, res.manifest, dir, cfg), doctest::Contains("train"),
                       std::runtime_error);
}

TEST_CASE("train log serializes with the best-epoch marker") {
  TrainLog log;
  log.best_epoch = 2;
  log.epochs.push_back({1, 0.5, 0.25});
  log.epochs.push_back({2, 0.375, 0.1875});
  const std::string csv = train_log_csv(log);
  CHECK(csv ==
        "#best_epoch=2\n"
        "epoch,train_loss,val_loss\n"
        "1,0.5,0.25\n"
        "2,0.375,0.1875\n");
  save_train_log("traintest_log.csv", log);
  std::ifstream in("traintest_log.csv", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(bytes == csv);
  std::remove("traintest_log.csv");
}

TEST_CASE("half mode trains against the radius target") {
  const std::string dir = "traintest_half";
  DatasetManifest manifest = write_train_fixture(dir, 20, 44);
  TrainConfig cfg;
  cfg.max_epochs = 2;
  cfg.patience = 1;
  cfg.batch_size = 8;
  Model m = Model::build(small_cfg("residual", "additive", "half"), 7);
  TrainLog log = train_model(m, manifest, dir, cfg);
  CHECK(!log.epochs.empty());
  MetricsReport rep = evaluate(m, manifest, dir, "eval");
  CHECK(rep.target_names == std::vector<std::string>{"radius"});
}
