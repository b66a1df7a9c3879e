#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "simic/dataset.hpp"
#include "simic/manifest.hpp"
#include "simic/model.hpp"

namespace simic {

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 32;
  int max_epochs = 500;
  double weight_decay = 1e-5;
  int patience = 20;        // epochs without validation improvement before stopping
  double min_delta = 1e-6;  // smallest validation decrease counted as improvement
  double huber_delta = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainLog {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;
  double best_val = 0.0;
};

// Adam with coupled L2 regularization: the decay term joins the raw gradient
// before the moment updates.
struct AdamState {
  std::vector<std::vector<double>> m, v;
  long t = 0;

  void init(const std::vector<Tensor>& params);
};

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, double weight_decay,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// Mean per-sample Huber loss of a split in inference mode.
double dataset_loss(Model& model, const LoadedSplit& data, double huber_delta, int batch_size);

// Fits the model on the manifest's train split with early stopping on the
// val split, then restores the best-validation parameters.
TrainLog train_model(Model& model, const DatasetManifest& manifest, const std::string& image_dir,
                     const TrainConfig& cfg);

std::string train_log_csv(const TrainLog& log);
void save_train_log(const std::string& path, const TrainLog& log);

}  // namespace simic
