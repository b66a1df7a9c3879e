#include "simic/trainer.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "simic/ops.hpp"
#include "simic/rng.hpp"

namespace simic {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be positive");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be positive");
  if (max_epochs < 1) throw std::invalid_argument("train config: max_epochs must be positive");
  if (weight_decay < 0.0)
    throw std::invalid_argument("train config: weight_decay must be non-negative");
  if (patience < 1) throw std::invalid_argument("train config: patience must be positive");
  if (patience >= max_epochs)
    throw std::invalid_argument("train config: patience must be smaller than max_epochs");
  if (min_delta < 0.0) throw std::invalid_argument("train config: min_delta must be non-negative");
  if (!(huber_delta > 0.0))
    throw std::invalid_argument("train config: huber_delta must be positive");
}

void AdamState::init(const std::vector<Tensor>& params) {
  m.assign(params.size(), {});
  v.assign(params.size(), {});
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i].assign(params[i].numel(), 0.0);
    v[i].assign(params[i].numel(), 0.0);
  }
  t = 0;
}

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, double weight_decay,
               double beta1, double beta2, double eps) {
  if (state.m.size() != params.size())
    throw std::invalid_argument("optimizer state does not match the parameter list");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    double* d = p.data();
    const std::vector<double>& g = p.grad_vec();
    const bool has_grad = !g.empty();
    for (std::size_t j = 0; j < p.numel(); ++j) {
      const double grad = (has_grad ? g[j] : 0.0) + weight_decay * d[j];
      state.m[i][j] = beta1 * state.m[i][j] + (1.0 - beta1) * grad;
      state.v[i][j] = beta2 * state.v[i][j] + (1.0 - beta2) * grad * grad;
      const double mhat = state.m[i][j] / bc1;
      const double vhat = state.v[i][j] / bc2;
      d[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

double dataset_loss(Model& model, const LoadedSplit& data, double huber_delta, int batch_size) {
  NoGradGuard ng;
  const bool half = model.config.uses_structure();
  double acc = 0.0;
  for (int start = 0; start < data.size(); start += batch_size) {
    std::vector<int> idx;
    for (int i = start; i < std::min(start + batch_size, data.size()); ++i) idx.push_back(i);
    Tensor x = batch_images(data, idx);
    Tensor s = half ? batch_structure(data, idx, model.norm) : Tensor();
    Tensor y = batch_targets(data, idx, model.norm, model.config.out_dim());
    Tensor pred = model.forward(x, s, /*training=*/false).pred;
    acc += huber_loss(pred, y, huber_delta).value();
  }
  return acc / static_cast<double>(data.size());
}

TrainLog train_model(Model& model, const DatasetManifest& manifest, const std::string& image_dir,
                     const TrainConfig& cfg) {
  cfg.validate();
  LoadedSplit train = load_split(manifest, image_dir, "train");
  LoadedSplit val = load_split(manifest, image_dir, "val");

  model.norm = compute_norm_stats(train);
  std::vector<Tensor> params = model.parameters();
  AdamState adam;
  adam.init(params);
  Rng rng(cfg.seed);
  const bool half = model.config.uses_structure();
  const int out_dim = model.config.out_dim();

  std::vector<int> order(train.size());
  for (int i = 0; i < train.size(); ++i) order[i] = i;

  TrainLog log;
  log.best_val = std::numeric_limits<double>::infinity();
  auto state = model.named_state();
  std::vector<std::vector<double>> best_state;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double train_acc = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<int> idx(order.begin() + start,
                           order.begin() +
                               std::min(start + static_cast<std::size_t>(cfg.batch_size),
                                        order.size()));
      Tensor x = batch_images(train, idx);
      Tensor s = half ? batch_structure(train, idx, model.norm) : Tensor();
      Tensor y = batch_targets(train, idx, model.norm, out_dim);
      for (Tensor& p : params) p.zero_grad();
      Tensor loss = huber_loss(model.forward(x, s, /*training=*/true).pred, y, cfg.huber_delta);
      const double lv = loss.value();
      if (!std::isfinite(lv))
        throw std::runtime_error("training diverged: non-finite loss in epoch " +
                                 std::to_string(epoch));
      loss.backward();
      adam_step(params, adam, cfg.lr, cfg.weight_decay);
      train_acc += lv;
    }

    EpochStats es;
    es.epoch = epoch;
    es.train_loss = train_acc / static_cast<double>(train.size());
    es.val_loss = dataset_loss(model, val, cfg.huber_delta, cfg.batch_size);
    if (!std::isfinite(es.val_loss))
      throw std::runtime_error("training diverged: non-finite validation loss in epoch " +
                               std::to_string(epoch));
    log.epochs.push_back(es);

    if (es.val_loss < log.best_val - cfg.min_delta) {
      log.best_val = es.val_loss;
      log.best_epoch = epoch;
      best_state.clear();
      for (auto& [name, t] : state)
        best_state.emplace_back(t.data(), t.data() + t.numel());
    } else if (epoch - log.best_epoch >= cfg.patience) {
      break;
    }
  }

  if (!best_state.empty()) {
    for (std::size_t i = 0; i < state.size(); ++i)
      std::copy(best_state[i].begin(), best_state[i].end(), state[i].second.data());
  }
  return log;
}

std::string train_log_csv(const TrainLog& log) {
  std::string out = "#best_epoch=" + std::to_string(log.best_epoch) + "\n";
  out += "epoch,train_loss,val_loss\n";
  for (const EpochStats& e : log.epochs)
    out += std::to_string(e.epoch) + ',' + format_double(e.train_loss) + ',' +
           format_double(e.val_loss) + '\n';
  return out;
}

void save_train_log(const std::string& path, const TrainLog& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  const std::string csv = train_log_csv(log);
  out.write(csv.data(), static_cast<std::streamsize>(csv.size()));
  if (!out) throw std::runtime_error("failed writing train log to " + path);
}

}  // namespace simic
