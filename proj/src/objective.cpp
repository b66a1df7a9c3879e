#include "simic/objective.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "simic/dataset.hpp"

namespace simic {

namespace {

void check_pair(const std::vector<double>& y, const std::vector<double>& yhat) {
  if (y.size() != yhat.size())
    throw std::invalid_argument("metric input lengths differ: " + std::to_string(y.size()) +
                                " vs " + std::to_string(yhat.size()));
  if (y.empty()) throw std::invalid_argument("metric inputs are empty");
}

}  // namespace

double rmse(const std::vector<double>& y, const std::vector<double>& yhat) {
  check_pair(y, yhat);
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = y[i] - yhat[i];
    acc += e * e;
  }
  return std::sqrt(acc / static_cast<double>(y.size()));
}

double r_squared(const std::vector<double>& y, const std::vector<double>& yhat) {
  check_pair(y, yhat);
  if (y.size() < 2)
    throw std::invalid_argument("r_squared needs at least two samples, got " +
                                std::to_string(y.size()));
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double ss_tot = 0.0, ss_res = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_tot += (y[i] - mean) * (y[i] - mean);
    const double e = y[i] - yhat[i];
    ss_res += e * e;
  }
  if (ss_tot <= 0.0)
    throw std::invalid_argument("r_squared is undefined for a constant truth vector");
  return 1.0 - ss_res / ss_tot;
}

MetricsReport evaluate(Model& model, const DatasetManifest& manifest,
                       const std::string& image_dir, const std::string& split) {
  LoadedSplit data = load_split(manifest, image_dir, split);
  const int out_dim = model.config.out_dim();
  const bool half = model.config.uses_structure();

  MetricsReport rep;
  rep.split = split;
  rep.n = data.size();
  rep.target_names = half ? std::vector<std::string>{"radius"}
                          : std::vector<std::string>{"width", "height", "radius"};

  std::vector<std::vector<double>> truth(out_dim), pred(out_dim);
  NoGradGuard ng;
  const int batch = 32;
  for (int start = 0; start < data.size(); start += batch) {
    std::vector<int> idx;
    for (int i = start; i < std::min(start + batch, data.size()); ++i) idx.push_back(i);
    Tensor x = batch_images(data, idx);
    Tensor s = half ? batch_structure(data, idx, model.norm) : Tensor();
    ForwardResult fr = model.forward(x, s, /*training=*/false);
    const double* p = fr.pred.data();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      for (int t = 0; t < out_dim; ++t) {
        const int lab = half ? 2 : t;  // half mode regresses the radius only
        truth[t].push_back(data.labels_um[idx[b]][lab]);
        pred[t].push_back(p[b * out_dim + t] * model.norm.stdev[lab] + model.norm.mean[lab]);
      }
    }
  }

  for (int t = 0; t < out_dim; ++t) {
    rep.rmse_um.push_back(rmse(truth[t], pred[t]));
    rep.r2.push_back(r_squared(truth[t], pred[t]));
  }
  return rep;
}

std::string metrics_csv(const MetricsReport& r) {
  std::string out = "split,target,n,rmse_um,r_squared\n";
  for (std::size_t t = 0; t < r.target_names.size(); ++t) {
    out += r.split + ',' + r.target_names[t] + ',' + std::to_string(r.n) + ',' +
           format_double(r.rmse_um[t]) + ',' + format_double(r.r2[t]) + '\n';
  }
  return out;
}

std::string metrics_table(const MetricsReport& r) {
  char line[160];
  std::snprintf(line, sizeof(line), "split %s (%d samples)\n%-10s %14s %12s\n", r.split.c_str(),
                r.n, "target", "rmse_um", "r_squared");
  std::string out = line;
  for (std::size_t t = 0; t < r.target_names.size(); ++t) {
    std::snprintf(line, sizeof(line), "%-10s %14.6f %12.4f\n", r.target_names[t].c_str(),
                  r.rmse_um[t], r.r2[t]);
    out += line;
  }
  return out;
}

}  // namespace simic
