#pragma once

#include <string>
#include <vector>

#include "simic/manifest.hpp"
#include "simic/model.hpp"

namespace simic {

// Root-mean-square error between truth y and prediction yhat.
double rmse(const std::vector<double>& y, const std::vector<double>& yhat);

// Coefficient of determination 1 - SS_res / SS_tot. Needs at least two
// samples and a non-constant truth vector.
double r_squared(const std::vector<double>& y, const std::vector<double>& yhat);

// Per-target metrics over one manifest split, reported in label units.
struct MetricsReport {
  std::string split;
  int n = 0;
  std::vector<std::string> target_names;
  std::vector<double> rmse_um;
  std::vector<double> r2;
};

// Runs the model in inference mode over a split, de-normalizes predictions
// with the model's stored statistics, and scores each target.
MetricsReport evaluate(Model& model, const DatasetManifest& manifest,
                       const std::string& image_dir, const std::string& split);

std::string metrics_csv(const MetricsReport& r);
std::string metrics_table(const MetricsReport& r);

}  // namespace simic
