#pragma once

#include <string>

#include "simic/model.hpp"

namespace simic {

// Writes the model to a self-describing file: a text header (format magic,
// config echo, normalization statistics, tensor table) followed by every
// named tensor as little-endian float64 in table order.
void save_checkpoint(Model& model, const std::string& path);

// Rebuilds a model from a checkpoint. When `expected` is given, every config
// field must match the stored echo; the first differing field is named in
// the error.
Model load_checkpoint(const std::string& path, const ModelConfig* expected = nullptr);

}  // namespace simic
