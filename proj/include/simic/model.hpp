#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "simic/ops.hpp"
#include "simic/tensor.hpp"

namespace simic {

struct ModelConfig {
  std::string backbone = "residual";  // residual | compound | depthwise
  std::string attention = "none";     // none | additive | mha
  std::string mode = "full";          // full (W,H,R) | half (R from image + W,H)
  int embed_dim = 64;
  int heads = 4;
  bool coord_channels = true;
  std::vector<int> stage_widths = {16, 32, 64};
  int input_size = 64;
  double depth_coef = 1.2;  // compound backbone only
  double width_coef = 1.1;

  void validate() const;
  int out_dim() const { return mode == "full" ? 3 : 1; }
  bool uses_structure() const { return mode == "half"; }
};

// Per-target z-score statistics from the training split, in label order
// width, height, radius. Structure inputs reuse the width/height entries.
struct NormStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stdev{1.0, 1.0, 1.0};
};

// One per-head weight grid for a single sample.
struct AttentionMaps {
  int heads = 0;
  int grid_h = 0;
  int grid_w = 0;
  std::vector<double> weights;  // [heads][grid_h*grid_w], row-major
  std::string sample_id;
};

struct ForwardResult {
  Tensor pred;     // [B, out_dim], normalized target space
  Tensor alpha;    // [B, heads, N] attention weights; undefined for attention=none
  int grid_h = 0;  // feature-grid dims behind N
  int grid_w = 0;
};

// ---- layer building blocks -------------------------------------------------

struct ConvLayer {
  Tensor w, b;
  int stride = 1;
  int padding = 1;
};

struct BNLayer {
  Tensor gamma, beta, run_mean, run_var;
};

struct LinearLayer {
  Tensor w, b;  // b may be undefined (bias-less projection)
};

struct ResBlock {
  ConvLayer c1, c2;
  BNLayer n1, n2;
  bool downsample = false;  // stride-2 entry with 1x1-conv skip
  ConvLayer skip;
  BNLayer skip_n;
};

struct PlainBlock {
  ConvLayer c;
  BNLayer n;
};

struct DwBlock {
  Tensor dw_w, dw_b;  // per-channel spatial filter
  BNLayer dw_n;
  ConvLayer pw;       // 1x1 channel mix
  BNLayer pw_n;
};

// ---- the model ---------------------------------------------------------------

class Model {
 public:
  ModelConfig config;
  NormStats norm;

  // Allocates and He-uniform-initializes all parameters under the seed.
  static Model build(const ModelConfig& cfg, std::uint64_t seed);

  // images [B,1,H,W] scaled to [0,1]; structure [B,2] normalized (defined
  // exactly when the config's mode requires it, otherwise it is an error).
  ForwardResult forward(const Tensor& images, const Tensor& structure, bool training);

  Tensor backbone_forward(const Tensor& x, bool training);
  Tensor embed_structure(const Tensor& s);  // [B,2] -> [B,d]

  std::vector<Tensor> parameters();  // trainable tensors, stable order
  // Parameters plus batch-norm running buffers, with stable names; the
  // checkpoint serializes exactly this list in this order.
  std::vector<std::pair<std::string, Tensor>> named_state();

  std::size_t parameter_count();

  // backbone
  std::vector<ResBlock> res_blocks;
  std::vector<PlainBlock> plain_blocks;  // compound variant
  std::vector<DwBlock> dw_blocks;        // depthwise variant
  ConvLayer proj;                        // final 1x1 to embed_dim
  BNLayer proj_n;

  // structure module (half mode)
  LinearLayer struct_embed;

  // attention module
  Tensor free_query;     // [1,d], full-mode query when attention is on
  LinearLayer q_proj;    // query projection (bias-less for additive scoring)
  ConvLayer k_conv;      // key source: 1x1 conv to d
  ConvLayer v_conv;      // value source: 1x1 conv to d
  LinearLayer k_scorer;  // additive scoring matrix on keys (bias-less)
  Tensor u_vec;          // additive score vector [d]
  LinearLayer out_proj;  // mha head-concat output projection

  // regression head
  LinearLayer fc1, fc2;
};

// Pulls sample `index`'s weights out of a forward pass into a map bundle.
AttentionMaps extract_attention_maps(const ForwardResult& fr, int index,
                                     const std::string& sample_id);

// Writes {prefix}_head{i}.pgm (nearest-neighbor upsample to input_size,
// linearly rescaled to [0,255]; a constant map renders mid-gray 128) plus
// {prefix}_weights.csv with one `head,row,col,weight` line per weight.
// Returns the written paths, images first.
std::vector<std::string> export_attention_maps(const AttentionMaps& maps, int input_size,
                                               const std::string& prefix);

}  // namespace simic
