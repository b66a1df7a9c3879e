#include "simic/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "simic/image.hpp"
#include "simic/manifest.hpp"
#include "simic/rng.hpp"

namespace simic {

namespace {

void he_uniform(Tensor& t, int fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  double* d = t.data();
  for (std::size_t i = 0; i < t.numel(); ++i) d[i] = rng.uniform(-limit, limit);
}

Tensor make_param(const std::vector<int>& shape) {
  return Tensor(shape, 0.0, /*requires_grad=*/true);
}

ConvLayer make_conv(int out_ch, int in_ch, int k, int stride, int padding, Rng& rng) {
  ConvLayer c;
  c.w = make_param({out_ch, in_ch, k, k});
  he_uniform(c.w, in_ch * k * k, rng);
  c.b = make_param({out_ch});
  c.stride = stride;
  c.padding = padding;
  return c;
}

BNLayer make_bn(int ch) {
  BNLayer n;
  n.gamma = Tensor({ch}, 1.0, /*requires_grad=*/true);
  n.beta = make_param({ch});
  n.run_mean = Tensor({ch}, 0.0);
  n.run_var = Tensor({ch}, 1.0);
  return n;
}

LinearLayer make_linear(int out_dim, int in_dim, bool bias, Rng& rng) {
  LinearLayer l;
  l.w = make_param({out_dim, in_dim});
  he_uniform(l.w, in_dim, rng);
  if (bias) l.b = make_param({out_dim});
  return l;
}

Tensor apply_conv(const ConvLayer& c, const Tensor& x) {
  return conv2d(x, c.w, c.b, c.stride, c.padding);
}

Tensor apply_bn(BNLayer& n, const Tensor& x, bool training) {
  return batch_norm(x, n.gamma, n.beta, n.run_mean, n.run_var, training);
}

Tensor apply_linear(const LinearLayer& l, const Tensor& x) {
  return linear(x, l.w, l.b);
}

// Applies a linear map to every position vector of a [B,N,d_in] tensor.
Tensor positions_linear(const Tensor& x, const LinearLayer& l) {
  const auto& s = x.shape();
  Tensor flat = reshape(x, {s[0] * s[1], s[2]});
  Tensor out = apply_linear(l, flat);
  return reshape(out, {s[0], s[1], out.shape()[1]});
}

int scaled_depth(double coef) {
  return static_cast<int>(std::ceil(coef - 1e-12));
}

int scaled_width(int base, double coef) {
  return std::max(1, static_cast<int>(std::lround(base * coef)));
}

void collect_conv(std::vector<std::pair<std::string, Tensor>>& out, const std::string& name,
                  const ConvLayer& c) {
  out.emplace_back(name + ".w", c.w);
  out.emplace_back(name + ".b", c.b);
}

void collect_bn(std::vector<std::pair<std::string, Tensor>>& out, const std::string& name,
                const BNLayer& n) {
  out.emplace_back(name + ".gamma", n.gamma);
  out.emplace_back(name + ".beta", n.beta);
  out.emplace_back(name + ".run_mean", n.run_mean);
  out.emplace_back(name + ".run_var", n.run_var);
}

void collect_linear(std::vector<std::pair<std::string, Tensor>>& out, const std::string& name,
                    const LinearLayer& l) {
  out.emplace_back(name + ".w", l.w);
  if (l.b.defined()) out.emplace_back(name + ".b", l.b);
}

}  // namespace

void ModelConfig::validate() const {
  if (backbone != "residual" && backbone != "compound" && backbone != "depthwise")
    throw std::invalid_argument("model config: unknown backbone '" + backbone + "'");
  if (attention != "none" && attention != "additive" && attention != "mha")
    throw std::invalid_argument("model config: unknown attention '" + attention + "'");
  if (mode != "full" && mode != "half")
    throw std::invalid_argument("model config: unknown mode '" + mode + "'");
  if (embed_dim <= 0) throw std::invalid_argument("model config: embed_dim must be positive");
  if (heads <= 0) throw std::invalid_argument("model config: heads must be positive");
  if (attention == "mha" && embed_dim % heads != 0)
    throw std::invalid_argument("model config: embed_dim " + std::to_string(embed_dim) +
                                " not divisible by heads " + std::to_string(heads));
  if (stage_widths.size() != 3)
    throw std::invalid_argument("model config: expected 3 stage widths, got " +
                                std::to_string(stage_widths.size()));
  for (int w : stage_widths)
    if (w <= 0) throw std::invalid_argument("model config: stage widths must be positive");
  if (input_size < 8)
    throw std::invalid_argument("model config: input_size " + std::to_string(input_size) +
                                " smaller than the total downsampling factor 8");
  if (depth_coef < 1.0 || width_coef < 1.0)
    throw std::invalid_argument("model config: scaling coefficients must be >= 1");
}

Model Model::build(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.config = cfg;
  Rng rng(seed);

  const int d = cfg.embed_dim;
  int in_ch = cfg.coord_channels ? 3 : 1;

  if (cfg.backbone == "residual") {
    for (std::size_t s = 0; s < cfg.stage_widths.size(); ++s) {
      const int w = cfg.stage_widths[s];
      ResBlock blk;
      blk.downsample = true;
      blk.c1 = make_conv(w, in_ch, 3, 2, 1, rng);
      blk.n1 = make_bn(w);
      blk.c2 = make_conv(w, w, 3, 1, 1, rng);
      blk.n2 = make_bn(w);
      blk.skip = make_conv(w, in_ch, 1, 2, 0, rng);
      blk.skip_n = make_bn(w);
      m.res_blocks.push_back(std::move(blk));
      in_ch = w;
    }
    // extra identity block at the deepest stage
    ResBlock id;
    id.downsample = false;
    id.c1 = make_conv(in_ch, in_ch, 3, 1, 1, rng);
    id.n1 = make_bn(in_ch);
    id.c2 = make_conv(in_ch, in_ch, 3, 1, 1, rng);
    id.n2 = make_bn(in_ch);
    m.res_blocks.push_back(std::move(id));
  } else if (cfg.backbone == "compound") {
    const int depth = scaled_depth(cfg.depth_coef);
    for (std::size_t s = 0; s < cfg.stage_widths.size(); ++s) {
      const int w = scaled_width(cfg.stage_widths[s], cfg.width_coef);
      for (int b = 0; b < depth; ++b) {
        PlainBlock blk;
        blk.c = make_conv(w, in_ch, 3, b == 0 ? 2 : 1, 1, rng);
        blk.n = make_bn(w);
        m.plain_blocks.push_back(std::move(blk));
        in_ch = w;
      }
    }
  } else {  // depthwise
    for (std::size_t s = 0; s < cfg.stage_widths.size(); ++s) {
      const int w = cfg.stage_widths[s];
      DwBlock blk;
      blk.dw_w = make_param({in_ch, 1, 3, 3});
      he_uniform(blk.dw_w, 9, rng);
      blk.dw_b = make_param({in_ch});
      blk.dw_n = make_bn(in_ch);
      blk.pw = make_conv(w, in_ch, 1, 1, 0, rng);
      blk.pw_n = make_bn(w);
      m.dw_blocks.push_back(std::move(blk));
      in_ch = w;
    }
  }

  m.proj = make_conv(d, in_ch, 1, 1, 0, rng);
  m.proj_n = make_bn(d);

  if (cfg.uses_structure()) m.struct_embed = make_linear(d, 2, /*bias=*/true, rng);

  if (cfg.attention != "none") {
    if (!cfg.uses_structure()) {
      m.free_query = make_param({1, d});
      he_uniform(m.free_query, d, rng);
    }
    m.k_conv = make_conv(d, d, 1, 1, 0, rng);
    m.v_conv = make_conv(d, d, 1, 1, 0, rng);
    if (cfg.attention == "additive") {
      m.q_proj = make_linear(d, d, /*bias=*/false, rng);
      m.k_scorer = make_linear(d, d, /*bias=*/false, rng);
      m.u_vec = make_param({d});
      he_uniform(m.u_vec, d, rng);
    } else {
      m.q_proj = make_linear(d, d, /*bias=*/true, rng);
      m.out_proj = make_linear(d, d, /*bias=*/true, rng);
    }
  }

  const int head_in = (cfg.attention == "none" && cfg.uses_structure()) ? 2 * d : d;
  m.fc1 = make_linear(d, head_in, /*bias=*/true, rng);
  m.fc2 = make_linear(cfg.out_dim(), d, /*bias=*/true, rng);
  return m;
}

Tensor Model::backbone_forward(const Tensor& x, bool training) {
  if (x.ndim() != 4)
    throw std::invalid_argument("backbone expects a [B,C,H,W] tensor, got " +
                                shape_str(x.shape()));
  if (x.shape()[2] < 8 || x.shape()[3] < 8)
    throw std::invalid_argument("backbone input " + shape_str(x.shape()) +
                                " smaller than the total downsampling factor 8");
  Tensor h = x;
  if (config.backbone == "residual") {
    for (auto& blk : res_blocks) {
      Tensor main = apply_bn(blk.n1, apply_conv(blk.c1, h), training);
      main = apply_bn(blk.n2, apply_conv(blk.c2, relu(main)), training);
      Tensor shortcut =
          blk.downsample ? apply_bn(blk.skip_n, apply_conv(blk.skip, h), training) : h;
      h = relu(add(main, shortcut));
    }
  } else if (config.backbone == "compound") {
    for (auto& blk : plain_blocks) h = relu(apply_bn(blk.n, apply_conv(blk.c, h), training));
  } else {
    for (auto& blk : dw_blocks) {
      Tensor t = depthwise_conv2d(h, blk.dw_w, blk.dw_b, 2, 1);
      t = relu(apply_bn(blk.dw_n, t, training));
      t = apply_conv(blk.pw, t);
      h = relu(apply_bn(blk.pw_n, t, training));
    }
  }
  return relu(apply_bn(proj_n, apply_conv(proj, h), training));
}

Tensor Model::embed_structure(const Tensor& s) {
  if (!config.uses_structure())
    throw std::invalid_argument("structure input supplied to a mode=full model");
  if (s.ndim() != 2 || s.shape()[1] != 2)
    throw std::invalid_argument("structure input must be [B,2], got " + shape_str(s.shape()));
  return apply_linear(struct_embed, s);
}

ForwardResult Model::forward(const Tensor& images, const Tensor& structure, bool training) {
  if (!images.defined() || images.ndim() != 4 || images.shape()[1] != 1)
    throw std::invalid_argument("forward expects images [B,1,H,W]");
  if (config.uses_structure()) {
    if (!structure.defined())
      throw std::invalid_argument("mode=half model requires a structure input [B,2]");
    if (structure.ndim() != 2 || structure.shape()[0] != images.shape()[0] ||
        structure.shape()[1] != 2)
      throw std::invalid_argument("structure input must be [B,2] matching the batch, got " +
                                  (structure.defined() ? shape_str(structure.shape())
                                                       : std::string("undefined")));
  } else if (structure.defined()) {
    throw std::invalid_argument("structure input supplied to a mode=full model");
  }

  Tensor x = config.coord_channels ? add_coord_channels(images) : images;
  Tensor feat = backbone_forward(x, training);
  const int B = feat.shape()[0];
  ForwardResult fr;
  fr.grid_h = feat.shape()[2];
  fr.grid_w = feat.shape()[3];

  Tensor head_in;
  if (config.attention == "none") {
    Tensor g = global_avg_pool(feat);
    head_in = config.uses_structure() ? concat({g, embed_structure(structure)}, 1) : g;
  } else {
    Tensor q = config.uses_structure() ? embed_structure(structure) : repeat_rows(free_query, B);
    Tensor keys = to_positions(apply_conv(k_conv, feat));
    Tensor values = to_positions(apply_conv(v_conv, feat));
    if (config.attention == "additive") {
      Tensor qp = apply_linear(q_proj, q);
      Tensor kp = positions_linear(keys, k_scorer);
      auto [z, alpha] = additive_attention_core(qp, kp, values, u_vec);
      head_in = z;
      fr.alpha = alpha;
    } else {
      Tensor qp = apply_linear(q_proj, q);
      auto [z, alpha] = multihead_attention_core(qp, keys, values, config.heads);
      head_in = apply_linear(out_proj, z);
      fr.alpha = alpha;
    }
  }

  fr.pred = apply_linear(fc2, relu(apply_linear(fc1, head_in)));
  return fr;
}

std::vector<Tensor> Model::parameters() {
  auto ends_with = [](const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  std::vector<Tensor> out;
  for (auto& [name, t] : named_state()) {
    if (ends_with(name, ".run_mean") || ends_with(name, ".run_var")) continue;
    out.push_back(t);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> Model::named_state() {
  std::vector<std::pair<std::string, Tensor>> out;
  if (config.backbone == "residual") {
    for (std::size_t i = 0; i < res_blocks.size(); ++i) {
      const std::string base = "backbone.res" + std::to_string(i);
      auto& blk = res_blocks[i];
      collect_conv(out, base + ".c1", blk.c1);
      collect_bn(out, base + ".n1", blk.n1);
      collect_conv(out, base + ".c2", blk.c2);
      collect_bn(out, base + ".n2", blk.n2);
      if (blk.downsample) {
        collect_conv(out, base + ".skip", blk.skip);
        collect_bn(out, base + ".skip_n", blk.skip_n);
      }
    }
  } else if (config.backbone == "compound") {
    for (std::size_t i = 0; i < plain_blocks.size(); ++i) {
      const std::string base = "backbone.blk" + std::to_string(i);
      collect_conv(out, base + ".c", plain_blocks[i].c);
      collect_bn(out, base + ".n", plain_blocks[i].n);
    }
  } else {
    for (std::size_t i = 0; i < dw_blocks.size(); ++i) {
      const std::string base = "backbone.dw" + std::to_string(i);
      auto& blk = dw_blocks[i];
      out.emplace_back(base + ".dw_w", blk.dw_w);
      out.emplace_back(base + ".dw_b", blk.dw_b);
      collect_bn(out, base + ".dw_n", blk.dw_n);
      collect_conv(out, base + ".pw", blk.pw);
      collect_bn(out, base + ".pw_n", blk.pw_n);
    }
  }
  collect_conv(out, "proj", proj);
  collect_bn(out, "proj_n", proj_n);
  if (struct_embed.w.defined()) collect_linear(out, "struct_embed", struct_embed);
  if (free_query.defined()) out.emplace_back("attn.free_query", free_query);
  if (k_conv.w.defined()) {
    collect_linear(out, "attn.q_proj", q_proj);
    collect_conv(out, "attn.k_conv", k_conv);
    collect_conv(out, "attn.v_conv", v_conv);
    if (config.attention == "additive") {
      collect_linear(out, "attn.k_scorer", k_scorer);
      out.emplace_back("attn.u", u_vec);
    } else {
      collect_linear(out, "attn.out_proj", out_proj);
    }
  }
  collect_linear(out, "head.fc1", fc1);
  collect_linear(out, "head.fc2", fc2);
  return out;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for (Tensor& t : parameters()) n += static_cast<std::size_t>(t.numel());
  return n;
}

AttentionMaps extract_attention_maps(const ForwardResult& fr, int index,
                                     const std::string& sample_id) {
  if (!fr.alpha.defined())
    throw std::invalid_argument("no attention maps: the model was built with attention=none");
  const auto& s = fr.alpha.shape();  // [B, heads, N]
  if (index < 0 || index >= s[0])
    throw std::out_of_range("attention map sample index " + std::to_string(index) +
                            " out of range for batch " + std::to_string(s[0]));
  AttentionMaps maps;
  maps.heads = s[1];
  maps.grid_h = fr.grid_h;
  maps.grid_w = fr.grid_w;
  maps.sample_id = sample_id;
  const int N = s[2];
  if (N != fr.grid_h * fr.grid_w)
    throw std::logic_error("attention weight count does not match the feature grid");
  maps.weights.resize(static_cast<std::size_t>(maps.heads) * N);
  const double* a = fr.alpha.data();
  for (int h = 0; h < maps.heads; ++h)
    for (int j = 0; j < N; ++j)
      maps.weights[static_cast<std::size_t>(h) * N + j] =
          a[(static_cast<std::size_t>(index) * maps.heads + h) * N + j];
  return maps;
}

std::vector<std::string> export_attention_maps(const AttentionMaps& maps, int input_size,
                                               const std::string& prefix) {
  if (maps.heads <= 0 || maps.grid_h <= 0 || maps.grid_w <= 0)
    throw std::invalid_argument("attention map bundle is empty");
  if (input_size < maps.grid_h || input_size < maps.grid_w)
    throw std::invalid_argument("upsample target smaller than the attention grid");
  const int N = maps.grid_h * maps.grid_w;
  std::vector<std::string> written;

  for (int h = 0; h < maps.heads; ++h) {
    const double* w = maps.weights.data() + static_cast<std::size_t>(h) * N;
    double lo = w[0], hi = w[0];
    for (int j = 1; j < N; ++j) {
      lo = std::min(lo, w[j]);
      hi = std::max(hi, w[j]);
    }
    Image img;
    img.height = input_size;
    img.width = input_size;
    img.pixels.assign(static_cast<std::size_t>(input_size) * input_size, 0);
    const bool flat = (hi - lo) < 1e-12;
    for (int i = 0; i < input_size; ++i) {
      const int gi = i * maps.grid_h / input_size;
      for (int j = 0; j < input_size; ++j) {
        const int gj = j * maps.grid_w / input_size;
        const double v = w[gi * maps.grid_w + gj];
        img.at(i, j) = flat ? 128 : quantize_u8((v - lo) / (hi - lo) * 255.0);
      }
    }
    std::string path = prefix + "_head" + std::to_string(h) + ".pgm";
    write_image(path, img);
    written.push_back(path);
  }

  std::string csv_path = prefix + "_weights.csv";
  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw std::runtime_error("cannot open " + csv_path + " for writing");
  for (int h = 0; h < maps.heads; ++h)
    for (int r = 0; r < maps.grid_h; ++r)
      for (int c = 0; c < maps.grid_w; ++c)
        csv << h << ',' << r << ',' << c << ','
            << format_double(maps.weights[(static_cast<std::size_t>(h) * maps.grid_h + r) *
                                              maps.grid_w +
                                          c])
            << '\n';
  csv.close();
  written.push_back(csv_path);
  return written;
}

}  // namespace simic
