#include "simic/checkpoint.hpp"

#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "simic/manifest.hpp"

namespace simic {

namespace {

constexpr const char* kMagic = "SIMIC-CKPT";
constexpr int kVersion = 1;

void put_f64(std::string& buf, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

double get_f64(const char* p) {
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i)
    u |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<int> parse_ints(const std::string& s, const std::string& field) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t comma = s.find(',', pos);
    const std::string tok = s.substr(pos, comma == std::string::npos ? comma : comma - pos);
    int v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size())
      throw std::runtime_error("checkpoint: bad integer list in field '" + field + "': " + s);
    out.push_back(v);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

double parse_f64_field(const std::string& s, const std::string& field) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw std::runtime_error("checkpoint: bad number in field '" + field + "': " + s);
  return v;
}

std::vector<double> parse_f64_list(const std::string& s, const std::string& field) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t comma = s.find(',', pos);
    const std::string tok = s.substr(pos, comma == std::string::npos ? comma : comma - pos);
    out.push_back(parse_f64_field(tok, field));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace

void save_checkpoint(Model& model, const std::string& path) {
  std::ostringstream header;
  header << kMagic << ' ' << kVersion << '\n';
  const ModelConfig& c = model.config;
  header << "backbone=" << c.backbone << '\n';
  header << "attention=" << c.attention << '\n';
  header << "mode=" << c.mode << '\n';
  header << "embed_dim=" << c.embed_dim << '\n';
  header << "heads=" << c.heads << '\n';
  header << "coord_channels=" << (c.coord_channels ? 1 : 0) << '\n';
  header << "stage_widths=" << join_ints(c.stage_widths) << '\n';
  header << "input_size=" << c.input_size << '\n';
  header << "depth_coef=" << format_double(c.depth_coef) << '\n';
  header << "width_coef=" << format_double(c.width_coef) << '\n';
  header << "norm_mean=" << format_double(model.norm.mean[0]) << ','
         << format_double(model.norm.mean[1]) << ',' << format_double(model.norm.mean[2]) << '\n';
  header << "norm_stdev=" << format_double(model.norm.stdev[0]) << ','
         << format_double(model.norm.stdev[1]) << ',' << format_double(model.norm.stdev[2])
         << '\n';

  auto state = model.named_state();
  header << "tensors=" << state.size() << '\n';
  std::string payload;
  std::size_t offset = 0;
  for (auto& [name, t] : state) {
    header << "tensor=" << name << ' ' << join_ints(t.shape()) << ' ' << offset << '\n';
    const double* d = t.data();
    for (std::size_t i = 0; i < t.numel(); ++i) put_f64(payload, d[i]);
    offset += t.numel() * 8;
  }
  header << "data\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  const std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  out.close();
  if (!out) throw std::runtime_error("failed writing checkpoint to " + path);
}

Model load_checkpoint(const std::string& path, const ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);

  std::string line;
  if (!std::getline(in, line) || line.rfind(kMagic, 0) != 0)
    throw std::runtime_error(path + ": not a checkpoint file (bad magic)");
  {
    std::istringstream ls(line);
    std::string magic;
    int version = -1;
    ls >> magic >> version;
    if (version != kVersion)
      throw std::runtime_error(path + ": unsupported checkpoint version " +
                               std::to_string(version));
  }

  std::map<std::string, std::string> fields;
  struct TensorEntry {
    std::string name;
    std::vector<int> shape;
    std::size_t offset;
  };
  std::vector<TensorEntry> table;
  bool saw_data = false;
  while (std::getline(in, line)) {
    if (line == "data") {
      saw_data = true;
      break;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ": malformed header line: " + line);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "tensor") {
      std::istringstream ls(val);
      TensorEntry e;
      std::string shape_s;
      if (!(ls >> e.name >> shape_s >> e.offset))
        throw std::runtime_error(path + ": malformed tensor entry: " + val);
      e.shape = parse_ints(shape_s, "tensor " + e.name);
      table.push_back(std::move(e));
    } else {
      fields[key] = val;
    }
  }
  if (!saw_data) throw std::runtime_error(path + ": truncated checkpoint (no data section)");

  auto need = [&](const std::string& key) -> const std::string& {
    auto it = fields.find(key);
    if (it == fields.end())
      throw std::runtime_error(path + ": checkpoint header is missing field '" + key + "'");
    return it->second;
  };

  ModelConfig cfg;
  cfg.backbone = need("backbone");
  cfg.attention = need("attention");
  cfg.mode = need("mode");
  cfg.embed_dim = static_cast<int>(parse_f64_field(need("embed_dim"), "embed_dim"));
  cfg.heads = static_cast<int>(parse_f64_field(need("heads"), "heads"));
  cfg.coord_channels = need("coord_channels") == "1";
  cfg.stage_widths = parse_ints(need("stage_widths"), "stage_widths");
  cfg.input_size = static_cast<int>(parse_f64_field(need("input_size"), "input_size"));
  cfg.depth_coef = parse_f64_field(need("depth_coef"), "depth_coef");
  cfg.width_coef = parse_f64_field(need("width_coef"), "width_coef");

  if (expected) {
    auto mismatch = [&](const std::string& field, const std::string& got,
                        const std::string& want) {
      throw std::runtime_error(path + ": checkpoint config mismatch in field '" + field +
                               "': checkpoint has " + got + ", expected " + want);
    };
    if (cfg.backbone != expected->backbone) mismatch("backbone", cfg.backbone, expected->backbone);
    if (cfg.attention != expected->attention)
      mismatch("attention", cfg.attention, expected->attention);
    if (cfg.mode != expected->mode) mismatch("mode", cfg.mode, expected->mode);
    if (cfg.embed_dim != expected->embed_dim)
      mismatch("embed_dim", std::to_string(cfg.embed_dim), std::to_string(expected->embed_dim));
    if (cfg.heads != expected->heads)
      mismatch("heads", std::to_string(cfg.heads), std::to_string(expected->heads));
    if (cfg.coord_channels != expected->coord_channels)
      mismatch("coord_channels", std::to_string(cfg.coord_channels),
               std::to_string(expected->coord_channels));
    if (cfg.stage_widths != expected->stage_widths)
      mismatch("stage_widths", join_ints(cfg.stage_widths), join_ints(expected->stage_widths));
    if (cfg.input_size != expected->input_size)
      mismatch("input_size", std::to_string(cfg.input_size), std::to_string(expected->input_size));
  }

  Model model = Model::build(cfg, 0);
  const std::vector<double> mean = parse_f64_list(need("norm_mean"), "norm_mean");
  const std::vector<double> stdev = parse_f64_list(need("norm_stdev"), "norm_stdev");
  if (mean.size() != 3 || stdev.size() != 3)
    throw std::runtime_error(path + ": normalization statistics must have three entries");
  for (int i = 0; i < 3; ++i) {
    model.norm.mean[i] = mean[i];
    model.norm.stdev[i] = stdev[i];
  }

  auto state = model.named_state();
  const std::size_t declared =
      static_cast<std::size_t>(parse_f64_field(need("tensors"), "tensors"));
  if (table.size() != declared || table.size() != state.size())
    throw std::runtime_error(path + ": checkpoint lists " + std::to_string(table.size()) +
                             " tensors, model has " + std::to_string(state.size()));

  // payload
  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    const TensorEntry& e = table[i];
    auto& [name, t] = state[i];
    if (e.name != name)
      throw std::runtime_error(path + ": tensor " + std::to_string(i) + " is '" + e.name +
                               "', model expects '" + name + "'");
    if (e.shape != t.shape())
      throw std::runtime_error(path + ": tensor '" + name + "' has shape [" +
                               join_ints(e.shape) + "], model expects [" + join_ints(t.shape()) +
                               "]");
    if (e.offset != expected_offset)
      throw std::runtime_error(path + ": tensor '" + name + "' offset " +
                               std::to_string(e.offset) + " does not match running total " +
                               std::to_string(expected_offset));
    const std::size_t bytes = t.numel() * 8;
    if (e.offset + bytes > payload.size())
      throw std::runtime_error(path + ": truncated checkpoint payload at tensor '" + name + "'");
    double* d = t.data();
    for (std::size_t j = 0; j < t.numel(); ++j) d[j] = get_f64(payload.data() + e.offset + j * 8);
    expected_offset += bytes;
  }
  if (payload.size() != expected_offset)
    throw std::runtime_error(path + ": checkpoint payload has " + std::to_string(payload.size()) +
                             " bytes, tensor table accounts for " +
                             std::to_string(expected_offset));
  return model;
}

}  // namespace simic
