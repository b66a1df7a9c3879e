#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <utility>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "simic/augment.hpp"
#include "simic/checkpoint.hpp"
#include "simic/classical.hpp"
#include "simic/image.hpp"
#include "simic/manifest.hpp"
#include "simic/model.hpp"
#include "simic/objective.hpp"
#include "simic/synth.hpp"
#include "simic/trainer.hpp"

namespace {

using namespace simic;
namespace fs = std::filesystem;

double metadata_scale(const DatasetManifest& manifest) {
  const auto it = manifest.metadata.find("scale_nm_per_px");
  if (it == manifest.metadata.end())
    throw std::runtime_error("manifest metadata lacks scale_nm_per_px");
  const std::string& s = it->second;
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !(v > 0.0))
    throw std::runtime_error("manifest metadata scale_nm_per_px is not a positive number: " + s);
  return v;
}

std::string augmented_manifest_path(const std::string& manifest_path) {
  const std::string suffix = ".csv";
  if (manifest_path.size() > suffix.size() &&
      manifest_path.compare(manifest_path.size() - suffix.size(), suffix.size(), suffix) == 0)
    return manifest_path.substr(0, manifest_path.size() - suffix.size()) + "_augmented.csv";
  return manifest_path + "_augmented.csv";
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

// ---------------------------------------------------------------- synth ----

struct SynthArgs {
  std::string out;
  int n = 0;
  int size = 64;
  double scale_nm = 10.0;
  std::uint64_t seed = 0;
  bool force = false;
};

void run_synth(const SynthArgs& a) {
  const fs::path out_dir(a.out);
  if (fs::exists(out_dir)) {
    if (!fs::is_directory(out_dir))
      throw std::runtime_error("output path exists and is not a directory: " + a.out);
    if (!fs::is_empty(out_dir) && !a.force)
      throw std::runtime_error("output directory is not empty (use --force to write anyway): " +
                               a.out);
  }
  fs::create_directories(out_dir);

  SynthSpec spec;
  spec.image_size = a.size;
  spec.nm_per_px = a.scale_nm;
  spec.seed = a.seed;
  const SynthResult result = generate_synthetic(spec, a.n);

  for (std::size_t i = 0; i < result.images.size(); ++i)
    write_image(join_path(a.out, result.manifest.records[i].file), result.images[i]);
  const std::string manifest_path = join_path(a.out, "manifest.csv");
  save_manifest(manifest_path, result.manifest);
  std::printf("wrote %d images and %s\n", a.n, manifest_path.c_str());
}

// ---------------------------------------------------------------- split ----

void run_split(const std::string& manifest_path, std::uint64_t seed) {
  DatasetManifest manifest = load_manifest(manifest_path);
  assign_splits(manifest, seed);
  save_manifest(manifest_path, manifest);
  std::printf("split %zu records: train=%zu val=%zu eval=%zu\n", manifest.records.size(),
              manifest.by_split("train").size(), manifest.by_split("val").size(),
              manifest.by_split("eval").size());
}

// -------------------------------------------------------------- augment ----

void run_augment(const std::string& manifest_path) {
  const DatasetManifest manifest = load_manifest(manifest_path);
  const AugmentationSpec spec;
  const DatasetManifest expanded = expand_training_set(manifest, spec);

  const std::string dir = parent_dir(manifest_path);
  std::size_t written = 0;
  for (const SampleRecord& rec : manifest.records) {
    if (rec.split != "train") continue;
    const Image img = read_image(join_path(dir, rec.file));
    const std::vector<Image> variants = augment(img, spec);
    std::size_t k = 0;
    for (std::size_t i = 0; i < spec.alphas.size(); ++i)
      for (std::size_t j = 0; j < spec.betas.size(); ++j) {
        write_image(join_path(dir, variant_id(rec.id, i, j) + ".pgm"), variants[k++]);
        ++written;
      }
  }
  const std::string out_path = augmented_manifest_path(manifest_path);
  save_manifest(out_path, expanded);
  std::printf("wrote %zu variant images; expanded manifest (%zu rows) at %s\n", written,
              expanded.records.size(), out_path.c_str());
}

// ---------------------------------------------------------------- train ----

struct TrainArgs {
  std::string manifest;
  std::string backbone;   // resnet | effnet | mobile
  std::string attention;  // none | additive | mha
  std::string mode;       // full | half
  TrainConfig tc;
  int embed_dim = 64;
  int heads = 4;
  int input_size = 64;
  bool coord_channels = true;
  std::string checkpoint = "model.ckpt";
  std::string log = "train_log.csv";
  std::uint64_t seed = 0;
};

void run_train(const TrainArgs& a) {
  static const std::map<std::string, std::string> kBackboneNames = {
      {"resnet", "residual"}, {"effnet", "compound"}, {"mobile", "depthwise"}};

  ModelConfig cfg;
  cfg.backbone = kBackboneNames.at(a.backbone);
  cfg.attention = a.attention;
  cfg.mode = a.mode;
  cfg.embed_dim = a.embed_dim;
  cfg.heads = a.heads;
  cfg.input_size = a.input_size;
  cfg.coord_channels = a.coord_channels;
  cfg.validate();

  TrainConfig tc = a.tc;
  tc.seed = a.seed;
  tc.validate();

  const DatasetManifest manifest = load_manifest(a.manifest);
  Model model = Model::build(cfg, a.seed);
  std::printf("training %s/%s/%s: %zu parameters\n", a.backbone.c_str(), a.attention.c_str(),
              a.mode.c_str(), model.parameter_count());

  const TrainLog log = train_model(model, manifest, parent_dir(a.manifest), tc);
  save_checkpoint(model, a.checkpoint);
  save_train_log(a.log, log);

  const EpochStats& last = log.epochs.back();
  std::printf("stopped after epoch %d; best epoch %d (val %s)\n", last.epoch, log.best_epoch,
              format_double(log.best_val).c_str());
  std::printf("checkpoint %s; log %s\n", a.checkpoint.c_str(), a.log.c_str());
}

// ----------------------------------------------------------------- eval ----

void run_eval(const std::string& checkpoint, const std::string& manifest_path,
              const std::string& split, const std::string& out_csv) {
  Model model = load_checkpoint(checkpoint);
  const DatasetManifest manifest = load_manifest(manifest_path);
  const MetricsReport report = evaluate(model, manifest, parent_dir(manifest_path), split);
  std::fputs(metrics_table(report).c_str(), stdout);
  if (out_csv.empty()) {
    std::fputs(metrics_csv(report).c_str(), stdout);
  } else {
    write_text(out_csv, metrics_csv(report));
    std::printf("metrics CSV at %s\n", out_csv.c_str());
  }
}

// --------------------------------------------------------------- attmap ----

struct AttmapArgs {
  std::string checkpoint;
  std::string image;
  double width_um = -1.0;
  double height_um = -1.0;
  std::string out_prefix = "attmap";
};

void run_attmap(const AttmapArgs& a) {
  Model model = load_checkpoint(a.checkpoint);
  if (model.config.attention == "none")
    throw std::runtime_error("checkpoint was trained with attention=none; no maps to export");

  const Image img = read_image(a.image);
  Tensor images({1, 1, img.height, img.width});
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    images.data()[i] = img.pixels[i] / 255.0;

  Tensor structure;
  if (model.config.uses_structure()) {
    if (a.width_um < 0.0 || a.height_um < 0.0)
      throw std::runtime_error(
          "mode=half checkpoint needs --width and --height (micrometers) for the structure input");
    structure = Tensor({1, 2});
    structure.data()[0] = (a.width_um - model.norm.mean[0]) / model.norm.stdev[0];
    structure.data()[1] = (a.height_um - model.norm.mean[1]) / model.norm.stdev[1];
  } else if (a.width_um >= 0.0 || a.height_um >= 0.0) {
    throw std::runtime_error("mode=full checkpoint takes no --width/--height structure flags");
  }

  const ForwardResult fr = model.forward(images, structure, false);
  const AttentionMaps maps = extract_attention_maps(fr, 0, fs::path(a.image).stem().string());
  const std::vector<std::string> files =
      export_attention_maps(maps, model.config.input_size, a.out_prefix);
  for (const std::string& f : files) std::printf("%s\n", f.c_str());
}

// ------------------------------------------------------------- baseline ----

void run_baseline(const std::string& manifest_path, const std::string& out_csv) {
  const DatasetManifest manifest = load_manifest(manifest_path);
  const double nm_per_px = metadata_scale(manifest);
  const std::string dir = parent_dir(manifest_path);

  std::string csv = "id,width_px,height_px,radius_px,width_um,height_um,radius_um\n";
  for (const SampleRecord& rec : manifest.records) {
    TipMeasurement m;
    try {
      m = measure_tip(read_image(join_path(dir, rec.file)));
    } catch (const std::exception& e) {
      throw std::runtime_error("baseline: record '" + rec.id + "': " + e.what());
    }
    const double to_um = nm_per_px / 1000.0;
    csv += rec.id + ',' + format_double(m.width_px) + ',' + format_double(m.height_px) + ',' +
           format_double(m.radius_px) + ',' + format_double(m.width_px * to_um) + ',' +
           format_double(m.height_px * to_um) + ',' + format_double(m.radius_px * to_um) + '\n';
  }
  if (out_csv.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    write_text(out_csv, csv);
    std::printf("baseline CSV (%zu rows) at %s\n", manifest.records.size(), out_csv.c_str());
  }
}

// Usage-class failures outside CLI11 parsing (config file problems).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string config_file_path;  // shared binding; only the active subcommand writes it

void add_config_file(CLI::App* sub) {
  sub->add_option("--config", config_file_path,
                  "Flat key=value file of this subcommand's long flag names; command-line flags "
                  "override file values");
}

// Reads a flat key=value config file. Lines starting with '#' and blank
// lines are skipped; everything else must contain '='.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open config file: " + path);
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  int lineno = 0;
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value, got '" +
                       stripped + "'");
    const std::string key = trim(stripped.substr(0, eq));
    if (key.empty())
      throw UsageError(path + ":" + std::to_string(lineno) + ": empty key");
    pairs.emplace_back(key, trim(stripped.substr(eq + 1)));
  }
  return pairs;
}

// Turns (program, subcommand, flags...) into the same sequence with the
// config file's key=value pairs spliced in as --key=value right after the
// subcommand name. Later (command-line) occurrences win, so flags override
// the file; unknown keys surface as ordinary unrecognized-flag errors.
std::vector<std::string> inject_config_args(int argc, char** argv,
                                            const std::vector<std::string>& subcommands) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::size_t sub_at = args.size();
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (!args[i].empty() && args[i][0] != '-' &&
        std::find(subcommands.begin(), subcommands.end(), args[i]) != subcommands.end()) {
      sub_at = i;
      break;
    }
  }
  std::string config_path;
  for (std::size_t i = sub_at + 1; i < args.size() && config_path.empty(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size())
      config_path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0)
      config_path = args[i].substr(9);
  }
  if (sub_at < args.size() && !config_path.empty()) {
    std::vector<std::string> injected;
    for (const auto& [key, value] : read_config_file(config_path))
      injected.push_back("--" + key + "=" + value);
    args.insert(args.begin() + sub_at + 1, injected.begin(), injected.end());
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Emitter-tip micrograph toolkit: synthetic data, training, evaluation, and "
               "classical measurement"};
  app.require_subcommand(1);
  // Repeated options keep the last value so config-file injection (earlier
  // tokens) loses to explicit command-line flags.
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  // synth
  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset with a manifest");
  synth->add_option("--out", synth_args.out, "Output directory")->required();
  synth->add_option("--n", synth_args.n, "Number of samples")
      ->required()
      ->check(CLI::PositiveNumber);
  synth->add_option("--size", synth_args.size, "Image side length in pixels")
      ->capture_default_str();
  synth->add_option("--scale-nm", synth_args.scale_nm, "Nanometers per pixel")
      ->capture_default_str();
  synth->add_option("--seed", synth_args.seed, "Generator seed")->capture_default_str();
  synth->add_flag("--force", synth_args.force, "Write into a non-empty output directory");
  add_config_file(synth);
  synth->callback([&] { run_synth(synth_args); });

  // split
  std::string split_manifest;
  std::uint64_t split_seed = 0;
  CLI::App* split = app.add_subcommand("split", "Assign train/val/eval splits in place");
  split->add_option("--manifest", split_manifest, "Manifest CSV path")->required();
  split->add_option("--seed", split_seed, "Shuffle seed")->capture_default_str();
  add_config_file(split);
  split->callback([&] { run_split(split_manifest, split_seed); });

  // augment
  std::string augment_manifest;
  CLI::App* augment_cmd = app.add_subcommand(
      "augment", "Materialize brightness/contrast variants of the train split");
  augment_cmd->add_option("--manifest", augment_manifest, "Manifest CSV path")->required();
  add_config_file(augment_cmd);
  augment_cmd->callback([&] { run_augment(augment_manifest); });

  // train
  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "Train a regression model on a manifest");
  train->add_option("--manifest", train_args.manifest, "Manifest CSV path")->required();
  train
      ->add_option("--backbone", train_args.backbone,
                   "Backbone family; compact variants of the published architectures "
                   "(resnet=residual, effnet=compound-scaled, mobile=depthwise-separable)")
      ->required()
      ->check(CLI::IsMember({"resnet", "effnet", "mobile"}));
  train->add_option("--attention", train_args.attention, "Attention mechanism")
      ->required()
      ->check(CLI::IsMember({"none", "additive", "mha"}));
  train
      ->add_option("--mode", train_args.mode,
                   "full predicts width+height+radius; half predicts radius with width+height "
                   "as extra inputs")
      ->required()
      ->check(CLI::IsMember({"full", "half"}));
  train->add_option("--lr", train_args.tc.lr, "Adam learning rate")->capture_default_str();
  train->add_option("--batch-size", train_args.tc.batch_size, "Mini-batch size")
      ->capture_default_str();
  train->add_option("--max-epochs", train_args.tc.max_epochs, "Epoch cap")->capture_default_str();
  train->add_option("--weight-decay", train_args.tc.weight_decay, "Coupled L2 strength")
      ->capture_default_str();
  train->add_option("--patience", train_args.tc.patience, "Early-stopping patience in epochs")
      ->capture_default_str();
  train
      ->add_option("--delta", train_args.tc.min_delta,
                   "Smallest validation improvement that resets patience")
      ->capture_default_str();
  train->add_option("--huber-delta", train_args.tc.huber_delta, "Huber loss transition point")
      ->capture_default_str();
  train->add_option("--embed-dim", train_args.embed_dim, "Attention/embedding width")
      ->capture_default_str();
  train->add_option("--heads", train_args.heads, "Attention heads (mha)")->capture_default_str();
  train->add_option("--input-size", train_args.input_size, "Expected image side length")
      ->capture_default_str();
  train->add_flag("--coord-channels,!--no-coord-channels", train_args.coord_channels,
                  "Append normalized x/y coordinate channels to the input");
  train->add_option("--checkpoint", train_args.checkpoint, "Checkpoint output path")
      ->capture_default_str();
  train->add_option("--log", train_args.log, "Epoch log CSV output path")->capture_default_str();
  train->add_option("--seed", train_args.seed, "Init and shuffle seed")->capture_default_str();
  add_config_file(train);
  train->callback([&] { run_train(train_args); });

  // eval
  std::string eval_checkpoint, eval_manifest, eval_split = "eval", eval_out;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a manifest split");
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "Checkpoint path")->required();
  eval_cmd->add_option("--manifest", eval_manifest, "Manifest CSV path")->required();
  eval_cmd->add_option("--split", eval_split, "Split to score")->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "Write the metrics CSV here instead of stdout");
  add_config_file(eval_cmd);
  eval_cmd->callback([&] { run_eval(eval_checkpoint, eval_manifest, eval_split, eval_out); });

  // attmap
  AttmapArgs attmap_args;
  CLI::App* attmap =
      app.add_subcommand("attmap", "Export attention maps for one image as P5 plus raw CSV");
  attmap->add_option("--checkpoint", attmap_args.checkpoint, "Checkpoint path")->required();
  attmap->add_option("--image", attmap_args.image, "Input image (P5)")->required();
  attmap->add_option("--width", attmap_args.width_um,
                     "Known width in micrometers (mode=half checkpoints)");
  attmap->add_option("--height", attmap_args.height_um,
                     "Known height in micrometers (mode=half checkpoints)");
  attmap->add_option("--out-prefix", attmap_args.out_prefix, "Output file prefix")
      ->capture_default_str();
  add_config_file(attmap);
  attmap->callback([&] { run_attmap(attmap_args); });

  // baseline
  std::string baseline_manifest, baseline_out;
  CLI::App* baseline =
      app.add_subcommand("baseline", "Classical width/height/radius measurement of every record");
  baseline->add_option("--manifest", baseline_manifest, "Manifest CSV path")->required();
  baseline->add_option("--out", baseline_out, "Write the CSV here instead of stdout");
  add_config_file(baseline);
  baseline->callback([&] { run_baseline(baseline_manifest, baseline_out); });

  try {
    std::vector<std::string> args = inject_config_args(
        argc, argv, {"synth", "split", "augment", "train", "eval", "attmap", "baseline"});
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
