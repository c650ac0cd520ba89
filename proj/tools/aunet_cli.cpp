// Command-line entry points for the AU heatmap-regression pipeline.
//
// Exit codes: 0 success, 2 argument error, 3 missing or unreadable input,
// 4 mode/checkpoint mismatch, 5 runtime failure.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "aunet/codec.hpp"
#include "aunet/metrics.hpp"
#include "aunet/model.hpp"
#include "aunet/synth.hpp"
#include "aunet/train.hpp"
#include "aunet/transfer.hpp"

#include <opencv2/imgcodecs.hpp>

namespace fs = std::filesystem;
using namespace aunet;

namespace {

constexpr int kExitArgs = 2;
constexpr int kExitMissing = 3;
constexpr int kExitMismatch = 4;
constexpr int kExitRuntime = 5;

struct MissingInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ModeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Settings {
  std::string config;
  std::string mode = "scratch";
  std::string checkpoint, fan_checkpoint, data, image;
  std::string out = "run";
  std::string split = "test";
  std::string device = "cpu";
  std::string aus = "2,6,10,12,17";
  std::uint64_t seed = 0;
  int epochs = 20;
  double lr = -1;  // <0 picks the per-mode default
  int n_frames = 1000;
  int limit = 8;
  NetworkSpec net;
  int trunk_channels = 0;
  TrainConfig tcfg;
};

std::vector<int> parse_au_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(std::stoi(tok));
  if (out.empty()) throw std::invalid_argument("empty AU list");
  return out;
}

// Flat `section.key = value` text; unknown keys are an error so typos in
// config files do not silently fall back to defaults.
void apply_config(const std::string& path, Settings& s) {
  std::ifstream f(path);
  if (!f) throw MissingInput("cannot open config file: " + path);
  const std::map<std::string, std::function<void(const std::string&)>> keys = {
      {"run.mode", [&](const std::string& v) { s.mode = v; }},
      {"run.seed", [&](const std::string& v) { s.seed = std::stoull(v); }},
      {"run.out", [&](const std::string& v) { s.out = v; }},
      {"run.device", [&](const std::string& v) { s.device = v; }},
      {"data.dir", [&](const std::string& v) { s.data = v; }},
      {"data.aus", [&](const std::string& v) { s.aus = v; }},
      {"data.split", [&](const std::string& v) { s.split = v; }},
      {"data.n_frames", [&](const std::string& v) { s.n_frames = std::stoi(v); }},
      {"net.input_size", [&](const std::string& v) { s.net.input_size = std::stoi(v); }},
      {"net.channels", [&](const std::string& v) { s.net.channels = std::stoi(v); }},
      {"net.depth", [&](const std::string& v) { s.net.depth = std::stoi(v); }},
      {"net.trunk_channels", [&](const std::string& v) { s.trunk_channels = std::stoi(v); }},
      {"train.epochs", [&](const std::string& v) { s.epochs = std::stoi(v); }},
      {"train.base_lr", [&](const std::string& v) { s.lr = std::stod(v); }},
      {"train.batch_size", [&](const std::string& v) { s.tcfg.batch_size = std::stoi(v); }},
      {"train.weight_decay", [&](const std::string& v) { s.tcfg.weight_decay = std::stod(v); }},
      {"train.momentum", [&](const std::string& v) { s.tcfg.beta1 = std::stod(v); }},
      {"train.beta2", [&](const std::string& v) { s.tcfg.beta2 = std::stod(v); }},
      {"train.schedule_period", [&](const std::string& v) { s.tcfg.schedule_period = std::stoi(v); }},
      {"train.schedule_restarts", [&](const std::string& v) { s.tcfg.schedule_restarts = std::stoi(v) != 0; }},
      {"train.keep_epoch_checkpoints", [&](const std::string& v) { s.tcfg.keep_epoch_checkpoints = std::stoi(v) != 0; }},
      {"aug.enabled", [&](const std::string& v) { s.tcfg.augmentation.enabled = std::stoi(v) != 0; }},
      {"aug.flip_prob", [&](const std::string& v) { s.tcfg.augmentation.flip_prob = std::stod(v); }},
      {"aug.rotation_deg", [&](const std::string& v) { s.tcfg.augmentation.rotation_deg = std::stod(v); }},
      {"aug.scale_lo", [&](const std::string& v) { s.tcfg.augmentation.scale_lo = std::stod(v); }},
      {"aug.scale_hi", [&](const std::string& v) { s.tcfg.augmentation.scale_hi = std::stod(v); }},
      {"aug.jitter_amp", [&](const std::string& v) { s.tcfg.augmentation.jitter_amp = std::stod(v); }},
      {"aug.occlusion_prob", [&](const std::string& v) { s.tcfg.augmentation.occlusion_prob = std::stod(v); }},
      {"aug.occlusion_lo", [&](const std::string& v) { s.tcfg.augmentation.occlusion_lo = std::stod(v); }},
      {"aug.occlusion_hi", [&](const std::string& v) { s.tcfg.augmentation.occlusion_hi = std::stod(v); }},
  };
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": expected `key = value`");
    auto trim = [](std::string v) {
      const auto b = v.find_first_not_of(" \t\r");
      const auto e = v.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = keys.find(key);
    if (it == keys.end())
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": unknown key `" + key + "`");
    it->second(value);
  }
}

ModelBundle load_checkpoint(const std::string& path, const char* what) {
  if (path.empty())
    throw MissingInput(std::string("missing required ") + what + " path");
  if (!fs::exists(path))
    throw MissingInput(std::string(what) + " not found: " + path);
  return ModelBundle::load(path);
}

DatasetManifest load_dataset(const std::string& dir) {
  if (dir.empty()) throw MissingInput("missing required --data directory");
  const std::string manifest = (fs::path(dir) / "manifest.csv").string();
  if (!fs::exists(manifest))
    throw MissingInput("dataset manifest not found: " + manifest);
  return load_real(manifest);
}

ModelBundle build_au_model(const Settings& s, const std::vector<int>& aus) {
  const int n = static_cast<int>(aus.size());
  if (s.mode == "scratch") {
    NetworkSpec spec = s.net;
    spec.n_out = n;
    ModelBundle b = build_network(spec, s.seed);
    b.active_aus = aus;
    b.topology_text = builtin_topology().subset(aus).serialize();
    return b;
  }
  ModelBundle fan = load_checkpoint(s.fan_checkpoint, "FAN checkpoint");
  if (!fan.net || fan.net_spec.n_out != 68)
    throw ModeMismatch("mode " + s.mode +
                       " needs a 68-channel landmark checkpoint, got " +
                       to_string(fan.mode));
  ModelBundle b;
  if (s.mode == "fine-tune") {
    b = fine_tune_init(fan, n, 0.1);
  } else if (s.mode == "adaptation") {
    b = build_adaptation(fan, n, HeatmapSource::fan_heatmaps, aus, s.seed,
                         s.trunk_channels);
  } else if (s.mode == "attention") {
    b = build_adaptation(fan, n, HeatmapSource::attention_maps, aus, s.seed,
                         s.trunk_channels);
  } else if (s.mode == "random-backbone") {
    b = build_adaptation(fan, n, HeatmapSource::fan_heatmaps, aus, s.seed,
                         s.trunk_channels, /*random_backbone=*/true);
  } else if (s.mode == "reparam") {
    b = reparametrise(fan, n, s.seed);
  } else {
    throw std::invalid_argument("unknown mode: " + s.mode);
  }
  b.active_aus = aus;
  b.topology_text = builtin_topology().subset(aus).serialize();
  b.source_checkpoint = s.fan_checkpoint;
  return b;
}

Tensor forward_single(ModelBundle& model, const cv::Mat& image) {
  const int size = model.input_size();
  FrameSample sample;
  sample.image = image;
  Tensor batch({1, 3, size, size});
  Landmarks ignored;
  prepare_input(sample, model, batch, 0, ignored);
  Tensor out = model.forward(batch, false);
  Tensor stack({out.dim(1), out.dim(2), out.dim(3)});
  std::copy(out.data(), out.data() + out.numel(), stack.data());
  return stack;
}

int cmd_synth_gen(const Settings& s) {
  const std::vector<int> aus = parse_au_list(s.aus);
  DatasetManifest m = synth_dataset(s.n_frames, aus, s.seed, s.out);
  std::ofstream f(fs::path(s.out) / "run_manifest.txt");
  f << "command = synth-gen\n"
    << "n_frames = " << s.n_frames << "\n"
    << "aus = " << s.aus << "\n"
    << "seed = " << s.seed << "\n"
    << "dataset_hash = " << std::hex << m.hash() << std::dec << "\n";
  std::cout << "wrote " << m.rows.size() << " frames to " << s.out << "\n";
  return 0;
}

int cmd_pretrain_fan(Settings s) {
  DatasetManifest data = load_dataset(s.data);
  NetworkSpec spec = s.net;
  spec.n_out = 68;
  ModelBundle fan = build_network(spec, s.seed);
  s.tcfg.fan_mode = true;
  s.tcfg.base_lr = s.lr > 0 ? s.lr : 1e-4;
  s.tcfg.epochs = s.epochs;
  s.tcfg.seed = s.seed;
  s.tcfg.out_dir = s.out;
  TrainResult r = train(fan, data, s.tcfg);
  std::cout << "final checkpoint: " << r.checkpoint_path << "\n";
  return 0;
}

int cmd_train(Settings s) {
  DatasetManifest data = load_dataset(s.data);
  const std::vector<int> aus =
      s.aus.empty() ? data.active_aus : parse_au_list(s.aus);
  if (aus != data.active_aus)
    throw ModeMismatch("requested AU list does not match the dataset's");
  ModelBundle model = build_au_model(s, aus);
  s.tcfg.fan_mode = false;
  s.tcfg.base_lr = s.lr > 0 ? s.lr : (s.mode == "fine-tune" ? 1e-5 : 1e-4);
  s.tcfg.epochs = s.epochs;
  s.tcfg.seed = s.seed;
  s.tcfg.out_dir = s.out;
  TrainResult r = train(model, data, s.tcfg);
  std::cout << "final checkpoint: " << r.checkpoint_path << "\n";
  if (!r.epoch_losses.empty())
    std::cout << "final epoch loss: " << r.epoch_losses.back() << "\n";
  return 0;
}

int cmd_eval(const Settings& s) {
  ModelBundle model = load_checkpoint(s.checkpoint, "checkpoint");
  DatasetManifest data = load_dataset(s.data);
  if (model.n_out() != static_cast<int>(data.active_aus.size()) ||
      model.active_aus != data.active_aus)
    throw ModeMismatch("checkpoint AU list does not match the dataset's");
  PredictionTrace trace = evaluate(model, data, s.split);
  MetricsReport rep = report(trace, data.active_aus);
  std::cout << rep.to_table();
  fs::create_directories(s.out);
  std::ofstream(fs::path(s.out) / "metrics.csv") << rep.to_csv();
  std::ofstream(fs::path(s.out) / "metrics.json") << rep.to_json();
  std::ofstream(fs::path(s.out) / "run_manifest.txt")
      << "command = eval\ncheckpoint = " << s.checkpoint
      << "\ndataset_dir = " << s.data << "\nsplit = " << s.split
      << "\ndataset_hash = " << std::hex << data.hash() << std::dec << "\n";
  return 0;
}

int cmd_infer(const Settings& s) {
  ModelBundle model = load_checkpoint(s.checkpoint, "checkpoint");
  if (s.image.empty() || !fs::exists(s.image))
    throw MissingInput("image not found: " + s.image);
  cv::Mat image = cv::imread(s.image, cv::IMREAD_COLOR);
  if (image.empty()) throw MissingInput("unreadable image: " + s.image);
  const std::vector<DecodedAU> decoded = infer(model, image);
  for (std::size_t i = 0; i < decoded.size(); ++i) {
    const int au = i < model.active_aus.size()
                       ? model.active_aus[i]
                       : static_cast<int>(i);
    const DecodedAU& d = decoded[i];
    std::cout << "au=" << au << " intensity=" << d.intensity
              << " present=" << (d.present ? 1 : 0) << " peak_x=" << d.peak.x
              << " peak_y=" << d.peak.y << "\n";
  }
  return 0;
}

int cmd_export_heatmaps(const Settings& s) {
  ModelBundle model = load_checkpoint(s.checkpoint, "checkpoint");
  DatasetManifest data = load_dataset(s.data);
  fs::create_directories(s.out);
  const std::vector<std::size_t> idx = data.split_indices(s.split);
  const int n = std::min<int>(s.limit, static_cast<int>(idx.size()));
  for (int i = 0; i < n; ++i) {
    FrameSample sample = data.load(idx[static_cast<std::size_t>(i)]);
    Tensor stack = forward_single(model, sample.image);
    export_overlay(sample.image, stack,
                   (fs::path(s.out) / (sample.id + "_overlay.png")).string());
  }
  std::ofstream(fs::path(s.out) / "run_manifest.txt")
      << "command = export-heatmaps\ncheckpoint = " << s.checkpoint
      << "\ndataset_dir = " << s.data << "\nsplit = " << s.split
      << "\nframes = " << n << "\n";
  std::cout << "wrote " << n << " overlays to " << s.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  Settings s;
  CLI::App app{"Facial action unit localisation and intensity estimation via "
               "heatmap regression"};
  app.require_subcommand(1);

  // Config file values load first; explicit flags override them.
  std::string config;
  app.add_option("--config", config, "flat `section.key = value` config file")
      ->each([&](const std::string& path) { apply_config(path, s); });

  auto add_common = [&](CLI::App* c) {
    c->add_option("--seed", s.seed, "RNG seed");
    c->add_option("--out", s.out, "output directory");
    c->add_option("--device", s.device, "compute device (cpu only)")
        ->check(CLI::IsMember({"cpu"}));
  };
  auto add_train_flags = [&](CLI::App* c) {
    c->add_option("--data", s.data, "dataset directory (manifest.csv inside)");
    c->add_option("--epochs", s.epochs, "training epochs");
    c->add_option("--lr", s.lr, "base learning rate");
    c->add_option("--batch-size", s.tcfg.batch_size, "mini-batch size");
    c->add_option("--weight-decay", s.tcfg.weight_decay, "L2 weight decay");
    c->add_option("--momentum", s.tcfg.beta1, "Adam beta1");
    c->add_option("--beta2", s.tcfg.beta2, "Adam beta2");
    c->add_option("--schedule-period", s.tcfg.schedule_period,
                  "cosine annealing period in epochs");
    c->add_flag("--no-restarts",
                [&](std::int64_t) { s.tcfg.schedule_restarts = false; },
                "single cosine decay instead of warm restarts");
    c->add_option("--input-size", s.net.input_size, "network input size");
    c->add_option("--channels", s.net.channels, "trunk channel width");
    c->add_option("--depth", s.net.depth, "hourglass depth");
    c->add_flag("--no-augmentation",
                [&](std::int64_t) { s.tcfg.augmentation.enabled = false; },
                "disable all augmentation");
    c->add_option("--flip-prob", s.tcfg.augmentation.flip_prob,
                  "horizontal flip probability");
    c->add_option("--rotation-deg", s.tcfg.augmentation.rotation_deg,
                  "rotation range, degrees");
    c->add_option("--scale-lo", s.tcfg.augmentation.scale_lo, "min scale");
    c->add_option("--scale-hi", s.tcfg.augmentation.scale_hi, "max scale");
    c->add_option("--jitter-amp", s.tcfg.augmentation.jitter_amp,
                  "colour jitter amplitude");
    c->add_option("--occlusion-prob", s.tcfg.augmentation.occlusion_prob,
                  "random occlusion probability");
    c->add_option("--occlusion-lo", s.tcfg.augmentation.occlusion_lo,
                  "min occlusion fraction per dimension");
    c->add_option("--occlusion-hi", s.tcfg.augmentation.occlusion_hi,
                  "max occlusion fraction per dimension");
    c->add_flag("--keep-epoch-checkpoints",
                s.tcfg.keep_epoch_checkpoints,
                "keep one checkpoint per epoch");
  };

  CLI::App* synth = app.add_subcommand("synth-gen",
                                       "generate a schematic-face dataset");
  add_common(synth);
  synth->add_option("--n-frames", s.n_frames, "number of frames");
  synth->add_option("--aus", s.aus, "comma-separated AU ids");

  CLI::App* pre = app.add_subcommand(
      "pretrain-fan", "train a landmark heatmap network (68 channels)");
  add_common(pre);
  add_train_flags(pre);

  CLI::App* tr = app.add_subcommand("train", "train an AU intensity model");
  add_common(tr);
  add_train_flags(tr);
  tr->add_option("--mode", s.mode, "transfer strategy")
      ->check(CLI::IsMember({"scratch", "fine-tune", "adaptation", "attention",
                             "reparam", "random-backbone"}));
  tr->add_option("--fan-checkpoint", s.fan_checkpoint,
                 "pretrained landmark checkpoint");
  tr->add_option("--aus", s.aus, "comma-separated AU ids");
  tr->add_option("--trunk-channels", s.trunk_channels,
                 "adaptation trunk width (0 = default)");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_common(ev);
  ev->add_option("--checkpoint", s.checkpoint, "model checkpoint");
  ev->add_option("--data", s.data, "dataset directory");
  ev->add_option("--split", s.split, "dataset split");

  CLI::App* in = app.add_subcommand("infer", "decode AUs from one image");
  add_common(in);
  in->add_option("--checkpoint", s.checkpoint, "model checkpoint");
  in->add_option("--image", s.image, "input image path");

  CLI::App* ex = app.add_subcommand("export-heatmaps",
                                    "write heatmap overlay images");
  add_common(ex);
  ex->add_option("--checkpoint", s.checkpoint, "model checkpoint");
  ex->add_option("--data", s.data, "dataset directory");
  ex->add_option("--split", s.split, "dataset split");
  ex->add_option("--limit", s.limit, "max frames to export");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitArgs;
  } catch (const MissingInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissing;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitArgs;
  }

  try {
    if (synth->parsed()) return cmd_synth_gen(s);
    if (pre->parsed()) return cmd_pretrain_fan(s);
    if (tr->parsed()) return cmd_train(s);
    if (ev->parsed()) return cmd_eval(s);
    if (in->parsed()) return cmd_infer(s);
    if (ex->parsed()) return cmd_export_heatmaps(s);
  } catch (const MissingInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissing;
  } catch (const ModeMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMismatch;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
