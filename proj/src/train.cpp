#include "aunet/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <opencv2/imgproc.hpp>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace aunet {

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t v[3] = {a, b, c};
  return fnv1a(v, sizeof v);
}

// Coordinate mapping under cv::resize: pixel centres align at half-pixel
// offsets, so x' = (x + 0.5) * ratio - 0.5. Keeps horizontal flips exact
// under downscaling.
double resize_coord(double x, double ratio) { return (x + 0.5) * ratio - 0.5; }

cv::Mat resize_to(const cv::Mat& img, int size) {
  if (img.cols == size && img.rows == size) return img;
  cv::Mat out;
  const int interp = size < img.cols ? cv::INTER_AREA : cv::INTER_LINEAR;
  cv::resize(img, out, cv::Size(size, size), 0, 0, interp);
  return out;
}

std::string code_identifier() {
  const char* stamp = __DATE__ " " __TIME__;
  std::uint64_t h = fnv1a(stamp, std::string(stamp).size());
  char buf[16];
  std::snprintf(buf, sizeof buf, "%012llx",
                static_cast<unsigned long long>(h & 0xffffffffffffULL));
  return buf;
}

}  // namespace

double heatmap_loss(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target))
    throw std::invalid_argument("heatmap_loss: shape mismatch");
  const int batch = pred.dim(0);
  double sum = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = pred[i] - target[i];
    sum += d * d;
  }
  return sum / batch;
}

Tensor heatmap_loss_grad(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target))
    throw std::invalid_argument("heatmap_loss: shape mismatch");
  Tensor g(pred.shape());
  const double s = 2.0 / pred.dim(0);
  for (std::size_t i = 0; i < pred.numel(); ++i)
    g[i] = s * (pred[i] - target[i]);
  return g;
}

double cosine_lr(const TrainConfig& cfg, int epoch) {
  const double pi = std::acos(-1.0);
  if (cfg.schedule_restarts) {
    const int t = cfg.schedule_period > 0 ? cfg.schedule_period : 1;
    return cfg.base_lr * 0.5 * (1.0 + std::cos(pi * (epoch % t) / t));
  }
  const int t = std::max(cfg.epochs, 1);
  return cfg.base_lr * 0.5 * (1.0 + std::cos(pi * std::min(epoch, t) / double(t)));
}

FrameSample augment(const FrameSample& sample, const AugmentationConfig& cfg,
                    const AUTopology& topology, std::mt19937_64& rng) {
  FrameSample out = sample;
  out.image = sample.image.clone();
  if (!cfg.enabled) return out;

  std::uniform_real_distribution<double> u01(0.0, 1.0);

  if (u01(rng) < cfg.flip_prob) {
    cv::flip(out.image, out.image, 1);
    out.landmarks = flip_remap(out.landmarks, out.image.cols, topology);
  }

  std::uniform_real_distribution<double> u_rot(-cfg.rotation_deg,
                                               cfg.rotation_deg);
  std::uniform_real_distribution<double> u_scale(cfg.scale_lo, cfg.scale_hi);
  const double angle = cfg.rotation_deg > 0 ? u_rot(rng) : 0.0;
  const double scale = cfg.scale_hi > cfg.scale_lo ? u_scale(rng) : cfg.scale_lo;
  const cv::Scalar mean_colour = cv::mean(out.image);
  if (angle != 0.0 || scale != 1.0) {
    const cv::Point2f centre(out.image.cols / 2.0f, out.image.rows / 2.0f);
    cv::Mat m = cv::getRotationMatrix2D(centre, angle, scale);
    cv::warpAffine(out.image, out.image, m, out.image.size(), cv::INTER_LINEAR,
                   cv::BORDER_CONSTANT, mean_colour);
    for (Vec2& p : out.landmarks) {
      const double x = p.x, y = p.y;
      p.x = m.at<double>(0, 0) * x + m.at<double>(0, 1) * y + m.at<double>(0, 2);
      p.y = m.at<double>(1, 0) * x + m.at<double>(1, 1) * y + m.at<double>(1, 2);
    }
  }

  if (cfg.jitter_amp > 0) {
    std::uniform_real_distribution<double> u_amp(-cfg.jitter_amp,
                                                 cfg.jitter_amp);
    const double gain = 1.0 + u_amp(rng);        // contrast
    const double offset = 255.0 * u_amp(rng);    // brightness
    const double sat = 1.0 + u_amp(rng);         // saturation
    out.image.convertTo(out.image, -1, gain, offset);
    cv::Mat grey, grey3;
    cv::cvtColor(out.image, grey, cv::COLOR_BGR2GRAY);
    cv::cvtColor(grey, grey3, cv::COLOR_GRAY2BGR);
    cv::addWeighted(out.image, sat, grey3, 1.0 - sat, 0.0, out.image);
  }

  if (u01(rng) < cfg.occlusion_prob) {
    std::uniform_real_distribution<double> u_frac(cfg.occlusion_lo,
                                                  cfg.occlusion_hi);
    const int pw = std::max(1, int(std::lround(u_frac(rng) * out.image.cols)));
    const int ph = std::max(1, int(std::lround(u_frac(rng) * out.image.rows)));
    std::uniform_int_distribution<int> ux(0, out.image.cols - pw);
    std::uniform_int_distribution<int> uy(0, out.image.rows - ph);
    cv::rectangle(out.image, cv::Rect(ux(rng), uy(rng), pw, ph),
                  cv::mean(out.image), cv::FILLED);
  }
  return out;
}

void prepare_input(const FrameSample& sample, const ModelBundle& model,
                   Tensor& batch, int batch_index, Landmarks& scaled_landmarks) {
  const int size = model.input_size();
  const cv::Mat img = resize_to(sample.image, size);
  const double ratio = double(size) / sample.image.cols;
  for (int i = 0; i < 68; ++i)
    scaled_landmarks[i] = {resize_coord(sample.landmarks[i].x, ratio),
                           resize_coord(sample.landmarks[i].y, ratio)};
  // BGR byte image to standardised RGB planes.
  for (int y = 0; y < size; ++y) {
    const auto* row = img.ptr<cv::Vec3b>(y);
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = row[x][2 - c] / 255.0;
        batch.at(batch_index, c, y, x) =
            (v - model.norm_mean[size_t(c)]) / model.norm_std[size_t(c)];
      }
  }
}

AdamOptimiser::AdamOptimiser(std::vector<Param*> params, const TrainConfig& cfg)
    : wd_(cfg.weight_decay), beta1_(cfg.beta1), beta2_(cfg.beta2) {
  for (Param* p : params)
    if (p->trainable) params_.push_back(p);
  for (Param* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void AdamOptimiser::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, double(t_));
  const double bc2 = 1.0 - std::pow(beta2_, double(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    for (std::size_t j = 0; j < p.value.numel(); ++j) {
      const double g = p.grad[j] + wd_ * p.value[j];
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
      p.value[j] -=
          lr * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + eps_);
    }
  }
}

namespace {

void write_run_manifest(const std::string& path, const ModelBundle& model,
                        const DatasetManifest& data, const TrainConfig& cfg) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx",
                static_cast<unsigned long long>(data.hash()));
  f << "code = " << code_identifier() << "\n"
    << "mode = " << to_string(model.mode) << "\n"
    << "dataset_dir = " << data.base_dir << "\n"
    << "dataset_hash = " << hash << "\n"
    << "optimiser = Adam (weight decay 1e-6, momentum 0.9)\n"
    << "batch_size = " << cfg.batch_size << "\n"
    << "base_lr = " << cfg.base_lr << "\n"
    << "weight_decay = " << cfg.weight_decay << "\n"
    << "momentum = " << cfg.beta1 << "\n"
    << "beta2 = " << cfg.beta2 << "\n"
    << "epochs = " << cfg.epochs << "\n"
    << "seed = " << cfg.seed << "\n"
    << "schedule = "
    << (cfg.schedule_restarts ? "cosine_warm_restarts" : "cosine_decay")
    << " period " << cfg.schedule_period << "\n"
    << "fan_mode = " << (cfg.fan_mode ? 1 : 0) << "\n"
    << "augmentation.enabled = " << (cfg.augmentation.enabled ? 1 : 0) << "\n"
    << "augmentation.flip_prob = " << cfg.augmentation.flip_prob << "\n"
    << "augmentation.rotation_deg = " << cfg.augmentation.rotation_deg << "\n"
    << "augmentation.scale = [" << cfg.augmentation.scale_lo << ", "
    << cfg.augmentation.scale_hi << "]\n"
    << "augmentation.jitter_amp = " << cfg.augmentation.jitter_amp << "\n"
    << "augmentation.occlusion_prob = " << cfg.augmentation.occlusion_prob
    << "\n"
    << "augmentation.occlusion_size = [" << cfg.augmentation.occlusion_lo
    << ", " << cfg.augmentation.occlusion_hi << "]\n";
}

}  // namespace

TrainResult train(ModelBundle& model, const DatasetManifest& data,
                  const TrainConfig& cfg) {
  if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (cfg.fan_mode) {
    if (model.n_out() != 68)
      throw std::invalid_argument("landmark pre-training needs a 68-channel head");
  } else if (model.n_out() != int(data.active_aus.size())) {
    throw std::invalid_argument("model head width does not match the dataset AU list");
  }

  const AUTopology topo = model.topology_text.empty()
                              ? builtin_topology().subset(data.active_aus)
                              : model.topology();
  const int map = model.input_size() / kHeatmapScale;
  const int n_out = model.n_out();

  fs::create_directories(cfg.out_dir);
  write_run_manifest(cfg.out_dir + "/run_manifest.txt", model, data, cfg);
  std::ofstream log(cfg.out_dir + "/loss_log.csv");
  log << "step,epoch,lr,loss\n";

  // Frozen weights must survive training bit for bit; running statistics of
  // trainable batch-norm layers are excluded since they update by design.
  std::vector<std::pair<std::string, std::uint64_t>> frozen;
  for (Param* p : model.params())
    if (!p->trainable && p->name.find(".running_") == std::string::npos)
      frozen.emplace_back(p->name, checksum(p->value));

  AdamOptimiser opt(model.params(), cfg);
  std::vector<std::size_t> order = data.split_indices("train");
  if (order.empty()) throw std::invalid_argument("dataset has no train split");

  TrainResult res;
  long long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(cfg, epoch);
    std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, std::uint64_t(epoch), 0));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0;
    int epoch_batches = 0;
    for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
      const int bsz = int(std::min<std::size_t>(cfg.batch_size,
                                                order.size() - off));
      Tensor batch({bsz, 3, model.input_size(), model.input_size()});
      Tensor target({bsz, n_out, map, map});
      for (int b = 0; b < bsz; ++b) {
        const std::size_t row = order[off + b];
        FrameSample sample = data.load(row);
        std::mt19937_64 rng(mix_seed(cfg.seed, std::uint64_t(epoch), row + 1));
        sample = augment(sample, cfg.augmentation, topo, rng);
        Landmarks lmk;
        prepare_input(sample, model, batch, b, lmk);
        Tensor t = cfg.fan_mode
                       ? encode_landmarks(lmk, map, map)
                       : encode(au_points(lmk, topo), sample.label, map, map,
                                model.sigma0);
        std::copy(t.data(), t.data() + t.numel(),
                  target.data() + std::size_t(b) * t.numel());
      }

      ++step;
      model.zero_grad();
      Tensor pred = model.forward(batch, true);
      const double loss = heatmap_loss(pred, target);
      if (!std::isfinite(loss)) {
        log << step << "," << epoch << "," << lr << ",nan\n";
        throw std::runtime_error("training diverged at step " +
                                 std::to_string(step) + " (non-finite loss)");
      }
      model.backward(heatmap_loss_grad(pred, target));
      opt.step(lr);
      log << step << "," << epoch << "," << lr << "," << loss << "\n";
      epoch_loss += loss;
      ++epoch_batches;
    }
    res.epoch_losses.push_back(epoch_loss / std::max(epoch_batches, 1));
    model.save(cfg.out_dir + "/last.ckpt");
    if (cfg.keep_epoch_checkpoints) {
      char name[32];
      std::snprintf(name, sizeof name, "/epoch_%03d.ckpt", epoch);
      model.save(cfg.out_dir + name);
    }
  }

  for (auto& [name, sum] : frozen)
    for (Param* p : model.params())
      if (p->name == name && checksum(p->value) != sum)
        throw std::runtime_error("frozen tensor modified during training: " +
                                 name);

  res.checkpoint_path = cfg.out_dir + "/model.ckpt";
  res.manifest_path = cfg.out_dir + "/run_manifest.txt";
  model.save(res.checkpoint_path);
  return res;
}

std::vector<DecodedAU> infer(ModelBundle& model, const cv::Mat& image) {
  if (image.empty() || image.type() != CV_8UC3)
    throw std::invalid_argument("infer: expected a non-empty 8-bit BGR image");
  const int size = model.input_size();
  FrameSample sample;
  sample.image = image;
  Tensor batch({1, 3, size, size});
  Landmarks ignored;
  prepare_input(sample, model, batch, 0, ignored);
  Tensor out = model.forward(batch, false);
  Tensor stack({out.dim(1), out.dim(2), out.dim(3)});
  std::copy(out.data(), out.data() + out.numel(), stack.data());
  std::vector<DecodedAU> decoded = decode(stack);
  // Peaks come back in network-input pixels; map to the original frame.
  const double back = double(image.cols) / size;
  for (DecodedAU& d : decoded) {
    d.peak.x = resize_coord(d.peak.x, back);
    d.peak.y = resize_coord(d.peak.y, back);
  }
  return decoded;
}

PredictionTrace evaluate(ModelBundle& model, const DatasetManifest& data,
                         const std::string& split) {
  PredictionTrace trace;
  for (std::size_t row : data.split_indices(split)) {
    FrameSample sample = data.load(row);
    std::vector<DecodedAU> decoded = infer(model, sample.image);
    std::vector<double> pred;
    pred.reserve(decoded.size());
    for (const DecodedAU& d : decoded) pred.push_back(d.intensity);
    trace.frame_ids.push_back(sample.id);
    trace.predicted.push_back(std::move(pred));
    trace.ground_truth.push_back(sample.label);
  }
  return trace;
}

}  // namespace aunet
