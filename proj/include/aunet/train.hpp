#pragma once

#include <random>
#include <string>
#include <vector>

#include "aunet/codec.hpp"
#include "aunet/metrics.hpp"
#include "aunet/model.hpp"
#include "aunet/synth.hpp"

namespace aunet {

struct AugmentationConfig {
  bool enabled = true;
  double flip_prob = 0.5;
  double rotation_deg = 30.0;       // uniform in [-30, 30]
  double scale_lo = 0.8, scale_hi = 1.2;
  double jitter_amp = 0.2;          // brightness/contrast/saturation amplitude
  double occlusion_prob = 0.3;
  double occlusion_lo = 0.1, occlusion_hi = 0.3;  // fraction of each dimension
};

struct TrainConfig {
  int batch_size = 48;
  double base_lr = 1e-4;
  double weight_decay = 1e-6;
  double beta1 = 0.9;  // momentum
  double beta2 = 0.999;
  int epochs = 20;
  std::uint64_t seed = 0;
  int schedule_period = 5;        // cosine annealing step
  bool schedule_restarts = true;  // warm restarts vs single decay
  AugmentationConfig augmentation;
  bool fan_mode = false;  // 68 landmark heatmap targets instead of AU maps
  bool keep_epoch_checkpoints = false;
  std::string out_dir = "run";
};

// Mean over the batch of the summed squared per-pixel difference.
double heatmap_loss(const Tensor& pred, const Tensor& target);
Tensor heatmap_loss_grad(const Tensor& pred, const Tensor& target);

double cosine_lr(const TrainConfig& cfg, int epoch);

// Similarity warp + photometric jitter + occlusion; landmarks follow the
// geometric transform (flip additionally permutes indices), labels unchanged.
FrameSample augment(const FrameSample& sample, const AugmentationConfig& cfg,
                    const AUTopology& topology, std::mt19937_64& rng);

// Resize to the network input size and normalise with the bundle's constants.
// Landmarks are scaled into network-input pixels.
void prepare_input(const FrameSample& sample, const ModelBundle& model,
                   Tensor& batch, int batch_index, Landmarks& scaled_landmarks);

struct TrainResult {
  std::vector<double> epoch_losses;
  std::string checkpoint_path;
  std::string manifest_path;
};

// Heatmap-regression loop: augment, encode targets, forward, loss, Adam step;
// per-epoch checkpoints, `step,epoch,lr,loss` log, run manifest. Non-finite
// loss aborts with the offending step recorded.
TrainResult train(ModelBundle& model, const DatasetManifest& data,
                  const TrainConfig& cfg);

// Adam with decoupled-from-schedule L2 weight decay, trainable params only.
class AdamOptimiser {
public:
  AdamOptimiser(std::vector<Param*> params, const TrainConfig& cfg);
  void step(double lr);

private:
  std::vector<Param*> params_;
  double wd_, beta1_, beta2_, eps_ = 1e-8;
  long long t_ = 0;
  std::vector<Tensor> m_, v_;
};

// Crop/resize to the network input, normalise, forward, decode.
std::vector<DecodedAU> infer(ModelBundle& model, const cv::Mat& image);

PredictionTrace evaluate(ModelBundle& model, const DatasetManifest& data,
                         const std::string& split);

}  // namespace aunet
