#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "aunet/blocks.hpp"
#include "aunet/topology.hpp"

namespace aunet {

enum class TransferMode {
  scratch,
  fine_tune,
  adaptation_layers,
  attention_maps,
  reparametrisation,
  random_backbone,
};

std::string to_string(TransferMode m);
TransferMode transfer_mode_from_string(const std::string& s);

struct NetworkSpec {
  int input_size = 256;
  int channels = 128;
  int depth = 4;
  int kernel = 3;
  int n_out = 68;

  int map_size() const { return input_size / 4; }
  void validate() const;
};

// Trainable head fusing frozen-backbone features with (landmark or attention)
// heatmaps through 1x1 branches, followed by a kernel-1 hourglass trunk.
struct AdapterSpec {
  int fusion_channels = 128;
  int trunk_channels = 304;  // sized so the default head lands near 1M params
  int depth = 4;
  int heatmap_in = 68;
  int n_out = 5;
};

// Stem (7x7/2 conv + ConvBlocks conv2..conv4), one hourglass, head.
class HeatmapNet {
public:
  HeatmapNet(const NetworkSpec& spec, std::mt19937_64& rng);

  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& dout);
  const Tensor& conv4_tap() const { return conv4_tap_; }

  void collect(std::vector<Param*>& out);
  void convs(std::vector<Conv2d*>& out);  // every conv, head included last
  void replace_head(int n_out, bool zero_init, std::mt19937_64& rng);
  // Freeze every conv (head excluded) behind a trainable projection matrix.
  void reparametrise_trunk();

  const NetworkSpec& spec() const { return spec_; }

private:
  NetworkSpec spec_;
  std::unique_ptr<Conv2d> stem_conv_;
  BatchNorm2d stem_bn_;
  ReLU stem_relu_;
  std::unique_ptr<ConvBlock> conv2_;
  MaxPool2d pool_;
  std::unique_ptr<ConvBlock> conv3_, conv4_;
  std::unique_ptr<Hourglass> hourglass_;
  std::unique_ptr<ConvBlock> head_block_;
  std::unique_ptr<Conv2d> head_conv_;
  Tensor conv4_tap_;
};

class AdaptationNet {
public:
  AdaptationNet(const AdapterSpec& spec, std::mt19937_64& rng);

  Tensor forward(const Tensor& features, const Tensor& heatmaps, bool train);
  void backward(const Tensor& dy);  // backbone is frozen; input grads dropped
  void collect(std::vector<Param*>& out);
  const AdapterSpec& spec() const { return spec_; }

  void zero_heatmap_branch();  // test hook: fusion reduces to features only

private:
  AdapterSpec spec_;
  std::unique_ptr<Conv2d> feat_conv_, hm_conv_;
  BatchNorm2d feat_bn_, hm_bn_;
  ReLU feat_relu_, hm_relu_;
  std::unique_ptr<ConvBlock> entry_;
  std::unique_ptr<Hourglass> hourglass_;
  std::unique_ptr<ConvBlock> head_block_;
  std::unique_ptr<Conv2d> head_conv_;
};

// A model plus everything needed to reproduce its behaviour: architecture
// descriptors, transfer mode, normalisation constants and the AU topology it
// was trained against.
class ModelBundle {
public:
  TransferMode mode = TransferMode::scratch;
  NetworkSpec net_spec;      // main trunk (scratch / fine_tune / reparam)
  NetworkSpec fan_spec;      // frozen backbone (adaptation family)
  AdapterSpec adapter_spec;  // adaptation family only
  std::array<double, 3> norm_mean = {0.485, 0.456, 0.406};
  std::array<double, 3> norm_std = {0.229, 0.224, 0.225};
  std::string topology_text;  // active-subset correspondence table
  std::vector<int> active_aus;
  std::string source_checkpoint;
  double sigma0 = 1.0;
  double lr_scale_hint = 1.0;

  std::unique_ptr<HeatmapNet> net;
  std::unique_ptr<HeatmapNet> fan;  // frozen, eval-mode only
  std::unique_ptr<AdaptationNet> adapter;

  bool uses_backbone() const {
    return mode == TransferMode::adaptation_layers ||
           mode == TransferMode::attention_maps ||
           mode == TransferMode::random_backbone;
  }
  int input_size() const {
    return uses_backbone() ? fan_spec.input_size : net_spec.input_size;
  }
  int n_out() const {
    return uses_backbone() ? adapter_spec.n_out : net_spec.n_out;
  }
  AUTopology topology() const { return AUTopology::parse(topology_text); }

  Tensor forward(const Tensor& batch, bool train);
  void backward(const Tensor& dout);
  const Tensor& conv4_tap() const;

  std::vector<Param*> params();
  void zero_grad();
  std::uint64_t frozen_core_checksum();

  void save(const std::string& path);
  static ModelBundle load(const std::string& path);

private:
  Tensor fan_tap_;  // conv4 features of the frozen backbone
};

// Deterministic parameter initialisation from the seed; FAN-style output when
// spec.n_out is 68.
ModelBundle build_network(const NetworkSpec& spec, std::uint64_t seed);

long long count_parameters(ModelBundle& model, bool trainable_only);

}  // namespace aunet
