#pragma once

#include <memory>
#include <string>
#include <vector>

#include "aunet/nn.hpp"

namespace aunet {

// Hierarchical multi-scale residual block: three BN-ReLU-conv stages producing
// C_o/2, C_o/4, C_o/4 channels, concatenated, with an identity (or projected)
// skip. Spatial size is preserved.
class ConvBlock : public Layer {
public:
  ConvBlock(const std::string& name, int in_c, int out_c, int kernel,
            std::mt19937_64& rng);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  void collect(std::vector<Param*>& out) override;
  void convs(std::vector<Conv2d*>& out);

  int in_channels() const { return in_c_; }
  int out_channels() const { return out_c_; }

private:
  int in_c_, out_c_;
  int c1_, c2_, c3_;  // split channel widths, c1+c2+c3 == out_c
  BatchNorm2d bn1_, bn2_, bn3_;
  ReLU relu1_, relu2_, relu3_;
  std::unique_ptr<Conv2d> conv1_, conv2_, conv3_;
  // projection branch, used only when in_c != out_c
  std::unique_ptr<BatchNorm2d> bn_skip_;
  std::unique_ptr<ReLU> relu_skip_;
  std::unique_ptr<Conv2d> conv_skip_;
};

// Single-scale-recursive encoder-decoder. Downsampling by max pooling after a
// ConvBlock, upsampling by bilinear interpolation, skip branches added at
// matching scales. Input and output shapes are identical.
class Hourglass : public Layer {
public:
  Hourglass(const std::string& name, int depth, int channels, int kernel,
            std::mt19937_64& rng);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  void collect(std::vector<Param*>& out) override;
  void convs(std::vector<Conv2d*>& out);

private:
  int depth_;
  ConvBlock up1_, low1_, low3_;
  MaxPool2d pool_;
  BilinearUpsample2x upsample_;
  std::unique_ptr<Hourglass> inner_;
  std::unique_ptr<ConvBlock> bottom_;
};

}  // namespace aunet
