#include "aunet/blocks.hpp"

namespace aunet {

namespace {
Tensor concat3(const Tensor& a, const Tensor& b, const Tensor& c) {
  const int bn = a.dim(0), h = a.dim(2), w = a.dim(3);
  const int ca = a.dim(1), cb = b.dim(1), cc = c.dim(1);
  Tensor out({bn, ca + cb + cc, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int n = 0; n < bn; ++n) {
    double* dst = out.data() + out.idx4(n, 0, 0, 0);
    std::copy_n(a.data() + a.idx4(n, 0, 0, 0), ca * plane, dst);
    std::copy_n(b.data() + b.idx4(n, 0, 0, 0), cb * plane, dst + ca * plane);
    std::copy_n(c.data() + c.idx4(n, 0, 0, 0), cc * plane,
                dst + (ca + cb) * plane);
  }
  return out;
}

Tensor slice_channels(const Tensor& x, int from, int count) {
  const int bn = x.dim(0), h = x.dim(2), w = x.dim(3);
  Tensor out({bn, count, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int n = 0; n < bn; ++n)
    std::copy_n(x.data() + x.idx4(n, from, 0, 0), count * plane,
                out.data() + out.idx4(n, 0, 0, 0));
  return out;
}
}  // namespace

ConvBlock::ConvBlock(const std::string& name, int in_c, int out_c, int kernel,
                     std::mt19937_64& rng)
    : in_c_(in_c), out_c_(out_c), c1_(out_c / 2), c2_(out_c / 4),
      c3_(out_c - out_c / 2 - out_c / 4), bn1_(name + ".bn1", in_c),
      bn2_(name + ".bn2", out_c / 2), bn3_(name + ".bn3", out_c / 4) {
  const int pad = (kernel - 1) / 2;
  conv1_ = std::make_unique<Conv2d>(name + ".conv1", in_c, c1_, kernel, 1, pad,
                                    false, rng);
  conv2_ = std::make_unique<Conv2d>(name + ".conv2", c1_, c2_, kernel, 1, pad,
                                    false, rng);
  conv3_ = std::make_unique<Conv2d>(name + ".conv3", c2_, c3_, kernel, 1, pad,
                                    false, rng);
  if (in_c != out_c) {
    bn_skip_ = std::make_unique<BatchNorm2d>(name + ".bn_skip", in_c);
    relu_skip_ = std::make_unique<ReLU>();
    conv_skip_ = std::make_unique<Conv2d>(name + ".conv_skip", in_c, out_c, 1,
                                          1, 0, false, rng);
  }
}

Tensor ConvBlock::forward(const Tensor& x, bool train) {
  Tensor o1 = conv1_->forward(relu1_.forward(bn1_.forward(x, train), train), train);
  Tensor o2 = conv2_->forward(relu2_.forward(bn2_.forward(o1, train), train), train);
  Tensor o3 = conv3_->forward(relu3_.forward(bn3_.forward(o2, train), train), train);
  Tensor out = concat3(o1, o2, o3);
  if (conv_skip_) {
    Tensor res = conv_skip_->forward(
        relu_skip_->forward(bn_skip_->forward(x, train), train), train);
    out.add_(res);
  } else {
    out.add_(x);
  }
  return out;
}

Tensor ConvBlock::backward(const Tensor& dy) {
  Tensor d1 = slice_channels(dy, 0, c1_);
  Tensor d2 = slice_channels(dy, c1_, c2_);
  Tensor d3 = slice_channels(dy, c1_ + c2_, c3_);
  Tensor dx3 = bn3_.backward(relu3_.backward(conv3_->backward(d3)));
  d2.add_(dx3);
  Tensor dx2 = bn2_.backward(relu2_.backward(conv2_->backward(d2)));
  d1.add_(dx2);
  Tensor dx = bn1_.backward(relu1_.backward(conv1_->backward(d1)));
  if (conv_skip_) {
    dx.add_(bn_skip_->backward(
        relu_skip_->backward(conv_skip_->backward(dy))));
  } else {
    dx.add_(dy);
  }
  return dx;
}

void ConvBlock::collect(std::vector<Param*>& out) {
  bn1_.collect(out);
  conv1_->collect(out);
  bn2_.collect(out);
  conv2_->collect(out);
  bn3_.collect(out);
  conv3_->collect(out);
  if (conv_skip_) {
    bn_skip_->collect(out);
    conv_skip_->collect(out);
  }
}

void ConvBlock::convs(std::vector<Conv2d*>& out) {
  out.push_back(conv1_.get());
  out.push_back(conv2_.get());
  out.push_back(conv3_.get());
  if (conv_skip_) out.push_back(conv_skip_.get());
}

Hourglass::Hourglass(const std::string& name, int depth, int channels,
                     int kernel, std::mt19937_64& rng)
    : depth_(depth), up1_(name + ".up1", channels, channels, kernel, rng),
      low1_(name + ".low1", channels, channels, kernel, rng),
      low3_(name + ".low3", channels, channels, kernel, rng) {
  if (depth > 1)
    inner_ = std::make_unique<Hourglass>(name + ".inner", depth - 1, channels,
                                         kernel, rng);
  else
    bottom_ = std::make_unique<ConvBlock>(name + ".bottom", channels, channels,
                                          kernel, rng);
}

Tensor Hourglass::forward(const Tensor& x, bool train) {
  Tensor skip = up1_.forward(x, train);
  Tensor low = low1_.forward(pool_.forward(x, train), train);
  low = inner_ ? inner_->forward(low, train) : bottom_->forward(low, train);
  low = low3_.forward(low, train);
  Tensor out = upsample_.forward(low, train);
  out.add_(skip);
  return out;
}

Tensor Hourglass::backward(const Tensor& dy) {
  Tensor dlow = low3_.backward(upsample_.backward(dy));
  dlow = inner_ ? inner_->backward(dlow) : bottom_->backward(dlow);
  Tensor dx = pool_.backward(low1_.backward(dlow));
  dx.add_(up1_.backward(dy));
  return dx;
}

void Hourglass::collect(std::vector<Param*>& out) {
  up1_.collect(out);
  low1_.collect(out);
  if (inner_)
    inner_->collect(out);
  else
    bottom_->collect(out);
  low3_.collect(out);
}

void Hourglass::convs(std::vector<Conv2d*>& out) {
  up1_.convs(out);
  low1_.convs(out);
  if (inner_)
    inner_->convs(out);
  else
    bottom_->convs(out);
  low3_.convs(out);
}

}  // namespace aunet
