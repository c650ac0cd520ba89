#pragma once

#include <memory>
#include <string>
#include <vector>

#include "aunet/tensor.hpp"

namespace aunet {

// A named tensor slot. Everything persisted to a checkpoint is a Param;
// `trainable` decides whether the optimiser touches it (running BN statistics
// and frozen backbone weights are Params with trainable=false).
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Param() = default;
  Param(std::string n, Tensor v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(train) {}
  void zero_grad() { grad.zero(); }
};

class Layer {
public:
  virtual ~Layer() = default;
  // Input/output tensors are (B, C, H, W).
  virtual Tensor forward(const Tensor& x, bool train) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual void collect(std::vector<Param*>& out) {}
};

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc);

// theta is (C_out, C_in, k, k); W is (C_out, C_out). Contracts the output
// channel axis: out[o,i,h,w] = sum_o' W[o,o'] * theta[o',i,h,w].
Tensor mode1_product(const Tensor& w, const Tensor& theta);

class Conv2d : public Layer {
public:
  Conv2d(std::string name, int in_c, int out_c, int kernel, int stride, int pad,
         bool bias, std::mt19937_64& rng);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  void collect(std::vector<Param*>& out) override;

  // Swap the direct weight for a frozen copy plus a trainable C_out x C_out
  // projection; the effective filter is projection x1 theta. The projection
  // starts at identity so behaviour is unchanged at step 0.
  void reparametrise();
  bool reparametrised() const { return reparam_; }

  Param& weight() { return weight_; }
  Param* bias() { return has_bias_ ? &bias_ : nullptr; }
  Param& projection() { return wmat_; }
  int in_channels() const { return in_c_; }
  int out_channels() const { return out_c_; }
  int kernel() const { return k_; }

private:
  const Tensor& effective_weight();

  int in_c_, out_c_, k_, stride_, pad_;
  bool has_bias_;
  Param weight_;  // (out_c, in_c, k, k); frozen theta when reparametrised
  Param bias_;    // (out_c)
  bool reparam_ = false;
  Param wmat_;        // (out_c, out_c)
  Tensor eff_cache_;  // projected weight for the current step
  Tensor x_cache_;
  std::vector<double> col_;  // im2col scratch, one sample at a time
};

class BatchNorm2d : public Layer {
public:
  BatchNorm2d(std::string name, int channels);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  void collect(std::vector<Param*>& out) override;

  Param& gamma() { return gamma_; }
  Param& beta() { return beta_; }

private:
  int c_;
  double eps_ = 1e-5, momentum_ = 0.1;
  Param gamma_, beta_, running_mean_, running_var_;
  Tensor xhat_cache_;
  std::vector<double> invstd_cache_;
  bool train_cache_ = true;  // mode of the last forward, used by backward
};

class ReLU : public Layer {
public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;

private:
  std::vector<char> mask_;
};

class MaxPool2d : public Layer {
public:
  Tensor forward(const Tensor& x, bool train) override;  // 2x2, stride 2
  Tensor backward(const Tensor& dy) override;

private:
  std::vector<int> argmax_;
  std::vector<int> in_shape_;
};

class BilinearUpsample2x : public Layer {
public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;

private:
  std::vector<int> in_shape_;
};

}  // namespace aunet
