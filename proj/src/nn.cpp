#include "aunet/nn.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>

namespace aunet {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

Tensor mode1_product(const Tensor& w, const Tensor& theta) {
  if (w.ndim() != 2 || theta.ndim() != 4)
    throw std::invalid_argument("mode1_product: expected 2-d W and 4-d theta");
  const int out_c = theta.dim(0);
  if (w.dim(0) != w.dim(1) || w.dim(1) != out_c)
    throw std::invalid_argument("mode1_product: W must be C_out x C_out");
  const int rest = static_cast<int>(theta.numel()) / out_c;
  Tensor out(theta.shape());
  gemm(false, false, out_c, rest, out_c, 1.0, w.data(), out_c, theta.data(),
       rest, 0.0, out.data(), rest);
  return out;
}

// ---------------------------------------------------------------------------
// Conv2d

namespace {

void im2col(const double* x, int c, int h, int w, int k, int stride, int pad,
            int oh, int ow, double* col) {
  for (int ch = 0; ch < c; ++ch) {
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        double* dst = col + ((ch * k + kh) * k + kw) * (oh * ow);
        for (int y = 0; y < oh; ++y) {
          const int sy = y * stride + kh - pad;
          if (sy < 0 || sy >= h) {
            std::fill(dst + y * ow, dst + (y + 1) * ow, 0.0);
            continue;
          }
          const double* src = x + (ch * h + sy) * w;
          for (int xx = 0; xx < ow; ++xx) {
            const int sx = xx * stride + kw - pad;
            dst[y * ow + xx] = (sx >= 0 && sx < w) ? src[sx] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, int c, int h, int w, int k, int stride, int pad,
            int oh, int ow, double* x) {
  for (int ch = 0; ch < c; ++ch) {
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        const double* src = col + ((ch * k + kh) * k + kw) * (oh * ow);
        for (int y = 0; y < oh; ++y) {
          const int sy = y * stride + kh - pad;
          if (sy < 0 || sy >= h) continue;
          double* dst = x + (ch * h + sy) * w;
          for (int xx = 0; xx < ow; ++xx) {
            const int sx = xx * stride + kw - pad;
            if (sx >= 0 && sx < w) dst[sx] += src[y * ow + xx];
          }
        }
      }
    }
  }
}

}  // namespace

Conv2d::Conv2d(std::string name, int in_c, int out_c, int kernel, int stride,
               int pad, bool bias, std::mt19937_64& rng)
    : in_c_(in_c), out_c_(out_c), k_(kernel), stride_(stride), pad_(pad),
      has_bias_(bias) {
  const double stddev = std::sqrt(2.0 / (in_c * kernel * kernel));
  weight_ = Param(name + ".weight",
                  Tensor::randn({out_c, in_c, kernel, kernel}, rng, stddev));
  if (has_bias_) bias_ = Param(name + ".bias", Tensor({out_c}));
}

void Conv2d::reparametrise() {
  if (reparam_) return;
  reparam_ = true;
  weight_.trainable = false;
  wmat_ = Param(weight_.name + ".proj", Tensor({out_c_, out_c_}));
  for (int i = 0; i < out_c_; ++i) wmat_.value[i * out_c_ + i] = 1.0;
  eff_cache_ = Tensor();
}

const Tensor& Conv2d::effective_weight() {
  if (!reparam_) return weight_.value;
  eff_cache_ = mode1_product(wmat_.value, weight_.value);
  return eff_cache_;
}

Tensor Conv2d::forward(const Tensor& x, bool) {
  if (x.ndim() != 4 || x.dim(1) != in_c_)
    throw std::invalid_argument("Conv2d: bad input shape");
  const int b = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int oh = (h + 2 * pad_ - k_) / stride_ + 1;
  const int ow = (w + 2 * pad_ - k_) / stride_ + 1;
  const int ckk = in_c_ * k_ * k_;
  const Tensor& wt = effective_weight();
  Tensor out({b, out_c_, oh, ow});
  col_.resize(static_cast<std::size_t>(ckk) * oh * ow);
  for (int n = 0; n < b; ++n) {
    im2col(x.data() + x.idx4(n, 0, 0, 0), in_c_, h, w, k_, stride_, pad_, oh,
           ow, col_.data());
    gemm(false, false, out_c_, oh * ow, ckk, 1.0, wt.data(), ckk, col_.data(),
         oh * ow, 0.0, out.data() + out.idx4(n, 0, 0, 0), oh * ow);
  }
  if (has_bias_) {
    for (int n = 0; n < b; ++n)
      for (int c = 0; c < out_c_; ++c) {
        double* p = out.data() + out.idx4(n, c, 0, 0);
        const double bv = bias_.value[c];
        for (int i = 0; i < oh * ow; ++i) p[i] += bv;
      }
  }
  x_cache_ = x;
  return out;
}

Tensor Conv2d::backward(const Tensor& dy) {
  const Tensor& x = x_cache_;
  const int b = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int oh = dy.dim(2), ow = dy.dim(3);
  const int ckk = in_c_ * k_ * k_;
  const Tensor& wt = reparam_ ? eff_cache_ : weight_.value;
  Tensor dx(x.shape());
  Tensor deff = reparam_ ? Tensor(weight_.value.shape()) : Tensor();
  Tensor& dw = reparam_ ? deff : weight_.grad;
  std::vector<double> dcol(static_cast<std::size_t>(ckk) * oh * ow);
  for (int n = 0; n < b; ++n) {
    const double* dyn = dy.data() + dy.idx4(n, 0, 0, 0);
    im2col(x.data() + x.idx4(n, 0, 0, 0), in_c_, h, w, k_, stride_, pad_, oh,
           ow, col_.data());
    // dW += dy_n * col^T
    gemm(false, true, out_c_, ckk, oh * ow, 1.0, dyn, oh * ow, col_.data(),
         oh * ow, 1.0, dw.data(), ckk);
    // dcol = W^T * dy_n
    gemm(true, false, ckk, oh * ow, out_c_, 1.0, wt.data(), ckk, dyn, oh * ow,
         0.0, dcol.data(), oh * ow);
    col2im(dcol.data(), in_c_, h, w, k_, stride_, pad_, oh, ow,
           dx.data() + dx.idx4(n, 0, 0, 0));
    if (has_bias_) {
      for (int c = 0; c < out_c_; ++c) {
        double s = 0;
        const double* p = dyn + static_cast<std::size_t>(c) * oh * ow;
        for (int i = 0; i < oh * ow; ++i) s += p[i];
        bias_.grad[c] += s;
      }
    }
  }
  if (reparam_) {
    // dWmat[o,o'] = sum over filter elements of dEff[o,..] * theta[o',..]
    gemm(false, true, out_c_, out_c_, in_c_ * k_ * k_, 1.0, deff.data(),
         in_c_ * k_ * k_, weight_.value.data(), in_c_ * k_ * k_, 1.0,
         wmat_.grad.data(), out_c_);
  }
  return dx;
}

void Conv2d::collect(std::vector<Param*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
  if (reparam_) out.push_back(&wmat_);
}

// ---------------------------------------------------------------------------
// BatchNorm2d

BatchNorm2d::BatchNorm2d(std::string name, int channels) : c_(channels) {
  gamma_ = Param(name + ".gamma", Tensor({channels}));
  gamma_.value.fill(1.0);
  beta_ = Param(name + ".beta", Tensor({channels}));
  running_mean_ = Param(name + ".running_mean", Tensor({channels}), false);
  running_var_ = Param(name + ".running_var", Tensor({channels}), false);
  running_var_.value.fill(1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool train) {
  const int b = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const double n = static_cast<double>(b) * plane;
  Tensor out(x.shape());
  xhat_cache_ = Tensor(x.shape());
  invstd_cache_.assign(c_, 0.0);
  train_cache_ = train;
  for (int c = 0; c < c_; ++c) {
    double mean, var;
    if (train) {
      double s = 0, s2 = 0;
      for (int bi = 0; bi < b; ++bi) {
        const double* p = x.data() + x.idx4(bi, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) {
          s += p[i];
          s2 += p[i] * p[i];
        }
      }
      mean = s / n;
      var = s2 / n - mean * mean;
      if (var < 0) var = 0;
      running_mean_.value[c] =
          (1 - momentum_) * running_mean_.value[c] + momentum_ * mean;
      const double unbiased = n > 1 ? var * n / (n - 1) : var;
      running_var_.value[c] =
          (1 - momentum_) * running_var_.value[c] + momentum_ * unbiased;
    } else {
      mean = running_mean_.value[c];
      var = running_var_.value[c];
    }
    const double invstd = 1.0 / std::sqrt(var + eps_);
    invstd_cache_[c] = invstd;
    const double g = gamma_.value[c], bt = beta_.value[c];
    for (int bi = 0; bi < b; ++bi) {
      const double* p = x.data() + x.idx4(bi, c, 0, 0);
      double* xh = xhat_cache_.data() + xhat_cache_.idx4(bi, c, 0, 0);
      double* o = out.data() + out.idx4(bi, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (p[i] - mean) * invstd;
        o[i] = g * xh[i] + bt;
      }
    }
  }
  return out;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
  const int b = dy.dim(0), h = dy.dim(2), w = dy.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const double n = static_cast<double>(b) * plane;
  Tensor dx(dy.shape());
  for (int c = 0; c < c_; ++c) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int bi = 0; bi < b; ++bi) {
      const double* d = dy.data() + dy.idx4(bi, c, 0, 0);
      const double* xh = xhat_cache_.data() + xhat_cache_.idx4(bi, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += d[i];
        sum_dy_xhat += d[i] * xh[i];
      }
    }
    beta_.grad[c] += sum_dy;
    gamma_.grad[c] += sum_dy_xhat;
    const double g = gamma_.value[c] * invstd_cache_[c];
    for (int bi = 0; bi < b; ++bi) {
      const double* d = dy.data() + dy.idx4(bi, c, 0, 0);
      const double* xh = xhat_cache_.data() + xhat_cache_.idx4(bi, c, 0, 0);
      double* o = dx.data() + dx.idx4(bi, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i)
        // In eval mode the normalisation statistics are constants, so the
        // batch-coupling terms of the training-mode derivative drop out.
        o[i] = train_cache_
                   ? g * (d[i] - (sum_dy + xh[i] * sum_dy_xhat) / n)
                   : g * d[i];
    }
  }
  return dx;
}

void BatchNorm2d::collect(std::vector<Param*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

// ---------------------------------------------------------------------------
// ReLU / MaxPool / upsample

Tensor ReLU::forward(const Tensor& x, bool) {
  Tensor out(x.shape());
  mask_.assign(x.numel(), 0);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (x[i] > 0) {
      out[i] = x[i];
      mask_[i] = 1;
    }
  }
  return out;
}

Tensor ReLU::backward(const Tensor& dy) {
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.numel(); ++i)
    if (mask_[i]) dx[i] = dy[i];
  return dx;
}

Tensor MaxPool2d::forward(const Tensor& x, bool) {
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = h / 2, ow = w / 2;
  in_shape_ = x.shape();
  Tensor out({b, c, oh, ow});
  argmax_.assign(out.numel(), 0);
  std::size_t oi = 0;
  for (int n = 0; n < b; ++n)
    for (int ch = 0; ch < c; ++ch) {
      const double* plane = x.data() + x.idx4(n, ch, 0, 0);
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx, ++oi) {
          int best = (2 * y) * w + 2 * xx;
          double bv = plane[best];
          const int cands[3] = {(2 * y) * w + 2 * xx + 1,
                               (2 * y + 1) * w + 2 * xx,
                               (2 * y + 1) * w + 2 * xx + 1};
          for (int ci : cands)
            if (plane[ci] > bv) {
              bv = plane[ci];
              best = ci;
            }
          out[oi] = bv;
          argmax_[oi] = best;
        }
    }
  return out;
}

Tensor MaxPool2d::backward(const Tensor& dy) {
  const int b = dy.dim(0), c = dy.dim(1), oh = dy.dim(2), ow = dy.dim(3);
  Tensor dx(in_shape_);
  const int h = in_shape_[2], w = in_shape_[3];
  std::size_t oi = 0;
  for (int n = 0; n < b; ++n)
    for (int ch = 0; ch < c; ++ch) {
      double* plane = dx.data() + dx.idx4(n, ch, 0, 0);
      for (int i = 0; i < oh * ow; ++i, ++oi) plane[argmax_[oi]] += dy[oi];
      (void)h;
      (void)w;
    }
  return dx;
}

namespace {
// Source index/weight pairs for factor-2 bilinear resize (half-pixel centres).
void bilinear_taps(int out_i, int in_n, int& i0, int& i1, double& w1) {
  const double src = (out_i + 0.5) / 2.0 - 0.5;
  const double f = std::floor(src);
  i0 = static_cast<int>(f);
  i1 = i0 + 1;
  w1 = src - f;
  if (i0 < 0) i0 = 0;
  if (i1 > in_n - 1) i1 = in_n - 1;
}
}  // namespace

Tensor BilinearUpsample2x::forward(const Tensor& x, bool) {
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  in_shape_ = x.shape();
  const int oh = h * 2, ow = w * 2;
  Tensor out({b, c, oh, ow});
  for (int n = 0; n < b; ++n)
    for (int ch = 0; ch < c; ++ch) {
      const double* src = x.data() + x.idx4(n, ch, 0, 0);
      double* dst = out.data() + out.idx4(n, ch, 0, 0);
      for (int y = 0; y < oh; ++y) {
        int y0, y1;
        double wy;
        bilinear_taps(y, h, y0, y1, wy);
        for (int xx = 0; xx < ow; ++xx) {
          int x0, x1;
          double wx;
          bilinear_taps(xx, w, x0, x1, wx);
          dst[y * ow + xx] = (1 - wy) * ((1 - wx) * src[y0 * w + x0] +
                                         wx * src[y0 * w + x1]) +
                             wy * ((1 - wx) * src[y1 * w + x0] +
                                   wx * src[y1 * w + x1]);
        }
      }
    }
  return out;
}

Tensor BilinearUpsample2x::backward(const Tensor& dy) {
  const int b = dy.dim(0), c = dy.dim(1), oh = dy.dim(2), ow = dy.dim(3);
  const int h = in_shape_[2], w = in_shape_[3];
  Tensor dx(in_shape_);
  for (int n = 0; n < b; ++n)
    for (int ch = 0; ch < c; ++ch) {
      double* src = dx.data() + dx.idx4(n, ch, 0, 0);
      const double* dst = dy.data() + dy.idx4(n, ch, 0, 0);
      for (int y = 0; y < oh; ++y) {
        int y0, y1;
        double wy;
        bilinear_taps(y, h, y0, y1, wy);
        for (int xx = 0; xx < ow; ++xx) {
          int x0, x1;
          double wx;
          bilinear_taps(xx, w, x0, x1, wx);
          const double g = dst[y * ow + xx];
          src[y0 * w + x0] += (1 - wy) * (1 - wx) * g;
          src[y0 * w + x1] += (1 - wy) * wx * g;
          src[y1 * w + x0] += wy * (1 - wx) * g;
          src[y1 * w + x1] += wy * wx * g;
        }
      }
    }
  return dx;
}

}  // namespace aunet
