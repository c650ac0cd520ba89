#include <doctest.h>

#include <cmath>
#include <random>

#include "aunet/nn.hpp"

using namespace aunet;

namespace {

Tensor randt(std::vector<int> shape, std::mt19937_64& rng, double s = 1.0) {
  return Tensor::randn(std::move(shape), rng, s);
}

// Direct convolution reference, stride/pad general.
Tensor conv_oracle(const Tensor& x, const Tensor& w, const double* bias,
                   int stride, int pad) {
  const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), K = w.dim(2);
  const int Ho = (H + 2 * pad - K) / stride + 1;
  const int Wo = (W + 2 * pad - K) / stride + 1;
  Tensor y({B, Co, Ho, Wo});
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < Co; ++o)
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j) {
          double acc = bias ? bias[o] : 0.0;
          for (int c = 0; c < Ci; ++c)
            for (int u = 0; u < K; ++u)
              for (int v = 0; v < K; ++v) {
                const int hy = i * stride - pad + u, hx = j * stride - pad + v;
                if (hy < 0 || hy >= H || hx < 0 || hx >= W) continue;
                acc += x.at(b, c, hy, hx) * w.at(o, c, u, v);
              }
          y.at(b, o, i, j) = acc;
        }
  return y;
}

// Central finite difference of a scalar function of one tensor entry.
template <typename F>
double fd(F&& f, double* slot, double h = 1e-5) {
  const double orig = *slot;
  *slot = orig + h;
  const double up = f();
  *slot = orig - h;
  const double down = f();
  *slot = orig;
  return (up - down) / (2 * h);
}

double half_sq(const Tensor& t) {
  double s = 0;
  for (std::size_t i = 0; i < t.numel(); ++i) s += 0.5 * t[i] * t[i];
  return s;
}

// Relative error with an absolute floor so near-zero gradients do not blow up.
bool grad_ok(double analytic, double numeric, double tol = 1e-5) {
  return std::abs(analytic - numeric) <=
         tol * std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

}  // namespace

TEST_CASE("gemm matches a triple loop") {
  std::mt19937_64 rng(1);
  const int m = 5, n = 7, k = 4;
  Tensor a = randt({m, k}, rng), b = randt({k, n}, rng), c({m, n});
  gemm(false, false, m, n, k, 1.0, a.data(), k, b.data(), n, 0.0, c.data(), n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0;
      for (int t = 0; t < k; ++t) acc += a[std::size_t(i) * k + t] * b[std::size_t(t) * n + j];
      CHECK(c[std::size_t(i) * n + j] == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("mode-1 product matches a scalar oracle") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<int> dim(1, 8), ks(1, 3);
    const int Co = dim(rng), Ci = dim(rng), K = ks(rng);
    const Tensor w = randt({Co, Co}, rng);
    const Tensor theta = randt({Co, Ci, K, K}, rng);
    const Tensor out = mode1_product(w, theta);
    REQUIRE(out.shape() == theta.shape());
    for (int o = 0; o < Co; ++o)
      for (int c = 0; c < Ci; ++c)
        for (int u = 0; u < K; ++u)
          for (int v = 0; v < K; ++v) {
            double acc = 0;
            for (int q = 0; q < Co; ++q)
              acc += w[std::size_t(o) * Co + q] * theta.at(q, c, u, v);
            CHECK(out.at(o, c, u, v) == doctest::Approx(acc).epsilon(1e-9));
          }
  }
}

TEST_CASE("mode-1 product with identity and permutation matrices") {
  std::mt19937_64 rng(3);
  const Tensor theta = randt({2, 3, 3, 3}, rng);
  Tensor eye({2, 2});
  eye[0] = 1;
  eye[3] = 1;
  const Tensor same = mode1_product(eye, theta);
  for (std::size_t i = 0; i < theta.numel(); ++i) CHECK(same[i] == theta[i]);

  Tensor swap({2, 2});
  swap[1] = 1;
  swap[2] = 1;  // [[0,1],[1,0]] exchanges the two output filters
  const Tensor swapped = mode1_product(swap, theta);
  for (int c = 0; c < 3; ++c)
    for (int u = 0; u < 3; ++u)
      for (int v = 0; v < 3; ++v) {
        CHECK(swapped.at(0, c, u, v) == theta.at(1, c, u, v));
        CHECK(swapped.at(1, c, u, v) == theta.at(0, c, u, v));
      }
}

TEST_CASE("conv2d forward matches direct convolution") {
  std::mt19937_64 rng(4);
  SUBCASE("3x3 stride 1 pad 1 with bias") {
    Conv2d conv("c", 3, 5, 3, 1, 1, true, rng);
    const Tensor x = randt({2, 3, 6, 7}, rng);
    const Tensor y = conv.forward(x, true);
    const Tensor ref = conv_oracle(x, conv.weight().value, conv.bias()->value.data(), 1, 1);
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < y.numel(); ++i)
      CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-9));
  }
  SUBCASE("7x7 stride 2 pad 3, no bias") {
    Conv2d conv("c", 3, 4, 7, 2, 3, false, rng);
    const Tensor x = randt({1, 3, 16, 16}, rng);
    const Tensor y = conv.forward(x, true);
    const Tensor ref = conv_oracle(x, conv.weight().value, nullptr, 2, 3);
    REQUIRE(y.shape() == std::vector<int>{1, 4, 8, 8});
    for (std::size_t i = 0; i < y.numel(); ++i)
      CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-9));
  }
}

TEST_CASE("conv2d gradients match finite differences") {
  std::mt19937_64 rng(5);
  Conv2d conv("c", 2, 3, 3, 1, 1, true, rng);
  Tensor x = randt({2, 2, 5, 5}, rng);
  auto loss = [&] { return half_sq(conv.forward(x, true)); };

  Tensor y = conv.forward(x, true);
  Tensor dx = conv.backward(y);  // d(half_sq)/dy = y

  std::vector<Param*> ps;
  conv.collect(ps);
  for (Param* p : ps)
    for (std::size_t i = 0; i < p->value.numel(); i += 7)
      CHECK(grad_ok(p->grad[i], fd(loss, &p->value[i])));
  for (std::size_t i = 0; i < x.numel(); i += 11)
    CHECK(grad_ok(dx[i], fd(loss, &x[i])));
}

TEST_CASE("batch norm normalises per channel in training mode") {
  std::mt19937_64 rng(6);
  BatchNorm2d bn("b", 3);
  const Tensor x = randt({4, 3, 5, 5}, rng, 2.0);
  const Tensor y = bn.forward(x, true);
  for (int c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    int n = 0;
    for (int b = 0; b < 4; ++b)
      for (int h = 0; h < 5; ++h)
        for (int w = 0; w < 5; ++w) {
          mean += y.at(b, c, h, w);
          ++n;
        }
    mean /= n;
    for (int b = 0; b < 4; ++b)
      for (int h = 0; h < 5; ++h)
        for (int w = 0; w < 5; ++w) var += std::pow(y.at(b, c, h, w) - mean, 2);
    var /= n;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps shrinks it slightly
  }
}

TEST_CASE("batch norm eval mode uses running statistics and is idempotent") {
  std::mt19937_64 rng(7);
  BatchNorm2d bn("b", 2);
  const Tensor x = randt({3, 2, 4, 4}, rng, 3.0);
  for (int i = 0; i < 200; ++i) bn.forward(x, true);
  const Tensor a = bn.forward(x, false);
  const Tensor b = bn.forward(x, false);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
  // After converging the running stats on a fixed batch, eval tracks train
  // up to the unbiased/biased variance ratio n/(n-1) with n = 48 here.
  const Tensor t = bn.forward(x, true);
  for (std::size_t i = 0; i < a.numel(); ++i)
    CHECK(std::abs(a[i] - t[i]) < 0.05);
}

TEST_CASE("batch norm gradients match finite differences") {
  std::mt19937_64 rng(8);
  BatchNorm2d bn("b", 2);
  Tensor x = randt({2, 2, 3, 3}, rng);
  auto loss = [&] { return half_sq(bn.forward(x, true)); };
  const Tensor y = bn.forward(x, true);
  const Tensor dx = bn.backward(y);
  std::vector<Param*> ps;
  bn.collect(ps);
  for (Param* p : ps) {
    if (!p->trainable) continue;
    for (std::size_t i = 0; i < p->value.numel(); ++i)
      CHECK(grad_ok(p->grad[i], fd(loss, &p->value[i]), 1e-4));
  }
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(grad_ok(dx[i], fd(loss, &x[i]), 1e-4));
}

TEST_CASE("relu masks the backward pass") {
  ReLU r;
  Tensor x({1, 1, 2, 2});
  x[0] = -1;
  x[1] = 2;
  x[2] = 0;
  x[3] = 5;
  const Tensor y = r.forward(x, true);
  CHECK(y[0] == 0);
  CHECK(y[1] == 2);
  Tensor dy({1, 1, 2, 2});
  dy.fill(1.0);
  const Tensor dx = r.backward(dy);
  CHECK(dx[0] == 0);
  CHECK(dx[1] == 1);
  CHECK(dx[2] == 0);
  CHECK(dx[3] == 1);
}

TEST_CASE("max pool picks the argmax and routes gradients to it") {
  MaxPool2d pool;
  Tensor x({1, 1, 2, 4});
  const double vals[] = {1, 3, 2, 2, 0, 0, 5, 1};
  for (int i = 0; i < 8; ++i) x[i] = vals[i];
  const Tensor y = pool.forward(x, true);
  REQUIRE(y.shape() == std::vector<int>{1, 1, 1, 2});
  CHECK(y[0] == 3);
  CHECK(y[1] == 5);
  Tensor dy({1, 1, 1, 2});
  dy[0] = 10;
  dy[1] = 20;
  const Tensor dx = pool.backward(dy);
  CHECK(dx[1] == 10);
  CHECK(dx[6] == 20);
  CHECK(dx[0] + dx[2] + dx[3] + dx[4] + dx[5] + dx[7] == 0);
}

TEST_CASE("bilinear upsample doubles resolution and is linear") {
  std::mt19937_64 rng(9);
  BilinearUpsample2x up;
  Tensor x = randt({1, 2, 4, 4}, rng);
  const Tensor y = up.forward(x, true);
  REQUIRE(y.shape() == std::vector<int>{1, 2, 8, 8});
  // Adjoint identity <dy, f(x)> = <x, f^T(dy)> for a linear map.
  std::mt19937_64 rng2(10);
  Tensor dy = randt({1, 2, 8, 8}, rng2);
  const Tensor dx = up.backward(dy);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < y.numel(); ++i) lhs += dy[i] * y[i];
  for (std::size_t i = 0; i < x.numel(); ++i) rhs += dx[i] * x[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-9));
  // Constant input stays constant.
  Tensor ones({1, 1, 2, 2});
  ones.fill(4.0);
  const Tensor flat = up.forward(ones, true);
  for (std::size_t i = 0; i < flat.numel(); ++i) CHECK(flat[i] == doctest::Approx(4.0));
}

TEST_CASE("reparametrised conv starts at identity and trains the projection") {
  std::mt19937_64 rng(11);
  Conv2d conv("c", 3, 4, 3, 1, 1, false, rng);
  const Tensor x = randt({1, 3, 6, 6}, rng);
  const Tensor before = conv.forward(x, false);
  conv.reparametrise();
  CHECK(conv.reparametrised());
  const Tensor after = conv.forward(x, false);
  for (std::size_t i = 0; i < before.numel(); ++i)
    CHECK(after[i] == doctest::Approx(before[i]).epsilon(1e-12));

  std::vector<Param*> ps;
  conv.collect(ps);
  bool theta_frozen = false, proj_trainable = false;
  for (Param* p : ps) {
    if (p->name == "c.weight") theta_frozen = !p->trainable;
    if (p->name == "c.weight.proj") proj_trainable = p->trainable;
  }
  CHECK(theta_frozen);
  CHECK(proj_trainable);

  // Projection gradient against finite differences.
  auto loss = [&] { return half_sq(conv.forward(x, true)); };
  const Tensor y = conv.forward(x, true);
  conv.backward(y);
  Param& w = conv.projection();
  for (std::size_t i = 0; i < w.value.numel(); i += 3)
    CHECK(grad_ok(w.grad[i], fd(loss, &w.value[i])));
}
