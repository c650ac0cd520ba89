#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "aunet/model.hpp"
#include "aunet/train.hpp"

using namespace aunet;

namespace {

NetworkSpec tiny_spec() {
  NetworkSpec s;
  s.input_size = 64;
  s.channels = 8;
  s.depth = 1;
  s.n_out = 3;
  return s;
}

}  // namespace

TEST_CASE("default network maps 3x256x256 to 68 quarter-resolution maps") {
  ModelBundle m = build_network(NetworkSpec{}, 0);
  std::mt19937_64 rng(1);
  const Tensor x = Tensor::randn({1, 3, 256, 256}, rng, 1.0);
  const Tensor y = m.forward(x, false);
  CHECK(y.shape() == std::vector<int>{1, 68, 64, 64});
  CHECK(y.all_finite());
}

TEST_CASE("default parameter count sits near 1.65M") {
  ModelBundle m = build_network(NetworkSpec{}, 0);
  const long long n = count_parameters(m, false);
  CHECK(n > 1'650'000 * 0.85);
  CHECK(n < 1'650'000 * 1.15);
  CHECK(count_parameters(m, true) == n);  // everything trains from scratch
}

TEST_CASE("a 1x1 projection layer with bias counts 16512 parameters") {
  std::mt19937_64 rng(2);
  Conv2d conv("p", 128, 128, 1, 1, 0, true, rng);
  std::vector<Param*> ps;
  conv.collect(ps);
  long long n = 0;
  for (Param* p : ps) n += static_cast<long long>(p->value.numel());
  CHECK(n == 16512);
}

TEST_CASE("spec validation rejects unsupported geometries") {
  NetworkSpec s;
  s.input_size = 200;  // not divisible by 64
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = NetworkSpec{};
  s.channels = 30;  // not divisible by 4
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  CHECK_NOTHROW(NetworkSpec{}.validate());
}

TEST_CASE("initialisation is a pure function of the seed") {
  ModelBundle a = build_network(tiny_spec(), 42);
  ModelBundle b = build_network(tiny_spec(), 42);
  ModelBundle c = build_network(tiny_spec(), 43);
  auto pa = a.params(), pb = b.params(), pc = c.params();
  REQUIRE(pa.size() == pb.size());
  bool all_equal = true, any_differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t j = 0; j < pa[i]->value.numel(); ++j) {
      if (pa[i]->value[j] != pb[i]->value[j]) all_equal = false;
      if (pa[i]->value[j] != pc[i]->value[j]) any_differs = true;
    }
  }
  CHECK(all_equal);
  CHECK(any_differs);
}

TEST_CASE("evaluation mode is deterministic") {
  ModelBundle m = build_network(tiny_spec(), 5);
  std::mt19937_64 rng(6);
  const Tensor x = Tensor::randn({2, 3, 64, 64}, rng, 1.0);
  const Tensor a = m.forward(x, false);
  const Tensor b = m.forward(x, false);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("end-to-end gradients of the tiny backbone match finite differences") {
  NetworkSpec spec;
  spec.input_size = 32;
  spec.channels = 8;
  spec.depth = 1;
  spec.n_out = 2;
  ModelBundle m = build_network(spec, 9);
  std::mt19937_64 rng(10);
  const Tensor x = Tensor::randn({1, 3, 32, 32}, rng, 1.0);
  const Tensor target = Tensor::randn({1, 2, 8, 8}, rng, 1.0);

  auto loss = [&] { return heatmap_loss(m.forward(x, true), target); };
  m.zero_grad();
  const Tensor pred = m.forward(x, true);
  m.backward(heatmap_loss_grad(pred, target));

  auto params = m.params();
  std::uniform_int_distribution<int> pick_param(0, int(params.size()) - 1);
  int checked = 0, attempts = 0;
  double worst = 0;
  while (checked < 25 && attempts < 1000) {
    ++attempts;
    Param* p = params[std::size_t(pick_param(rng))];
    if (!p->trainable || p->value.numel() == 0) continue;
    std::uniform_int_distribution<std::size_t> pick_idx(0, p->value.numel() - 1);
    const std::size_t i = pick_idx(rng);
    const double orig = p->value[i];
    auto fd = [&](double h) {
      p->value[i] = orig + h;
      const double up = loss();
      p->value[i] = orig - h;
      const double down = loss();
      p->value[i] = orig;
      return (up - down) / (2 * h);
    };
    const double f1 = fd(1e-3), f2 = fd(1e-4);
    // A ReLU kink inside the step makes the central difference itself
    // invalid; such slices show up as inconsistent estimates across step
    // sizes and are resampled. A wrong analytic gradient cannot hide this
    // way, because both estimates then agree with each other but not with
    // the backward pass.
    if (std::abs(f1 - f2) > 1e-3 * std::max(1.0, std::abs(f1))) continue;
    const double rel = std::abs(p->grad[i] - f1) /
                       std::max({1e-6, std::abs(p->grad[i]), std::abs(f1)});
    worst = std::max(worst, rel);
    ++checked;
  }
  CHECK(checked == 25);
  CHECK(worst <= 1e-3);
}

TEST_CASE("checkpoints round trip bit for bit") {
  ModelBundle m = build_network(tiny_spec(), 11);
  m.active_aus = {2, 6, 10};
  m.topology_text = builtin_topology().subset({2, 6, 10}).serialize();
  const std::string path = "/tmp/aunet_test_ckpt.bin";
  m.save(path);
  ModelBundle back = ModelBundle::load(path);
  CHECK(back.mode == m.mode);
  CHECK(back.active_aus == m.active_aus);
  CHECK(back.topology_text == m.topology_text);
  CHECK(back.net_spec.input_size == 64);
  auto pa = m.params(), pb = back.params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(pa[i]->trainable == pb[i]->trainable);
    REQUIRE(pa[i]->value.numel() == pb[i]->value.numel());
    for (std::size_t j = 0; j < pa[i]->value.numel(); ++j)
      CHECK(pa[i]->value[j] == pb[i]->value[j]);
  }
  std::mt19937_64 rng(12);
  const Tensor x = Tensor::randn({1, 3, 64, 64}, rng, 1.0);
  const Tensor ya = m.forward(x, false), yb = back.forward(x, false);
  for (std::size_t i = 0; i < ya.numel(); ++i) CHECK(ya[i] == yb[i]);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const std::string path = "/tmp/aunet_test_bad_ckpt.bin";
  {
    std::ofstream f(path, std::ios::binary);
    f << "not a checkpoint";
  }
  CHECK_THROWS(ModelBundle::load(path));
  CHECK_THROWS(ModelBundle::load("/tmp/aunet_missing_ckpt.bin"));
}
