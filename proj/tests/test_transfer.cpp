#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "aunet/train.hpp"
#include "aunet/transfer.hpp"

using namespace aunet;

namespace {

NetworkSpec toy_fan_spec() {
  NetworkSpec s;
  s.input_size = 64;
  s.channels = 16;
  s.depth = 2;
  s.n_out = 68;
  return s;
}

std::map<std::string, std::uint64_t> checksums(ModelBundle& m) {
  std::map<std::string, std::uint64_t> out;
  for (Param* p : m.params()) out[p->name] = checksum(p->value);
  return out;
}

}  // namespace

TEST_CASE("fine-tune initialisation copies the trunk and zeroes a fresh head") {
  ModelBundle fan = build_network(toy_fan_spec(), 21);
  ModelBundle ft = fine_tune_init(fan, 5, 0.1);
  CHECK(ft.mode == TransferMode::fine_tune);
  CHECK(ft.net_spec.n_out == 5);
  CHECK(ft.lr_scale_hint == doctest::Approx(0.1));

  const auto fan_sums = checksums(fan);
  int copied = 0;
  for (Param* p : ft.params()) {
    const auto it = fan_sums.find(p->name);
    if (it != fan_sums.end() && checksum(p->value) == it->second) ++copied;
    CHECK(p->trainable == (p->name.find(".running_") == std::string::npos));
  }
  CHECK(copied > 20);  // shared trunk carried over

  // Zero head means the network output is exactly zero at step 0.
  std::mt19937_64 rng(22);
  const Tensor x = Tensor::randn({1, 3, 64, 64}, rng, 1.0);
  const Tensor y = ft.forward(x, false);
  CHECK(y.shape() == std::vector<int>{1, 5, 16, 16});
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.0);
}

TEST_CASE("fine-tune initialisation demands a landmark-shaped source") {
  NetworkSpec s = toy_fan_spec();
  s.n_out = 5;
  ModelBundle not_fan = build_network(s, 3);
  CHECK_THROWS_AS(fine_tune_init(not_fan, 5, 0.1), std::invalid_argument);
}

TEST_CASE("adaptation head trains while the backbone stays frozen") {
  ModelBundle fan = build_network(toy_fan_spec(), 23);
  const std::vector<int> aus = {2, 6, 10, 12, 17};
  ModelBundle ad = build_adaptation(fan, 5, HeatmapSource::fan_heatmaps, aus,
                                    24, /*trunk_channels=*/32);
  CHECK(ad.mode == TransferMode::adaptation_layers);
  CHECK(ad.active_aus == aus);
  for (Param* p : ad.params())  // everything outside the adapter is the backbone
    if (p->name.rfind("adapter.", 0) != 0) CHECK(!p->trainable);
  CHECK(count_parameters(ad, true) < count_parameters(ad, false));

  std::mt19937_64 rng(25);
  const Tensor x = Tensor::randn({2, 3, 64, 64}, rng, 1.0);
  const Tensor y = ad.forward(x, true);
  CHECK(y.shape() == std::vector<int>{2, 5, 16, 16});
  CHECK(y.all_finite());
}

TEST_CASE("attention variant builds AU-point maps instead of raw landmarks") {
  ModelBundle fan = build_network(toy_fan_spec(), 26);
  const std::vector<int> aus = {2, 6, 10, 12, 17};
  ModelBundle at = build_adaptation(fan, 5, HeatmapSource::attention_maps, aus,
                                    27, 32);
  CHECK(at.mode == TransferMode::attention_maps);
  CHECK(at.adapter_spec.heatmap_in == 5);  // one attention channel per AU
  std::mt19937_64 rng(28);
  const Tensor x = Tensor::randn({1, 3, 64, 64}, rng, 1.0);
  const Tensor y = at.forward(x, false);
  CHECK(y.shape() == std::vector<int>{1, 5, 16, 16});
  CHECK(y.all_finite());
}

TEST_CASE("random-backbone ablation keeps the architecture but not the weights") {
  ModelBundle fan = build_network(toy_fan_spec(), 29);
  const std::vector<int> aus = {2, 6};
  ModelBundle rb = build_adaptation(fan, 2, HeatmapSource::fan_heatmaps, aus,
                                    30, 32, /*random_backbone=*/true);
  CHECK(rb.mode == TransferMode::random_backbone);
  auto fan_sums = checksums(fan);
  bool any_conv_differs = false;
  for (Param* p : rb.params())
    if (p->name.rfind("adapter.", 0) != 0) {
      CHECK(!p->trainable);
      const auto it = fan_sums.find(p->name);
      if (it != fan_sums.end() && p->name.find(".weight") != std::string::npos &&
          checksum(p->value) != it->second)
        any_conv_differs = true;
    }
  CHECK(any_conv_differs);
}

TEST_CASE("reparametrised network starts exactly where the source stopped") {
  ModelBundle fan = build_network(toy_fan_spec(), 31);
  ModelBundle rp = reparametrise(fan, 68, 32, /*keep_head=*/true);
  CHECK(rp.mode == TransferMode::reparametrisation);
  std::mt19937_64 rng(33);
  const Tensor x = Tensor::randn({2, 3, 64, 64}, rng, 1.0);
  const Tensor yf = fan.forward(x, false);
  const Tensor yr = rp.forward(x, false);
  REQUIRE(yf.shape() == yr.shape());
  for (std::size_t i = 0; i < yf.numel(); ++i)
    CHECK(std::abs(yf[i] - yr[i]) <= 1e-5);
}

TEST_CASE("reparametrisation trains projections, norm affines and the head only") {
  ModelBundle fan = build_network(toy_fan_spec(), 34);
  ModelBundle rp = reparametrise(fan, 5, 35);
  for (Param* p : rp.params()) {
    if (p->name.find(".running_") != std::string::npos) continue;
    const bool is_proj = p->name.find(".weight.proj") != std::string::npos;
    const bool is_affine = p->name.find(".gamma") != std::string::npos ||
                           p->name.find(".beta") != std::string::npos;
    const bool is_head = p->name.rfind("head.conv", 0) == 0;
    if (is_proj || is_affine || is_head)
      CHECK(p->trainable);
    else
      CHECK_MESSAGE(!p->trainable, p->name);
  }
  CHECK(count_parameters(rp, true) < count_parameters(rp, false) / 3);
}

TEST_CASE("frozen-core checksum ignores trainable tensors") {
  ModelBundle fan = build_network(toy_fan_spec(), 36);
  ModelBundle ad = build_adaptation(fan, 2, HeatmapSource::fan_heatmaps,
                                    {12, 17}, 37, 32);
  const std::uint64_t before = ad.frozen_core_checksum();
  for (Param* p : ad.params())
    if (p->trainable)
      for (std::size_t i = 0; i < p->value.numel(); ++i) p->value[i] += 0.5;
  CHECK(ad.frozen_core_checksum() == before);
  // Touching a frozen conv filter must change it.
  for (Param* p : ad.params())
    if (!p->trainable && p->name.find(".weight") != std::string::npos &&
        p->name.find(".running_") == std::string::npos) {
      p->value[0] += 1.0;
      break;
    }
  CHECK(ad.frozen_core_checksum() != before);
}

TEST_CASE("copying matching parameters aligns two same-shaped networks") {
  ModelBundle a = build_network(toy_fan_spec(), 38);
  ModelBundle b = build_network(toy_fan_spec(), 39);
  copy_matching_params(a, b);
  auto pa = a.params(), pb = b.params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK(checksum(pa[i]->value) == checksum(pb[i]->value));
}
