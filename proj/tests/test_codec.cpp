#include <doctest.h>

#include <cmath>
#include <random>

#include "aunet/codec.hpp"

using namespace aunet;

namespace {

// Map pixel m is centred at input coordinate 4m + 1.5.
double cell_centre(int m) { return 4 * m + 1.5; }

AUPoints single(Vec2 p) {
  AUPointSet s;
  s.centre = p;
  return {s};
}

}  // namespace

TEST_CASE("gaussian amplitude and falloff, hand arithmetic") {
  // Point on the centre of map cell (32,32): peak value is exactly a and the
  // horizontal neighbour follows a*exp(-1/(2 a^2)).
  const Tensor m = encode(single({cell_centre(32), cell_centre(32)}), {3.0}, 64, 64);
  CHECK(m.shape() == std::vector<int>{1, 64, 64});
  CHECK(m[std::size_t(32) * 64 + 32] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(m[std::size_t(32) * 64 + 33] ==
        doctest::Approx(3.0 * std::exp(-1.0 / 18.0)).epsilon(1e-12));

  // Off-centre point at input (128,128): scaled centre 31.625 in cell index
  // space, evaluated at the surrounding cell centres.
  const Tensor o = encode(single({128, 128}), {3.0}, 64, 64);
  const double d = 32 - (0.25 * 128 - 0.375);
  CHECK(o[std::size_t(32) * 64 + 32] ==
        doctest::Approx(3.0 * std::exp(-2 * d * d / 18.0)).epsilon(1e-12));
}

TEST_CASE("zero intensity yields a zero map") {
  const Tensor m = encode(single({128, 128}), {0.0}, 64, 64);
  for (std::size_t i = 0; i < m.numel(); ++i) CHECK(m[i] == 0.0);
}

TEST_CASE("stack shape is quarter resolution per AU") {
  AUPoints pts(5);
  for (auto& s : pts) s.centre = Vec2{100, 100};
  const Tensor m = encode(pts, {1, 2, 3, 4, 5}, 64, 64);
  CHECK(m.shape() == std::vector<int>{5, 64, 64});
}

TEST_CASE("encode rejects bad inputs") {
  CHECK_THROWS_AS(encode(single({100, 100}), {6.0}, 64, 64), std::invalid_argument);
  CHECK_THROWS_AS(encode(single({100, 100}), {-1.0}, 64, 64), std::invalid_argument);
  CHECK_THROWS_AS(encode(single({std::nan(""), 100}), {1.0}, 64, 64), std::invalid_argument);
  CHECK_THROWS_AS(encode(single({100, 100}), {1.0}, 0, 64), std::invalid_argument);
}

TEST_CASE("three sigma truncation to exact zero") {
  const Tensor m = encode(single({cell_centre(32), cell_centre(32)}), {1.0}, 64, 64);
  CHECK(m[std::size_t(32) * 64 + 36] == 0.0);  // 4 cells out, sigma = 1
  CHECK(m[std::size_t(32) * 64 + 34] > 0.0);
}

TEST_CASE("round trip on cell-centred points") {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> cell(8, 55), level(1, 5);
  for (int i = 0; i < 200; ++i) {
    const double a = level(rng);
    const Vec2 p{cell_centre(cell(rng)), cell_centre(cell(rng))};
    const auto d = decode(encode(single(p), {a}, 64, 64));
    CHECK(d[0].intensity == doctest::Approx(a).epsilon(1e-9));
    CHECK(d[0].peak.x == doctest::Approx(p.x).epsilon(1e-9));
    CHECK(d[0].peak.y == doctest::Approx(p.y).epsilon(1e-9));
    CHECK(d[0].present);
  }
}

TEST_CASE("round trip on arbitrary points stays within tolerance") {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(30, 225);
  std::uniform_int_distribution<int> level(1, 5);
  for (int i = 0; i < 200; ++i) {
    const double a = level(rng);
    const Vec2 p{u(rng), u(rng)};
    const auto d = decode(encode(single(p), {a}, 64, 64));
    // A point can sit up to (0.5, 0.5) map pixels from the nearest cell
    // centre, so the recovered amplitude is at most a*(1 - exp(-0.5/(2a^2)))
    // below the true one.
    const double amp_bound = a * (1.0 - std::exp(-0.25 / (a * a))) + 1e-9;
    CHECK(d[0].intensity <= a + 1e-9);
    CHECK(d[0].intensity >= a - amp_bound);
    CHECK(std::abs(d[0].peak.x - p.x) <= 2.0);
    CHECK(std::abs(d[0].peak.y - p.y) <= 2.0);
  }
}

TEST_CASE("amplitude and support grow monotonically with intensity") {
  const Vec2 p{cell_centre(32), cell_centre(32)};
  double prev_peak = -1;
  int prev_support = -1;
  for (int a = 1; a <= 5; ++a) {
    const Tensor m = encode(single(p), {double(a)}, 64, 64);
    double peak = 0;
    int support = 0;
    for (std::size_t i = 0; i < m.numel(); ++i) {
      peak = std::max(peak, m[i]);
      if (m[i] > 0.1) ++support;
    }
    CHECK(peak > prev_peak);
    CHECK(support > prev_support);
    prev_peak = peak;
    prev_support = support;
  }
}

TEST_CASE("mirrored points produce the mirrored map") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(10, 245);
  std::uniform_int_distribution<int> level(1, 5);
  const int W = 256, M = 64;
  for (int i = 0; i < 50; ++i) {
    const Vec2 p{u(rng), u(rng)};
    const double a = level(rng);
    const Tensor m = encode(single(p), {a}, M, M);
    const Tensor f = encode(single({W - 1 - p.x, p.y}), {a}, M, M);
    for (int y = 0; y < M; ++y)
      for (int x = 0; x < M; ++x)
        CHECK(f[std::size_t(y) * M + x] ==
              doctest::Approx(m[std::size_t(y) * M + (M - 1 - x)]).epsilon(1e-12));
  }
}

TEST_CASE("values bounded by the maximum intensity and non-negative") {
  AUPointSet s;
  s.left = Vec2{100, 100};
  s.right = Vec2{103, 101};  // overlapping gaussians compose by max
  const Tensor m = encode({s}, {5.0}, 64, 64);
  for (std::size_t i = 0; i < m.numel(); ++i) {
    CHECK(m[i] >= 0.0);
    CHECK(m[i] <= kMaxIntensity);
  }
}

TEST_CASE("decode of an all-zero stack") {
  const auto d = decode(Tensor({3, 64, 64}));
  for (const DecodedAU& a : d) {
    CHECK(a.intensity == 0.0);
    CHECK(!a.present);
  }
}

TEST_CASE("bilateral peaks of equal amplitude decode to that amplitude") {
  AUPointSet s;
  s.left = Vec2{cell_centre(16), cell_centre(32)};
  s.right = Vec2{cell_centre(48), cell_centre(32)};
  const auto d = decode(encode({s}, {4.0}, 64, 64));
  CHECK(d[0].intensity == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("decode clamps overshoot and rejects NaN") {
  Tensor t({1, 8, 8});
  t[10] = 7.25;  // network overshoot past the top intensity
  const auto d = decode(t);
  CHECK(d[0].intensity == 5.0);
  CHECK(d[0].raw_max == doctest::Approx(7.25));
  t[3] = std::nan("");
  CHECK_THROWS_AS(decode(t), std::invalid_argument);
}

TEST_CASE("attention maps ignore intensities and peak at one") {
  AUPoints pts(2);
  pts[0].centre = Vec2{cell_centre(20), cell_centre(20)};
  // second AU left empty: inactive channel
  const Tensor m = attention_encode(pts, 64, 64);
  CHECK(m[std::size_t(20) * 64 + 20 + 0] == doctest::Approx(1.0).epsilon(1e-12));
  for (std::size_t i = m.numel() / 2; i < m.numel(); ++i) CHECK(m[i] == 0.0);

  const Tensor viaEncode = encode(pts, {1.0, 1.0}, 64, 64);
  for (std::size_t i = 0; i < m.numel(); ++i) CHECK(m[i] == viaEncode[i]);
}

TEST_CASE("landmark heatmaps round trip through argmax") {
  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> u(20, 235);
  Landmarks l;
  for (Vec2& p : l) p = {u(rng), u(rng)};
  const Tensor stack = encode_landmarks(l, 64, 64);
  CHECK(stack.shape() == std::vector<int>{68, 64, 64});
  const Landmarks back = decode_landmarks(stack);
  for (int i = 0; i < 68; ++i) {
    CHECK(std::abs(back[i].x - l[i].x) <= 2.0);
    CHECK(std::abs(back[i].y - l[i].y) <= 2.0);
  }
}

TEST_CASE("raw stack file round trip") {
  std::mt19937_64 rng(41);
  Tensor t = Tensor::randn({3, 16, 16}, rng, 1.0);
  const std::string path = "/tmp/aunet_test_stack.bin";
  write_stack(path, t);
  const Tensor back = read_stack(path);
  REQUIRE(back.shape() == t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i)
    CHECK(back[i] == doctest::Approx(t[i]).epsilon(1e-6));
  CHECK_THROWS(read_stack("/tmp/aunet_no_such_stack.bin"));
}
