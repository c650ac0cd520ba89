#include "aunet/codec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <stdexcept>

namespace aunet {

namespace {

// Map pixel m covers input columns [4m, 4m+4); its centre sits at input
// coordinate 4m + 1.5, i.e. scaled coordinate m + 0.375. Working in pixel
// index space therefore shifts scaled points by the grid offset. This
// centring makes encoding commute exactly with horizontal image flips.
constexpr double kGridOffset = 0.375;

void splat_gaussian(Tensor& stack, int channel, Vec2 p_input, double a,
                    double sigma0) {
  if (a <= 0) return;
  const int h = stack.dim(1), w = stack.dim(2);
  const double px = 0.25 * p_input.x - kGridOffset;
  const double py = 0.25 * p_input.y - kGridOffset;
  const double sigma = sigma0 * a;
  const double radius = 3.0 * sigma;
  const int x0 = std::max(0, static_cast<int>(std::ceil(px - radius)));
  const int x1 = std::min(w - 1, static_cast<int>(std::floor(px + radius)));
  const int y0 = std::max(0, static_cast<int>(std::ceil(py - radius)));
  const int y1 = std::min(h - 1, static_cast<int>(std::floor(py + radius)));
  double* plane = stack.data() + static_cast<std::size_t>(channel) * h * w;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double d2 = (x - px) * (x - px) + (y - py) * (y - py);
      if (d2 > radius * radius) continue;  // exact zero outside 3 sigma
      const double v = a * std::exp(-d2 * inv);
      double& cell = plane[y * w + x];
      if (v > cell) cell = v;
    }
}

}  // namespace

Tensor encode(const AUPoints& points, const std::vector<double>& intensities,
              int map_h, int map_w, double sigma0) {
  if (map_h <= 0 || map_w <= 0)
    throw std::invalid_argument("encode: zero map size");
  if (points.size() != intensities.size())
    throw std::invalid_argument("encode: points/intensities length mismatch");
  const int n = static_cast<int>(points.size());
  Tensor stack({n, map_h, map_w});
  for (int j = 0; j < n; ++j) {
    const double a = intensities[j];
    if (!std::isfinite(a) || a < 0 || a > kMaxIntensity)
      throw std::invalid_argument("encode: intensity out of [0,5]");
    for (const Vec2& p : points[j].all()) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y))
        throw std::invalid_argument("encode: non-finite point");
      splat_gaussian(stack, j, p, a, sigma0);
    }
  }
  return stack;
}

Tensor attention_encode(const AUPoints& points, int map_h, int map_w,
                        double sigma0) {
  return encode(points, std::vector<double>(points.size(), 1.0), map_h, map_w,
                sigma0);
}

std::vector<DecodedAU> decode(const Tensor& stack, double threshold,
                              int scale) {
  if (stack.ndim() != 3) throw std::invalid_argument("decode: expected 3-d stack");
  if (!stack.all_finite()) throw std::invalid_argument("decode: NaN in stack");
  const int n = stack.dim(0), h = stack.dim(1), w = stack.dim(2);
  std::vector<DecodedAU> out(n);
  for (int j = 0; j < n; ++j) {
    const double* plane = stack.data() + static_cast<std::size_t>(j) * h * w;
    int best = 0;
    for (int i = 1; i < h * w; ++i)
      if (plane[i] > plane[best]) best = i;
    DecodedAU d;
    d.raw_max = plane[best];
    d.intensity = std::clamp(d.raw_max, 0.0, kMaxIntensity);
    const double off = (scale - 1) / 2.0;
    d.peak = {(best % w) * scale + off, (best / w) * scale + off};
    d.present = d.intensity >= threshold;
    out[j] = d;
  }
  return out;
}

Tensor encode_landmarks(const Landmarks& lmk, int map_h, int map_w,
                        double scale_down, double sigma) {
  Tensor stack({68, map_h, map_w});
  const double off = (1.0 - scale_down) / 2.0;  // same grid centring as encode
  for (int j = 0; j < 68; ++j) {
    const double px = scale_down * lmk[j].x - off;
    const double py = scale_down * lmk[j].y - off;
    const double radius = 3.0 * sigma;
    const int x0 = std::max(0, static_cast<int>(std::ceil(px - radius)));
    const int x1 = std::min(map_w - 1, static_cast<int>(std::floor(px + radius)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(py - radius)));
    const int y1 = std::min(map_h - 1, static_cast<int>(std::floor(py + radius)));
    double* plane = stack.data() + static_cast<std::size_t>(j) * map_h * map_w;
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double d2 = (x - px) * (x - px) + (y - py) * (y - py);
        if (d2 > radius * radius) continue;
        plane[y * map_w + x] = std::max(plane[y * map_w + x], std::exp(-d2 * inv));
      }
  }
  return stack;
}

Landmarks decode_landmarks(const Tensor& stack, int scale) {
  if (stack.ndim() != 3 || stack.dim(0) != 68)
    throw std::invalid_argument("decode_landmarks: expected 68-channel stack");
  const int h = stack.dim(1), w = stack.dim(2);
  Landmarks lmk;
  for (int j = 0; j < 68; ++j) {
    const double* plane = stack.data() + static_cast<std::size_t>(j) * h * w;
    int best = 0;
    for (int i = 1; i < h * w; ++i)
      if (plane[i] > plane[best]) best = i;
    const double off = (scale - 1) / 2.0;
    lmk[j] = {(best % w) * scale + off, (best / w) * scale + off};
  }
  return lmk;
}

void export_overlay(const cv::Mat& image, const Tensor& stack,
                    const std::string& path) {
  const int n = stack.dim(0), h = stack.dim(1), w = stack.dim(2);
  cv::Mat acc(h, w, CV_64F, cv::Scalar(0));
  for (int j = 0; j < n; ++j) {
    const double* plane = stack.data() + static_cast<std::size_t>(j) * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        acc.at<double>(y, x) = std::max(acc.at<double>(y, x), plane[y * w + x]);
  }
  cv::Mat acc8;
  acc.convertTo(acc8, CV_8U, 255.0 / kMaxIntensity);
  cv::Mat colour;
  cv::applyColorMap(acc8, colour, cv::COLORMAP_JET);
  cv::resize(colour, colour, image.size(), 0, 0, cv::INTER_LINEAR);
  cv::Mat alpha;
  cv::resize(acc8, alpha, image.size(), 0, 0, cv::INTER_LINEAR);
  cv::Mat out = image.clone();
  for (int y = 0; y < out.rows; ++y)
    for (int x = 0; x < out.cols; ++x) {
      const double a = 0.6 * alpha.at<unsigned char>(y, x) / 255.0;
      auto& px = out.at<cv::Vec3b>(y, x);
      const auto& cp = colour.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c)
        px[c] = static_cast<unsigned char>((1 - a) * px[c] + a * cp[c]);
    }
  if (!cv::imwrite(path, out))
    throw std::runtime_error("export_overlay: cannot write " + path);
}

void write_stack(const std::string& path, const Tensor& stack) {
  if (stack.ndim() != 3) throw std::invalid_argument("write_stack: expected 3-d");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_stack: cannot open " + path);
  f.write("AUHS", 4);
  std::int32_t dims[3] = {stack.dim(0), stack.dim(1), stack.dim(2)};
  f.write(reinterpret_cast<const char*>(dims), sizeof dims);
  std::vector<float> buf(stack.numel());
  for (std::size_t i = 0; i < stack.numel(); ++i)
    buf[i] = static_cast<float>(stack[i]);
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

Tensor read_stack(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_stack: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (std::string(magic, 4) != "AUHS")
    throw std::runtime_error("read_stack: bad magic in " + path);
  std::int32_t dims[3];
  f.read(reinterpret_cast<char*>(dims), sizeof dims);
  Tensor stack({dims[0], dims[1], dims[2]});
  std::vector<float> buf(stack.numel());
  f.read(reinterpret_cast<char*>(buf.data()),
         static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw std::runtime_error("read_stack: truncated file " + path);
  for (std::size_t i = 0; i < stack.numel(); ++i) stack[i] = buf[i];
  return stack;
}

}  // namespace aunet
