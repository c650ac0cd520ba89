#pragma once

#include <cassert>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace aunet {

// Dense row-major tensor of doubles. Shapes are small (<= 4 dims in practice).
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(numel_of(shape_), 0.0);
  }
  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel_of(shape_))
      throw std::invalid_argument("Tensor: data size does not match shape");
  }

  static std::size_t numel_of(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  int ndim() const { return static_cast<int>(shape_.size()); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 4-d accessor (n, c, h, w)
  double& at(int n, int c, int h, int w) {
    return data_[idx4(n, c, h, w)];
  }
  double at(int n, int c, int h, int w) const {
    return data_[idx4(n, c, h, w)];
  }
  std::size_t idx4(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(0.0); }

  void reshape(std::vector<int> shape) {
    if (numel_of(shape) != data_.size())
      throw std::invalid_argument("Tensor::reshape: element count mismatch");
    shape_ = std::move(shape);
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void add_(const Tensor& o, double scale = 1.0) {
    assert(o.numel() == numel());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * o.data_[i];
  }
  void scale_(double s) {
    for (double& v : data_) v *= s;
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  static Tensor randn(std::vector<int> shape, std::mt19937_64& rng, double stddev) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> d(0.0, stddev);
    for (std::size_t i = 0; i < t.numel(); ++i) t.data_[i] = d(rng);
    return t;
  }

private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

// FNV-1a over the raw bytes; used for frozen-tensor checksums and dataset hashes.
inline std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t checksum(const Tensor& t) {
  return fnv1a(t.data(), t.numel() * sizeof(double));
}

}  // namespace aunet
