#pragma once

#include <opencv2/core.hpp>
#include <string>
#include <vector>

#include "aunet/tensor.hpp"
#include "aunet/topology.hpp"

namespace aunet {

inline constexpr double kMaxIntensity = 5.0;
inline constexpr double kPresenceThreshold = 0.1;
inline constexpr double kDefaultSigma0 = 1.0;  // heatmap px per intensity level
inline constexpr int kHeatmapScale = 4;        // input px per heatmap px

struct DecodedAU {
  double intensity = 0;  // peak value clamped to [0, 5]
  double raw_max = 0;
  Vec2 peak;             // input-image pixel units
  bool present = false;
};

// Variable-size Gaussian heatmaps: each point contributes a Gaussian with
// peak value a and sigma = sigma0 * a heatmap px, truncated to zero outside
// a 3-sigma box; channels compose point contributions by pixel-wise max.
// Points are in input-image pixels and are scaled by 1/4 internally.
// Returns a (n_aus, map_h, map_w) tensor.
Tensor encode(const AUPoints& points, const std::vector<double>& intensities,
              int map_h, int map_w, double sigma0 = kDefaultSigma0);

// encode with every intensity forced to 1; independent of labels.
Tensor attention_encode(const AUPoints& points, int map_h, int map_w,
                        double sigma0 = kDefaultSigma0);

// Per-channel argmax. Map pixel m covers input columns [4m, 4m+4), so the
// peak maps back to the cell centre 4m + 1.5; points on cell centres
// round-trip exactly and the worst-case location error is half a cell.
std::vector<DecodedAU> decode(const Tensor& stack,
                              double threshold = kPresenceThreshold,
                              int scale = kHeatmapScale);

// Fixed-width landmark heatmaps (sigma = sigma0, amplitude 1), 68 channels.
Tensor encode_landmarks(const Landmarks& lmk, int map_h, int map_w,
                        double scale_down = 0.25, double sigma = 1.0);

// Argmax landmark extraction from 68-channel heatmaps, in input pixels.
Landmarks decode_landmarks(const Tensor& stack, int scale = kHeatmapScale);

// Alpha-blends the upsampled heatmaps over the frame (PNG-class output).
void export_overlay(const cv::Mat& image, const Tensor& stack,
                    const std::string& path);

// Raw stack container: "AUHS" magic, int32 {n, h, w}, row-major float32.
void write_stack(const std::string& path, const Tensor& stack);
Tensor read_stack(const std::string& path);

}  // namespace aunet
