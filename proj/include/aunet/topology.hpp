#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "aunet/tensor.hpp"

namespace aunet {

struct Vec2 {
  double x = 0, y = 0;
};

using Landmarks = std::array<Vec2, 68>;

// One row of the AU/landmark correspondence table. Each non-empty cell
// contributes one Gaussian placed at the centroid of its landmark indices.
struct AUSpec {
  int au_id = 0;
  std::vector<int> left, right, centre;

  bool valid() const;
};

// Up to three Gaussian centres per AU, in input-image pixel units.
struct AUPointSet {
  std::optional<Vec2> left, right, centre;

  int count() const {
    return (left ? 1 : 0) + (right ? 1 : 0) + (centre ? 1 : 0);
  }
  std::vector<Vec2> all() const {
    std::vector<Vec2> v;
    if (left) v.push_back(*left);
    if (right) v.push_back(*right);
    if (centre) v.push_back(*centre);
    return v;
  }
};

using AUPoints = std::vector<AUPointSet>;  // one entry per AU, topology order

class AUTopology {
public:
  AUTopology(std::vector<AUSpec> specs, std::array<int, 68> landmark_symmetry);

  const std::vector<AUSpec>& specs() const { return specs_; }
  int n_aus() const { return static_cast<int>(specs_.size()); }
  const AUSpec& spec(int au_id) const;  // lookup by AU number
  const AUSpec& spec_at(int channel) const { return specs_.at(channel); }
  int channel_of(int au_id) const;
  int symmetric_landmark(int i) const { return landmark_symmetry_.at(i); }
  const std::array<int, 68>& landmark_symmetry() const {
    return landmark_symmetry_;
  }

  // Restrict to a subset of AU ids, preserving the table's channel order.
  AUTopology subset(const std::vector<int>& au_ids) const;
  std::vector<int> au_ids() const;

  std::string serialize() const;  // `au_id; left; right; centre` rows
  static AUTopology parse(const std::string& text);
  std::uint64_t hash() const;

private:
  std::vector<AUSpec> specs_;
  std::array<int, 68> landmark_symmetry_;
};

// The 14-AU table plus the standard 68-point horizontal-flip pairing.
const AUTopology& builtin_topology();

// Centroid of each non-empty cell; landmarks are 0-based input-image pixels.
AUPoints au_points(const Landmarks& landmarks, const AUTopology& topology);

// Mirror x about the image midline and permute indices by the symmetry map.
Landmarks flip_remap(const Landmarks& landmarks, double image_width,
                     const AUTopology& topology);

Landmarks read_landmark_file(const std::string& path);
void write_landmark_file(const std::string& path, const Landmarks& lmk);

}  // namespace aunet
