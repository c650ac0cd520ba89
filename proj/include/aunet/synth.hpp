#pragma once

#include <opencv2/core.hpp>
#include <string>
#include <vector>

#include "aunet/topology.hpp"

namespace aunet {

struct FrameSample {
  cv::Mat image;  // BGR, 8-bit
  Landmarks landmarks;
  std::vector<double> label;  // one intensity per active AU
  std::string id;
};

struct SynthFaceParams {
  double yaw_deg = 0;   // [-40, 40]
  double roll_deg = 0;  // [-10, 10]
  std::vector<int> au_ids;
  std::vector<double> au_vector;  // intensity 0..5 per AU
  std::uint64_t appearance_seed = 0;
};

// Displacement applied to one landmark per intensity level:
// offset = kLevelStepPx * level * (dx, dy).
struct AUDeformation {
  int landmark;
  double dx, dy;
};
inline constexpr double kLevelStepPx = 2.5;  // input px per intensity level

// The generator's own deformation table on the canonical face; direction
// vectors are not necessarily unit length.
const std::vector<AUDeformation>& au_deformations(int au_id);

// Canonical neutral 68-point template on a 256x256 face.
const Landmarks& canonical_landmarks();

inline constexpr int kSynthImageSize = 256;

// Deterministic schematic face render; each active AU deforms its region
// monotonically with intensity and the exact deformed landmarks are emitted.
FrameSample synth_frame(const SynthFaceParams& params);

struct ManifestRow {
  std::string image_path, landmark_path, split;
  std::vector<double> label;
  std::string id;
};

struct DatasetManifest {
  std::string base_dir;
  std::vector<int> active_aus;
  std::vector<ManifestRow> rows;
  int clipped_labels = 0;   // labels outside [0,5], clamped on ingestion
  int skipped_frames = 0;   // frames with missing landmark files

  std::vector<std::size_t> split_indices(const std::string& split) const;
  FrameSample load(std::size_t row) const;
  std::uint64_t hash() const;
};

// Writes images + landmark files + manifest.csv under out_dir. Intensities
// are 0 with probability 1/2, otherwise uniform in 1..5; 70/15/15 split.
DatasetManifest synth_dataset(int n_frames, const std::vector<int>& au_list,
                              std::uint64_t seed, const std::string& out_dir);

// Ingests a `frame_path,lmk_path[,split],au<i>...` manifest with one data row
// per frame. Out-of-range labels clip with a warning count; frames with a
// missing landmark file are skipped and counted.
DatasetManifest load_real(const std::string& manifest_path);

void write_manifest(const DatasetManifest& m, const std::string& path);

}  // namespace aunet
