#pragma once

#include "aunet/model.hpp"

namespace aunet {

enum class HeatmapSource { fan_heatmaps, attention_maps };

// Copy all FAN weights, replace the head by a fresh zero-initialised
// n_aus-output layer; lr_scale is recorded in the bundle for the trainer.
ModelBundle fine_tune_init(ModelBundle& fan, int n_aus, double lr_scale);

// Frozen FAN + trainable AdaptationHead. heatmap_source selects whether the
// heatmap branch sees the FAN's 68 landmark heatmaps or AU attention maps
// generated on the fly from their argmax. trunk_channels <= 0 picks the
// default sized for the ~1M budget.
ModelBundle build_adaptation(ModelBundle& fan, int n_aus,
                             HeatmapSource heatmap_source,
                             const std::vector<int>& active_aus,
                             std::uint64_t seed, int trunk_channels = 0,
                             bool random_backbone = false);

// Freeze every conv filter behind a trainable C_out x C_out projection
// initialised to identity; batch-norm affine terms and a fresh head train.
// keep_head retains the original 68-channel head (identity-start check).
ModelBundle reparametrise(ModelBundle& fan, int n_aus, std::uint64_t seed,
                          bool keep_head = false);

// Copies values for every parameter of `dst` that has a same-named,
// same-shaped counterpart in `src`.
void copy_matching_params(ModelBundle& src, ModelBundle& dst);

}  // namespace aunet
