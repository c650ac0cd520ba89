#include "aunet/transfer.hpp"

#include <stdexcept>
#include <unordered_map>

namespace aunet {

void copy_matching_params(ModelBundle& src, ModelBundle& dst) {
  std::unordered_map<std::string, Param*> by_name;
  for (Param* p : src.params()) by_name[p->name] = p;
  for (Param* p : dst.params()) {
    auto it = by_name.find(p->name);
    if (it != by_name.end() && it->second->value.shape() == p->value.shape())
      p->value = it->second->value;
  }
}

namespace {
void require_fan(const ModelBundle& fan) {
  if (!fan.net || fan.uses_backbone())
    throw std::invalid_argument("expected a plain FAN-style bundle");
  if (fan.net_spec.n_out != 68)
    throw std::invalid_argument("FAN bundle must have a 68-channel head");
}
}  // namespace

ModelBundle fine_tune_init(ModelBundle& fan, int n_aus, double lr_scale) {
  require_fan(fan);
  if (n_aus < 1) throw std::invalid_argument("fine_tune_init: n_aus < 1");
  std::mt19937_64 rng(0);
  ModelBundle b;
  b.mode = TransferMode::fine_tune;
  b.net_spec = fan.net_spec;
  b.net = std::make_unique<HeatmapNet>(b.net_spec, rng);
  copy_matching_params(fan, b);
  b.net->replace_head(n_aus, /*zero_init=*/true, rng);
  b.net_spec.n_out = n_aus;
  b.norm_mean = fan.norm_mean;
  b.norm_std = fan.norm_std;
  b.topology_text = fan.topology_text;
  b.active_aus = fan.active_aus;
  b.sigma0 = fan.sigma0;
  b.lr_scale_hint = lr_scale;
  return b;
}

ModelBundle build_adaptation(ModelBundle& fan, int n_aus,
                             HeatmapSource heatmap_source,
                             const std::vector<int>& active_aus,
                             std::uint64_t seed, int trunk_channels,
                             bool random_backbone) {
  require_fan(fan);
  std::mt19937_64 rng(seed);
  ModelBundle b;
  b.mode = random_backbone ? TransferMode::random_backbone
           : heatmap_source == HeatmapSource::attention_maps
               ? TransferMode::attention_maps
               : TransferMode::adaptation_layers;
  b.fan_spec = fan.net_spec;
  b.fan = std::make_unique<HeatmapNet>(b.fan_spec, rng);
  if (!random_backbone) {
    // borrow the trained weights; random_backbone keeps the seeded init
    std::unordered_map<std::string, Param*> by_name;
    for (Param* p : fan.params()) by_name[p->name] = p;
    std::vector<Param*> fp;
    b.fan->collect(fp);
    for (Param* p : fp) {
      auto it = by_name.find(p->name);
      if (it == by_name.end())
        throw std::runtime_error("FAN parameter missing: " + p->name);
      p->value = it->second->value;
    }
  }
  {
    std::vector<Param*> fp;
    b.fan->collect(fp);
    for (Param* p : fp) p->trainable = false;
  }

  AdapterSpec as;
  as.fusion_channels = b.fan_spec.channels;
  as.depth = b.fan_spec.depth;
  as.n_out = n_aus;
  as.heatmap_in =
      heatmap_source == HeatmapSource::attention_maps ? n_aus : 68;
  if (trunk_channels > 0)
    as.trunk_channels = trunk_channels;
  else if (b.fan_spec.channels != 128)
    as.trunk_channels = 2 * b.fan_spec.channels;  // toy-scale heuristic
  b.adapter_spec = as;
  b.adapter = std::make_unique<AdaptationNet>(as, rng);

  b.norm_mean = fan.norm_mean;
  b.norm_std = fan.norm_std;
  b.active_aus = active_aus;
  b.topology_text = builtin_topology().subset(active_aus).serialize();
  b.sigma0 = fan.sigma0;
  return b;
}

ModelBundle reparametrise(ModelBundle& fan, int n_aus, std::uint64_t seed,
                          bool keep_head) {
  require_fan(fan);
  if (n_aus < 1) throw std::invalid_argument("reparametrise: n_aus < 1");
  std::mt19937_64 rng(seed);
  ModelBundle b;
  b.mode = TransferMode::reparametrisation;
  b.net_spec = fan.net_spec;
  b.net = std::make_unique<HeatmapNet>(b.net_spec, rng);
  copy_matching_params(fan, b);
  b.net->reparametrise_trunk();
  if (!keep_head) {
    b.net->replace_head(n_aus, /*zero_init=*/true, rng);
    b.net_spec.n_out = n_aus;
  }
  b.norm_mean = fan.norm_mean;
  b.norm_std = fan.norm_std;
  b.topology_text = fan.topology_text;
  b.active_aus = fan.active_aus;
  b.sigma0 = fan.sigma0;
  return b;
}

}  // namespace aunet
