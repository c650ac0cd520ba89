#include "aunet/model.hpp"

#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <unordered_map>

#include "aunet/codec.hpp"

namespace aunet {

using json = nlohmann::json;

std::string to_string(TransferMode m) {
  switch (m) {
    case TransferMode::scratch: return "scratch";
    case TransferMode::fine_tune: return "fine_tune";
    case TransferMode::adaptation_layers: return "adaptation_layers";
    case TransferMode::attention_maps: return "attention_maps";
    case TransferMode::reparametrisation: return "reparametrisation";
    case TransferMode::random_backbone: return "random_backbone";
  }
  return "scratch";
}

TransferMode transfer_mode_from_string(const std::string& s) {
  for (auto m : {TransferMode::scratch, TransferMode::fine_tune,
                 TransferMode::adaptation_layers, TransferMode::attention_maps,
                 TransferMode::reparametrisation,
                 TransferMode::random_backbone})
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown transfer mode: " + s);
}

void NetworkSpec::validate() const {
  // The stem and pooling shrink the input by 4x, and each hourglass level
  // halves the map again, so the input must survive depth+2 halvings.
  const int granule = 4 << depth;
  if (input_size < granule || input_size % granule != 0)
    throw std::invalid_argument("NetworkSpec: input size must be divisible by 4*2^depth");
  if (channels % 4 != 0 || channels < 8)
    throw std::invalid_argument("NetworkSpec: channels must be >=8 and 4-divisible");
  if (depth < 1 || n_out < 1 || (kernel != 1 && kernel != 3 && kernel != 7))
    throw std::invalid_argument("NetworkSpec: inconsistent channel chain");
}

// ---------------------------------------------------------------------------
// HeatmapNet

HeatmapNet::HeatmapNet(const NetworkSpec& spec, std::mt19937_64& rng)
    : spec_(spec), stem_bn_("stem.bn", spec.channels / 2) {
  spec.validate();
  const int c = spec.channels;
  stem_conv_ = std::make_unique<Conv2d>("stem.conv", 3, c / 2, 7, 2, 3, false, rng);
  conv2_ = std::make_unique<ConvBlock>("conv2", c / 2, c, spec.kernel, rng);
  conv3_ = std::make_unique<ConvBlock>("conv3", c, c, spec.kernel, rng);
  conv4_ = std::make_unique<ConvBlock>("conv4", c, c, spec.kernel, rng);
  hourglass_ = std::make_unique<Hourglass>("hg", spec.depth, c, spec.kernel, rng);
  head_block_ = std::make_unique<ConvBlock>("head.block", c, c, spec.kernel, rng);
  head_conv_ = std::make_unique<Conv2d>("head.conv", c, spec.n_out, 1, 1, 0, true, rng);
}

Tensor HeatmapNet::forward(const Tensor& x, bool train) {
  if (x.ndim() != 4 || x.dim(1) != 3 || x.dim(2) != spec_.input_size ||
      x.dim(3) != spec_.input_size)
    throw std::invalid_argument("HeatmapNet: bad input shape");
  Tensor t = stem_relu_.forward(
      stem_bn_.forward(stem_conv_->forward(x, train), train), train);
  t = conv2_->forward(t, train);
  t = pool_.forward(t, train);
  t = conv3_->forward(t, train);
  conv4_tap_ = conv4_->forward(t, train);
  t = hourglass_->forward(conv4_tap_, train);
  t = head_block_->forward(t, train);
  return head_conv_->forward(t, train);
}

Tensor HeatmapNet::backward(const Tensor& dout) {
  Tensor d = head_conv_->backward(dout);
  d = head_block_->backward(d);
  d = hourglass_->backward(d);
  d = conv4_->backward(d);
  d = conv3_->backward(d);
  d = pool_.backward(d);
  d = conv2_->backward(d);
  return stem_conv_->backward(stem_bn_.backward(stem_relu_.backward(d)));
}

void HeatmapNet::collect(std::vector<Param*>& out) {
  stem_conv_->collect(out);
  stem_bn_.collect(out);
  conv2_->collect(out);
  conv3_->collect(out);
  conv4_->collect(out);
  hourglass_->collect(out);
  head_block_->collect(out);
  head_conv_->collect(out);
}

void HeatmapNet::convs(std::vector<Conv2d*>& out) {
  out.push_back(stem_conv_.get());
  conv2_->convs(out);
  conv3_->convs(out);
  conv4_->convs(out);
  hourglass_->convs(out);
  head_block_->convs(out);
  out.push_back(head_conv_.get());
}

void HeatmapNet::replace_head(int n_out, bool zero_init, std::mt19937_64& rng) {
  if (n_out < 1) throw std::invalid_argument("replace_head: n_out < 1");
  head_conv_ = std::make_unique<Conv2d>("head.conv", spec_.channels, n_out, 1,
                                        1, 0, true, rng);
  if (zero_init) head_conv_->weight().value.zero();
  spec_.n_out = n_out;
}

void HeatmapNet::reparametrise_trunk() {
  std::vector<Conv2d*> cs;
  convs(cs);
  for (Conv2d* c : cs)
    if (c != head_conv_.get()) c->reparametrise();
}

// ---------------------------------------------------------------------------
// AdaptationNet

AdaptationNet::AdaptationNet(const AdapterSpec& spec, std::mt19937_64& rng)
    : spec_(spec), feat_bn_("adapter.feat.bn", spec.fusion_channels),
      hm_bn_("adapter.hm.bn", spec.fusion_channels) {
  const int c = spec.fusion_channels, tc = spec.trunk_channels;
  feat_conv_ = std::make_unique<Conv2d>("adapter.feat.conv", c, c, 1, 1, 0, false, rng);
  hm_conv_ = std::make_unique<Conv2d>("adapter.hm.conv", spec.heatmap_in, c, 1,
                                      1, 0, false, rng);
  entry_ = std::make_unique<ConvBlock>("adapter.entry", c, tc, 1, rng);
  hourglass_ = std::make_unique<Hourglass>("adapter.hg", spec.depth, tc, 1, rng);
  head_block_ = std::make_unique<ConvBlock>("adapter.head.block", tc, tc, 1, rng);
  head_conv_ = std::make_unique<Conv2d>("adapter.head.conv", tc, spec.n_out, 1,
                                        1, 0, true, rng);
}

Tensor AdaptationNet::forward(const Tensor& features, const Tensor& heatmaps,
                              bool train) {
  Tensor f = feat_relu_.forward(
      feat_bn_.forward(feat_conv_->forward(features, train), train), train);
  Tensor h = hm_relu_.forward(
      hm_bn_.forward(hm_conv_->forward(heatmaps, train), train), train);
  f.add_(h);  // additive fusion
  Tensor t = entry_->forward(f, train);
  t = hourglass_->forward(t, train);
  t = head_block_->forward(t, train);
  return head_conv_->forward(t, train);
}

void AdaptationNet::backward(const Tensor& dy) {
  Tensor d = head_conv_->backward(dy);
  d = head_block_->backward(d);
  d = hourglass_->backward(d);
  d = entry_->backward(d);
  feat_conv_->backward(feat_bn_.backward(feat_relu_.backward(d)));
  hm_conv_->backward(hm_bn_.backward(hm_relu_.backward(d)));
}

void AdaptationNet::collect(std::vector<Param*>& out) {
  feat_conv_->collect(out);
  feat_bn_.collect(out);
  hm_conv_->collect(out);
  hm_bn_.collect(out);
  entry_->collect(out);
  hourglass_->collect(out);
  head_block_->collect(out);
  head_conv_->collect(out);
}

void AdaptationNet::zero_heatmap_branch() {
  hm_conv_->weight().value.zero();
  hm_bn_.gamma().value.zero();
  hm_bn_.beta().value.zero();
}

// ---------------------------------------------------------------------------
// ModelBundle

Tensor ModelBundle::forward(const Tensor& batch, bool train) {
  if (!uses_backbone()) return net->forward(batch, train);

  // Backbone always runs frozen in evaluation mode.
  Tensor hm = fan->forward(batch, false);
  fan_tap_ = fan->conv4_tap();
  Tensor branch_in;
  if (mode == TransferMode::attention_maps) {
    const AUTopology topo = topology();
    const int b = hm.dim(0), mh = hm.dim(2), mw = hm.dim(3);
    const int n_aus = adapter_spec.n_out;
    branch_in = Tensor({b, n_aus, mh, mw});
    for (int n = 0; n < b; ++n) {
      Tensor one({68, mh, mw});
      std::copy_n(hm.data() + hm.idx4(n, 0, 0, 0), one.numel(), one.data());
      const Landmarks lmk = decode_landmarks(one);
      const Tensor att =
          attention_encode(au_points(lmk, topo), mh, mw, sigma0);
      std::copy_n(att.data(), att.numel(),
                  branch_in.data() + branch_in.idx4(n, 0, 0, 0));
    }
  } else {
    branch_in = hm;
  }
  return adapter->forward(fan_tap_, branch_in, train);
}

void ModelBundle::backward(const Tensor& dout) {
  if (uses_backbone())
    adapter->backward(dout);
  else
    net->backward(dout);
}

const Tensor& ModelBundle::conv4_tap() const {
  return uses_backbone() ? fan_tap_ : net->conv4_tap();
}

std::vector<Param*> ModelBundle::params() {
  std::vector<Param*> out;
  if (net) net->collect(out);
  if (fan) {
    std::vector<Param*> fp;
    fan->collect(fp);
    for (Param* p : fp) out.push_back(p);
  }
  if (adapter) adapter->collect(out);
  return out;
}

void ModelBundle::zero_grad() {
  for (Param* p : params()) p->zero_grad();
}

std::uint64_t ModelBundle::frozen_core_checksum() {
  std::uint64_t h = 1469598103934665603ULL;
  for (Param* p : params()) {
    if (p->trainable) continue;
    if (p->name.size() >= 7 &&
        p->name.compare(p->name.size() - 7, 7, ".weight") == 0)
      h = fnv1a(p->value.data(), p->value.numel() * sizeof(double), h);
  }
  return h;
}

long long count_parameters(ModelBundle& model, bool trainable_only) {
  long long n = 0;
  for (Param* p : model.params()) {
    if (p->name.find(".running_") != std::string::npos) continue;  // statistics
    if (trainable_only && !p->trainable) continue;
    n += static_cast<long long>(p->value.numel());
  }
  return n;
}

ModelBundle build_network(const NetworkSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelBundle b;
  b.mode = TransferMode::scratch;
  b.net_spec = spec;
  b.net = std::make_unique<HeatmapNet>(spec, rng);
  b.topology_text = builtin_topology().serialize();
  b.active_aus = builtin_topology().au_ids();
  return b;
}

// ---------------------------------------------------------------------------
// Checkpoint container: "AUCK" magic, u32 format version, u64 JSON header
// length, JSON header, then raw little-endian doubles in table order.

namespace {
constexpr std::uint32_t kCheckpointVersion = 1;

json spec_to_json(const NetworkSpec& s) {
  return {{"input_size", s.input_size}, {"channels", s.channels},
          {"depth", s.depth},           {"kernel", s.kernel},
          {"n_out", s.n_out}};
}

NetworkSpec spec_from_json(const json& j) {
  NetworkSpec s;
  s.input_size = j.at("input_size");
  s.channels = j.at("channels");
  s.depth = j.at("depth");
  s.kernel = j.at("kernel");
  s.n_out = j.at("n_out");
  return s;
}

json adapter_to_json(const AdapterSpec& s) {
  return {{"fusion_channels", s.fusion_channels},
          {"trunk_channels", s.trunk_channels},
          {"depth", s.depth},
          {"heatmap_in", s.heatmap_in},
          {"n_out", s.n_out}};
}

AdapterSpec adapter_from_json(const json& j) {
  AdapterSpec s;
  s.fusion_channels = j.at("fusion_channels");
  s.trunk_channels = j.at("trunk_channels");
  s.depth = j.at("depth");
  s.heatmap_in = j.at("heatmap_in");
  s.n_out = j.at("n_out");
  return s;
}
}  // namespace

void ModelBundle::save(const std::string& path) {
  std::vector<Param*> ps = params();
  json header;
  header["format_version"] = kCheckpointVersion;
  header["mode"] = to_string(mode);
  header["net_spec"] = net ? spec_to_json(net_spec) : json();
  header["fan_spec"] = fan ? spec_to_json(fan_spec) : json();
  header["adapter_spec"] = adapter ? adapter_to_json(adapter_spec) : json();
  header["norm_mean"] = norm_mean;
  header["norm_std"] = norm_std;
  header["topology"] = topology_text;
  header["topology_hash"] = AUTopology::parse(topology_text).hash();
  header["active_aus"] = active_aus;
  header["source_checkpoint"] = source_checkpoint;
  header["sigma0"] = sigma0;
  header["lr_scale_hint"] = lr_scale_hint;
  header["frozen_core_checksum"] = frozen_core_checksum();
  json table = json::array();
  for (Param* p : ps)
    table.push_back({{"name", p->name},
                     {"shape", p->value.shape()},
                     {"trainable", p->trainable}});
  header["tensors"] = table;
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write("AUCK", 4);
  std::uint32_t ver = kCheckpointVersion;
  f.write(reinterpret_cast<const char*>(&ver), sizeof ver);
  std::uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (Param* p : ps)
    f.write(reinterpret_cast<const char*>(p->value.data()),
            static_cast<std::streamsize>(p->value.numel() * sizeof(double)));
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

ModelBundle ModelBundle::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (std::string(magic, 4) != "AUCK")
    throw std::runtime_error("not a checkpoint file: " + path);
  std::uint32_t ver = 0;
  f.read(reinterpret_cast<char*>(&ver), sizeof ver);
  if (ver != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path);
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  const json header = json::parse(hs);

  ModelBundle b;
  b.mode = transfer_mode_from_string(header.at("mode"));
  b.norm_mean = header.at("norm_mean");
  b.norm_std = header.at("norm_std");
  b.topology_text = header.at("topology");
  b.active_aus = header.at("active_aus").get<std::vector<int>>();
  b.source_checkpoint = header.at("source_checkpoint");
  b.sigma0 = header.at("sigma0");
  b.lr_scale_hint = header.at("lr_scale_hint");

  std::mt19937_64 rng(0);
  if (!header.at("net_spec").is_null()) {
    b.net_spec = spec_from_json(header.at("net_spec"));
    b.net = std::make_unique<HeatmapNet>(b.net_spec, rng);
    if (b.mode == TransferMode::reparametrisation) b.net->reparametrise_trunk();
  }
  if (!header.at("fan_spec").is_null()) {
    b.fan_spec = spec_from_json(header.at("fan_spec"));
    b.fan = std::make_unique<HeatmapNet>(b.fan_spec, rng);
  }
  if (!header.at("adapter_spec").is_null()) {
    b.adapter_spec = adapter_from_json(header.at("adapter_spec"));
    b.adapter = std::make_unique<AdaptationNet>(b.adapter_spec, rng);
  }

  std::vector<Param*> ps = b.params();
  std::unordered_map<std::string, Param*> by_name;
  for (Param* p : ps) by_name[p->name] = p;
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name");
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint tensor has no slot: " + name);
    Param* p = it->second;
    const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    if (shape != p->value.shape())
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    f.read(reinterpret_cast<char*>(p->value.data()),
           static_cast<std::streamsize>(p->value.numel() * sizeof(double)));
    p->trainable = entry.at("trainable");
  }
  if (!f) throw std::runtime_error("truncated checkpoint: " + path);
  return b;
}

}  // namespace aunet
