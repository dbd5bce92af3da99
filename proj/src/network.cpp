#include "simseg/network.hpp"

#include <cmath>
#include <cstring>
#include <map>
#include <sstream>

#include "simseg/errors.hpp"
#include "simseg/ops.hpp"

namespace simseg {

std::string to_string(InputMode m) {
  return m == InputMode::slice2d ? "2d" : "2.5d";
}
std::string to_string(SimPlacement p) {
  return p == SimPlacement::input ? "input" : "all_encoder_stages";
}
std::string to_string(FusionKind f) {
  return f == FusionKind::concat ? "concat" : "sum";
}
InputMode parse_input_mode(const std::string& s) {
  if (s == "2d" || s == "2D") return InputMode::slice2d;
  if (s == "2.5d" || s == "2.5D") return InputMode::stack25d;
  throw ConfigError("unknown network mode '" + s + "'");
}
SimPlacement parse_sim_placement(const std::string& s) {
  if (s == "input") return SimPlacement::input;
  if (s == "all_encoder_stages") return SimPlacement::all_encoder_stages;
  throw ConfigError("unknown sim placement '" + s + "'");
}
FusionKind parse_fusion_kind(const std::string& s) {
  if (s == "concat") return FusionKind::concat;
  if (s == "sum") return FusionKind::sum;
  throw ConfigError("unknown fusion kind '" + s + "'");
}

NetworkConfig NetworkConfig::slice_2d() {
  NetworkConfig c;
  c.mode = InputMode::slice2d;
  c.stack_depth = 1;
  c.use_sim = false;
  c.sim.norm = c.norm;
  return c;
}

NetworkConfig NetworkConfig::stack_25d(bool with_sim) {
  NetworkConfig c;
  c.mode = InputMode::stack25d;
  c.stack_depth = 3;
  c.use_sim = with_sim;
  c.sim.norm = c.norm;
  return c;
}

void NetworkConfig::validate() const {
  if (mode == InputMode::slice2d && stack_depth != 1)
    throw ConfigError("2D mode requires stack_depth 1");
  if (mode == InputMode::stack25d && stack_depth != 3)
    throw ConfigError("2.5D mode requires stack_depth 3");
  if (mode == InputMode::slice2d && use_sim)
    throw ConfigError("slice interaction blocks need 2.5D input");
  if (depth < 2) throw ConfigError("network depth must be >= 2");
  if (base_width < 1) throw ConfigError("base_width must be >= 1");
  if (use_sim) sim.validate();
}

// --- ConvBlock ---------------------------------------------------------------

ConvBlock ConvBlock::make(int cin, int cout, NormKind norm, Rng& rng) {
  ConvBlock b;
  b.conv1 = ConvLayer::he_normal(cin, cout, 3, false, rng);
  b.norm1 = NormLayer::make(cout, norm);
  b.conv2 = ConvLayer::he_normal(cout, cout, 3, false, rng);
  b.norm2 = NormLayer::make(cout, norm);
  return b;
}

ag::Var ConvBlock::forward(const ag::Var& x, bool training) {
  ag::Var h = ag::relu(norm1.forward(conv1.forward(x), training));
  return ag::relu(norm2.forward(conv2.forward(h), training));
}

ag::Var ConvBlock::forward_eval(const ag::Var& x) const {
  ag::Var h = ag::relu(norm1.forward_eval(conv1.forward(x)));
  return ag::relu(norm2.forward_eval(conv2.forward(h)));
}

void ConvBlock::collect(const std::string& prefix, ParamList& params,
                        BufferList& buffers) {
  conv1.collect(prefix + ".conv1", params);
  norm1.collect(prefix + ".norm1", params, buffers);
  conv2.collect(prefix + ".conv2", params);
  norm2.collect(prefix + ".norm2", params, buffers);
}

ConvBlock ConvBlock::clone() const {
  return {conv1.clone(), norm1.clone(), conv2.clone(), norm2.clone()};
}

// --- fusion ------------------------------------------------------------------

namespace {

// concat: [pet, ct] -> 1x1 conv (2C -> C) -> norm -> relu
// sum:    pet + ct  -> 1x1 conv (C -> C)  -> norm -> relu
class MixFusion final : public FusionStage {
 public:
  MixFusion(FusionKind kind, int channels, NormKind norm, Rng& rng)
      : kind_(kind), channels_(channels) {
    const int in = kind == FusionKind::concat ? 2 * channels : channels;
    mix_ = ConvLayer::he_normal(in, channels, 1, norm == NormKind::identity, rng);
    norm_ = NormLayer::make(channels, norm);
  }

  ag::Var fuse(const ag::Var& pet, const ag::Var& ct, bool training) override {
    return ag::relu(norm_.forward(mix_.forward(merge(pet, ct)), training));
  }
  ag::Var fuse_eval(const ag::Var& pet, const ag::Var& ct) const override {
    return ag::relu(norm_.forward_eval(mix_.forward(merge(pet, ct))));
  }
  int out_channels() const override { return channels_; }
  void collect(const std::string& prefix, ParamList& params,
               BufferList& buffers) override {
    mix_.collect(prefix + ".mix", params);
    norm_.collect(prefix + ".norm", params, buffers);
  }
  std::unique_ptr<FusionStage> clone() const override {
    auto c = std::unique_ptr<MixFusion>(new MixFusion(*this));
    c->mix_ = mix_.clone();
    c->norm_ = norm_.clone();
    return c;
  }

 private:
  MixFusion(const MixFusion&) = default;

  ag::Var merge(const ag::Var& pet, const ag::Var& ct) const {
    if (kind_ == FusionKind::sum) return ag::add(pet, ct);
    const ag::Var parts[] = {pet, ct};
    return ag::concat_channels(parts);
  }

  FusionKind kind_;
  int channels_;
  ConvLayer mix_;
  NormLayer norm_;
};

void fnv_mix(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

bool is_sim_param(const std::string& name) {
  return name.find(".sim") != std::string::npos;
}

bool is_first_layer(const std::string& name) {
  return name == "pet.enc0.conv1.weight" || name == "ct.enc0.conv1.weight";
}

}  // namespace

std::unique_ptr<FusionStage> make_fusion_stage(FusionKind kind, int channels,
                                               NormKind norm, Rng& rng) {
  return std::make_unique<MixFusion>(kind, channels, norm, rng);
}

// --- SegNetwork ----------------------------------------------------------------

SegNetwork::SegNetwork(const NetworkConfig& cfg, std::uint64_t seed)
    : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  std::uint64_t sim_index = 0;
  auto build_branch = [&](EncoderBranch& br) {
    if (cfg_.use_sim) {
      br.sims.push_back(init_sim_params(cfg_.stack_depth, cfg_.sim,
                                        derive_seed(seed, 1, sim_index++)));
    }
    int in = cfg_.stack_depth;
    for (int l = 0; l < cfg_.depth; ++l) {
      br.stages.push_back(ConvBlock::make(in, cfg_.width(l), cfg_.norm, rng));
      in = cfg_.width(l);
      if (cfg_.use_sim && cfg_.sim_placement == SimPlacement::all_encoder_stages)
        br.sims.push_back(init_sim_params(in, cfg_.sim,
                                          derive_seed(seed, 1, sim_index++)));
    }
  };
  build_branch(pet_);
  build_branch(ct_);
  const int bottleneck = cfg_.width(cfg_.depth - 1);
  fusion_ = make_fusion_stage(cfg_.fusion, bottleneck, cfg_.norm, rng);
  decoder_.resize(cfg_.depth - 1);
  for (int l = cfg_.depth - 2; l >= 0; --l) {
    const int in = cfg_.width(l + 1) + 2 * cfg_.width(l);
    decoder_[l] = ConvBlock::make(in, cfg_.width(l), cfg_.norm, rng);
  }
  head_ = ConvLayer::he_normal(cfg_.width(0), 1, 1, true, rng);
}

SegNetwork SegNetwork::clone() const {
  SegNetwork c;
  c.cfg_ = cfg_;
  for (auto [src, dst] : {std::pair{&pet_, &c.pet_}, std::pair{&ct_, &c.ct_}}) {
    for (const auto& s : src->sims) dst->sims.push_back(s.clone());
    for (const auto& s : src->stages) dst->stages.push_back(s.clone());
  }
  c.fusion_ = fusion_->clone();
  for (const auto& d : decoder_) c.decoder_.push_back(d.clone());
  c.head_ = head_.clone();
  return c;
}

void SegNetwork::check_inputs(const Shape4& pet, const Shape4& ct) const {
  if (!(pet == ct))
    throw InputError("PET " + pet.str() + " and CT " + ct.str() +
                     " inputs differ in shape");
  if (pet.c != cfg_.stack_depth)
    throw InputError("network expects " + std::to_string(cfg_.stack_depth) +
                     " slice channels per modality, got " +
                     std::to_string(pet.c));
  const int div = 1 << (cfg_.depth - 1);
  if (pet.h % div != 0 || pet.w % div != 0)
    throw InputError("spatial size " + std::to_string(pet.h) + "x" +
                     std::to_string(pet.w) + " must be divisible by " +
                     std::to_string(div));
}

ag::Var SegNetwork::forward(const ag::Var& pet, const ag::Var& ct,
                            bool training) {
  check_inputs(pet.shape(), ct.shape());
  auto encode = [&](EncoderBranch& br, const ag::Var& input,
                    std::vector<ag::Var>& skips) {
    ag::Var h = input;
    std::size_t sim = 0;
    if (cfg_.use_sim) h = sim_forward(h, br.sims[sim++], cfg_.sim, training);
    for (int l = 0; l < cfg_.depth; ++l) {
      if (l > 0) h = ag::max_pool2(h);
      h = br.stages[l].forward(h, training);
      if (cfg_.use_sim && cfg_.sim_placement == SimPlacement::all_encoder_stages)
        h = sim_forward(h, br.sims[sim++], cfg_.sim, training);
      skips.push_back(h);
    }
  };
  std::vector<ag::Var> pet_skips, ct_skips;
  encode(pet_, pet, pet_skips);
  encode(ct_, ct, ct_skips);
  ag::Var h = fusion_->fuse(pet_skips.back(), ct_skips.back(), training);
  for (int l = cfg_.depth - 2; l >= 0; --l) {
    const ag::Var parts[] = {ag::upsample2(h), pet_skips[l], ct_skips[l]};
    h = decoder_[l].forward(ag::concat_channels(parts), training);
  }
  return head_.forward(h);
}

ag::Var SegNetwork::forward_eval(const ag::Var& pet, const ag::Var& ct) const {
  check_inputs(pet.shape(), ct.shape());
  auto encode = [&](const EncoderBranch& br, const ag::Var& input,
                    std::vector<ag::Var>& skips) {
    ag::Var h = input;
    std::size_t sim = 0;
    if (cfg_.use_sim) h = sim_forward_eval(h, br.sims[sim++], cfg_.sim);
    for (int l = 0; l < cfg_.depth; ++l) {
      if (l > 0) h = ag::max_pool2(h);
      h = br.stages[l].forward_eval(h);
      if (cfg_.use_sim && cfg_.sim_placement == SimPlacement::all_encoder_stages)
        h = sim_forward_eval(h, br.sims[sim++], cfg_.sim);
      skips.push_back(h);
    }
  };
  std::vector<ag::Var> pet_skips, ct_skips;
  encode(pet_, pet, pet_skips);
  encode(ct_, ct, ct_skips);
  ag::Var h = fusion_->fuse_eval(pet_skips.back(), ct_skips.back());
  for (int l = cfg_.depth - 2; l >= 0; --l) {
    const ag::Var parts[] = {ag::upsample2(h), pet_skips[l], ct_skips[l]};
    h = decoder_[l].forward_eval(ag::concat_channels(parts));
  }
  return head_.forward(h);
}

void SegNetwork::collect(ParamList& params, BufferList& buffers) {
  for (auto [name, br] : {std::pair{"pet", &pet_}, std::pair{"ct", &ct_}}) {
    const std::string prefix(name);
    for (std::size_t i = 0; i < br->sims.size(); ++i)
      br->sims[i].collect(prefix + ".sim" + std::to_string(i), params, buffers);
    for (std::size_t l = 0; l < br->stages.size(); ++l)
      br->stages[l].collect(prefix + ".enc" + std::to_string(l), params,
                            buffers);
  }
  fusion_->collect("fusion", params, buffers);
  for (std::size_t l = 0; l < decoder_.size(); ++l)
    decoder_[l].collect("dec" + std::to_string(l), params, buffers);
  head_.collect("head", params);
}

ParamList SegNetwork::parameters() {
  ParamList params;
  BufferList buffers;
  collect(params, buffers);
  return params;
}

BufferList SegNetwork::buffers() {
  ParamList params;
  BufferList buffers;
  collect(params, buffers);
  return buffers;
}

std::size_t SegNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : const_cast<SegNetwork*>(this)->parameters())
    n += v.value().size();
  return n;
}

std::uint64_t SegNetwork::checksum() const {
  auto* self = const_cast<SegNetwork*>(this);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, v] : self->parameters()) {
    fnv_mix(h, name.data(), name.size());
    fnv_mix(h, v.value().data(), v.value().size() * sizeof(double));
  }
  for (const auto& [name, t] : self->buffers()) {
    fnv_mix(h, name.data(), name.size());
    fnv_mix(h, t->data(), t->size() * sizeof(double));
  }
  return h;
}

SegNetwork build_network(const NetworkConfig& cfg, std::uint64_t seed) {
  return SegNetwork(cfg, seed);
}

Tensor forward(const SegNetwork& net, const Tensor& pet, const Tensor& ct) {
  ag::NoGradGuard guard;
  return net.forward_eval(ag::constant(pet), ag::constant(ct)).value();
}

SegNetwork inflate_2d_to_25d(const SegNetwork& net2d,
                             const NetworkConfig& cfg25d, std::uint64_t seed) {
  const NetworkConfig& src_cfg = net2d.config();
  if (src_cfg.mode != InputMode::slice2d)
    throw TransplantError("inflation source must be a 2D network");
  if (cfg25d.mode != InputMode::stack25d)
    throw TransplantError("inflation target must be a 2.5D configuration");
  if (src_cfg.depth != cfg25d.depth || src_cfg.base_width != cfg25d.base_width)
    throw TransplantError("inflation requires matching depth and base_width");

  SegNetwork out = build_network(cfg25d, seed);
  auto* src = const_cast<SegNetwork*>(&net2d);
  std::map<std::string, ag::Var> src_params;
  for (auto& [name, v] : src->parameters()) src_params.emplace(name, v);
  std::map<std::string, Tensor*> src_buffers;
  for (auto& [name, t] : src->buffers()) src_buffers.emplace(name, t);

  std::vector<std::string> offending;
  std::map<std::string, bool> used;
  const int depth = cfg25d.stack_depth;
  for (auto& [name, dst] : out.parameters()) {
    if (is_sim_param(name)) continue;
    auto it = src_params.find(name);
    if (it == src_params.end()) {
      offending.push_back(name + " (missing in source)");
      continue;
    }
    used[name] = true;
    const Tensor& s = it->second.value();
    Tensor& d = dst.mutable_value();
    if (is_first_layer(name)) {
      const Shape4 ss = s.shape();
      const Shape4 ds = d.shape();
      if (ss.c != 1 || ds.c != depth || ss.n != ds.n || ss.h != ds.h ||
          ss.w != ds.w) {
        offending.push_back(name + " " + ss.str() + " -> " + ds.str());
        continue;
      }
      for (int o = 0; o < ds.n; ++o)
        for (int c = 0; c < depth; ++c)
          for (int i = 0; i < ds.h; ++i)
            for (int j = 0; j < ds.w; ++j)
              d(o, c, i, j) = s(o, 0, i, j) / static_cast<double>(depth);
      continue;
    }
    if (!(s.shape() == d.shape())) {
      offending.push_back(name + " " + s.shape().str() + " -> " +
                          d.shape().str());
      continue;
    }
    d = s;
  }
  for (auto& [name, dst] : out.buffers()) {
    if (is_sim_param(name)) continue;
    auto it = src_buffers.find(name);
    if (it == src_buffers.end() || !(it->second->shape() == dst->shape())) {
      offending.push_back(name + " (buffer)");
      continue;
    }
    used[name] = true;
    *dst = *it->second;
  }
  for (const auto& [name, v] : src_params)
    if (!used.count(name)) offending.push_back(name + " (unused in target)");

  if (!offending.empty()) {
    std::ostringstream os;
    os << "cannot transplant " << offending.size() << " parameter(s):";
    for (const auto& o : offending) os << " " << o << ";";
    throw TransplantError(os.str());
  }
  return out;
}

Tensor predict_mask(const Tensor& logits, double threshold) {
  Tensor out(logits.shape());
  // sigmoid(l) >= t  <=>  l >= log(t / (1 - t)) on (0, 1).
  if (threshold >= 1.0) return out;
  if (threshold <= 0.0) {
    out.fill(1.0);
    return out;
  }
  const double cut = std::log(threshold / (1.0 - threshold));
  for (std::size_t i = 0; i < logits.size(); ++i)
    out[i] = logits[i] >= cut ? 1.0 : 0.0;
  return out;
}

std::pair<Tensor, Tensor> split_modalities(const Tensor& stack, int depth) {
  if (stack.c() != 2 * depth)
    throw InputError("expected " + std::to_string(2 * depth) +
                     " channels, got " + std::to_string(stack.c()));
  return {stack.channel_slice(depth, depth), stack.channel_slice(0, depth)};
}

}  // namespace simseg
