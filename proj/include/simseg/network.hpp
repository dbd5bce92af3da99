#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "simseg/layers.hpp"
#include "simseg/sim.hpp"

namespace simseg {

enum class InputMode { slice2d, stack25d };
enum class SimPlacement { input, all_encoder_stages };
enum class FusionKind { concat, sum };

std::string to_string(InputMode m);
std::string to_string(SimPlacement p);
std::string to_string(FusionKind f);
InputMode parse_input_mode(const std::string& s);
SimPlacement parse_sim_placement(const std::string& s);
FusionKind parse_fusion_kind(const std::string& s);

struct NetworkConfig {
  InputMode mode = InputMode::stack25d;
  int stack_depth = 3;  // slices per modality
  int base_width = 8;
  int depth = 3;  // encoder levels, including the bottleneck
  bool use_sim = true;
  SimPlacement sim_placement = SimPlacement::input;
  FusionKind fusion = FusionKind::concat;
  NormKind norm = NormKind::instance;
  SIMConfig sim;

  static NetworkConfig slice_2d();
  static NetworkConfig stack_25d(bool with_sim = true);

  void validate() const;
  int width(int level) const { return base_width << level; }
};

// 3x3 conv -> norm -> relu, twice.
struct ConvBlock {
  ConvLayer conv1;
  NormLayer norm1;
  ConvLayer conv2;
  NormLayer norm2;

  static ConvBlock make(int cin, int cout, NormKind norm, Rng& rng);
  ag::Var forward(const ag::Var& x, bool training);
  ag::Var forward_eval(const ag::Var& x) const;
  void collect(const std::string& prefix, ParamList& params,
               BufferList& buffers);
  ConvBlock clone() const;
};

// Merges the PET and CT bottleneck features. Implementations are selected by
// NetworkConfig::fusion; new ones plug in by subclassing.
class FusionStage {
 public:
  virtual ~FusionStage() = default;
  virtual ag::Var fuse(const ag::Var& pet, const ag::Var& ct,
                       bool training) = 0;
  virtual ag::Var fuse_eval(const ag::Var& pet, const ag::Var& ct) const = 0;
  virtual int out_channels() const = 0;
  virtual void collect(const std::string& prefix, ParamList& params,
                       BufferList& buffers) = 0;
  virtual std::unique_ptr<FusionStage> clone() const = 0;
};

std::unique_ptr<FusionStage> make_fusion_stage(FusionKind kind, int channels,
                                               NormKind norm, Rng& rng);

struct EncoderBranch {
  std::vector<SIMParams> sims;  // [0] on the stacked input, [l+1] after stage l
  std::vector<ConvBlock> stages;
};

// Dual-branch encoder-decoder. Each modality has its own encoder (optionally
// preceded by a slice interaction block); bottlenecks are fused and decoded
// with skip connections from both encoders into a one-channel logit map.
// Move-only: parameters are shared handles, use clone() for a deep copy.
class SegNetwork {
 public:
  SegNetwork(const NetworkConfig& cfg, std::uint64_t seed);
  SegNetwork(SegNetwork&&) noexcept = default;
  SegNetwork& operator=(SegNetwork&&) noexcept = default;
  SegNetwork(const SegNetwork&) = delete;
  SegNetwork& operator=(const SegNetwork&) = delete;

  SegNetwork clone() const;
  const NetworkConfig& config() const { return cfg_; }

  ag::Var forward(const ag::Var& pet, const ag::Var& ct, bool training);
  ag::Var forward_eval(const ag::Var& pet, const ag::Var& ct) const;

  // Name-ordered views; names are stable across runs ("pet.enc0.conv1.weight").
  ParamList parameters();
  BufferList buffers();
  std::size_t parameter_count() const;
  // FNV-1a over parameter and buffer names and values.
  std::uint64_t checksum() const;

  EncoderBranch& pet_branch() { return pet_; }
  EncoderBranch& ct_branch() { return ct_; }

 private:
  SegNetwork() = default;
  void check_inputs(const Shape4& pet, const Shape4& ct) const;
  void collect(ParamList& params, BufferList& buffers);

  NetworkConfig cfg_;
  EncoderBranch pet_;
  EncoderBranch ct_;
  std::unique_ptr<FusionStage> fusion_;
  std::vector<ConvBlock> decoder_;  // decoder_[l] produces level l
  ConvLayer head_;
};

SegNetwork build_network(const NetworkConfig& cfg, std::uint64_t seed);

// Evaluation-mode logits (B,1,H,W); deterministic and read-only.
Tensor forward(const SegNetwork& net, const Tensor& pet, const Tensor& ct);

// Builds a 2.5D network from a 2D one: shape-compatible parameters are copied,
// first-layer kernels are replicated across the slice channels and divided by
// the stack depth, and slice interaction blocks are initialised from `seed`.
SegNetwork inflate_2d_to_25d(const SegNetwork& net2d,
                             const NetworkConfig& cfg25d, std::uint64_t seed);

// 1 where sigmoid(logit) >= threshold, as a 0/1 tensor of the same shape.
Tensor predict_mask(const Tensor& logits, double threshold = 0.5);

// Splits a (B, 2*depth, H, W) stack ordered [CT slices..., PET slices...] into
// the (pet, ct) pair the network consumes.
std::pair<Tensor, Tensor> split_modalities(const Tensor& stack, int depth);

}  // namespace simseg
