#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "cbam/tensor.hpp"

namespace cbam {

// Which pooled descriptors feed the shared channel MLP.
enum class ChannelPooling { AvgOnly, MaxOnly, AvgAndMax };

// How the spatial branch squeezes C channels into its conv input:
// ChannelPool stacks the channel-wise mean and max maps, OneByOneConv learns
// a 1x1 C -> 1 reduction.
enum class SpatialDescriptor { ChannelPool, OneByOneConv };

enum class Arrangement { ChannelThenSpatial, SpatialThenChannel, Parallel, ChannelOnly };

std::string_view to_string(ChannelPooling p);
std::string_view to_string(SpatialDescriptor d);
std::string_view to_string(Arrangement a);
// Accept the JSON config spellings ("avg", "one_by_one", "parallel", ...).
ChannelPooling parse_channel_pooling(std::string_view s);
SpatialDescriptor parse_spatial_descriptor(std::string_view s);
Arrangement parse_arrangement(std::string_view s);

// Variant selector for one attention module. Holds no weights.
struct CbamConfig {
  Arrangement arrangement = Arrangement::ChannelThenSpatial;
  ChannelPooling channel_pooling = ChannelPooling::AvgAndMax;
  SpatialDescriptor spatial_descriptor = SpatialDescriptor::ChannelPool;
  std::size_t kernel_size = 7;
  std::size_t reduction_ratio = 16;

  bool has_spatial() const { return arrangement != Arrangement::ChannelOnly; }
  // Throws ConfigError on an even or zero kernel or a zero ratio.
  void validate() const;
  bool operator==(const CbamConfig&) const = default;
};

// The squeeze-and-excitation gate is the channel-only, average-only variant.
CbamConfig se_config(std::size_t reduction_ratio = 16);

// Hidden width of the channel MLP: max(1, floor(C / r)).
std::size_t hidden_width(std::size_t channels, std::size_t reduction_ratio);

struct ChannelAttentionParams {
  Tensor w0;  // hidden x C
  Tensor w1;  // C x hidden
  std::size_t reduction_ratio = 16;
  ChannelPooling pooling = ChannelPooling::AvgAndMax;

  std::size_t channels() const { return w0.dim(1); }
  std::size_t hidden() const { return w0.dim(0); }
  void validate() const;
};

struct SpatialAttentionParams {
  std::optional<Tensor> reduction;  // 1 x C x 1 x 1, OneByOneConv only
  Tensor kernel;                    // 1 x 2 x k x k, or 1 x 1 x k x k after reduction
  Tensor bias;                      // {1}
  std::size_t kernel_size = 7;
  SpatialDescriptor descriptor = SpatialDescriptor::ChannelPool;

  void validate() const;
};

struct CbamParams {
  ChannelAttentionParams channel;
  std::optional<SpatialAttentionParams> spatial;
  Arrangement arrangement = Arrangement::ChannelThenSpatial;

  CbamConfig config() const;
  void validate() const;
};

// Learnable tensors of a CBAM module over C channels, named under `prefix`
// ("channel.w0", "channel.w1", "spatial.kernel", ...).
std::vector<ParamSlot> cbam_param_slots(const CbamConfig& cfg, std::size_t channels,
                                        const std::string& prefix = "");

CbamParams init_cbam(const CbamConfig& cfg, std::size_t channels, std::mt19937_64& rng);
// All weights zero: every gate evaluates to 0.5.
CbamParams zero_cbam(const CbamConfig& cfg, std::size_t channels);

void export_cbam(const CbamParams& params, const std::string& prefix, ParamMap& out);
CbamParams import_cbam(const CbamConfig& cfg, const ParamMap& params, const std::string& prefix);

// Pre-sigmoid channel map, N x C x 1 x 1: the sum of W1 relu(W0 d) over the
// selected descriptors d.
Tensor channel_attention_logits(const Tensor& f, const ChannelAttentionParams& p);
Tensor channel_attention(const Tensor& f, const ChannelAttentionParams& p);

// Pre-sigmoid spatial map, N x 1 x H x W.
Tensor spatial_attention_logits(const Tensor& f, const SpatialAttentionParams& p);
Tensor spatial_attention(const Tensor& f, const SpatialAttentionParams& p);

struct CbamTrace {
  Tensor output;
  // Gates as applied. Parallel has one joint N x C x H x W gate in `joint`.
  std::optional<Tensor> channel_gate;
  std::optional<Tensor> spatial_gate;
  std::optional<Tensor> joint_gate;
};

Tensor cbam_forward(const Tensor& f, const CbamParams& p);
CbamTrace cbam_forward_traced(const Tensor& f, const CbamParams& p);

// Learnable element count of a module over C channels.
std::size_t param_count(const CbamConfig& cfg, std::size_t channels);

// f * sigmoid(W1 relu(W0 avgpool(f))), computed with plain loops and no tape.
// Ignores p.pooling.
Tensor se_forward(const Tensor& f, const ChannelAttentionParams& p);

}  // namespace cbam
