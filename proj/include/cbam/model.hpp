#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cbam/attention.hpp"
#include "cbam/tensor.hpp"

namespace cbam {

enum class AttentionKind { None, SE, Cbam };

struct BlockAttention {
  AttentionKind kind = AttentionKind::None;
  CbamConfig cbam;  // for SE this is se_config(r)

  static BlockAttention none();
  static BlockAttention se(std::size_t reduction_ratio = 16);
  static BlockAttention with_cbam(const CbamConfig& cfg);

  // The attention module actually instantiated, if any.
  std::optional<CbamConfig> module_config() const;
  bool operator==(const BlockAttention&) const = default;
};

// conv3x3(stride) -> relu -> conv3x3 -> attention, added to the shortcut,
// then relu. Blocks that change resolution or width project the shortcut
// with a strided 1x1 conv.
struct ResidualBlockSpec {
  std::size_t in_channels = 16;
  std::size_t out_channels = 16;
  BlockAttention attention;
  std::size_t stride = 1;

  bool has_projection() const { return stride != 1 || in_channels != out_channels; }
};

struct TinyNetSpec {
  std::size_t input_channels = 3;
  std::size_t stem_channels = 16;
  std::vector<ResidualBlockSpec> blocks;
  std::size_t num_classes = 10;

  // Throws ConfigError when the channel chain breaks or a count is zero.
  void validate() const;
  std::size_t feature_channels() const;
};

// stem 3->16, blocks 16->16, 16->32 (stride 2), 32->32, 10 classes.
TinyNetSpec default_net_spec(const BlockAttention& attention, std::size_t input_channels = 3,
                             std::size_t num_classes = 10);

TinyNetSpec with_attention(TinyNetSpec spec, const BlockAttention& attention);

std::vector<ParamSlot> net_param_slots(const TinyNetSpec& spec);

// Each tensor is drawn from its own generator keyed by (seed, name), so
// variants that share a tensor name and shape share its initial values.
ParamMap init_net(const TinyNetSpec& spec, std::uint64_t seed);
ParamMap zero_net(const TinyNetSpec& spec);

// Closed-form learnable element counts.
std::size_t block_param_count(const ResidualBlockSpec& block);
std::size_t net_param_count(const TinyNetSpec& spec);

std::string block_prefix(std::size_t index);

using AttentionFn = std::function<Tensor(const Tensor&)>;

// Block body with a caller-supplied attention stage.
Tensor residual_block(const Tensor& x, const ResidualBlockSpec& block, const ParamMap& params,
                      const std::string& prefix, const AttentionFn& attention);
Tensor block_forward(const Tensor& x, const ResidualBlockSpec& block, const ParamMap& params,
                     const std::string& prefix);

struct NetOutput {
  Tensor features;  // last block output, N x C x h x w
  Tensor logits;    // N x num_classes
};

// Global average pool then fully-connected layer.
Tensor classifier_head(const Tensor& features, const TinyNetSpec& spec, const ParamMap& params);
NetOutput net_forward_detailed(const Tensor& image, const TinyNetSpec& spec, const ParamMap& params);
Tensor net_forward(const Tensor& image, const TinyNetSpec& spec, const ParamMap& params);

}  // namespace cbam
