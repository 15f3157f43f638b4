#include "cbam/model.hpp"

#include <random>

#include "cbam/errors.hpp"
#include "cbam/ops.hpp"

namespace cbam {

BlockAttention BlockAttention::none() { return {}; }

BlockAttention BlockAttention::se(std::size_t reduction_ratio) {
  return {AttentionKind::SE, se_config(reduction_ratio)};
}

BlockAttention BlockAttention::with_cbam(const CbamConfig& cfg) { return {AttentionKind::Cbam, cfg}; }

std::optional<CbamConfig> BlockAttention::module_config() const {
  if (kind == AttentionKind::None) return std::nullopt;
  return cbam;
}

void TinyNetSpec::validate() const {
  if (input_channels == 0 || stem_channels == 0 || num_classes == 0) {
    throw ConfigError("network channel and class counts must be positive");
  }
  std::size_t channels = stem_channels;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    if (b.in_channels != channels) {
      throw ConfigError("block " + std::to_string(i) + " expects " + std::to_string(b.in_channels) +
                        " channels but receives " + std::to_string(channels));
    }
    if (b.out_channels == 0) throw ConfigError("block output channels must be positive");
    if (b.stride != 1 && b.stride != 2) throw ConfigError("block stride must be 1 or 2");
    if (auto cfg = b.attention.module_config()) cfg->validate();
    channels = b.out_channels;
  }
}

std::size_t TinyNetSpec::feature_channels() const {
  return blocks.empty() ? stem_channels : blocks.back().out_channels;
}

TinyNetSpec default_net_spec(const BlockAttention& attention, std::size_t input_channels,
                             std::size_t num_classes) {
  TinyNetSpec spec;
  spec.input_channels = input_channels;
  spec.stem_channels = 16;
  spec.num_classes = num_classes;
  spec.blocks = {{16, 16, attention, 1}, {16, 32, attention, 2}, {32, 32, attention, 1}};
  return spec;
}

TinyNetSpec with_attention(TinyNetSpec spec, const BlockAttention& attention) {
  for (auto& b : spec.blocks) b.attention = attention;
  return spec;
}

std::string block_prefix(std::size_t index) { return "block" + std::to_string(index) + "."; }

std::vector<ParamSlot> net_param_slots(const TinyNetSpec& spec) {
  spec.validate();
  std::vector<ParamSlot> slots;
  const std::size_t c0 = spec.input_channels, s = spec.stem_channels;
  slots.push_back({"stem.weight", {s, c0, 3, 3}, c0 * 9});
  slots.push_back({"stem.bias", {s}, 0});
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const auto& b = spec.blocks[i];
    const std::string p = block_prefix(i);
    slots.push_back({p + "conv1.weight", {b.out_channels, b.in_channels, 3, 3}, b.in_channels * 9});
    slots.push_back({p + "conv1.bias", {b.out_channels}, 0});
    slots.push_back({p + "conv2.weight", {b.out_channels, b.out_channels, 3, 3}, b.out_channels * 9});
    slots.push_back({p + "conv2.bias", {b.out_channels}, 0});
    if (b.has_projection()) {
      slots.push_back({p + "proj.weight", {b.out_channels, b.in_channels, 1, 1}, b.in_channels});
      slots.push_back({p + "proj.bias", {b.out_channels}, 0});
    }
    if (auto cfg = b.attention.module_config()) {
      auto attn = cbam_param_slots(*cfg, b.out_channels, p + "attn.");
      slots.insert(slots.end(), attn.begin(), attn.end());
    }
  }
  const std::size_t f = spec.feature_channels();
  slots.push_back({"fc.weight", {spec.num_classes, f}, f});
  slots.push_back({"fc.bias", {spec.num_classes}, 0});
  return slots;
}

ParamMap init_net(const TinyNetSpec& spec, std::uint64_t seed) {
  ParamMap params;
  for (const auto& slot : net_param_slots(spec)) {
    // FNV-1a of the name keeps per-tensor streams independent of slot order.
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : slot.name) h = (h ^ ch) * 1099511628211ULL;
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    std::mt19937_64 rng(seq);
    params[slot.name] = init_param(slot, rng);
  }
  return params;
}

ParamMap zero_net(const TinyNetSpec& spec) {
  ParamMap params;
  for (const auto& slot : net_param_slots(spec)) params[slot.name] = Tensor::zeros(slot.shape);
  return params;
}

std::size_t block_param_count(const ResidualBlockSpec& b) {
  std::size_t n = b.out_channels * b.in_channels * 9 + b.out_channels;
  n += b.out_channels * b.out_channels * 9 + b.out_channels;
  if (b.has_projection()) n += b.out_channels * b.in_channels + b.out_channels;
  if (auto cfg = b.attention.module_config()) n += param_count(*cfg, b.out_channels);
  return n;
}

std::size_t net_param_count(const TinyNetSpec& spec) {
  spec.validate();
  std::size_t n = spec.stem_channels * spec.input_channels * 9 + spec.stem_channels;
  for (const auto& b : spec.blocks) n += block_param_count(b);
  n += spec.num_classes * spec.feature_channels() + spec.num_classes;
  return n;
}

namespace {

const Tensor& param(const ParamMap& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ConfigError("missing parameter " + name);
  return it->second;
}

}  // namespace

Tensor residual_block(const Tensor& x, const ResidualBlockSpec& block, const ParamMap& params,
                      const std::string& prefix, const AttentionFn& attention) {
  if (x.rank() != 4 || x.dim(1) != block.in_channels) {
    throw ShapeMismatch("block " + prefix + " expects " + std::to_string(block.in_channels) +
                        " input channels, got " + to_string(x.shape()));
  }
  Tensor h = ops::conv2d(x, param(params, prefix + "conv1.weight"), param(params, prefix + "conv1.bias"),
                         1, block.stride);
  h = ops::relu(h);
  h = ops::conv2d(h, param(params, prefix + "conv2.weight"), param(params, prefix + "conv2.bias"), 1);
  h = attention(h);
  const Tensor shortcut =
      block.has_projection()
          ? ops::conv2d(x, param(params, prefix + "proj.weight"), param(params, prefix + "proj.bias"),
                        0, block.stride)
          : x;
  return ops::relu(ops::add(shortcut, h));
}

Tensor block_forward(const Tensor& x, const ResidualBlockSpec& block, const ParamMap& params,
                     const std::string& prefix) {
  const auto cfg = block.attention.module_config();
  if (!cfg) return residual_block(x, block, params, prefix, [](const Tensor& t) { return t; });
  const CbamParams attn = import_cbam(*cfg, params, prefix + "attn.");
  return residual_block(x, block, params, prefix,
                        [&attn](const Tensor& t) { return cbam_forward(t, attn); });
}

Tensor classifier_head(const Tensor& features, const TinyNetSpec& spec, const ParamMap& params) {
  if (features.rank() != 4 || features.dim(1) != spec.feature_channels()) {
    throw ShapeMismatch("classifier expects " + std::to_string(spec.feature_channels()) +
                        " feature channels, got " + to_string(features.shape()));
  }
  const Tensor pooled = ops::global_avg_pool_spatial(features);
  const Tensor flat = ops::reshape(pooled, {features.dim(0), features.dim(1)});
  return ops::add(ops::linear(flat, param(params, "fc.weight")), param(params, "fc.bias"));
}

NetOutput net_forward_detailed(const Tensor& image, const TinyNetSpec& spec, const ParamMap& params) {
  spec.validate();
  if (image.rank() != 4 || image.dim(1) != spec.input_channels) {
    throw ShapeMismatch("network expects N x " + std::to_string(spec.input_channels) +
                        " x H x W images, got " + to_string(image.shape()));
  }
  Tensor h = ops::relu(ops::conv2d(image, param(params, "stem.weight"), param(params, "stem.bias"), 1));
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    h = block_forward(h, spec.blocks[i], params, block_prefix(i));
  }
  Tensor logits = classifier_head(h, spec, params);
  return {h, logits};
}

Tensor net_forward(const Tensor& image, const TinyNetSpec& spec, const ParamMap& params) {
  return net_forward_detailed(image, spec, params).logits;
}

}  // namespace cbam
