#include "cbam/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cbam/errors.hpp"
#include "cbam/ops.hpp"

namespace cbam {

std::string_view to_string(ChannelPooling p) {
  switch (p) {
    case ChannelPooling::AvgOnly: return "avg";
    case ChannelPooling::MaxOnly: return "max";
    case ChannelPooling::AvgAndMax: return "avg_max";
  }
  return "?";
}

std::string_view to_string(SpatialDescriptor d) {
  switch (d) {
    case SpatialDescriptor::ChannelPool: return "channel_pool";
    case SpatialDescriptor::OneByOneConv: return "one_by_one";
  }
  return "?";
}

std::string_view to_string(Arrangement a) {
  switch (a) {
    case Arrangement::ChannelThenSpatial: return "channel_then_spatial";
    case Arrangement::SpatialThenChannel: return "spatial_then_channel";
    case Arrangement::Parallel: return "parallel";
    case Arrangement::ChannelOnly: return "channel_only";
  }
  return "?";
}

ChannelPooling parse_channel_pooling(std::string_view s) {
  for (auto p : {ChannelPooling::AvgOnly, ChannelPooling::MaxOnly, ChannelPooling::AvgAndMax}) {
    if (s == to_string(p)) return p;
  }
  throw ConfigError("unknown channel_pooling \"" + std::string(s) + "\"");
}

SpatialDescriptor parse_spatial_descriptor(std::string_view s) {
  for (auto d : {SpatialDescriptor::ChannelPool, SpatialDescriptor::OneByOneConv}) {
    if (s == to_string(d)) return d;
  }
  throw ConfigError("unknown spatial_descriptor \"" + std::string(s) + "\"");
}

Arrangement parse_arrangement(std::string_view s) {
  for (auto a : {Arrangement::ChannelThenSpatial, Arrangement::SpatialThenChannel,
                 Arrangement::Parallel, Arrangement::ChannelOnly}) {
    if (s == to_string(a)) return a;
  }
  throw ConfigError("unknown arrangement \"" + std::string(s) + "\"");
}

void CbamConfig::validate() const {
  if (reduction_ratio == 0) throw ConfigError("reduction_ratio must be positive");
  if (has_spatial() && (kernel_size == 0 || kernel_size % 2 == 0)) {
    throw ConfigError("kernel_size must be odd, got " + std::to_string(kernel_size));
  }
}

CbamConfig se_config(std::size_t reduction_ratio) {
  CbamConfig cfg;
  cfg.arrangement = Arrangement::ChannelOnly;
  cfg.channel_pooling = ChannelPooling::AvgOnly;
  cfg.reduction_ratio = reduction_ratio;
  return cfg;
}

std::size_t hidden_width(std::size_t channels, std::size_t reduction_ratio) {
  return std::max<std::size_t>(1, channels / reduction_ratio);
}

void ChannelAttentionParams::validate() const {
  if (w0.rank() != 2 || w1.rank() != 2 || w1.dim(0) != w0.dim(1) || w1.dim(1) != w0.dim(0)) {
    throw ShapeMismatch("channel MLP weights " + cbam::to_string(w0.shape()) + " and " +
                        cbam::to_string(w1.shape()) + " are inconsistent");
  }
  if (reduction_ratio == 0 || hidden_width(channels(), reduction_ratio) != hidden()) {
    throw ShapeMismatch("hidden width " + std::to_string(hidden()) + " does not match C=" +
                        std::to_string(channels()) + ", r=" + std::to_string(reduction_ratio));
  }
}

void SpatialAttentionParams::validate() const {
  if (kernel_size % 2 == 0) throw InvalidKernel("spatial kernel size must be odd");
  const std::size_t cin = descriptor == SpatialDescriptor::ChannelPool ? 2 : 1;
  if (kernel.shape() != Shape{1, cin, kernel_size, kernel_size}) {
    throw ShapeMismatch("spatial kernel " + cbam::to_string(kernel.shape()) + " for " +
                        std::string(cbam::to_string(descriptor)) + " with k=" +
                        std::to_string(kernel_size));
  }
  if (bias.shape() != Shape{1}) throw ShapeMismatch("spatial bias must have shape [1]");
  if (descriptor == SpatialDescriptor::OneByOneConv) {
    if (!reduction || reduction->rank() != 4 || reduction->dim(0) != 1 || reduction->dim(2) != 1 ||
        reduction->dim(3) != 1) {
      throw ShapeMismatch("one_by_one descriptor needs a 1 x C x 1 x 1 reduction kernel");
    }
  } else if (reduction) {
    throw ShapeMismatch("channel_pool descriptor takes no reduction kernel");
  }
}

CbamConfig CbamParams::config() const {
  CbamConfig cfg;
  cfg.arrangement = arrangement;
  cfg.channel_pooling = channel.pooling;
  cfg.reduction_ratio = channel.reduction_ratio;
  if (spatial) {
    cfg.spatial_descriptor = spatial->descriptor;
    cfg.kernel_size = spatial->kernel_size;
  }
  return cfg;
}

void CbamParams::validate() const {
  channel.validate();
  if (arrangement != Arrangement::ChannelOnly && !spatial) {
    throw ConfigError(std::string(to_string(arrangement)) + " needs spatial attention parameters");
  }
  if (spatial) {
    spatial->validate();
    if (spatial->reduction && spatial->reduction->dim(1) != channel.channels()) {
      throw ShapeMismatch("spatial reduction expects " + std::to_string(spatial->reduction->dim(1)) +
                          " channels, channel MLP has " + std::to_string(channel.channels()));
    }
  }
}

std::vector<ParamSlot> cbam_param_slots(const CbamConfig& cfg, std::size_t channels,
                                        const std::string& prefix) {
  cfg.validate();
  const std::size_t hidden = hidden_width(channels, cfg.reduction_ratio);
  const std::size_t k = cfg.kernel_size;
  std::vector<ParamSlot> slots = {
      {prefix + "channel.w0", {hidden, channels}, channels},
      {prefix + "channel.w1", {channels, hidden}, hidden},
  };
  if (cfg.has_spatial()) {
    if (cfg.spatial_descriptor == SpatialDescriptor::OneByOneConv) {
      slots.push_back({prefix + "spatial.reduce", {1, channels, 1, 1}, channels});
      slots.push_back({prefix + "spatial.kernel", {1, 1, k, k}, k * k});
    } else {
      slots.push_back({prefix + "spatial.kernel", {1, 2, k, k}, 2 * k * k});
    }
    slots.push_back({prefix + "spatial.bias", {1}, 0});
  }
  return slots;
}

void export_cbam(const CbamParams& params, const std::string& prefix, ParamMap& out) {
  out[prefix + "channel.w0"] = params.channel.w0;
  out[prefix + "channel.w1"] = params.channel.w1;
  if (params.spatial) {
    if (params.spatial->reduction) out[prefix + "spatial.reduce"] = *params.spatial->reduction;
    out[prefix + "spatial.kernel"] = params.spatial->kernel;
    out[prefix + "spatial.bias"] = params.spatial->bias;
  }
}

CbamParams import_cbam(const CbamConfig& cfg, const ParamMap& params, const std::string& prefix) {
  auto get = [&](const std::string& name) -> const Tensor& {
    auto it = params.find(prefix + name);
    if (it == params.end()) throw ConfigError("missing parameter " + prefix + name);
    return it->second;
  };
  CbamParams p;
  p.arrangement = cfg.arrangement;
  p.channel.w0 = get("channel.w0");
  p.channel.w1 = get("channel.w1");
  p.channel.reduction_ratio = cfg.reduction_ratio;
  p.channel.pooling = cfg.channel_pooling;
  if (cfg.has_spatial()) {
    SpatialAttentionParams s;
    s.descriptor = cfg.spatial_descriptor;
    s.kernel_size = cfg.kernel_size;
    if (s.descriptor == SpatialDescriptor::OneByOneConv) s.reduction = get("spatial.reduce");
    s.kernel = get("spatial.kernel");
    s.bias = get("spatial.bias");
    p.spatial = std::move(s);
  }
  return p;
}

CbamParams init_cbam(const CbamConfig& cfg, std::size_t channels, std::mt19937_64& rng) {
  ParamMap named;
  for (const auto& slot : cbam_param_slots(cfg, channels)) named[slot.name] = init_param(slot, rng);
  return import_cbam(cfg, named, "");
}

CbamParams zero_cbam(const CbamConfig& cfg, std::size_t channels) {
  ParamMap named;
  for (const auto& slot : cbam_param_slots(cfg, channels)) named[slot.name] = Tensor::zeros(slot.shape);
  return import_cbam(cfg, named, "");
}

namespace {

void check_channels(const Tensor& f, std::size_t expected, const char* what) {
  if (f.rank() != 4) throw ShapeMismatch(std::string(what) + " expects N x C x H x W input");
  if (f.dim(1) != expected) {
    throw ShapeMismatch(std::string(what) + " configured for C=" + std::to_string(expected) +
                        ", input has C=" + std::to_string(f.dim(1)));
  }
}

// W1 relu(W0 d) for a pooled descriptor d of shape N x C x 1 x 1; returns N x C.
Tensor shared_mlp(const Tensor& descriptor, const ChannelAttentionParams& p) {
  const std::size_t N = descriptor.dim(0);
  const Tensor flat = ops::reshape(descriptor, {N, p.channels()});
  return ops::linear(ops::relu(ops::linear(flat, p.w0)), p.w1);
}

}  // namespace

Tensor channel_attention_logits(const Tensor& f, const ChannelAttentionParams& p) {
  p.validate();
  check_channels(f, p.channels(), "channel_attention");
  std::optional<Tensor> logits;
  if (p.pooling != ChannelPooling::MaxOnly) {
    logits = shared_mlp(ops::global_avg_pool_spatial(f), p);
  }
  if (p.pooling != ChannelPooling::AvgOnly) {
    Tensor max_term = shared_mlp(ops::global_max_pool_spatial(f), p);
    logits = logits ? ops::add(*logits, max_term) : max_term;
  }
  return ops::reshape(*logits, {f.dim(0), p.channels(), 1, 1});
}

Tensor channel_attention(const Tensor& f, const ChannelAttentionParams& p) {
  return ops::sigmoid(channel_attention_logits(f, p));
}

Tensor spatial_attention_logits(const Tensor& f, const SpatialAttentionParams& p) {
  p.validate();
  if (f.rank() != 4) throw ShapeMismatch("spatial_attention expects N x C x H x W input");
  const std::size_t pad = (p.kernel_size - 1) / 2;
  Tensor descriptor;
  if (p.descriptor == SpatialDescriptor::ChannelPool) {
    descriptor = ops::concat_channel(ops::channel_avg_pool(f), ops::channel_max_pool(f));
  } else {
    check_channels(f, p.reduction->dim(1), "spatial_attention");
    descriptor = ops::conv2d(f, *p.reduction, 0);
  }
  return ops::conv2d(descriptor, p.kernel, p.bias, pad);
}

Tensor spatial_attention(const Tensor& f, const SpatialAttentionParams& p) {
  return ops::sigmoid(spatial_attention_logits(f, p));
}

CbamTrace cbam_forward_traced(const Tensor& f, const CbamParams& p) {
  p.validate();
  CbamTrace trace;
  switch (p.arrangement) {
    case Arrangement::ChannelOnly: {
      trace.channel_gate = channel_attention(f, p.channel);
      trace.output = ops::broadcast_mul(*trace.channel_gate, f);
      break;
    }
    case Arrangement::ChannelThenSpatial: {
      trace.channel_gate = channel_attention(f, p.channel);
      const Tensor refined = ops::broadcast_mul(*trace.channel_gate, f);
      trace.spatial_gate = spatial_attention(refined, *p.spatial);
      trace.output = ops::broadcast_mul(*trace.spatial_gate, refined);
      break;
    }
    case Arrangement::SpatialThenChannel: {
      trace.spatial_gate = spatial_attention(f, *p.spatial);
      const Tensor refined = ops::broadcast_mul(*trace.spatial_gate, f);
      trace.channel_gate = channel_attention(refined, p.channel);
      trace.output = ops::broadcast_mul(*trace.channel_gate, refined);
      break;
    }
    case Arrangement::Parallel: {
      const Tensor logits = ops::add(channel_attention_logits(f, p.channel),
                                     spatial_attention_logits(f, *p.spatial));
      trace.joint_gate = ops::sigmoid(logits);
      trace.output = ops::broadcast_mul(*trace.joint_gate, f);
      break;
    }
  }
  return trace;
}

Tensor cbam_forward(const Tensor& f, const CbamParams& p) { return cbam_forward_traced(f, p).output; }

std::size_t param_count(const CbamConfig& cfg, std::size_t channels) {
  cfg.validate();
  std::size_t count = 2 * channels * hidden_width(channels, cfg.reduction_ratio);
  if (cfg.has_spatial()) {
    const std::size_t k2 = cfg.kernel_size * cfg.kernel_size;
    count += cfg.spatial_descriptor == SpatialDescriptor::ChannelPool ? 2 * k2 + 1
                                                                       : channels + k2 + 1;
  }
  return count;
}

Tensor se_forward(const Tensor& f, const ChannelAttentionParams& p) {
  if (f.rank() != 4) throw ShapeMismatch("se_forward expects N x C x H x W input");
  const std::size_t N = f.dim(0), C = f.dim(1), HW = f.dim(2) * f.dim(3);
  if (p.w0.rank() != 2 || p.w0.dim(1) != C || p.w1.rank() != 2 || p.w1.dim(0) != C ||
      p.w1.dim(1) != p.w0.dim(0)) {
    throw ShapeMismatch("SE weights do not match C=" + std::to_string(C));
  }
  const std::size_t hidden = p.w0.dim(0);
  const auto x = f.data();
  const auto w0 = p.w0.data();
  const auto w1 = p.w1.data();
  std::vector<double> out(x.size());
  std::vector<double> squeezed(C), excited(hidden);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      double total = 0.0;
      for (std::size_t j = 0; j < HW; ++j) total += x[(n * C + c) * HW + j];
      squeezed[c] = total / static_cast<double>(HW);
    }
    for (std::size_t h = 0; h < hidden; ++h) {
      double z = 0.0;
      for (std::size_t c = 0; c < C; ++c) z += squeezed[c] * w0[h * C + c];
      excited[h] = z > 0.0 ? z : 0.0;
    }
    for (std::size_t c = 0; c < C; ++c) {
      double z = 0.0;
      for (std::size_t h = 0; h < hidden; ++h) z += excited[h] * w1[c * hidden + h];
      const double gate = std::clamp(1.0 / (1.0 + std::exp(-z)), std::numeric_limits<double>::min(),
                                     std::nextafter(1.0, 0.0));
      for (std::size_t j = 0; j < HW; ++j) {
        const std::size_t idx = (n * C + c) * HW + j;
        out[idx] = x[idx] * gate;
      }
    }
  }
  return Tensor(f.shape(), std::move(out));
}

}  // namespace cbam
