#pragma once

#include <cstddef>
#include <random>

#include "cbam/attention.hpp"
#include "cbam/tensor.hpp"

namespace cbam::gen {

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline bool coin(std::mt19937_64& rng) { return pick(rng, 0, 1) == 1; }

inline Tensor values(const Shape& shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  return Tensor::uniform(shape, rng, lo, hi);
}

inline Shape nchw(std::mt19937_64& rng, std::size_t max_n = 2, std::size_t max_c = 3,
                  std::size_t max_hw = 8) {
  return {pick(rng, 1, max_n), pick(rng, 1, max_c), pick(rng, 1, max_hw), pick(rng, 1, max_hw)};
}

// Same shape as `full` with a random subset of axes collapsed to 1.
inline Shape broadcastable(const Shape& full, std::mt19937_64& rng) {
  Shape s = full;
  for (auto& d : s)
    if (coin(rng)) d = 1;
  return s;
}

inline CbamConfig cbam_config(std::mt19937_64& rng) {
  static const Arrangement arrangements[] = {Arrangement::ChannelThenSpatial,
                                             Arrangement::SpatialThenChannel,
                                             Arrangement::Parallel, Arrangement::ChannelOnly};
  static const ChannelPooling poolings[] = {ChannelPooling::AvgOnly, ChannelPooling::MaxOnly,
                                            ChannelPooling::AvgAndMax};
  CbamConfig cfg;
  cfg.arrangement = arrangements[pick(rng, 0, 3)];
  cfg.channel_pooling = poolings[pick(rng, 0, 2)];
  cfg.spatial_descriptor =
      coin(rng) ? SpatialDescriptor::ChannelPool : SpatialDescriptor::OneByOneConv;
  cfg.kernel_size = 2 * pick(rng, 0, 3) + 1;
  cfg.reduction_ratio = pick(rng, 1, 16);
  return cfg;
}

}  // namespace cbam::gen
