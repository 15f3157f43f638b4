#pragma once

#include <filesystem>

#include "cbam/attention.hpp"
#include "cbam/data.hpp"
#include "cbam/model.hpp"
#include "json.hpp"

namespace cbam {

struct TrainConfig;

// JSON mappings for experiment definitions. Parsers reject unknown keys and
// wrongly typed values with ConfigError.
//
// Attention objects use the module config schema
//   {"arrangement", "channel_pooling", "spatial_descriptor", "kernel_size",
//    "reduction_ratio"}
// plus an optional "attention": "none" | "se" | "cbam" (default "cbam").

nlohmann::json load_json(const std::filesystem::path& path);

CbamConfig cbam_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CbamConfig& cfg);

BlockAttention attention_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BlockAttention& attention);

// {"input_channels", "stem_channels", "num_classes",
//  "blocks": [{"out_channels", "stride", "in_channels"?, "attention"?}]}.
// Blocks without an explicit attention take `default_attention`.
TinyNetSpec net_spec_from_json(const nlohmann::json& j, const BlockAttention& default_attention = {});
nlohmann::json to_json(const TinyNetSpec& spec);

TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& defaults);
nlohmann::json to_json(const TrainConfig& cfg);

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);

}  // namespace cbam
