#include "cbam/config.hpp"

#include <fstream>
#include <initializer_list>
#include <string_view>

#include "cbam/errors.hpp"
#include "cbam/train.hpp"

namespace cbam {

using nlohmann::json;

namespace {

void require_object(const json& j, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
}

void reject_unknown(const json& j, std::initializer_list<std::string_view> allowed, const char* what) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key \"" + key + "\" in " + what);
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    if constexpr (std::is_unsigned_v<T>) {
      if (!it->is_number_unsigned()) throw ConfigError(std::string(key) + " must be a non-negative integer");
    }
    return it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for ") + key + ": " + e.what());
  }
}

std::string get_string(const json& j, const char* key, std::string fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_string()) throw ConfigError(std::string(key) + " must be a string");
  return it->get<std::string>();
}

}  // namespace

json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

namespace {


CbamConfig parse_cbam_fields(const json& j) {
  CbamConfig cfg;
  cfg.arrangement = parse_arrangement(get_string(j, "arrangement", std::string(to_string(cfg.arrangement))));
  cfg.channel_pooling =
      parse_channel_pooling(get_string(j, "channel_pooling", std::string(to_string(cfg.channel_pooling))));
  cfg.spatial_descriptor = parse_spatial_descriptor(
      get_string(j, "spatial_descriptor", std::string(to_string(cfg.spatial_descriptor))));
  cfg.kernel_size = get_or<std::size_t>(j, "kernel_size", cfg.kernel_size);
  cfg.reduction_ratio = get_or<std::size_t>(j, "reduction_ratio", cfg.reduction_ratio);
  cfg.validate();
  return cfg;
}

}  // namespace

CbamConfig cbam_config_from_json(const json& j) {
  require_object(j, "attention config");
  reject_unknown(j,
                 {"attention", "arrangement", "channel_pooling", "spatial_descriptor", "kernel_size",
                  "reduction_ratio"},
                 "attention config");
  return parse_cbam_fields(j);
}

json to_json(const CbamConfig& cfg) {
  return json{{"arrangement", to_string(cfg.arrangement)},
              {"channel_pooling", to_string(cfg.channel_pooling)},
              {"spatial_descriptor", to_string(cfg.spatial_descriptor)},
              {"kernel_size", cfg.kernel_size},
              {"reduction_ratio", cfg.reduction_ratio}};
}

BlockAttention attention_from_json(const json& j) {
  require_object(j, "attention config");
  const std::string kind = get_string(j, "attention", "cbam");
  if (kind == "none") {
    reject_unknown(j, {"attention", "name"}, "attention config");
    return BlockAttention::none();
  }
  if (kind == "se") {
    reject_unknown(j, {"attention", "reduction_ratio", "name"}, "attention config");
    return BlockAttention::se(get_or<std::size_t>(j, "reduction_ratio", 16));
  }
  if (kind != "cbam") throw ConfigError("unknown attention \"" + kind + "\"");
  json fields = j;
  fields.erase("name");
  return BlockAttention::with_cbam(cbam_config_from_json(fields));
}

json to_json(const BlockAttention& attention) {
  switch (attention.kind) {
    case AttentionKind::None: return json{{"attention", "none"}};
    case AttentionKind::SE: return json{{"attention", "se"}, {"reduction_ratio", attention.cbam.reduction_ratio}};
    case AttentionKind::Cbam: break;
  }
  json j = to_json(attention.cbam);
  j["attention"] = "cbam";
  return j;
}

TinyNetSpec net_spec_from_json(const json& j, const BlockAttention& default_attention) {
  require_object(j, "model");
  reject_unknown(j, {"input_channels", "stem_channels", "num_classes", "blocks"}, "model");
  TinyNetSpec spec;
  spec.input_channels = get_or<std::size_t>(j, "input_channels", spec.input_channels);
  spec.stem_channels = get_or<std::size_t>(j, "stem_channels", spec.stem_channels);
  spec.num_classes = get_or<std::size_t>(j, "num_classes", spec.num_classes);
  if (auto it = j.find("blocks"); it != j.end()) {
    if (!it->is_array()) throw ConfigError("blocks must be an array");
    std::size_t channels = spec.stem_channels;
    for (const auto& b : *it) {
      require_object(b, "block");
      reject_unknown(b, {"in_channels", "out_channels", "stride", "attention"}, "block");
      ResidualBlockSpec block;
      block.in_channels = get_or<std::size_t>(b, "in_channels", channels);
      block.out_channels = get_or<std::size_t>(b, "out_channels", block.in_channels);
      block.stride = get_or<std::size_t>(b, "stride", 1);
      block.attention = b.contains("attention") ? attention_from_json(b.at("attention")) : default_attention;
      channels = block.out_channels;
      spec.blocks.push_back(block);
    }
  } else {
    spec = default_net_spec(default_attention, spec.input_channels, spec.num_classes);
    spec.stem_channels = get_or<std::size_t>(j, "stem_channels", spec.stem_channels);
  }
  spec.validate();
  return spec;
}

json to_json(const TinyNetSpec& spec) {
  json blocks = json::array();
  for (const auto& b : spec.blocks) {
    blocks.push_back({{"in_channels", b.in_channels},
                      {"out_channels", b.out_channels},
                      {"stride", b.stride},
                      {"attention", to_json(b.attention)}});
  }
  return json{{"input_channels", spec.input_channels},
              {"stem_channels", spec.stem_channels},
              {"num_classes", spec.num_classes},
              {"blocks", blocks}};
}

TrainConfig train_config_from_json(const json& j, const TrainConfig& defaults) {
  require_object(j, "train");
  reject_unknown(j,
                 {"epochs", "batch_size", "lr0", "lr_drop_every", "lr_drop_factor", "momentum",
                  "weight_decay", "seed"},
                 "train");
  TrainConfig cfg = defaults;
  cfg.epochs = get_or<std::size_t>(j, "epochs", cfg.epochs);
  cfg.batch_size = get_or<std::size_t>(j, "batch_size", cfg.batch_size);
  cfg.lr0 = get_or<double>(j, "lr0", cfg.lr0);
  cfg.lr_drop_every = get_or<std::size_t>(j, "lr_drop_every", cfg.lr_drop_every);
  cfg.lr_drop_factor = get_or<double>(j, "lr_drop_factor", cfg.lr_drop_factor);
  cfg.momentum = get_or<double>(j, "momentum", cfg.momentum);
  cfg.weight_decay = get_or<double>(j, "weight_decay", cfg.weight_decay);
  cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed);
  cfg.validate();
  return cfg;
}

json to_json(const TrainConfig& cfg) {
  return json{{"epochs", cfg.epochs},           {"batch_size", cfg.batch_size},
              {"lr0", cfg.lr0},                 {"lr_drop_every", cfg.lr_drop_every},
              {"lr_drop_factor", cfg.lr_drop_factor}, {"momentum", cfg.momentum},
              {"weight_decay", cfg.weight_decay},     {"seed", cfg.seed}};
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
  require_object(j, "synthetic spec");
  reject_unknown(j,
                 {"num_samples", "num_classes", "channels", "height", "width", "patch_size",
                  "noise_std", "patch_value", "seed"},
                 "synthetic spec");
  SyntheticSpec s;
  s.num_samples = get_or<std::size_t>(j, "num_samples", s.num_samples);
  s.num_classes = get_or<std::size_t>(j, "num_classes", s.num_classes);
  s.channels = get_or<std::size_t>(j, "channels", s.channels);
  s.height = get_or<std::size_t>(j, "height", s.height);
  s.width = get_or<std::size_t>(j, "width", s.width);
  s.patch_size = get_or<std::size_t>(j, "patch_size", s.patch_size);
  s.noise_std = get_or<double>(j, "noise_std", s.noise_std);
  s.patch_value = get_or<double>(j, "patch_value", s.patch_value);
  s.seed = get_or<std::uint64_t>(j, "seed", s.seed);
  s.validate();
  return s;
}

json to_json(const SyntheticSpec& s) {
  return json{{"num_samples", s.num_samples}, {"num_classes", s.num_classes},
              {"channels", s.channels},       {"height", s.height},
              {"width", s.width},             {"patch_size", s.patch_size},
              {"noise_std", s.noise_std},     {"patch_value", s.patch_value},
              {"seed", s.seed}};
}

SyntheticSpec load_synthetic_spec(const std::filesystem::path& path) {
  return synthetic_spec_from_json(load_json(path));
}

}  // namespace cbam
