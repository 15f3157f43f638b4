#include "cbam/checkpoint.hpp"

#include <fstream>

#include "cbam/config.hpp"
#include "cbam/errors.hpp"
#include "cbam/serialize.hpp"

namespace cbam {

std::filesystem::path tensor_file_for(const std::filesystem::path& manifest) {
  return manifest.string() + ".tensors";
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto slots = net_param_slots(ckpt.spec);
  nlohmann::json tensors = nlohmann::json::array();
  const auto data_path = tensor_file_for(path);
  std::ofstream data(data_path, std::ios::binary);
  if (!data) throw IoFailure("cannot open " + data_path.string() + " for writing");
  for (const auto& slot : slots) {
    auto it = ckpt.params.find(slot.name);
    if (it == ckpt.params.end()) throw ConfigError("checkpoint is missing " + slot.name);
    if (it->second.shape() != slot.shape) throw ShapeMismatch("parameter " + slot.name);
    tensors.push_back({{"name", slot.name}, {"shape", slot.shape}});
    write_tensor(data, it->second);
  }
  if (ckpt.params.size() != slots.size()) throw ConfigError("checkpoint has parameters the network does not use");
  const nlohmann::json manifest{{"format", "cbam-checkpoint-1"},
                                {"net", to_json(ckpt.spec)},
                                {"tensor_file", data_path.filename().string()},
                                {"tensors", tensors}};
  std::ofstream out(path);
  if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
  out << manifest.dump(2) << "\n";
  if (!out || !data) throw IoFailure("checkpoint write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const nlohmann::json manifest = load_json(path);
  if (manifest.value("format", "") != "cbam-checkpoint-1") {
    throw BadMagic(path.string() + " is not a checkpoint manifest");
  }
  Checkpoint ckpt;
  ckpt.spec = net_spec_from_json(manifest.at("net"));
  const auto data_path = path.parent_path() / manifest.at("tensor_file").get<std::string>();
  std::ifstream data(data_path, std::ios::binary);
  if (!data) throw IoFailure("cannot open " + data_path.string());
  const auto slots = net_param_slots(ckpt.spec);
  const auto& entries = manifest.at("tensors");
  if (entries.size() != slots.size()) throw ConfigError("manifest tensor count does not match the network");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const std::string name = entries[i].at("name").get<std::string>();
    if (name != slots[i].name) throw ConfigError("expected tensor " + slots[i].name + ", found " + name);
    Tensor t = read_tensor(data);
    if (t.shape() != slots[i].shape) throw ShapeMismatch("stored shape of " + name);
    ckpt.params[name] = std::move(t);
  }
  return ckpt;
}

}  // namespace cbam
