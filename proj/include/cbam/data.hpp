#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "cbam/tensor.hpp"

namespace cbam {

enum class Split { Train, Val };

struct Dataset {
  Tensor images;                      // M x C0 x H x W
  std::vector<std::uint32_t> labels;  // M entries in [0, num_classes)
  std::size_t num_classes = 0;
  Split split = Split::Train;

  std::size_t size() const { return labels.size(); }
  // Throws LabelOutOfRange or ShapeMismatch.
  void validate() const;
  Tensor batch_images(std::span<const std::size_t> indices) const;
  std::vector<std::uint32_t> batch_labels(std::span<const std::size_t> indices) const;
  Dataset slice(std::size_t begin, std::size_t end, Split tag) const;
};

// Parameters of the locate-the-patch task: a bright patch_size x patch_size
// square sits inside one of num_classes grid cells over Gaussian noise, and
// the label is that cell's index.
struct SyntheticSpec {
  std::size_t num_samples = 256;
  std::size_t num_classes = 4;
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t patch_size = 4;
  double noise_std = 0.5;
  double patch_value = 2.0;
  std::uint64_t seed = 7;

  void validate() const;
};

// Cells are laid out row-major on a rows x cols grid, rows being the largest
// divisor of num_classes not above its square root.
struct GridLayout {
  std::size_t rows = 1;
  std::size_t cols = 1;
};
GridLayout grid_for(std::size_t num_classes);

// Grid cell containing pixel (y, x) of an h x w map.
std::size_t cell_of(std::size_t y, std::size_t x, std::size_t h, std::size_t w,
                    std::size_t num_classes);

Dataset generate_locate_the_patch(const SyntheticSpec& spec);

enum class DatasetFormat { CBDS, SyntheticSpec };

// CBDS layout, little-endian: "CBDS" | u32 M, C0, H, W | f64 images |
// u32 labels. SyntheticSpec paths hold the generator parameters as JSON.
// When num_classes is 0 it is taken from the file (max label + 1).
Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format,
                     std::size_t num_classes = 0);
// Picks the format from the extension: ".json" is a SyntheticSpec.
Dataset load_dataset(const std::filesystem::path& path, std::size_t num_classes = 0);
void write_cbds(const std::filesystem::path& path, const Dataset& data);

// Tail fraction becomes the validation split; ordering is preserved.
std::pair<Dataset, Dataset> split_train_val(const Dataset& data, double val_fraction = 0.2);

}  // namespace cbam
