#include "cbam/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "cbam/config.hpp"
#include "cbam/errors.hpp"
#include "cbam/serialize.hpp"

namespace cbam {

void Dataset::validate() const {
  if (labels.empty()) throw ShapeMismatch("dataset is empty");
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw ShapeMismatch("images " + to_string(images.shape()) + " do not match " +
                        std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw LabelOutOfRange("sample " + std::to_string(i) + " has label " +
                            std::to_string(labels[i]) + " >= " + std::to_string(num_classes));
    }
  }
}

Tensor Dataset::batch_images(std::span<const std::size_t> indices) const {
  const std::size_t per = images.numel() / images.dim(0);
  const auto src = images.data();
  std::vector<double> out;
  out.reserve(indices.size() * per);
  for (auto i : indices) {
    if (i >= size()) throw ShapeMismatch("sample index " + std::to_string(i) + " out of range");
    out.insert(out.end(), src.begin() + i * per, src.begin() + (i + 1) * per);
  }
  return Tensor({indices.size(), images.dim(1), images.dim(2), images.dim(3)}, std::move(out));
}

std::vector<std::uint32_t> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<std::uint32_t> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

Dataset Dataset::slice(std::size_t begin, std::size_t end, Split tag) const {
  if (begin >= end || end > size()) throw ShapeMismatch("bad dataset slice");
  std::vector<std::size_t> idx(end - begin);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
  return Dataset{batch_images(idx), batch_labels(idx), num_classes, tag};
}

void SyntheticSpec::validate() const {
  if (num_samples == 0 || num_classes == 0 || channels == 0) {
    throw ConfigError("synthetic spec counts must be positive");
  }
  const auto grid = grid_for(num_classes);
  if (height < grid.rows || width < grid.cols) throw ConfigError("image too small for the class grid");
  const std::size_t cell_h = height / grid.rows, cell_w = width / grid.cols;
  if (patch_size == 0 || patch_size > cell_h || patch_size > cell_w) {
    throw ConfigError("patch_size " + std::to_string(patch_size) + " does not fit a " +
                      std::to_string(cell_h) + "x" + std::to_string(cell_w) + " cell");
  }
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");
}

GridLayout grid_for(std::size_t num_classes) {
  std::size_t rows = 1;
  for (std::size_t r = 1; r * r <= num_classes; ++r) {
    if (num_classes % r == 0) rows = r;
  }
  return {rows, num_classes / rows};
}

std::size_t cell_of(std::size_t y, std::size_t x, std::size_t h, std::size_t w,
                    std::size_t num_classes) {
  const auto grid = grid_for(num_classes);
  const std::size_t r = std::min(grid.rows - 1, y * grid.rows / h);
  const std::size_t c = std::min(grid.cols - 1, x * grid.cols / w);
  return r * grid.cols + c;
}

Dataset generate_locate_the_patch(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.noise_std);
  std::uniform_int_distribution<std::uint32_t> pick_label(0, static_cast<std::uint32_t>(spec.num_classes - 1));
  const auto grid = grid_for(spec.num_classes);
  const std::size_t cell_h = spec.height / grid.rows, cell_w = spec.width / grid.cols;
  std::uniform_int_distribution<std::size_t> pick_dy(0, cell_h - spec.patch_size);
  std::uniform_int_distribution<std::size_t> pick_dx(0, cell_w - spec.patch_size);

  const std::size_t C = spec.channels, H = spec.height, W = spec.width;
  std::vector<double> images(spec.num_samples * C * H * W);
  std::vector<std::uint32_t> labels(spec.num_samples);
  for (std::size_t m = 0; m < spec.num_samples; ++m) {
    const std::uint32_t label = pick_label(rng);
    const std::size_t y0 = (label / grid.cols) * cell_h + pick_dy(rng);
    const std::size_t x0 = (label % grid.cols) * cell_w + pick_dx(rng);
    labels[m] = label;
    double* img = images.data() + m * C * H * W;
    for (std::size_t i = 0; i < C * H * W; ++i) img[i] = spec.noise_std > 0.0 ? noise(rng) : 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t y = y0; y < y0 + spec.patch_size; ++y) {
        for (std::size_t x = x0; x < x0 + spec.patch_size; ++x) img[(c * H + y) * W + x] += spec.patch_value;
      }
    }
  }
  return Dataset{Tensor({spec.num_samples, C, H, W}, std::move(images)), std::move(labels),
                 spec.num_classes, Split::Train};
}

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format, std::size_t num_classes) {
  if (format == DatasetFormat::SyntheticSpec) {
    SyntheticSpec spec = load_synthetic_spec(path);
    if (num_classes != 0 && spec.num_classes != num_classes) {
      throw ConfigError("synthetic spec has " + std::to_string(spec.num_classes) +
                        " classes, model expects " + std::to_string(num_classes));
    }
    return generate_locate_the_patch(spec);
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path.string());
  detail::read_magic(in, "CBDS");
  Shape shape(4);
  for (auto& e : shape) e = detail::read_u32(in);
  if (std::ranges::find(shape, 0u) != shape.end()) throw ShapeMismatch("CBDS header has a zero extent");
  std::vector<double> images(numel(shape));
  for (auto& v : images) v = detail::read_f64(in);
  std::vector<std::uint32_t> labels(shape[0]);
  for (auto& l : labels) l = detail::read_u32(in);
  Dataset data{Tensor(shape, std::move(images)), std::move(labels), num_classes, Split::Train};
  if (data.num_classes == 0) data.num_classes = *std::ranges::max_element(data.labels) + 1;
  data.validate();
  return data;
}

Dataset load_dataset(const std::filesystem::path& path, std::size_t num_classes) {
  const auto format = path.extension() == ".json" ? DatasetFormat::SyntheticSpec : DatasetFormat::CBDS;
  return load_dataset(path, format, num_classes);
}

void write_cbds(const std::filesystem::path& path, const Dataset& data) {
  data.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
  out.write("CBDS", 4);
  for (auto e : data.images.shape()) detail::write_u32(out, static_cast<std::uint32_t>(e));
  for (double v : data.images.data()) detail::write_f64(out, v);
  for (auto l : data.labels) detail::write_u32(out, l);
  if (!out) throw IoFailure("write to " + path.string() + " failed");
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& data, double val_fraction) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must be in (0, 1)");
  const std::size_t n = data.size();
  const auto val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction));
  if (val == 0 || val >= n) throw ConfigError("dataset too small to split");
  return {data.slice(0, n - val, Split::Train), data.slice(n - val, n, Split::Val)};
}

}  // namespace cbam
