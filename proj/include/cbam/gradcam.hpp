#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "cbam/model.hpp"
#include "cbam/tensor.hpp"

namespace cbam {

struct Heatmap {
  Tensor values;  // 1 x 1 x h x w in [0, 1]
  std::string layer;
  std::size_t class_index = 0;
};

// Grad-CAM on a feature map A (1 x C x h x w) given the head mapping A to
// logits (1 x K): alpha_c is the spatial mean of d logit[class] / d A_c, the
// raw map is relu(sum_c alpha_c A_c), and the result is divided by its max.
// An identically zero raw map stays zero.
Heatmap gradcam_from_features(const Tensor& features,
                              const std::function<Tensor(const Tensor&)>& head,
                              std::size_t class_index, std::string layer = "features");

// Grad-CAM on the last residual block's output (after its attention stage).
// Throws ClassOutOfRange when class_index >= spec.num_classes.
Heatmap gradcam(const TinyNetSpec& spec, const ParamMap& params, const Tensor& image,
                std::size_t class_index);

// Binary PGM (P5), maxval 255, pixel = round(255 * value).
void write_pgm(const std::filesystem::path& path, const Heatmap& heatmap);
// Re-reads a P5 file as a 1 x 1 x h x w tensor of byte / 255.
Tensor read_pgm(const std::filesystem::path& path);

// Binary PPM (P6): the image (min-max scaled; mean over channels unless it
// has 3) blended at alpha 0.5 with the heatmap, upsampled nearest-neighbour,
// in the red channel.
void write_overlay_ppm(const std::filesystem::path& path, const Heatmap& heatmap, const Tensor& image);

// Flat (row, col) index of the heatmap's first maximum.
std::size_t heatmap_argmax(const Heatmap& heatmap);

}  // namespace cbam
