#include "cbam/gradcam.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "cbam/autograd.hpp"
#include "cbam/errors.hpp"
#include "cbam/ops.hpp"

namespace cbam {

Heatmap gradcam_from_features(const Tensor& features, const std::function<Tensor(const Tensor&)>& head,
                              std::size_t class_index, std::string layer) {
  if (features.rank() != 4 || features.dim(0) != 1) {
    throw ShapeMismatch("grad-cam expects a 1 x C x h x w feature map, got " + to_string(features.shape()));
  }
  const std::size_t C = features.dim(1), h = features.dim(2), w = features.dim(3);

  Tensor grad;
  {
    GradTape tape;
    const Tensor a = tape.watch(features);
    const Tensor logits = head(a);
    if (logits.rank() != 2 || logits.dim(0) != 1) {
      throw ShapeMismatch("grad-cam head must return 1 x K logits, got " + to_string(logits.shape()));
    }
    if (class_index >= logits.dim(1)) {
      throw ClassOutOfRange("class " + std::to_string(class_index) + " but the model has " +
                            std::to_string(logits.dim(1)) + " classes");
    }
    const Tensor score = ops::take(logits, class_index);
    grad = backward(tape, score)[a];
  }

  const auto A = features.data();
  const auto G = grad.data();
  std::vector<double> raw(h * w, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double alpha = 0.0;
    for (std::size_t j = 0; j < h * w; ++j) alpha += G[c * h * w + j];
    alpha /= static_cast<double>(h * w);
    for (std::size_t j = 0; j < h * w; ++j) raw[j] += alpha * A[c * h * w + j];
  }
  double peak = 0.0;
  for (auto& v : raw) {
    v = std::max(v, 0.0);
    peak = std::max(peak, v);
  }
  if (peak > 0.0) {
    for (auto& v : raw) v /= peak;
  }
  return Heatmap{Tensor({1, 1, h, w}, std::move(raw)), std::move(layer), class_index};
}

Heatmap gradcam(const TinyNetSpec& spec, const ParamMap& params, const Tensor& image,
                std::size_t class_index) {
  if (class_index >= spec.num_classes) {
    throw ClassOutOfRange("class " + std::to_string(class_index) + " but the model has " +
                          std::to_string(spec.num_classes) + " classes");
  }
  const NetOutput out = net_forward_detailed(image.detached(), spec, params);
  const std::string layer = spec.blocks.empty() ? "stem" : block_prefix(spec.blocks.size() - 1) + "out";
  return gradcam_from_features(
      out.features, [&](const Tensor& a) { return classifier_head(a, spec, params); }, class_index, layer);
}

namespace {

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const Heatmap& heatmap) {
  const std::size_t h = heatmap.values.dim(2), w = heatmap.values.dim(3);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
  out << "P5\n" << w << " " << h << "\n255\n";
  for (double v : heatmap.values.data()) out.put(static_cast<char>(to_byte(v)));
  if (!out) throw IoFailure("write to " + path.string() + " failed");
}

Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic;
  if (magic != "P5") throw BadMagic(path.string() + " is not a binary PGM");
  in >> w >> h >> maxval;
  if (!in || w == 0 || h == 0 || maxval != 255) throw BadMagic("unsupported PGM header in " + path.string());
  in.get();  // single whitespace before the raster
  std::vector<double> values(w * h);
  for (auto& v : values) {
    const int byte = in.get();
    if (byte == EOF) throw TruncatedFile(path.string());
    v = static_cast<double>(byte) / 255.0;
  }
  return Tensor({1, 1, h, w}, std::move(values));
}

void write_overlay_ppm(const std::filesystem::path& path, const Heatmap& heatmap, const Tensor& image) {
  if (image.rank() != 4 || image.dim(0) != 1) throw ShapeMismatch("overlay expects a 1 x C x H x W image");
  const std::size_t C = image.dim(1), H = image.dim(2), W = image.dim(3);
  const std::size_t h = heatmap.values.dim(2), w = heatmap.values.dim(3);
  const auto px = image.data();
  const auto [lo_it, hi_it] = std::minmax_element(px.begin(), px.end());
  const double lo = *lo_it, span = *hi_it - *lo_it;
  auto norm = [&](double v) { return span > 0.0 ? (v - lo) / span : 0.0; };

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
  out << "P6\n" << W << " " << H << "\n255\n";
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      double rgb[3];
      if (C == 3) {
        for (std::size_t c = 0; c < 3; ++c) rgb[c] = norm(px[(c * H + y) * W + x]);
      } else {
        double mean = 0.0;
        for (std::size_t c = 0; c < C; ++c) mean += px[(c * H + y) * W + x];
        rgb[0] = rgb[1] = rgb[2] = norm(mean / static_cast<double>(C));
      }
      const double heat = heatmap.values[(y * h / H) * w + (x * w / W)];
      out.put(static_cast<char>(to_byte(0.5 * rgb[0] + 0.5 * heat)));
      out.put(static_cast<char>(to_byte(0.5 * rgb[1])));
      out.put(static_cast<char>(to_byte(0.5 * rgb[2])));
    }
  }
  if (!out) throw IoFailure("write to " + path.string() + " failed");
}

std::size_t heatmap_argmax(const Heatmap& heatmap) {
  const auto v = heatmap.values.data();
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace cbam
