#include "cbam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cbam/errors.hpp"

namespace cbam {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor() : shape_{1}, data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  if (shape_.empty()) throw ShapeMismatch("tensor rank must be at least 1");
  for (auto e : shape_) {
    if (e == 0) throw ShapeMismatch("zero extent in shape " + to_string(shape_));
  }
  if (cbam::numel(shape_) != data.size()) {
    throw ShapeMismatch("shape " + to_string(shape_) + " needs " + std::to_string(cbam::numel(shape_)) +
                        " values, got " + std::to_string(data.size()));
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = cbam::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  std::vector<double> data(cbam::numel(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data));
}

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> data(cbam::numel(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data));
}

std::size_t Tensor::offset(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ShapeMismatch("index of rank " + std::to_string(index.size()) + " into tensor " +
                        to_string(shape_));
  }
  std::size_t off = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= shape_[i]) throw ShapeMismatch("index out of range for " + to_string(shape_));
    off = off * shape_[i] + index[i];
  }
  return off;
}

double Tensor::item() const {
  if (numel() != 1) throw NotScalar("tensor " + to_string(shape_) + " has more than one element");
  return (*data_)[0];
}

Tensor Tensor::with_node(NodeRef node) const {
  Tensor t = *this;
  t.node_ = node;
  return t;
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.node_.reset();
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (cbam::numel(shape) != numel()) {
    throw ShapeMismatch("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  for (auto e : shape) {
    if (e == 0) throw ShapeMismatch("zero extent in shape " + to_string(shape));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = data_;
  return t;
}

bool identical(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::ranges::equal(a.data(), b.data());
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch(to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool all_finite(const Tensor& t) {
  return std::ranges::all_of(t.data(), [](double v) { return std::isfinite(v); });
}

Tensor init_param(const ParamSlot& slot, std::mt19937_64& rng) {
  if (slot.fan_in == 0) return Tensor::zeros(slot.shape);
  return Tensor::randn(slot.shape, rng, 0.0, std::sqrt(2.0 / static_cast<double>(slot.fan_in)));
}

std::size_t count_elements(const ParamMap& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

}  // namespace cbam
