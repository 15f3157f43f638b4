#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cbam {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Identity of a tensor inside a GradTape: which tape, and which slot.
struct NodeRef {
  std::uint64_t tape = 0;
  std::size_t index = 0;
};

// Dense row-major float64 array. Values are immutable once constructed, so
// copies share one buffer and may be handed across threads freely.
class Tensor {
 public:
  // A single zero, shape {1}.
  Tensor();
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor zeros_like(const Tensor& other) { return zeros(other.shape()); }
  // Entries drawn independently from N(mean, stddev).
  static Tensor randn(Shape shape, std::mt19937_64& rng, double mean = 0.0, double stddev = 1.0);
  // Entries drawn independently from U[lo, hi).
  static Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_->size(); }

  std::span<const double> data() const { return *data_; }
  std::vector<double> to_vector() const { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }

  // Row-major multi-index access; the index count must equal rank().
  template <typename... Idx>
  double at(Idx... idx) const {
    const std::size_t index[] = {static_cast<std::size_t>(idx)...};
    return (*data_)[offset(index)];
  }
  std::size_t offset(std::span<const std::size_t> index) const;

  // The sole element of a one-element tensor.
  double item() const;

  const std::optional<NodeRef>& node() const { return node_; }
  Tensor with_node(NodeRef node) const;
  // Same values, no tape identity.
  Tensor detached() const;

  Tensor reshaped(Shape shape) const;

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  std::optional<NodeRef> node_;
};

// Exact shape and value equality (bit-for-bit on non-NaN data).
bool identical(const Tensor& a, const Tensor& b);

double max_abs_diff(const Tensor& a, const Tensor& b);

bool all_finite(const Tensor& t);

// Named parameter tensors, iterated in name order.
using ParamMap = std::map<std::string, Tensor>;

// Shape and initialization rule of one learnable tensor. Weights with a
// nonzero fan_in draw from N(0, sqrt(2 / fan_in)); fan_in == 0 means zeros.
struct ParamSlot {
  std::string name;
  Shape shape;
  std::size_t fan_in = 0;
};

Tensor init_param(const ParamSlot& slot, std::mt19937_64& rng);

std::size_t count_elements(const ParamMap& params);

}  // namespace cbam
