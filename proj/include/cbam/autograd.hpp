#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "cbam/tensor.hpp"

namespace cbam {

class Gradients;

// Records differentiable operations for reverse-mode replay.
//
// Constructing a tape makes it the active tape of the calling thread until it
// is destroyed (tapes nest like a stack). Ops record themselves whenever at
// least one input is a node of the active tape; with no active tape, or with
// only constant inputs, ops are plain value computations. A tape must not
// outlive the thread that created it.
class GradTape {
 public:
  // Given the upstream gradient of an op's output and a mask of which inputs
  // need a gradient, return one gradient per input. Entries for inputs that
  // are not needed may be left default-constructed.
  using BackwardFn =
      std::function<std::vector<Tensor>(const Tensor& grad_out, const std::vector<bool>& needs)>;

  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active();

  // Registers `value` as a leaf; the returned tensor carries its node id.
  Tensor watch(const Tensor& value);

  bool owns(const Tensor& t) const;
  std::size_t size() const { return nodes_.size(); }
  std::uint64_t id() const { return id_; }

  // Appends an op node whose parents are those `inputs` that live on this
  // tape. Returns `output` tagged with the new node id.
  Tensor record(const Tensor& output, const std::vector<Tensor>& inputs, BackwardFn backward);

 private:
  struct Node {
    Shape shape;
    std::vector<std::ptrdiff_t> parents;  // -1 for inputs not on this tape
    BackwardFn backward;
  };

  std::uint64_t id_;
  std::vector<Node> nodes_;
  GradTape* previous_;

  friend class Gradients;
  friend Gradients backward(const GradTape& tape, const Tensor& loss);
};

// dLoss/dNode for every node of one tape.
class Gradients {
 public:
  // Throws NodeNotOnTape when `t` is not a node of the tape these came from.
  const Tensor& operator[](const Tensor& t) const;
  const Tensor& at(std::size_t node_index) const { return grads_.at(node_index); }
  std::size_t size() const { return grads_.size(); }

 private:
  std::uint64_t tape_ = 0;
  std::vector<Tensor> grads_;
  friend Gradients backward(const GradTape& tape, const Tensor& loss);
};

// Replays the tape in reverse from a one-element `loss`. Nodes the loss does
// not depend on get zero gradients.
Gradients backward(const GradTape& tape, const Tensor& loss);

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps), one
// element at a time.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps = 1e-5);

// ||a - b|| / max(||a||, ||b||) in the 2-norm; 0 when both norms are below
// `floor`.
double gradient_relative_error(const Tensor& analytic, const Tensor& numeric,
                               double floor = 1e-10);

// Returns true if `t` is tagged as a node of the thread's active tape.
bool on_active_tape(const Tensor& t);

}  // namespace cbam
