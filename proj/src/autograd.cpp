#include "cbam/autograd.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "cbam/errors.hpp"

namespace cbam {

namespace {

thread_local GradTape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_next_tape_id{1};

}  // namespace

GradTape::GradTape() : id_(g_next_tape_id.fetch_add(1)), previous_(g_active_tape) {
  g_active_tape = this;
}

GradTape::~GradTape() { g_active_tape = previous_; }

GradTape* GradTape::active() { return g_active_tape; }

Tensor GradTape::watch(const Tensor& value) {
  nodes_.push_back(Node{value.shape(), {}, nullptr});
  return value.detached().with_node(NodeRef{id_, nodes_.size() - 1});
}

bool GradTape::owns(const Tensor& t) const {
  return t.node() && t.node()->tape == id_ && t.node()->index < nodes_.size();
}

Tensor GradTape::record(const Tensor& output, const std::vector<Tensor>& inputs,
                        BackwardFn backward_fn) {
  Node node{output.shape(), {}, std::move(backward_fn)};
  node.parents.reserve(inputs.size());
  for (const auto& in : inputs) {
    node.parents.push_back(owns(in) ? static_cast<std::ptrdiff_t>(in.node()->index) : -1);
  }
  nodes_.push_back(std::move(node));
  return output.detached().with_node(NodeRef{id_, nodes_.size() - 1});
}

bool on_active_tape(const Tensor& t) {
  return g_active_tape != nullptr && g_active_tape->owns(t);
}

const Tensor& Gradients::operator[](const Tensor& t) const {
  if (!t.node() || t.node()->tape != tape_ || t.node()->index >= grads_.size()) {
    throw NodeNotOnTape("tensor " + to_string(t.shape()) + " is not a node of this tape");
  }
  return grads_[t.node()->index];
}

Gradients backward(const GradTape& tape, const Tensor& loss) {
  if (loss.numel() != 1) {
    throw NotScalar("loss must have one element, got shape " + to_string(loss.shape()));
  }
  if (!tape.owns(loss)) throw NodeNotOnTape("loss was not recorded on this tape");

  const auto& nodes = tape.nodes_;
  std::vector<std::vector<double>> accum(nodes.size());
  const std::size_t root = loss.node()->index;
  accum[root].assign(1, 1.0);

  // Parents always precede their consumers, so a reverse sweep sees every
  // node only after all of its consumers have contributed.
  for (std::size_t i = root + 1; i-- > 0;) {
    const auto& node = nodes[i];
    if (accum[i].empty() || !node.backward) continue;
    std::vector<bool> needs(node.parents.size());
    bool any = false;
    for (std::size_t p = 0; p < node.parents.size(); ++p) {
      needs[p] = node.parents[p] >= 0;
      any = any || needs[p];
    }
    if (!any) continue;
    const Tensor upstream(node.shape, accum[i]);
    const auto grads = node.backward(upstream, needs);
    for (std::size_t p = 0; p < node.parents.size(); ++p) {
      if (!needs[p]) continue;
      const auto parent = static_cast<std::size_t>(node.parents[p]);
      const Tensor& g = grads.at(p);
      if (g.shape() != nodes[parent].shape) {
        throw ShapeMismatch("gradient " + to_string(g.shape()) + " for node of shape " +
                            to_string(nodes[parent].shape));
      }
      auto& acc = accum[parent];
      if (acc.empty()) {
        acc = g.to_vector();
      } else {
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += g[k];
      }
    }
  }

  Gradients out;
  out.tape_ = tape.id_;
  out.grads_.reserve(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (accum[i].empty()) {
      out.grads_.push_back(Tensor::zeros(nodes[i].shape));
    } else {
      out.grads_.emplace_back(nodes[i].shape, std::move(accum[i]));
    }
  }
  return out;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps) {
  if (!(eps > 0.0)) throw ValidationError("finite difference step must be positive");
  std::vector<double> probe = x.to_vector();
  std::vector<double> grad(probe.size());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(Tensor(x.shape(), probe));
    probe[i] = orig - eps;
    const double down = f(Tensor(x.shape(), probe));
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return Tensor(x.shape(), std::move(grad));
}

double gradient_relative_error(const Tensor& analytic, const Tensor& numeric, double floor) {
  if (analytic.shape() != numeric.shape()) {
    throw ShapeMismatch(to_string(analytic.shape()) + " vs " + to_string(numeric.shape()));
  }
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.numel(); ++i) {
    const double d = analytic[i] - numeric[i];
    diff += d * d;
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::sqrt(std::max(na, nn));
  if (denom < floor) return 0.0;
  return std::sqrt(diff) / denom;
}

}  // namespace cbam
