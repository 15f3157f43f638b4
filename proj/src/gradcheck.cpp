#include "cbam/gradcheck.hpp"

#include <algorithm>
#include <map>

#include "cbam/attention.hpp"
#include "cbam/autograd.hpp"
#include "cbam/errors.hpp"
#include "cbam/ops.hpp"

namespace cbam {

double max_gradient_error(const MultiInputFn& f, const std::vector<Tensor>& inputs, std::mt19937_64& rng,
                          double eps) {
  const Tensor probe_shape = f(inputs);
  const Tensor probe = Tensor::uniform(probe_shape.shape(), rng, -1.0, 1.0);
  auto loss_of = [&](const std::vector<Tensor>& xs) { return ops::sum(ops::broadcast_mul(f(xs), probe)); };

  std::vector<Tensor> analytic;
  {
    GradTape tape;
    std::vector<Tensor> watched;
    for (const auto& x : inputs) watched.push_back(tape.watch(x));
    const Gradients grads = backward(tape, loss_of(watched));
    for (const auto& w : watched) analytic.push_back(grads[w]);
  }

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<Tensor> xs = inputs;
    const Tensor numeric = finite_diff_grad(
        [&](const Tensor& xi) {
          xs[i] = xi;
          return loss_of(xs).item();
        },
        inputs[i], eps);
    worst = std::max(worst, gradient_relative_error(analytic[i], numeric));
  }
  return worst;
}

namespace {

struct Case {
  MultiInputFn fn;
  std::vector<Tensor> inputs;
};

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor input(const Shape& s, std::mt19937_64& rng) { return Tensor::uniform(s, rng, -2.0, 2.0); }
Tensor weight(const Shape& s, std::mt19937_64& rng) { return Tensor::randn(s, rng, 0.0, 0.1); }

Shape feature_shape(std::mt19937_64& rng) {
  return {pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 1, 5), pick(rng, 1, 5)};
}

// Shape b broadcastable against a: each axis either kept or collapsed to 1.
Shape collapsed(const Shape& a, std::mt19937_64& rng) {
  Shape b = a;
  for (auto& e : b) {
    if (pick(rng, 0, 1) == 0) e = 1;
  }
  return b;
}

using CaseMaker = std::function<Case(std::mt19937_64&)>;

const std::map<std::string, CaseMaker>& case_makers() {
  static const std::map<std::string, CaseMaker> makers = {
      {"broadcast_mul",
       [](std::mt19937_64& rng) {
         const Shape a = feature_shape(rng);
         return Case{[](const std::vector<Tensor>& x) { return ops::broadcast_mul(x[0], x[1]); },
                     {input(a, rng), input(collapsed(a, rng), rng)}};
       }},
      {"add",
       [](std::mt19937_64& rng) {
         const Shape a = feature_shape(rng);
         return Case{[](const std::vector<Tensor>& x) { return ops::add(x[0], x[1]); },
                     {input(collapsed(a, rng), rng), input(a, rng)}};
       }},
      {"sub",
       [](std::mt19937_64& rng) {
         const Shape a = feature_shape(rng);
         return Case{[](const std::vector<Tensor>& x) { return ops::sub(x[0], x[1]); },
                     {input(a, rng), input(collapsed(a, rng), rng)}};
       }},
      {"scale",
       [](std::mt19937_64& rng) {
         return Case{[](const std::vector<Tensor>& x) { return ops::scale(x[0], -1.75); },
                     {input(feature_shape(rng), rng)}};
       }},
      {"sum",
       [](std::mt19937_64& rng) {
         return Case{[](const std::vector<Tensor>& x) { return ops::sum(x[0]); }, {input(feature_shape(rng), rng)}};
       }},
      {"take",
       [](std::mt19937_64& rng) {
         const Tensor x = input(feature_shape(rng), rng);
         const std::size_t idx = pick(rng, 0, x.numel() - 1);
         return Case{[idx](const std::vector<Tensor>& xs) { return ops::take(xs[0], idx); }, {x}};
       }},
      {"reshape",
       [](std::mt19937_64& rng) {
         return Case{[](const std::vector<Tensor>& x) { return ops::reshape(x[0], {x[0].numel()}); },
                     {input(feature_shape(rng), rng)}};
       }},
      {"relu",
       [](std::mt19937_64& rng) {
         return Case{[](const std::vector<Tensor>& x) { return ops::relu(x[0]); }, {input(feature_shape(rng), rng)}};
       }},
      {"sigmoid",
       [](std::mt19937_64& rng) {
         return Case{[](const std::vector<Tensor>& x) { return ops::sigmoid(x[0]); },
                     {input(feature_shape(rng), rng)}};
       }},
      {"conv2d",
       [](std::mt19937_64& rng) {
         const std::size_t k = 2 * pick(rng, 0, 3) + 1;
         const std::size_t pad = pick(rng, 0, (k - 1) / 2);
         const std::size_t stride = pick(rng, 1, 2);
         const std::size_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
         const std::size_t h = pick(rng, std::max<std::size_t>(1, k - 2 * pad), 7);
         const std::size_t w = pick(rng, std::max<std::size_t>(1, k - 2 * pad), 7);
         return Case{[pad, stride](const std::vector<Tensor>& x) { return ops::conv2d(x[0], x[1], x[2], pad, stride); },
                     {input({pick(rng, 1, 2), cin, h, w}, rng), weight({cout, cin, k, k}, rng), weight({cout}, rng)}};
       }},
      {"global_avg_pool_spatial",
       [](std::mt19937_64& rng) {
         return Case{[](const std::vector<Tensor>& x) { return ops::global_avg_pool_spatial(x[0]); },
                     {input(feature_shape(rng), rng)}};
       }},
      {"global_max_pool_spatial",
       [](std::mt19937_64& rng) {
         return Case{[](const std::vector<Tensor>& x) { return ops::global_max_pool_spatial(x[0]); },
                     {input(feature_shape(rng), rng)}};
       }},
      {"channel_avg_pool",
       [](std::mt19937_64& rng) {
         return Case{[](const std::vector<Tensor>& x) { return ops::channel_avg_pool(x[0]); },
                     {input(feature_shape(rng), rng)}};
       }},
      {"channel_max_pool",
       [](std::mt19937_64& rng) {
         return Case{[](const std::vector<Tensor>& x) { return ops::channel_max_pool(x[0]); },
                     {input(feature_shape(rng), rng)}};
       }},
      {"concat_channel",
       [](std::mt19937_64& rng) {
         Shape a = feature_shape(rng);
         Shape b = a;
         b[1] = pick(rng, 1, 4);
         return Case{[](const std::vector<Tensor>& x) { return ops::concat_channel(x[0], x[1]); },
                     {input(a, rng), input(b, rng)}};
       }},
      {"linear",
       [](std::mt19937_64& rng) {
         const std::size_t cin = pick(rng, 1, 6), cout = pick(rng, 1, 6);
         return Case{[](const std::vector<Tensor>& x) { return ops::linear(x[0], x[1]); },
                     {input({pick(rng, 1, 3), cin}, rng), weight({cout, cin}, rng)}};
       }},
      {"softmax_cross_entropy",
       [](std::mt19937_64& rng) {
         const std::size_t n = pick(rng, 1, 4), k = pick(rng, 2, 5);
         std::vector<std::uint32_t> labels(n);
         for (auto& l : labels) l = static_cast<std::uint32_t>(pick(rng, 0, k - 1));
         return Case{[labels](const std::vector<Tensor>& x) { return ops::softmax_cross_entropy(x[0], labels); },
                     {input({n, k}, rng)}};
       }},
      {"channel_attention",
       [](std::mt19937_64& rng) {
         const std::size_t c = pick(rng, 1, 8), r = pick(rng, 1, 4);
         const std::size_t hidden = hidden_width(c, r);
         const auto pooling = static_cast<ChannelPooling>(pick(rng, 0, 2));
         Shape f = feature_shape(rng);
         f[1] = c;
         return Case{[r, pooling](const std::vector<Tensor>& x) {
                       return channel_attention(x[0], ChannelAttentionParams{x[1], x[2], r, pooling});
                     },
                     {input(f, rng), weight({hidden, c}, rng), weight({c, hidden}, rng)}};
       }},
      {"spatial_attention",
       [](std::mt19937_64& rng) {
         const std::size_t k = pick(rng, 0, 1) == 0 ? 3 : 7;
         const Shape f = feature_shape(rng);
         return Case{[k](const std::vector<Tensor>& x) {
                       SpatialAttentionParams p;
                       p.kernel = x[1];
                       p.bias = x[2];
                       p.kernel_size = k;
                       return spatial_attention(x[0], p);
                     },
                     {input(f, rng), weight({1, 2, k, k}, rng), weight({1}, rng)}};
       }},
  };
  return makers;
}

}  // namespace

const std::vector<std::string>& gradcheck_op_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, maker] : case_makers()) out.push_back(name);
    return out;
  }();
  return names;
}

GradCheckResult check_op_gradient(const std::string& op, std::size_t trials, double tol, std::uint64_t seed) {
  const auto& makers = case_makers();
  auto it = makers.find(op);
  if (it == makers.end()) throw ConfigError("unknown op \"" + op + "\" for gradient check");
  std::mt19937_64 rng(seed);
  GradCheckResult result{op, trials, 0.0, true};
  for (std::size_t t = 0; t < trials; ++t) {
    const Case c = it->second(rng);
    result.max_rel_error = std::max(result.max_rel_error, max_gradient_error(c.fn, c.inputs, rng));
  }
  result.passed = result.max_rel_error < tol;
  return result;
}

std::vector<GradCheckResult> check_full_block(std::size_t trials, double tol, std::uint64_t seed) {
  std::vector<CbamConfig> configs;
  for (auto a : {Arrangement::ChannelThenSpatial, Arrangement::SpatialThenChannel, Arrangement::Parallel}) {
    for (auto d : {SpatialDescriptor::ChannelPool, SpatialDescriptor::OneByOneConv}) {
      CbamConfig c;
      c.arrangement = a;
      c.spatial_descriptor = d;
      configs.push_back(c);
    }
  }
  for (auto p : {ChannelPooling::AvgOnly, ChannelPooling::MaxOnly, ChannelPooling::AvgAndMax}) {
    CbamConfig c;
    c.arrangement = Arrangement::ChannelOnly;
    c.channel_pooling = p;
    configs.push_back(c);
  }

  std::vector<GradCheckResult> results;
  std::mt19937_64 rng(seed);
  for (auto cfg : configs) {
    GradCheckResult result{"cbam_forward[" + std::string(to_string(cfg.arrangement)) + "," +
                               std::string(to_string(cfg.channel_pooling)) +
                               (cfg.has_spatial() ? "," + std::string(to_string(cfg.spatial_descriptor)) : "") +
                               "]",
                           trials, 0.0, true};
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t c = pick(rng, 1, 8);
      cfg.reduction_ratio = pick(rng, 1, 4);
      cfg.kernel_size = pick(rng, 0, 1) == 0 ? 3 : 7;
      const auto slots = cbam_param_slots(cfg, c);
      std::vector<Tensor> inputs = {input({pick(rng, 1, 2), c, pick(rng, 1, 5), pick(rng, 1, 5)}, rng)};
      for (const auto& slot : slots) inputs.push_back(weight(slot.shape, rng));
      const MultiInputFn fn = [cfg, slots](const std::vector<Tensor>& x) {
        ParamMap named;
        for (std::size_t i = 0; i < slots.size(); ++i) named[slots[i].name] = x[i + 1];
        return cbam_forward(x[0], import_cbam(cfg, named, ""));
      };
      result.max_rel_error = std::max(result.max_rel_error, max_gradient_error(fn, inputs, rng));
    }
    result.passed = result.max_rel_error < tol;
    results.push_back(result);
  }
  return results;
}

}  // namespace cbam
