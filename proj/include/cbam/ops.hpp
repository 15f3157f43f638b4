#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "cbam/tensor.hpp"

// Differentiable tensor operations. Every op is a pure function of its
// inputs; when an input is a node of the thread's active GradTape the op also
// records its backward rule there.
namespace cbam::ops {

// Right-aligned broadcasting: an axis pair must be equal or contain a 1;
// missing leading axes count as 1.
Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor broadcast_mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// Sum of all elements, shape {1}.
Tensor sum(const Tensor& a);
// One element picked by flat row-major index, shape {1}.
Tensor take(const Tensor& a, std::size_t flat_index);
Tensor reshape(const Tensor& a, Shape shape);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Zero-padded cross-correlation by direct summation.
// input N x Cin x H x W, kernel Cout x Cin x k x k (k odd), bias {Cout}.
// Output extent is (H + 2*padding - k) / stride + 1 per spatial axis.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t padding,
              std::size_t stride = 1);
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t padding,
              std::size_t stride = 1);

// N x C x H x W -> N x C x 1 x 1.
Tensor global_avg_pool_spatial(const Tensor& f);
// Gradient goes to the first maximal position in row-major order.
Tensor global_max_pool_spatial(const Tensor& f);

// N x C x H x W -> N x 1 x H x W.
Tensor channel_avg_pool(const Tensor& f);
// Gradient goes to the lowest-index maximal channel.
Tensor channel_max_pool(const Tensor& f);

// N x Ca x H x W ++ N x Cb x H x W -> N x (Ca + Cb) x H x W.
Tensor concat_channel(const Tensor& a, const Tensor& b);

// x (... x Cin) times w^T, w is Cout x Cin. No bias.
Tensor linear(const Tensor& x, const Tensor& w);

// Mean over the batch of -log softmax(logits)[label]; logits are N x K.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::uint32_t> labels);

}  // namespace cbam::ops
