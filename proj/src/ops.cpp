#include "cbam/ops.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>

#include "cbam/autograd.hpp"
#include "cbam/errors.hpp"

namespace cbam::ops {

namespace {

Tensor finish(Tensor out, const std::vector<Tensor>& inputs, GradTape::BackwardFn backward) {
#ifndef NDEBUG
  if (std::ranges::all_of(inputs, [](const Tensor& t) { return all_finite(t); })) {
    assert(all_finite(out) && "non-finite output from finite inputs");
  }
#endif
  GradTape* tape = GradTape::active();
  if (tape == nullptr) return out;
  if (std::ranges::none_of(inputs, [tape](const Tensor& t) { return tape->owns(t); })) {
    return out;
  }
  return tape->record(out, inputs, std::move(backward));
}

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) {
    throw ShapeMismatch(std::string(what) + " expects an N x C x H x W tensor, got " +
                        to_string(t.shape()));
  }
}

// Per-axis strides into an operand aligned to `out`, with 0 on broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& operand, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  const std::size_t lead = out.size() - operand.size();
  std::size_t stride = 1;
  for (std::size_t i = operand.size(); i-- > 0;) {
    strides[lead + i] = operand[i] == 1 ? 0 : stride;
    stride *= operand[i];
  }
  return strides;
}

// Calls f(out_index, a_index, b_index) for every output element in order.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  const std::size_t rank = out.size();
  const std::size_t total = numel(out);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < total; ++i) {
    f(i, ia, ib);
    for (std::size_t axis = rank; axis-- > 0;) {
      if (++counter[axis] < out[axis]) {
        ia += sa[axis];
        ib += sb[axis];
        break;
      }
      ia -= sa[axis] * (out[axis] - 1);
      ib -= sb[axis] * (out[axis] - 1);
      counter[axis] = 0;
    }
  }
}

enum class BinaryKind { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  std::vector<double> out(numel(out_shape));
  const auto ad = a.data();
  const auto bd = b.data();
  for_each_broadcast(out_shape, a.shape(), b.shape(), [&](std::size_t i, std::size_t ia, std::size_t ib) {
    switch (kind) {
      case BinaryKind::Add: out[i] = ad[ia] + bd[ib]; break;
      case BinaryKind::Sub: out[i] = ad[ia] - bd[ib]; break;
      case BinaryKind::Mul: out[i] = ad[ia] * bd[ib]; break;
    }
  });
  Tensor result(out_shape, std::move(out));
  const Tensor av = a.detached(), bv = b.detached();
  return finish(result, {a, b}, [av, bv, kind, out_shape](const Tensor& g, const std::vector<bool>& needs) {
    std::vector<double> ga(needs[0] ? av.numel() : 0, 0.0);
    std::vector<double> gb(needs[1] ? bv.numel() : 0, 0.0);
    const auto gd = g.data();
    const auto ad = av.data();
    const auto bd = bv.data();
    for_each_broadcast(out_shape, av.shape(), bv.shape(), [&](std::size_t i, std::size_t ia, std::size_t ib) {
      switch (kind) {
        case BinaryKind::Add:
          if (needs[0]) ga[ia] += gd[i];
          if (needs[1]) gb[ib] += gd[i];
          break;
        case BinaryKind::Sub:
          if (needs[0]) ga[ia] += gd[i];
          if (needs[1]) gb[ib] -= gd[i];
          break;
        case BinaryKind::Mul:
          if (needs[0]) ga[ia] += gd[i] * bd[ib];
          if (needs[1]) gb[ib] += gd[i] * ad[ia];
          break;
      }
    });
    std::vector<Tensor> grads(2);
    if (needs[0]) grads[0] = Tensor(av.shape(), std::move(ga));
    if (needs[1]) grads[1] = Tensor(bv.shape(), std::move(gb));
    return grads;
  });
}

// Output positions o in [lo, hi) whose input coordinate o * stride + offset
// lands inside [0, in_extent).
struct Range {
  std::size_t lo, hi;
};

Range valid_outputs(std::size_t out_extent, std::size_t in_extent, std::ptrdiff_t offset,
                    std::size_t stride) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  std::ptrdiff_t lo = offset >= 0 ? 0 : (-offset + s - 1) / s;
  const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(in_extent) - 1 - offset;
  std::ptrdiff_t hi = last < 0 ? 0 : last / s + 1;
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(out_extent));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeMismatch("cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Sub); }
Tensor broadcast_mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Mul); }

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out = a.to_vector();
  for (auto& v : out) v *= factor;
  return finish(Tensor(a.shape(), std::move(out)), {a},
                [factor](const Tensor& g, const std::vector<bool>&) {
                  std::vector<double> ga = g.to_vector();
                  for (auto& v : ga) v *= factor;
                  return std::vector<Tensor>{Tensor(g.shape(), std::move(ga))};
                });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  const Shape shape = a.shape();
  return finish(Tensor::scalar(acc), {a}, [shape](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{Tensor::full(shape, g[0])};
  });
}

Tensor take(const Tensor& a, std::size_t flat_index) {
  if (flat_index >= a.numel()) {
    throw ShapeMismatch("index " + std::to_string(flat_index) + " out of range for " +
                        to_string(a.shape()));
  }
  const Shape shape = a.shape();
  return finish(Tensor::scalar(a[flat_index]), {a},
                [shape, flat_index](const Tensor& g, const std::vector<bool>&) {
                  std::vector<double> ga(numel(shape), 0.0);
                  ga[flat_index] = g[0];
                  return std::vector<Tensor>{Tensor(shape, std::move(ga))};
                });
}

Tensor reshape(const Tensor& a, Shape shape) {
  const Shape original = a.shape();
  return finish(a.detached().reshaped(std::move(shape)), {a},
                [original](const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{g.reshaped(original)};
                });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out = x.to_vector();
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  const Tensor xv = x.detached();
  return finish(Tensor(x.shape(), std::move(out)), {x},
                [xv](const Tensor& g, const std::vector<bool>&) {
                  std::vector<double> gx = g.to_vector();
                  for (std::size_t i = 0; i < gx.size(); ++i) {
                    if (!(xv[i] > 0.0)) gx[i] = 0.0;
                  }
                  return std::vector<Tensor>{Tensor(xv.shape(), std::move(gx))};
                });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out = x.to_vector();
  // Saturated logits would round to exactly 0 or 1; keep gates inside (0, 1).
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  for (auto& v : out) v = std::clamp(1.0 / (1.0 + std::exp(-v)), lo, hi);
  Tensor result(x.shape(), std::move(out));
  const Tensor yv = result;
  return finish(result, {x}, [yv](const Tensor& g, const std::vector<bool>&) {
    std::vector<double> gx = g.to_vector();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= yv[i] * (1.0 - yv[i]);
    return std::vector<Tensor>{Tensor(yv.shape(), std::move(gx))};
  });
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t padding, std::size_t stride) {
  require_rank4(kernel, "conv2d kernel");
  return conv2d(input, kernel, Tensor::zeros({kernel.dim(0)}), padding, stride);
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t padding,
              std::size_t stride) {
  require_rank4(input, "conv2d");
  require_rank4(kernel, "conv2d kernel");
  const std::size_t N = input.dim(0), Ci = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t Co = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != Ci) {
    throw ShapeMismatch("kernel expects " + std::to_string(kernel.dim(1)) +
                        " input channels, input has " + std::to_string(Ci));
  }
  if (kernel.dim(3) != k) throw InvalidKernel("kernel must be square, got " + to_string(kernel.shape()));
  if (k % 2 == 0) throw InvalidKernel("kernel size must be odd, got " + std::to_string(k));
  if (bias.shape() != Shape{Co}) {
    throw ShapeMismatch("bias must be {" + std::to_string(Co) + "}, got " + to_string(bias.shape()));
  }
  if (stride == 0) throw InvalidKernel("stride must be positive");
  if (H + 2 * padding < k || W + 2 * padding < k) {
    throw ShapeMismatch("input " + to_string(input.shape()) + " too small for kernel " +
                        std::to_string(k) + " with padding " + std::to_string(padding));
  }
  const std::size_t Ho = (H + 2 * padding - k) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - k) / stride + 1;
  const auto pad = static_cast<std::ptrdiff_t>(padding);

  // Valid output ranges for each kernel tap, shared by forward and backward.
  std::vector<Range> rows(k), cols(k);
  for (std::size_t t = 0; t < k; ++t) {
    rows[t] = valid_outputs(Ho, H, static_cast<std::ptrdiff_t>(t) - pad, stride);
    cols[t] = valid_outputs(Wo, W, static_cast<std::ptrdiff_t>(t) - pad, stride);
  }

  const auto in = input.data();
  const auto ker = kernel.data();
  const auto b = bias.data();
  std::vector<double> out(N * Co * Ho * Wo, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t co = 0; co < Co; ++co) {
      double* o = out.data() + (n * Co + co) * Ho * Wo;
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const double* ip = in.data() + (n * Ci + ci) * H * W;
        const double* kp = ker.data() + (co * Ci + ci) * k * k;
        for (std::size_t kh = 0; kh < k; ++kh) {
          for (std::size_t kw = 0; kw < k; ++kw) {
            const double w = kp[kh * k + kw];
            for (std::size_t oh = rows[kh].lo; oh < rows[kh].hi; ++oh) {
              const std::size_t ih = oh * stride + kh - padding;
              double* orow = o + oh * Wo;
              const std::size_t first = ih * W + cols[kw].lo * stride + kw - padding;
              for (std::size_t ow = cols[kw].lo, ii = first; ow < cols[kw].hi; ++ow, ii += stride) {
                orow[ow] += w * ip[ii];
              }
            }
          }
        }
      }
      for (std::size_t j = 0; j < Ho * Wo; ++j) o[j] += b[co];
    }
  }

  const Tensor iv = input.detached(), kv = kernel.detached();
  return finish(
      Tensor({N, Co, Ho, Wo}, std::move(out)), {input, kernel, bias},
      [iv, kv, N, Ci, H, W, Co, k, Ho, Wo, padding, stride, rows, cols](
          const Tensor& g, const std::vector<bool>& needs) {
        const auto gd = g.data();
        const auto in = iv.data();
        const auto ker = kv.data();
        std::vector<Tensor> grads(3);
        if (needs[0]) {
          std::vector<double> gi(N * Ci * H * W, 0.0);
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t co = 0; co < Co; ++co) {
              const double* go = gd.data() + (n * Co + co) * Ho * Wo;
              for (std::size_t ci = 0; ci < Ci; ++ci) {
                double* gp = gi.data() + (n * Ci + ci) * H * W;
                const double* kp = ker.data() + (co * Ci + ci) * k * k;
                for (std::size_t kh = 0; kh < k; ++kh) {
                  for (std::size_t kw = 0; kw < k; ++kw) {
                    const double w = kp[kh * k + kw];
                    for (std::size_t oh = rows[kh].lo; oh < rows[kh].hi; ++oh) {
                      const std::size_t ih = oh * stride + kh - padding;
                      const double* orow = go + oh * Wo;
                      const std::size_t first = ih * W + cols[kw].lo * stride + kw - padding;
                      for (std::size_t ow = cols[kw].lo, ii = first; ow < cols[kw].hi;
                           ++ow, ii += stride) {
                        gp[ii] += w * orow[ow];
                      }
                    }
                  }
                }
              }
            }
          }
          grads[0] = Tensor(iv.shape(), std::move(gi));
        }
        if (needs[1]) {
          std::vector<double> gk(Co * Ci * k * k, 0.0);
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t co = 0; co < Co; ++co) {
              const double* go = gd.data() + (n * Co + co) * Ho * Wo;
              for (std::size_t ci = 0; ci < Ci; ++ci) {
                const double* ip = in.data() + (n * Ci + ci) * H * W;
                double* gkp = gk.data() + (co * Ci + ci) * k * k;
                for (std::size_t kh = 0; kh < k; ++kh) {
                  for (std::size_t kw = 0; kw < k; ++kw) {
                    double acc = 0.0;
                    for (std::size_t oh = rows[kh].lo; oh < rows[kh].hi; ++oh) {
                      const std::size_t ih = oh * stride + kh - padding;
                      const double* orow = go + oh * Wo;
                      const std::size_t first = ih * W + cols[kw].lo * stride + kw - padding;
                      for (std::size_t ow = cols[kw].lo, ii = first; ow < cols[kw].hi;
                           ++ow, ii += stride) {
                        acc += orow[ow] * ip[ii];
                      }
                    }
                    gkp[kh * k + kw] += acc;
                  }
                }
              }
            }
          }
          grads[1] = Tensor(kv.shape(), std::move(gk));
        }
        if (needs[2]) {
          std::vector<double> gb(Co, 0.0);
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t co = 0; co < Co; ++co) {
              const double* go = gd.data() + (n * Co + co) * Ho * Wo;
              for (std::size_t j = 0; j < Ho * Wo; ++j) gb[co] += go[j];
            }
          }
          grads[2] = Tensor({Co}, std::move(gb));
        }
        return grads;
      });
}

Tensor global_avg_pool_spatial(const Tensor& f) {
  require_rank4(f, "global_avg_pool_spatial");
  const std::size_t N = f.dim(0), C = f.dim(1), HW = f.dim(2) * f.dim(3);
  const auto d = f.data();
  std::vector<double> out(N * C);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    double acc = 0.0;
    for (std::size_t j = 0; j < HW; ++j) acc += d[nc * HW + j];
    out[nc] = acc / static_cast<double>(HW);
  }
  const Shape shape = f.shape();
  return finish(Tensor({N, C, 1, 1}, std::move(out)), {f},
                [shape, N, C, HW](const Tensor& g, const std::vector<bool>&) {
                  std::vector<double> gf(N * C * HW);
                  for (std::size_t nc = 0; nc < N * C; ++nc) {
                    const double v = g[nc] / static_cast<double>(HW);
                    std::fill_n(gf.begin() + nc * HW, HW, v);
                  }
                  return std::vector<Tensor>{Tensor(shape, std::move(gf))};
                });
}

Tensor global_max_pool_spatial(const Tensor& f) {
  require_rank4(f, "global_max_pool_spatial");
  const std::size_t N = f.dim(0), C = f.dim(1), HW = f.dim(2) * f.dim(3);
  const auto d = f.data();
  std::vector<double> out(N * C);
  std::vector<std::size_t> argmax(N * C);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < HW; ++j) {
      if (d[nc * HW + j] > d[nc * HW + best]) best = j;
    }
    argmax[nc] = nc * HW + best;
    out[nc] = d[argmax[nc]];
  }
  const Shape shape = f.shape();
  return finish(Tensor({N, C, 1, 1}, std::move(out)), {f},
                [shape, argmax](const Tensor& g, const std::vector<bool>&) {
                  std::vector<double> gf(numel(shape), 0.0);
                  for (std::size_t nc = 0; nc < argmax.size(); ++nc) gf[argmax[nc]] = g[nc];
                  return std::vector<Tensor>{Tensor(shape, std::move(gf))};
                });
}

Tensor channel_avg_pool(const Tensor& f) {
  require_rank4(f, "channel_avg_pool");
  const std::size_t N = f.dim(0), C = f.dim(1), HW = f.dim(2) * f.dim(3);
  const auto d = f.data();
  std::vector<double> out(N * HW);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t j = 0; j < HW; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < C; ++c) acc += d[(n * C + c) * HW + j];
      out[n * HW + j] = acc / static_cast<double>(C);
    }
  }
  const Shape shape = f.shape();
  return finish(Tensor({N, 1, f.dim(2), f.dim(3)}, std::move(out)), {f},
                [shape, N, C, HW](const Tensor& g, const std::vector<bool>&) {
                  std::vector<double> gf(N * C * HW);
                  for (std::size_t n = 0; n < N; ++n) {
                    for (std::size_t c = 0; c < C; ++c) {
                      for (std::size_t j = 0; j < HW; ++j) {
                        gf[(n * C + c) * HW + j] = g[n * HW + j] / static_cast<double>(C);
                      }
                    }
                  }
                  return std::vector<Tensor>{Tensor(shape, std::move(gf))};
                });
}

Tensor channel_max_pool(const Tensor& f) {
  require_rank4(f, "channel_max_pool");
  const std::size_t N = f.dim(0), C = f.dim(1), HW = f.dim(2) * f.dim(3);
  const auto d = f.data();
  std::vector<double> out(N * HW);
  std::vector<std::size_t> argmax(N * HW);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t j = 0; j < HW; ++j) {
      std::size_t best = n * C * HW + j;
      for (std::size_t c = 1; c < C; ++c) {
        const std::size_t idx = (n * C + c) * HW + j;
        if (d[idx] > d[best]) best = idx;
      }
      argmax[n * HW + j] = best;
      out[n * HW + j] = d[best];
    }
  }
  const Shape shape = f.shape();
  return finish(Tensor({N, 1, f.dim(2), f.dim(3)}, std::move(out)), {f},
                [shape, argmax](const Tensor& g, const std::vector<bool>&) {
                  std::vector<double> gf(numel(shape), 0.0);
                  for (std::size_t i = 0; i < argmax.size(); ++i) gf[argmax[i]] = g[i];
                  return std::vector<Tensor>{Tensor(shape, std::move(gf))};
                });
}

Tensor concat_channel(const Tensor& a, const Tensor& b) {
  require_rank4(a, "concat_channel");
  require_rank4(b, "concat_channel");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeMismatch("concat_channel of " + to_string(a.shape()) + " and " +
                        to_string(b.shape()));
  }
  const std::size_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), HW = a.dim(2) * a.dim(3);
  std::vector<double> out;
  out.reserve(N * (Ca + Cb) * HW);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t n = 0; n < N; ++n) {
    out.insert(out.end(), ad.begin() + n * Ca * HW, ad.begin() + (n + 1) * Ca * HW);
    out.insert(out.end(), bd.begin() + n * Cb * HW, bd.begin() + (n + 1) * Cb * HW);
  }
  const Shape sa = a.shape(), sb = b.shape();
  return finish(Tensor({N, Ca + Cb, a.dim(2), a.dim(3)}, std::move(out)), {a, b},
                [sa, sb, N, Ca, Cb, HW](const Tensor& g, const std::vector<bool>& needs) {
                  const auto gd = g.data();
                  std::vector<double> ga, gb;
                  for (std::size_t n = 0; n < N; ++n) {
                    const auto base = gd.begin() + n * (Ca + Cb) * HW;
                    if (needs[0]) ga.insert(ga.end(), base, base + Ca * HW);
                    if (needs[1]) gb.insert(gb.end(), base + Ca * HW, base + (Ca + Cb) * HW);
                  }
                  std::vector<Tensor> grads(2);
                  if (needs[0]) grads[0] = Tensor(sa, std::move(ga));
                  if (needs[1]) grads[1] = Tensor(sb, std::move(gb));
                  return grads;
                });
}

Tensor linear(const Tensor& x, const Tensor& w) {
  if (w.rank() != 2) throw ShapeMismatch("linear weight must be Cout x Cin, got " + to_string(w.shape()));
  const std::size_t Cout = w.dim(0), Cin = w.dim(1);
  if (x.shape().back() != Cin) {
    throw ShapeMismatch("linear input " + to_string(x.shape()) + " does not end in " +
                        std::to_string(Cin));
  }
  const std::size_t rows = x.numel() / Cin;
  const auto xd = x.data();
  const auto wd = w.data();
  std::vector<double> out(rows * Cout);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < Cout; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < Cin; ++i) acc += xd[r * Cin + i] * wd[o * Cin + i];
      out[r * Cout + o] = acc;
    }
  }
  Shape out_shape = x.shape();
  out_shape.back() = Cout;
  const Tensor xv = x.detached(), wv = w.detached();
  return finish(Tensor(out_shape, std::move(out)), {x, w},
                [xv, wv, rows, Cin, Cout](const Tensor& g, const std::vector<bool>& needs) {
                  const auto gd = g.data();
                  const auto xd = xv.data();
                  const auto wd = wv.data();
                  std::vector<Tensor> grads(2);
                  if (needs[0]) {
                    std::vector<double> gx(rows * Cin, 0.0);
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t o = 0; o < Cout; ++o) {
                        const double go = gd[r * Cout + o];
                        for (std::size_t i = 0; i < Cin; ++i) gx[r * Cin + i] += go * wd[o * Cin + i];
                      }
                    }
                    grads[0] = Tensor(xv.shape(), std::move(gx));
                  }
                  if (needs[1]) {
                    std::vector<double> gw(Cout * Cin, 0.0);
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t o = 0; o < Cout; ++o) {
                        const double go = gd[r * Cout + o];
                        for (std::size_t i = 0; i < Cin; ++i) gw[o * Cin + i] += go * xd[r * Cin + i];
                      }
                    }
                    grads[1] = Tensor(wv.shape(), std::move(gw));
                  }
                  return grads;
                });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::uint32_t> labels) {
  if (logits.rank() != 2) {
    throw ShapeMismatch("logits must be N x K, got " + to_string(logits.shape()));
  }
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  if (labels.size() != N) {
    throw ShapeMismatch(std::to_string(labels.size()) + " labels for " + std::to_string(N) +
                        " rows of logits");
  }
  const auto d = logits.data();
  std::vector<double> probs(N * K);
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    if (labels[n] >= K) throw LabelOutOfRange(std::to_string(labels[n]) + " >= " + std::to_string(K));
    const double* row = d.data() + n * K;
    const double m = *std::max_element(row, row + K);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - m);
    const double log_z = m + std::log(z);
    for (std::size_t k = 0; k < K; ++k) probs[n * K + k] = std::exp(row[k] - log_z);
    loss += log_z - row[labels[n]];
  }
  loss /= static_cast<double>(N);
  std::vector<std::uint32_t> lab(labels.begin(), labels.end());
  const Shape shape = logits.shape();
  return finish(Tensor::scalar(loss), {logits},
                [probs, lab, shape, N, K](const Tensor& g, const std::vector<bool>&) {
                  std::vector<double> gl = probs;
                  for (std::size_t n = 0; n < N; ++n) gl[n * K + lab[n]] -= 1.0;
                  const double s = g[0] / static_cast<double>(N);
                  for (auto& v : gl) v *= s;
                  return std::vector<Tensor>{Tensor(shape, std::move(gl))};
                });
}

}  // namespace cbam::ops
