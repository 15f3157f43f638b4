#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "cbam/autograd.hpp"
#include "cbam/checkpoint.hpp"
#include "cbam/errors.hpp"
#include "cbam/model.hpp"
#include "cbam/ops.hpp"
#include "generators.hpp"

using namespace cbam;

namespace {

CbamConfig small_cbam() {
  CbamConfig cfg;
  cfg.kernel_size = 3;
  cfg.reduction_ratio = 2;
  return cfg;
}

TinyNetSpec two_block_net(const BlockAttention& attention) {
  TinyNetSpec spec;
  spec.input_channels = 1;
  spec.stem_channels = 2;
  spec.num_classes = 3;
  spec.blocks = {{2, 2, attention, 1}, {2, 3, attention, 2}};
  return spec;
}

void zero_conv_path(ParamMap& params, const std::string& prefix) {
  for (const char* name : {"conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias"}) {
    auto& t = params.at(prefix + name);
    t = Tensor::zeros(t.shape());
  }
}

}  // namespace

TEST(BlockTest, ZeroConvPathGivesReluOfInput) {
  std::mt19937_64 rng(1);
  for (auto attention : {BlockAttention::none(), BlockAttention::se(2),
                         BlockAttention::with_cbam(small_cbam())}) {
    TinyNetSpec spec;
    spec.stem_channels = 4;
    spec.blocks = {{4, 4, attention, 1}};
    auto params = init_net(spec, 3);
    zero_conv_path(params, block_prefix(0));
    auto x = gen::values({2, 4, 5, 5}, rng);
    auto y = block_forward(x, spec.blocks[0], params, block_prefix(0));
    EXPECT_TRUE(identical(y, ops::relu(x)));
  }
}

TEST(BlockTest, GatesForcedToOneMatchPlainBlock) {
  std::mt19937_64 rng(2);
  for (std::size_t stride : {1, 2}) {
    ResidualBlockSpec plain{4, 6, BlockAttention::none(), stride};
    ResidualBlockSpec attended{4, 6, BlockAttention::with_cbam(small_cbam()), stride};
    TinyNetSpec a, b;
    a.stem_channels = b.stem_channels = 4;
    a.blocks = {plain};
    b.blocks = {attended};
    auto pa = init_net(a, 9), pb = init_net(b, 9);
    auto x = gen::values({2, 4, 6, 6}, rng);
    auto unit_gate = [](const Tensor& t) { return ops::broadcast_mul(Tensor::ones(t.shape()), t); };
    auto forced = residual_block(x, attended, pb, block_prefix(0), unit_gate);
    EXPECT_TRUE(identical(forced, block_forward(x, plain, pa, block_prefix(0))));
  }
}

TEST(BlockTest, ChannelMismatchThrows) {
  TinyNetSpec spec;
  spec.stem_channels = 4;
  spec.blocks = {{4, 4, BlockAttention::none(), 1}};
  auto params = init_net(spec, 1);
  EXPECT_THROW(block_forward(Tensor::zeros({1, 3, 4, 4}), spec.blocks[0], params, block_prefix(0)),
               ShapeMismatch);
}

TEST(NetTest, OutputShapeContract) {
  std::mt19937_64 rng(3);
  auto spec = default_net_spec(BlockAttention::with_cbam(CbamConfig{}), 3, 10);
  auto params = init_net(spec, 0);
  auto out = net_forward_detailed(gen::values({2, 3, 8, 8}, rng), spec, params);
  EXPECT_EQ(out.logits.shape(), (Shape{2, 10}));
  EXPECT_EQ(out.features.shape(), (Shape{2, 32, 4, 4}));
}

TEST(NetTest, ZeroParametersGiveZeroLogits) {
  std::mt19937_64 rng(4);
  auto spec = default_net_spec(BlockAttention::with_cbam(CbamConfig{}), 3, 5);
  auto logits = net_forward(gen::values({3, 3, 8, 8}, rng), spec, zero_net(spec));
  for (double v : logits.data()) EXPECT_EQ(v, 0.0);
}

TEST(NetTest, BatchPermutationPermutesLogits) {
  std::mt19937_64 rng(5);
  auto spec = two_block_net(BlockAttention::with_cbam(small_cbam()));
  auto params = init_net(spec, 2);
  const std::size_t n = 5, per = 36;
  auto images = gen::values({n, 1, 6, 6}, rng);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<double> permuted;
  for (std::size_t i : order)
    permuted.insert(permuted.end(), images.data().begin() + i * per, images.data().begin() + (i + 1) * per);
  auto base = net_forward(images, spec, params);
  auto moved = net_forward(Tensor({n, 1, 6, 6}, permuted), spec, params);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(moved.at(r, k), base.at(order[r], k));
  // A single sample alone produces the same row as inside the batch.
  std::vector<double> one(images.data().begin(), images.data().begin() + per);
  auto single = net_forward(Tensor({1, 1, 6, 6}, one), spec, params);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(single.at(0, k), base.at(0, k));
}

TEST(NetTest, TwoBlockGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  auto spec = two_block_net(BlockAttention::with_cbam(small_cbam()));
  auto params = init_net(spec, 4);
  // Zero biases put relu exactly at its kink wherever a patch is all zero.
  for (auto& [name, t] : params)
    if (name.ends_with(".bias")) t = gen::values(t.shape(), rng, -0.5, 0.5);
  auto image = gen::values({2, 1, 6, 6}, rng);
  const std::vector<std::uint32_t> labels = {0, 2};
  auto loss_of = [&](const ParamMap& p) {
    return ops::softmax_cross_entropy(net_forward(image, spec, p), labels);
  };
  GradTape tape;
  ParamMap watched;
  for (const auto& [name, t] : params) watched.emplace(name, tape.watch(t));
  auto grads = backward(tape, loss_of(watched));
  for (const auto& [name, t] : params) {
    auto numeric = finite_diff_grad(
        [&](const Tensor& v) {
          ParamMap p = params;
          p.at(name) = v;
          return loss_of(p).item();
        },
        t);
    EXPECT_LT(gradient_relative_error(grads[watched.at(name)], numeric), 1e-4) << name;
  }
}

TEST(NetTest, ParamCountsMatchEnumeration) {
  for (auto attention : {BlockAttention::none(), BlockAttention::se(4),
                         BlockAttention::with_cbam(CbamConfig{}), BlockAttention::with_cbam(small_cbam())}) {
    auto spec = default_net_spec(attention, 3, 10);
    EXPECT_EQ(net_param_count(spec), count_elements(init_net(spec, 0)));
  }
}

TEST(NetTest, AttentionOverheadIsSumOfModuleCounts) {
  CbamConfig cfg;
  cfg.reduction_ratio = 4;
  auto plain = default_net_spec(BlockAttention::none());
  auto attended = default_net_spec(BlockAttention::with_cbam(cfg));
  std::size_t overhead = 0;
  for (const auto& b : attended.blocks) overhead += param_count(cfg, b.out_channels);
  EXPECT_EQ(net_param_count(attended) - net_param_count(plain), overhead);
}

TEST(NetTest, SharedTensorNamesShareInitialValues) {
  auto plain = init_net(default_net_spec(BlockAttention::none()), 5);
  auto attended = init_net(default_net_spec(BlockAttention::with_cbam(CbamConfig{})), 5);
  for (const auto& [name, t] : plain) EXPECT_TRUE(identical(t, attended.at(name))) << name;
}

TEST(NetTest, SpecValidationRejectsBrokenChain) {
  TinyNetSpec spec;
  spec.stem_channels = 4;
  spec.blocks = {{4, 8, BlockAttention::none(), 1}, {6, 8, BlockAttention::none(), 1}};
  EXPECT_THROW(spec.validate(), ConfigError);
}

TEST(CheckpointTest, RoundTripIsBitExact) {
  auto dir = std::filesystem::temp_directory_path() / "cbam_model_ckpt";
  std::filesystem::create_directories(dir);
  CbamConfig cfg;
  cfg.spatial_descriptor = SpatialDescriptor::OneByOneConv;
  cfg.arrangement = Arrangement::Parallel;
  Checkpoint ckpt{default_net_spec(BlockAttention::with_cbam(cfg), 1, 4), {}};
  ckpt.params = init_net(ckpt.spec, 17);
  save_checkpoint(dir / "m.json", ckpt);
  auto back = load_checkpoint(dir / "m.json");
  EXPECT_EQ(back.spec.blocks.size(), ckpt.spec.blocks.size());
  for (std::size_t i = 0; i < back.spec.blocks.size(); ++i)
    EXPECT_EQ(back.spec.blocks[i].attention, ckpt.spec.blocks[i].attention);
  ASSERT_EQ(back.params.size(), ckpt.params.size());
  for (const auto& [name, t] : ckpt.params) EXPECT_TRUE(identical(t, back.params.at(name))) << name;
  std::filesystem::remove_all(dir);
}
