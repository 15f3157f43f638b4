#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cbam/data.hpp"
#include "cbam/model.hpp"

namespace cbam {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr0 = 0.1;
  std::size_t lr_drop_every = 10;
  double lr_drop_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::uint64_t seed = 0;

  void validate() const;
};

// lr0 * lr_drop_factor ^ floor(epoch / lr_drop_every).
double learning_rate(const TrainConfig& cfg, std::size_t epoch);

struct SgdState {
  ParamMap velocity;
};

// Classical momentum with L2 decay folded into the gradient:
//   g += weight_decay * w;  v = momentum * v + g;  w -= lr * v.
void sgd_step(ParamMap& params, const ParamMap& grads, SgdState& state, double lr, double momentum,
              double weight_decay);

// 100 * fraction of rows whose argmax (lowest index on ties) misses the label.
double top1_error(const Tensor& logits, std::span<const std::uint32_t> labels);

double evaluate_top1_error(const TinyNetSpec& spec, const ParamMap& params, const Dataset& data,
                           std::size_t batch_size = 128);
double evaluate_loss(const TinyNetSpec& spec, const ParamMap& params, const Dataset& data,
                     std::size_t batch_size = 128);

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // mean over the epoch's minibatches
  double val_error = 0.0;   // NaN when no validation set is given
};

struct TrainResult {
  ParamMap params;
  double initial_loss = 0.0;  // full training-set loss before the first step
  std::vector<EpochMetrics> history;

  double final_train_loss() const { return history.back().train_loss; }
  double final_val_error() const { return history.back().val_error; }
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Minibatch SGD with softmax cross-entropy. The sample order of each epoch is
// a seeded shuffle, so a fixed config reproduces parameters bit-for-bit.
// Throws DivergenceDetected when the loss stops being finite.
TrainResult train(const TinyNetSpec& spec, ParamMap params, const Dataset& train_set,
                  const Dataset* val_set, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

struct AblationVariant {
  std::string name;
  BlockAttention attention;
};

struct AblationRow {
  std::string variant;
  std::size_t params = 0;
  double final_train_loss = 0.0;
  double val_top1_err = 0.0;
  double seconds = 0.0;
  std::uint64_t seed = 0;
};

struct AblationReport {
  std::vector<AblationRow> rows;

  // Header variant,params,final_train_loss,val_top1_err,seconds,seed.
  std::string to_csv() const;
  std::string to_json() const;
  void write(const std::filesystem::path& csv, const std::filesystem::path& json) const;

  // Mean val error over the rows of one variant.
  double mean_val_error(const std::string& variant) const;
};

struct AblationOptions {
  std::size_t jobs = 1;
  // Wall-clock seconds are only recorded when asked, so that default reports
  // are byte-identical across runs.
  bool record_time = false;
};

// Trains every variant once per seed. Rows come back variant-major in the
// order given, whatever the worker count.
AblationReport run_ablation(const TinyNetSpec& base, const std::vector<AblationVariant>& variants,
                            const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                            std::span<const std::uint64_t> seeds, const AblationOptions& options = {});

// Channel pooling study: baseline, SE (avg), max, avg+max; channel-only.
std::vector<AblationVariant> channel_pooling_variants(std::size_t reduction_ratio = 16);
// Spatial descriptor study: {1x1 conv, channel pooling} x {k=3, k=7}.
std::vector<AblationVariant> spatial_variants(std::size_t reduction_ratio = 16);
// Arrangement study: channel->spatial, spatial->channel, parallel.
std::vector<AblationVariant> arrangement_variants(std::size_t reduction_ratio = 16);

std::string default_variant_name(const BlockAttention& attention);

}  // namespace cbam
