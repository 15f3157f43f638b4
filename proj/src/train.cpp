#include "cbam/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "cbam/autograd.hpp"
#include "cbam/config.hpp"
#include "cbam/errors.hpp"
#include "cbam/ops.hpp"
#include "json.hpp"

namespace cbam {

void TrainConfig::validate() const {
  if (epochs == 0 || batch_size == 0 || lr_drop_every == 0) {
    throw ConfigError("epochs, batch_size and lr_drop_every must be positive");
  }
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (!(lr_drop_factor > 0.0 && lr_drop_factor < 1.0)) throw ConfigError("lr_drop_factor must be in (0, 1)");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
}

double learning_rate(const TrainConfig& cfg, std::size_t epoch) {
  const auto drops = static_cast<double>(epoch / cfg.lr_drop_every);
  return cfg.lr0 * std::pow(cfg.lr_drop_factor, drops);
}

void sgd_step(ParamMap& params, const ParamMap& grads, SgdState& state, double lr, double momentum,
              double weight_decay) {
  for (auto& [name, w] : params) {
    auto g_it = grads.find(name);
    if (g_it == grads.end()) continue;
    const Tensor& g = g_it->second;
    if (g.shape() != w.shape()) throw ShapeMismatch("gradient shape mismatch for " + name);
    auto v_it = state.velocity.find(name);
    std::vector<double> v = v_it == state.velocity.end() ? std::vector<double>(w.numel(), 0.0)
                                                         : v_it->second.to_vector();
    std::vector<double> updated = w.to_vector();
    for (std::size_t i = 0; i < updated.size(); ++i) {
      const double step = g[i] + weight_decay * updated[i];
      v[i] = momentum * v[i] + step;
      updated[i] -= lr * v[i];
    }
    state.velocity[name] = Tensor(w.shape(), std::move(v));
    w = Tensor(w.shape(), std::move(updated));
  }
}

namespace {

std::size_t count_top1_misses(const Tensor& logits, std::span<const std::uint32_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeMismatch("logits " + to_string(logits.shape()) + " vs " +
                        std::to_string(labels.size()) + " labels");
  }
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  std::size_t wrong = 0;
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k) {
      if (logits[n * K + k] > logits[n * K + best]) best = k;
    }
    if (best != labels[n]) ++wrong;
  }
  return wrong;
}

}  // namespace

double top1_error(const Tensor& logits, std::span<const std::uint32_t> labels) {
  const std::size_t wrong = count_top1_misses(logits, labels);
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(labels.size());
}

namespace {

template <typename F>
void for_each_batch(std::size_t count, std::size_t batch_size, F&& f) {
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < count; begin += batch_size) {
    const std::size_t end = std::min(count, begin + batch_size);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    f(std::span<const std::size_t>(idx));
  }
}

}  // namespace

double evaluate_top1_error(const TinyNetSpec& spec, const ParamMap& params, const Dataset& data,
                           std::size_t batch_size) {
  std::size_t wrong = 0;
  for_each_batch(data.size(), batch_size, [&](std::span<const std::size_t> idx) {
    const auto labels = data.batch_labels(idx);
    wrong += count_top1_misses(net_forward(data.batch_images(idx), spec, params), labels);
  });
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(data.size());
}

double evaluate_loss(const TinyNetSpec& spec, const ParamMap& params, const Dataset& data,
                     std::size_t batch_size) {
  double total = 0.0;
  for_each_batch(data.size(), batch_size, [&](std::span<const std::size_t> idx) {
    const auto labels = data.batch_labels(idx);
    const Tensor loss = ops::softmax_cross_entropy(net_forward(data.batch_images(idx), spec, params), labels);
    total += loss.item() * static_cast<double>(idx.size());
  });
  return total / static_cast<double>(data.size());
}

TrainResult train(const TinyNetSpec& spec, ParamMap params, const Dataset& train_set,
                  const Dataset* val_set, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  spec.validate();
  train_set.validate();
  if (train_set.num_classes > spec.num_classes) {
    throw ConfigError("dataset has " + std::to_string(train_set.num_classes) +
                      " classes, network only " + std::to_string(spec.num_classes));
  }

  TrainResult result;
  result.initial_loss = evaluate_loss(spec, params, train_set);
  if (!std::isfinite(result.initial_loss)) throw DivergenceDetected("initial loss is not finite");

  SgdState state;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);

    const double lr = learning_rate(cfg, epoch);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const auto labels = train_set.batch_labels(idx);

      ParamMap grads;
      double loss_value = 0.0;
      {
        GradTape tape;
        ParamMap watched;
        for (const auto& [name, t] : params) watched[name] = tape.watch(t);
        const Tensor loss =
            ops::softmax_cross_entropy(net_forward(train_set.batch_images(idx), spec, watched), labels);
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
          throw DivergenceDetected("loss became " + std::to_string(loss_value) + " in epoch " +
                                   std::to_string(epoch));
        }
        const Gradients g = backward(tape, loss);
        for (const auto& [name, t] : watched) grads[name] = g[t];
      }
      sgd_step(params, grads, state, lr, cfg.momentum, cfg.weight_decay);
      loss_sum += loss_value * static_cast<double>(idx.size());
      seen += idx.size();
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(seen);
    m.val_error = val_set ? evaluate_top1_error(spec, params, *val_set)
                          : std::numeric_limits<double>::quiet_NaN();
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  result.params = std::move(params);
  return result;
}

namespace {

std::string format_double(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

}  // namespace

std::string AblationReport::to_csv() const {
  std::string out = "variant,params,final_train_loss,val_top1_err,seconds,seed\n";
  for (const auto& r : rows) {
    out += r.variant + "," + std::to_string(r.params) + "," + format_double(r.final_train_loss, 6) +
           "," + format_double(r.val_top1_err, 4) + "," + format_double(r.seconds, 3) + "," +
           std::to_string(r.seed) + "\n";
  }
  return out;
}

std::string AblationReport::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"variant", r.variant},
                         {"params", r.params},
                         {"final_train_loss", r.final_train_loss},
                         {"val_top1_err", r.val_top1_err},
                         {"seconds", r.seconds},
                         {"seed", r.seed}});
  }
  return nlohmann::json{{"rows", rows_json}}.dump(2) + "\n";
}

void AblationReport::write(const std::filesystem::path& csv, const std::filesystem::path& json) const {
  for (const auto& [path, text] : {std::pair{csv, to_csv()}, std::pair{json, to_json()}}) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoFailure("write to " + path.string() + " failed");
  }
}

double AblationReport::mean_val_error(const std::string& variant) const {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.variant == variant) {
      total += r.val_top1_err;
      ++n;
    }
  }
  if (n == 0) throw ConfigError("no rows for variant " + variant);
  return total / static_cast<double>(n);
}

AblationReport run_ablation(const TinyNetSpec& base, const std::vector<AblationVariant>& variants,
                            const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                            std::span<const std::uint64_t> seeds, const AblationOptions& options) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  if (variants.empty()) throw ConfigError("ablation needs at least one variant");
  cfg.validate();

  struct Task {
    std::size_t variant;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    for (auto s : seeds) tasks.push_back({v, s});
  }
  std::vector<AblationRow> rows(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < tasks.size(); i = next.fetch_add(1)) {
      try {
        const auto& variant = variants[tasks[i].variant];
        const TinyNetSpec spec = with_attention(base, variant.attention);
        TrainConfig run_cfg = cfg;
        run_cfg.seed = tasks[i].seed;
        const auto start = std::chrono::steady_clock::now();
        ParamMap params = init_net(spec, tasks[i].seed);
        const std::size_t enumerated = count_elements(params);
        const TrainResult result = train(spec, std::move(params), train_set, &val_set, run_cfg);
        const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
        rows[i] = AblationRow{variant.name,
                              enumerated,
                              result.final_train_loss(),
                              result.final_val_error(),
                              options.record_time ? elapsed.count() : 0.0,
                              tasks[i].seed};
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };

  const std::size_t jobs = std::clamp<std::size_t>(options.jobs, 1, tasks.size());
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return AblationReport{std::move(rows)};
}

std::string default_variant_name(const BlockAttention& attention) {
  switch (attention.kind) {
    case AttentionKind::None: return "baseline";
    case AttentionKind::SE: return "se";
    case AttentionKind::Cbam: break;
  }
  const auto& c = attention.cbam;
  std::string name = "cbam_" + std::string(to_string(c.arrangement)) + "_" +
                     std::string(to_string(c.channel_pooling));
  if (c.has_spatial()) {
    name += "_" + std::string(to_string(c.spatial_descriptor)) + "_k" + std::to_string(c.kernel_size);
  }
  return name + "_r" + std::to_string(c.reduction_ratio);
}

std::vector<AblationVariant> channel_pooling_variants(std::size_t r) {
  CbamConfig max_only = se_config(r);
  max_only.channel_pooling = ChannelPooling::MaxOnly;
  CbamConfig both = se_config(r);
  both.channel_pooling = ChannelPooling::AvgAndMax;
  return {{"baseline", BlockAttention::none()},
          {"se_avg", BlockAttention::se(r)},
          {"channel_max", BlockAttention::with_cbam(max_only)},
          {"channel_avg_max", BlockAttention::with_cbam(both)}};
}

std::vector<AblationVariant> spatial_variants(std::size_t r) {
  std::vector<AblationVariant> out;
  for (auto descriptor : {SpatialDescriptor::OneByOneConv, SpatialDescriptor::ChannelPool}) {
    for (std::size_t k : {3, 7}) {
      CbamConfig c;
      c.arrangement = Arrangement::ChannelThenSpatial;
      c.channel_pooling = ChannelPooling::AvgAndMax;
      c.spatial_descriptor = descriptor;
      c.kernel_size = k;
      c.reduction_ratio = r;
      const std::string tag = descriptor == SpatialDescriptor::ChannelPool ? "pool" : "conv1x1";
      out.push_back({"spatial_" + tag + "_k" + std::to_string(k), BlockAttention::with_cbam(c)});
    }
  }
  return out;
}

std::vector<AblationVariant> arrangement_variants(std::size_t r) {
  std::vector<AblationVariant> out;
  for (auto a : {Arrangement::ChannelThenSpatial, Arrangement::SpatialThenChannel, Arrangement::Parallel}) {
    CbamConfig c;
    c.arrangement = a;
    c.reduction_ratio = r;
    out.push_back({std::string(to_string(a)), BlockAttention::with_cbam(c)});
  }
  return out;
}

}  // namespace cbam
