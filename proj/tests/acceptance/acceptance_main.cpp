// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria. `acceptance 3 5` runs only criteria 3 and 5.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cbam/attention.hpp"
#include "cbam/checkpoint.hpp"
#include "cbam/cli.hpp"
#include "cbam/data.hpp"
#include "cbam/gradcam.hpp"
#include "cbam/gradcheck.hpp"
#include "cbam/model.hpp"
#include "cbam/ops.hpp"
#include "cbam/serialize.hpp"
#include "cbam/train.hpp"
#include "generators.hpp"
#include "oracles.hpp"

using namespace cbam;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail << "first failure: " << what << "; ";
      pass = false;
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

fs::path scratch_dir() {
  auto dir = fs::temp_directory_path() / "cbam_acceptance";
  fs::create_directories(dir);
  return dir;
}

int run_cli(std::vector<std::string> args, std::string* out_text = nullptr) {
  args.insert(args.begin(), "cbam");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (out_text) *out_text = out.str() + err.str();
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Shared by the ablation and Grad-CAM criteria.
SyntheticSpec patch_task() {
  SyntheticSpec s;
  s.num_samples = 2560;
  s.num_classes = 4;
  s.channels = 1;
  s.height = 12;
  s.width = 12;
  s.patch_size = 3;
  s.noise_std = 1.0;
  s.patch_value = 1.5;
  s.seed = 7;
  return s;
}

TinyNetSpec desk_net(const BlockAttention& attention) {
  TinyNetSpec spec;
  spec.input_channels = 1;
  spec.stem_channels = 8;
  spec.num_classes = 4;
  spec.blocks = {{8, 8, attention, 1}, {8, 16, attention, 2}};
  return spec;
}

TrainConfig desk_training() {
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 32;
  cfg.lr0 = 0.05;
  cfg.lr_drop_every = 6;
  cfg.lr_drop_factor = 0.1;
  return cfg;
}

CbamConfig desk_cbam() {
  CbamConfig cfg;
  cfg.reduction_ratio = 4;
  return cfg;
}

// 1. Analytic gradients against central differences.
Verdict gradient_audit() {
  Verdict v;
  const auto start = Clock::now();
  const double tol = 1e-4;
  const std::size_t trials = 20;
  double worst = 0.0;
  std::string worst_name;
  for (const auto& op : gradcheck_op_names()) {
    auto r = check_op_gradient(op, trials, tol, 1);
    v.require(r.passed && r.trials >= trials, op + " rel err " + std::to_string(r.max_rel_error));
    if (r.max_rel_error >= worst) worst = r.max_rel_error, worst_name = op;
  }
  for (const auto& r : check_full_block(trials, tol, 1)) {
    v.require(r.passed, r.name + " rel err " + std::to_string(r.max_rel_error));
    if (r.max_rel_error >= worst) worst = r.max_rel_error, worst_name = r.name;
  }
  const int code = run_cli({"check-grad", "--full-block", "--trials", std::to_string(trials)});
  v.require(code == 0, "check-grad --full-block exited " + std::to_string(code));
  const double elapsed = seconds_since(start);
  v.require(elapsed < 120.0, "runtime " + std::to_string(elapsed) + " s");
  v.detail << gradcheck_op_names().size() << " ops + 9 block configs x " << trials
           << " trials, worst rel err " << worst << " (" << worst_name << "), " << elapsed << " s";
  return v;
}

// 2. Channel attention with average pooling only is the SE gate.
Verdict se_equivalence() {
  Verdict v;
  std::mt19937_64 rng(2024);
  const std::size_t draws = 100;
  for (std::size_t i = 0; i < draws; ++i) {
    Shape shape{gen::pick(rng, 1, 4), gen::pick(rng, 1, 48), gen::pick(rng, 1, 10), gen::pick(rng, 1, 10)};
    const auto cfg = se_config(gen::pick(rng, 1, 16));
    const auto params = init_cbam(cfg, shape[1], rng);
    const auto f = gen::values(shape, rng);
    const auto reference = se_forward(f, params.channel);
    v.require(identical(cbam_forward(f, params), reference), "cbam_forward draw " + std::to_string(i));
    v.require(identical(ops::broadcast_mul(channel_attention(f, params.channel), f), reference),
              "channel_attention draw " + std::to_string(i));
  }
  v.detail << draws << " random (C, r, shape) draws bit-identical";
  return v;
}

// 3. Closed-form parameter counts against allocated weights.
Verdict parameter_law() {
  Verdict v;
  std::size_t cells = 0;
  for (std::size_t c : {4, 16, 64, 256})
    for (std::size_t r : {4, 16})
      for (std::size_t k : {3, 7})
        for (auto d : {SpatialDescriptor::ChannelPool, SpatialDescriptor::OneByOneConv})
          for (auto a : {Arrangement::ChannelThenSpatial, Arrangement::ChannelOnly}) {
            std::size_t avg_count = 0;
            for (auto pooling : {ChannelPooling::AvgOnly, ChannelPooling::MaxOnly, ChannelPooling::AvgAndMax}) {
              CbamConfig cfg;
              cfg.arrangement = a;
              cfg.reduction_ratio = r;
              cfg.kernel_size = k;
              cfg.spatial_descriptor = d;
              cfg.channel_pooling = pooling;
              std::mt19937_64 rng(0);
              ParamMap allocated;
              export_cbam(init_cbam(cfg, c, rng), "", allocated);
              const std::string where = "C=" + std::to_string(c) + " r=" + std::to_string(r) +
                                        " k=" + std::to_string(k) + " " + std::string(to_string(d)) + " " +
                                        std::string(to_string(pooling));
              v.require(param_count(cfg, c) == count_elements(allocated), "enumeration at " + where);
              if (pooling == ChannelPooling::AvgOnly) avg_count = param_count(cfg, c);
              if (pooling == ChannelPooling::AvgAndMax)
                v.require(param_count(cfg, c) == avg_count, "avg+max overhead at " + where);
              ++cells;
            }
          }
  v.detail << cells << " grid cells match enumeration; avg+max adds nothing over avg";
  return v;
}

// 4. conv2d and pooling against brute-force loops.
Verdict oracle_equivalence() {
  Verdict v;
  std::mt19937_64 rng(4);
  std::size_t conv_cases = 0, pool_cases = 0;
  for (std::size_t n = 1; n <= 2; ++n)
    for (std::size_t c = 1; c <= 3; ++c)
      for (std::size_t h = 1; h <= 8; ++h)
        for (std::size_t w = 1; w <= 8; ++w) {
          const Shape shape{n, c, h, w};
          const auto f = gen::values(shape, rng);
          v.require(identical(ops::global_avg_pool_spatial(f), oracle::spatial_avg(f)), "avg pool " + to_string(shape));
          v.require(identical(ops::global_max_pool_spatial(f), oracle::spatial_max(f)), "max pool " + to_string(shape));
          v.require(identical(ops::channel_avg_pool(f), oracle::channel_avg(f)), "channel avg " + to_string(shape));
          v.require(identical(ops::channel_max_pool(f), oracle::channel_max(f)), "channel max " + to_string(shape));
          ++pool_cases;
          for (std::size_t k : {1, 3, 5, 7})
            for (std::size_t pad : {std::size_t{0}, (k - 1) / 2})
              for (std::size_t stride : {1, 2}) {
                if (h + 2 * pad < k || w + 2 * pad < k) continue;
                const std::size_t co = gen::pick(rng, 1, 3);
                const auto kernel = gen::values({co, c, k, k}, rng);
                const auto bias = gen::values({co}, rng);
                v.require(identical(ops::conv2d(f, kernel, bias, pad, stride),
                                    oracle::conv2d(f, kernel, bias, pad, stride)),
                          "conv " + to_string(shape) + " k" + std::to_string(k));
                ++conv_cases;
              }
        }
  v.detail << conv_cases << " conv2d cases and " << pool_cases << " x 4 pooling cases bit-identical";
  return v;
}

// 5. Shape preservation, gate range and contraction.
Verdict shape_range() {
  Verdict v;
  std::mt19937_64 rng(5);
  const std::size_t configs = 200;
  for (std::size_t i = 0; i < configs; ++i) {
    const auto cfg = gen::cbam_config(rng);
    const Shape shape{gen::pick(rng, 1, 8), gen::pick(rng, 1, 32), gen::pick(rng, 1, 16), gen::pick(rng, 1, 16)};
    const auto params = init_cbam(cfg, shape[1], rng);
    const auto f = gen::values(shape, rng, -10.0, 10.0);
    const auto trace = cbam_forward_traced(f, params);
    const std::string where = "config " + std::to_string(i);
    v.require(trace.output.shape() == shape, where + " shape");
    for (const auto& gate : {trace.channel_gate, trace.spatial_gate, trace.joint_gate}) {
      if (!gate) continue;
      bool inside = true;
      for (double g : gate->data()) inside = inside && g > 0.0 && g < 1.0;
      v.require(inside, where + " gate range");
    }
    bool contracted = true;
    for (std::size_t j = 0; j < f.numel(); ++j) contracted = contracted && std::abs(trace.output[j]) <= std::abs(f[j]);
    v.require(contracted, where + " contraction");
  }
  v.detail << configs << " random configs";
  return v;
}

// 6. Seed-averaged ablation on the locate-the-patch task.
Verdict desk_ablation() {
  Verdict v;
  const auto start = Clock::now();
  const auto data = generate_locate_the_patch(patch_task());
  const auto [train_set, val_set] = split_train_val(data, 0.2);
  v.require(train_set.size() == 2048 && val_set.size() == 512, "split sizes");

  const std::vector<AblationVariant> variants = {
      {"baseline", BlockAttention::none()},
      {"se_avg", BlockAttention::se(4)},
      {"channel_avg_max", BlockAttention::with_cbam([] {
         CbamConfig c = desk_cbam();
         c.arrangement = Arrangement::ChannelOnly;
         return c;
       }())},
      {"cbam", BlockAttention::with_cbam(desk_cbam())},
  };
  const std::uint64_t seeds[] = {0, 1, 2, 3, 4};
  const auto report = run_ablation(desk_net(BlockAttention::none()), variants, train_set, val_set,
                                    desk_training(), seeds);
  const double elapsed = seconds_since(start);

  const double baseline = report.mean_val_error("baseline");
  const double se = report.mean_val_error("se_avg");
  const double avg_max = report.mean_val_error("channel_avg_max");
  const double cbam = report.mean_val_error("cbam");
  v.require(cbam <= baseline, "cbam mean " + std::to_string(cbam) + " > baseline " + std::to_string(baseline));
  v.require(avg_max <= se, "avg+max mean " + std::to_string(avg_max) + " > se " + std::to_string(se));
  v.require(elapsed < 1800.0, "runtime " + std::to_string(elapsed) + " s");
  v.detail << "mean val top-1 err: baseline " << baseline << ", se_avg " << se << ", channel_avg_max " << avg_max
           << ", cbam " << cbam << "; " << elapsed << " s";
  if (!v.pass) {
    v.detail << "\n  per-seed rows:\n";
    for (const auto& row : report.rows)
      v.detail << "    " << row.variant << " seed " << row.seed << " val_top1_err " << row.val_top1_err
               << " final_train_loss " << row.final_train_loss << "\n";
  }
  report.write(scratch_dir() / "desk_ablation.csv", scratch_dir() / "desk_ablation.json");
  return v;
}

// 7. Spatial descriptor and arrangement studies through the CLI.
Verdict arrangement_matrix() {
  Verdict v;
  const auto dir = scratch_dir();
  std::ofstream(dir / "matrix_data.json")
      << R"({"num_samples": 96, "num_classes": 4, "height": 8, "width": 8, "patch_size": 2, "seed": 3})";
  std::ofstream(dir / "matrix.json") << R"({"variants": [
      {"name": "spatial_conv1x1_k3", "spatial_descriptor": "one_by_one", "kernel_size": 3, "reduction_ratio": 4},
      {"name": "spatial_conv1x1_k7", "spatial_descriptor": "one_by_one", "kernel_size": 7, "reduction_ratio": 4},
      {"name": "spatial_pool_k3", "spatial_descriptor": "channel_pool", "kernel_size": 3, "reduction_ratio": 4},
      {"name": "spatial_pool_k7", "spatial_descriptor": "channel_pool", "kernel_size": 7, "reduction_ratio": 4},
      {"name": "channel_then_spatial", "arrangement": "channel_then_spatial", "reduction_ratio": 4},
      {"name": "spatial_then_channel", "arrangement": "spatial_then_channel", "reduction_ratio": 4},
      {"name": "parallel", "arrangement": "parallel", "reduction_ratio": 4}],
    "model": {"stem_channels": 4, "blocks": [{"out_channels": 8, "stride": 2}]},
    "train": {"epochs": 2, "batch_size": 16}})";
  const std::vector<std::string> expected = {"spatial_conv1x1_k3", "spatial_conv1x1_k7", "spatial_pool_k3",
                                             "spatial_pool_k7",    "channel_then_spatial", "spatial_then_channel",
                                             "parallel"};
  const std::size_t seeds = 2;
  auto run = [&](const std::string& name, const std::string& jobs) {
    return run_cli({"ablate", "--matrix", (dir / "matrix.json").string(), "--data", (dir / "matrix_data.json").string(),
                    "--out", (dir / name).string(), "--seeds", std::to_string(seeds), "--jobs", jobs});
  };
  v.require(run("a.csv", "1") == 0, "first ablate run");
  v.require(run("b.csv", "1") == 0, "second ablate run");
  v.require(run("c.csv", "2") == 0, "two-worker ablate run");
  const std::string a = slurp(dir / "a.csv");
  v.require(!a.empty() && a == slurp(dir / "b.csv"), "repeat run CSV differs");
  v.require(a == slurp(dir / "c.csv"), "two-worker CSV differs");
  v.require(slurp(dir / "a.csv.json") == slurp(dir / "b.csv.json"), "repeat run JSON differs");

  std::istringstream lines(a);
  std::string line;
  std::getline(lines, line);
  std::vector<std::string> names;
  while (std::getline(lines, line)) names.push_back(line.substr(0, line.find(',')));
  v.require(names.size() == expected.size() * seeds, "row count " + std::to_string(names.size()));
  for (std::size_t i = 0; i < expected.size() && i * seeds < names.size(); ++i)
    v.require(names[i * seeds] == expected[i], "row order at " + expected[i]);
  v.detail << expected.size() << " variants x " << seeds << " seeds, CSV byte-identical across 3 runs ("
           << a.size() << " bytes)";
  return v;
}

// 8. Grad-CAM structure and localisation on a trained attention net.
Verdict gradcam_checks() {
  Verdict v;
  std::mt19937_64 rng(8);
  const auto spec = desk_net(BlockAttention::with_cbam(desk_cbam()));

  // Zero-map guard.
  const auto zero = gradcam(spec, zero_net(spec), gen::values({1, 1, 12, 12}, rng), 1);
  bool all_zero = true;
  for (double x : zero.values.data()) all_zero = all_zero && x == 0.0;
  v.require(all_zero, "zero net heatmap not zero");

  // Training.
  const auto data = generate_locate_the_patch(patch_task());
  const auto [train_set, val_set] = split_train_val(data, 0.2);
  const auto trained = train(spec, init_net(spec, 0), train_set, nullptr, desk_training()).params;

  // Shape contract and positive scaling.
  const auto head = [&](const Tensor& a) { return classifier_head(a, spec, trained); };
  double worst_scale = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    const std::size_t idx[] = {i};
    const auto image = val_set.batch_images(idx);
    const auto features = net_forward_detailed(image, spec, trained).features;
    const auto h = gradcam(spec, trained, image, val_set.labels[i]);
    v.require(h.values.dim(2) == features.dim(2) && h.values.dim(3) == features.dim(3), "heatmap extents");
    const auto base = gradcam_from_features(features, head, val_set.labels[i]);
    for (double c : {0.5, 4.0}) {
      const auto scaled = gradcam_from_features(ops::scale(features, c), head, val_set.labels[i]);
      worst_scale = std::max(worst_scale, max_abs_diff(scaled.values, base.values));
    }
  }
  v.require(worst_scale < 1e-9, "scaling changed heatmap by " + std::to_string(worst_scale));

  // Argmax agreement on correctly classified validation samples.
  std::size_t correct = 0, agree = 0;
  for (std::size_t i = 0; i < val_set.size(); ++i) {
    const std::size_t idx[] = {i};
    const auto image = val_set.batch_images(idx);
    const auto logits = net_forward(image, spec, trained);
    const std::uint32_t label[] = {val_set.labels[i]};
    if (top1_error(logits, label) != 0.0) continue;
    ++correct;
    const auto h = gradcam(spec, trained, image, val_set.labels[i]);
    const std::size_t hh = h.values.dim(2), hw = h.values.dim(3);
    const std::size_t peak = heatmap_argmax(h);
    if (cell_of(peak / hw, peak % hw, hh, hw, data.num_classes) == val_set.labels[i]) ++agree;
  }
  const double rate = correct ? 100.0 * static_cast<double>(agree) / static_cast<double>(correct) : 0.0;
  v.require(correct > 0, "no correctly classified samples");
  v.require(rate >= 60.0, "argmax agreement " + std::to_string(rate) + "%");
  v.detail << "zero guard ok, scaling drift " << worst_scale << ", argmax in patch cell for " << agree << "/"
           << correct << " correct val samples (" << rate << "%)";
  return v;
}

// 9. Serialization round trips.
Verdict serialization() {
  Verdict v;
  std::mt19937_64 rng(9);
  const auto dir = scratch_dir();
  for (std::size_t i = 0; i < 20; ++i) {
    Shape shape;
    for (std::size_t r = gen::pick(rng, 1, 4); r > 0; --r) shape.push_back(gen::pick(rng, 1, 6));
    const auto t = gen::values(shape, rng, -1e3, 1e3);
    save_tensor(dir / "t.cbt", t);
    v.require(identical(load_tensor(dir / "t.cbt"), t), "CBT1 " + to_string(shape));
  }

  SyntheticSpec s;
  s.num_samples = 50;
  s.channels = 3;
  const auto data = generate_locate_the_patch(s);
  write_cbds(dir / "d.cbds", data);
  const auto back = load_dataset(dir / "d.cbds", DatasetFormat::CBDS, s.num_classes);
  v.require(identical(back.images, data.images) && back.labels == data.labels, "CBDS");

  CbamConfig cfg;
  cfg.spatial_descriptor = SpatialDescriptor::OneByOneConv;
  cfg.arrangement = Arrangement::SpatialThenChannel;
  for (const auto& attention : {BlockAttention::none(), BlockAttention::se(4), BlockAttention::with_cbam(cfg)}) {
    Checkpoint ckpt{default_net_spec(attention, 3, 10), {}};
    ckpt.params = init_net(ckpt.spec, 99);
    save_checkpoint(dir / "m.json", ckpt);
    const auto loaded = load_checkpoint(dir / "m.json");
    bool same = loaded.params.size() == ckpt.params.size();
    for (const auto& [name, t] : ckpt.params) same = same && identical(t, loaded.params.at(name));
    for (std::size_t b = 0; b < ckpt.spec.blocks.size(); ++b)
      same = same && loaded.spec.blocks[b].attention == ckpt.spec.blocks[b].attention &&
             loaded.spec.blocks[b].out_channels == ckpt.spec.blocks[b].out_channels;
    v.require(same, "checkpoint manifest");
  }

  double worst = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    Heatmap h{gen::values({1, 1, gen::pick(rng, 1, 12), gen::pick(rng, 1, 12)}, rng, 0.0, 1.0), "x", 0};
    write_pgm(dir / "h.pgm", h);
    worst = std::max(worst, max_abs_diff(read_pgm(dir / "h.pgm"), h.values));
  }
  v.require(worst <= 1.0 / 255.0, "PGM drift " + std::to_string(worst));
  v.detail << "CBT1, CBDS and 3 checkpoints bit-exact; worst PGM drift " << worst * 255.0 << "/255";
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient audit", gradient_audit},
      {"SE equivalence", se_equivalence},
      {"parameter-count law", parameter_law},
      {"oracle equivalence", oracle_equivalence},
      {"shape/range suite", shape_range},
      {"desk-scale ablation", desk_ablation},
      {"arrangement matrix", arrangement_matrix},
      {"Grad-CAM structural checks", gradcam_checks},
      {"serialization round-trips", serialization},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << "exception: " << e.what();
    }
    if (!v.pass) ++failed;
    std::cout << (v.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << v.detail.str()
              << std::endl;
  }
  return failed;
}
