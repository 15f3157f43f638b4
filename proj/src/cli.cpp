#include "cbam/cli.hpp"

#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "cbam/checkpoint.hpp"
#include "cbam/config.hpp"
#include "cbam/errors.hpp"
#include "cbam/gradcam.hpp"
#include "cbam/gradcheck.hpp"
#include "cbam/serialize.hpp"
#include "cbam/train.hpp"

namespace cbam::cli {

namespace {

using nlohmann::json;

std::optional<std::uint64_t> seed_from_env() {
  const char* raw = std::getenv("CBAM_SEED");
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(raw, &used);
    if (used != std::string(raw).size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("CBAM_SEED must be a non-negative integer, got \"" + std::string(raw) + "\"");
  }
}

// Fills in input channels and class count from the data when the model
// section leaves them out.
TinyNetSpec net_spec_for(const json& root, const BlockAttention& attention, const Dataset& data) {
  json model = root.contains("model") ? root.at("model") : json::object();
  if (!model.is_object()) throw ConfigError("model must be a JSON object");
  if (!model.contains("input_channels")) model["input_channels"] = data.images.dim(1);
  if (!model.contains("num_classes")) model["num_classes"] = data.num_classes;
  return net_spec_from_json(model, attention);
}

std::pair<Dataset, Dataset> train_val(const std::string& data_path, const std::string& val_path,
                                      std::size_t num_classes, double val_fraction) {
  Dataset data = load_dataset(data_path, num_classes);
  if (!val_path.empty()) {
    Dataset val = load_dataset(val_path, data.num_classes);
    val.split = Split::Val;
    return {std::move(data), std::move(val)};
  }
  return split_train_val(data, val_fraction);
}

std::size_t declared_classes(const json& root) {
  if (auto m = root.find("model"); m != root.end() && m->is_object()) {
    if (auto k = m->find("num_classes"); k != m->end() && k->is_number_unsigned()) return k->get<std::size_t>();
  }
  return 0;
}

struct TrainArgs {
  std::string config, data, val_data, out;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  json root = load_json(a.config);
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  json attention_fields = json::object();
  json train_fields = json::object();
  for (const auto& [key, value] : root.items()) {
    if (key == "model") continue;
    if (key == "train") {
      train_fields = value;
    } else {
      attention_fields[key] = value;
    }
  }
  const BlockAttention attention = attention_from_json(attention_fields);
  TrainConfig cfg = train_config_from_json(train_fields, TrainConfig{});
  if (auto s = seed_from_env()) cfg.seed = *s;

  const auto [train_set, val_set] = train_val(a.data, a.val_data, declared_classes(root), 0.2);
  const TinyNetSpec spec = net_spec_for(root, attention, train_set);
  const TrainResult result = train(spec, init_net(spec, cfg.seed), train_set, &val_set, cfg,
                                   [&out](const EpochMetrics& m) {
                                     out << "epoch " << m.epoch << " lr " << m.lr << " train_loss "
                                         << std::setprecision(6) << m.train_loss << " val_top1_err "
                                         << m.val_error << "\n";
                                   });
  save_checkpoint(a.out, Checkpoint{spec, result.params});
  out << "params " << count_elements(result.params) << "\n";
  out << "wrote " << a.out << "\n";
  return kExitOk;
}

struct AblateArgs {
  std::string matrix, data, val_data, out, json_out;
  std::size_t seeds = 1;
  std::size_t jobs = 1;
  bool timing = false;
};

std::vector<AblationVariant> variants_from_json(const json& root) {
  std::vector<AblationVariant> variants;
  if (auto preset = root.find("preset"); preset != root.end()) {
    const std::string name = preset->get<std::string>();
    const std::size_t r = root.value("reduction_ratio", std::size_t{16});
    auto append = [&](std::vector<AblationVariant> more) {
      variants.insert(variants.end(), more.begin(), more.end());
    };
    if (name == "channel_pooling" || name == "all") append(channel_pooling_variants(r));
    if (name == "spatial" || name == "all") append(spatial_variants(r));
    if (name == "arrangement" || name == "all") append(arrangement_variants(r));
    if (variants.empty()) throw ConfigError("unknown preset \"" + name + "\"");
  }
  if (auto list = root.find("variants"); list != root.end()) {
    if (!list->is_array()) throw ConfigError("variants must be an array");
    for (const auto& v : *list) {
      const BlockAttention attention = attention_from_json(v);
      std::string name = v.value("name", default_variant_name(attention));
      variants.push_back({std::move(name), attention});
    }
  }
  if (variants.empty()) throw ConfigError("matrix lists no variants");
  return variants;
}

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
  const json root = load_json(a.matrix);
  if (!root.is_object()) throw ConfigError("matrix must be a JSON object");
  for (const auto& [key, value] : root.items()) {
    if (key != "variants" && key != "preset" && key != "reduction_ratio" && key != "model" &&
        key != "train" && key != "val_fraction" && key != "seed_base") {
      throw ConfigError("unknown key \"" + key + "\" in matrix");
    }
  }
  const auto variants = variants_from_json(root);
  const TrainConfig cfg = train_config_from_json(root.value("train", json::object()), TrainConfig{});
  std::uint64_t seed_base = root.value("seed_base", std::uint64_t{0});
  if (auto s = seed_from_env()) seed_base = *s;
  if (a.seeds == 0) throw ConfigError("--seeds must be at least 1");

  const auto [train_set, val_set] =
      train_val(a.data, a.val_data, declared_classes(root), root.value("val_fraction", 0.2));
  const TinyNetSpec base = net_spec_for(root, BlockAttention::none(), train_set);

  std::vector<std::uint64_t> seeds(a.seeds);
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = seed_base + i;
  const AblationReport report =
      run_ablation(base, variants, train_set, val_set, cfg, seeds, AblationOptions{a.jobs, a.timing});
  const std::string json_path = a.json_out.empty() ? a.out + ".json" : a.json_out;
  report.write(a.out, json_path);
  out << report.to_csv();
  out << "wrote " << a.out << " and " << json_path << "\n";
  return kExitOk;
}

struct CheckGradArgs {
  std::string op;
  bool full_block = false;
  std::size_t trials = 20;
  double tol = 1e-4;
  std::uint64_t seed = 1;
};

int cmd_check_grad(const CheckGradArgs& a, std::ostream& out) {
  std::vector<GradCheckResult> results;
  if (!a.op.empty()) results.push_back(check_op_gradient(a.op, a.trials, a.tol, a.seed));
  if (a.full_block) {
    auto block = check_full_block(a.trials, a.tol, a.seed);
    results.insert(results.end(), block.begin(), block.end());
  }
  if (a.op.empty() && !a.full_block) {
    for (const auto& name : gradcheck_op_names()) results.push_back(check_op_gradient(name, a.trials, a.tol, a.seed));
    auto block = check_full_block(a.trials, a.tol, a.seed);
    results.insert(results.end(), block.begin(), block.end());
  }
  bool ok = true;
  for (const auto& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << " trials=" << r.trials << " max_rel_err="
        << std::scientific << std::setprecision(3) << r.max_rel_error << std::defaultfloat << "\n";
    ok = ok && r.passed;
  }
  if (!ok) throw GradientCheckFailed("relative error above " + std::to_string(a.tol));
  return kExitOk;
}

struct GradcamArgs {
  std::string model, image, out;
  std::size_t class_index = 0;
  bool overlay = false;
};

int cmd_gradcam(const GradcamArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.model);
  Tensor image = load_tensor(a.image);
  if (image.rank() == 3) image = image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
  const Heatmap heatmap = gradcam(ckpt.spec, ckpt.params, image, a.class_index);
  if (a.overlay) {
    write_overlay_ppm(a.out, heatmap, image);
  } else {
    write_pgm(a.out, heatmap);
  }
  out << "layer " << heatmap.layer << " class " << heatmap.class_index << " size " << heatmap.values.dim(2)
      << "x" << heatmap.values.dim(3) << "\n";
  out << "wrote " << a.out << "\n";
  return kExitOk;
}

struct GenDataArgs {
  std::string spec, out, sample_out;
  std::size_t sample_index = 0;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  SyntheticSpec spec = load_synthetic_spec(a.spec);
  if (auto s = seed_from_env()) spec.seed = *s;
  const Dataset data = generate_locate_the_patch(spec);
  write_cbds(a.out, data);
  out << "wrote " << data.size() << " samples to " << a.out << "\n";
  if (!a.sample_out.empty()) {
    if (a.sample_index >= data.size()) throw ConfigError("--sample-index out of range");
    const std::size_t idx[] = {a.sample_index};
    save_tensor(a.sample_out, data.batch_images(idx));
    out << "sample " << a.sample_index << " label " << data.labels[a.sample_index] << " -> " << a.sample_out
        << "\n";
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Convolutional block attention: training, ablation, gradient audit, Grad-CAM", "cbam"};
  app.require_subcommand(1);
  app.fallthrough(false);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a tiny residual net and write a checkpoint");
  train_cmd->add_option("--config", train_args.config, "JSON attention/model/train config")->required();
  train_cmd->add_option("--data", train_args.data, "CBDS dataset or synthetic spec JSON")->required();
  train_cmd->add_option("--val-data", train_args.val_data, "validation set (default: tail 20% of --data)");
  train_cmd->add_option("--out", train_args.out, "checkpoint manifest path")->required();

  AblateArgs ablate_args;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train a matrix of attention variants and report");
  ablate_cmd->add_option("--matrix", ablate_args.matrix, "JSON variant matrix")->required();
  ablate_cmd->add_option("--data", ablate_args.data, "CBDS dataset or synthetic spec JSON")->required();
  ablate_cmd->add_option("--val-data", ablate_args.val_data, "validation set (default: tail split)");
  ablate_cmd->add_option("--out", ablate_args.out, "CSV report path")->required();
  ablate_cmd->add_option("--json", ablate_args.json_out, "JSON report path (default: <out>.json)");
  ablate_cmd->add_option("--seeds", ablate_args.seeds, "number of seeds per variant")->capture_default_str();
  ablate_cmd->add_option("--jobs", ablate_args.jobs, "worker threads")->capture_default_str();
  ablate_cmd->add_flag("--timing", ablate_args.timing, "record wall-clock seconds (output no longer reproducible)");

  CheckGradArgs grad_args;
  auto* grad_cmd = app.add_subcommand("check-grad", "Compare analytic gradients with finite differences");
  auto* op_opt = grad_cmd->add_option("--op", grad_args.op, "single op to check")
                     ->check(CLI::IsMember(gradcheck_op_names()));
  auto* block_opt = grad_cmd->add_flag("--full-block", grad_args.full_block, "check cbam_forward in every arrangement");
  op_opt->excludes(block_opt);
  grad_cmd->add_option("--trials", grad_args.trials, "random trials per check")->capture_default_str();
  grad_cmd->add_option("--tol", grad_args.tol, "relative error tolerance")->capture_default_str();
  grad_cmd->add_option("--seed", grad_args.seed, "generator seed")->capture_default_str();

  GradcamArgs cam_args;
  auto* cam_cmd = app.add_subcommand("gradcam", "Write a Grad-CAM heatmap for one image");
  cam_cmd->add_option("--model", cam_args.model, "checkpoint manifest")->required();
  cam_cmd->add_option("--image", cam_args.image, "CBT1 image tensor, 1 x C x H x W")->required();
  cam_cmd->add_option("--class", cam_args.class_index, "class index")->required();
  cam_cmd->add_option("--out", cam_args.out, "output PGM (or PPM with --overlay)")->required();
  cam_cmd->add_flag("--overlay", cam_args.overlay, "blend the heatmap onto the image as a PPM");

  GenDataArgs gen_args;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a locate-the-patch dataset");
  gen_cmd->add_option("--spec", gen_args.spec, "synthetic spec JSON")->required();
  gen_cmd->add_option("--out", gen_args.out, "CBDS output path")->required();
  gen_cmd->add_option("--sample-out", gen_args.sample_out, "also write one sample image as CBT1");
  gen_cmd->add_option("--sample-index", gen_args.sample_index, "which sample --sample-out takes")
      ->capture_default_str();

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    if (auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
      err << "see: cbam " << sub->get_name() << " --help\n";
    }
    return kExitValidation;
  }

  try {
    if (*train_cmd) return cmd_train(train_args, out);
    if (*ablate_cmd) return cmd_ablate(ablate_args, out);
    if (*grad_cmd) return cmd_check_grad(grad_args, out);
    if (*cam_cmd) return cmd_gradcam(cam_args, out);
    if (*gen_cmd) return cmd_gen_data(gen_args, out);
  } catch (const NumericalError& e) {
    err << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    err << e.what() << "\n";
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    err << "ConfigError: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitValidation;
}

}  // namespace cbam::cli
