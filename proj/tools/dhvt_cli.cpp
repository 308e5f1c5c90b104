// Command-line front end: cost accounting, gradient checks, training,
// evaluation, attention export and config generation.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dhvt/accounting.hpp"
#include "dhvt/attention_export.hpp"
#include "dhvt/checkpoint.hpp"
#include "dhvt/error.hpp"
#include "dhvt/gradcheck.hpp"
#include "dhvt/run_config.hpp"
#include "dhvt/train.hpp"

namespace {

using namespace dhvt;

ModelConfig model_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("cannot parse " + path + ": " + e.what());
  }
  // Accept either a run config or a bare model config.
  if (j.is_object() && (j.contains("model") || j.contains("data")))
    return run_config_from_json(j).model;
  return model_config_from_json(j);
}

std::vector<std::size_t> parse_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoul(item));
    } catch (const std::exception&) {
      throw ConfigError("'" + item + "' is not a non-negative integer");
    }
  }
  return out;
}

struct CountArgs {
  std::string variant;
  std::string config;
  bool all = false;
  bool json = false;
  std::size_t depth = 2;
};

int run_count(const CountArgs& a) {
  if (a.all) {
    std::printf("%-8s %-9s %5s %12s %9s %11s %11s %9s\n", "model", "dataset", "patch", "params",
                "target(M)", "layer GMAC", "total GMAC", "target(G)");
    for (const auto& row : reference_variants()) {
      const CostReport r = count_cost(variant_config(row.model, row.dataset, row.patch));
      std::printf("%-8s %-9s %5zu %12llu %9.1f %11.3f %11.3f %9.1f\n", row.model.c_str(),
                  row.dataset.c_str(), row.patch,
                  static_cast<unsigned long long>(r.total_params()), row.params_millions,
                  r.layer_macs() / 1e9, r.total_macs() / 1e9, row.gflops);
    }
    return 0;
  }
  ModelConfig cfg;
  if (!a.config.empty()) {
    cfg = model_from_file(a.config);
  } else if (!a.variant.empty()) {
    cfg = variant_from_name(a.variant);
  } else {
    throw ConfigError("count needs --variant, --config or --all");
  }
  const CostReport r = count_cost(cfg);
  std::cout << (a.json ? r.to_json(a.depth) + "\n" : r.to_text(a.depth));
  return 0;
}

struct GradcheckArgs {
  std::string config;
  std::string ablation;
  bool all_ablations = false;
  GradcheckOptions options;
  std::string negate;
};

int run_gradcheck(GradcheckArgs a) {
  if (!a.negate.empty()) {
    const std::string name = a.negate;
    a.options.after_backward = [name](ParamStore<double>& ps) {
      for (auto& g : ps.at(name).mutable_grad()) g = -g;
    };
  }
  const ModelConfig base = a.config.empty() ? micro_config() : model_from_file(a.config);
  std::vector<NamedConfig> runs;
  if (a.all_ablations) {
    runs = ablation_lattice(base);
  } else if (!a.ablation.empty()) {
    for (auto& nc : ablation_lattice(base))
      if (nc.name == a.ablation) runs.push_back(nc);
    if (runs.empty()) {
      std::string names;
      for (auto& nc : ablation_lattice(base)) names += " " + nc.name;
      throw ConfigError("unknown ablation '" + a.ablation + "'; valid:" + names);
    }
  } else {
    runs.push_back({"config", base});
  }
  bool ok = true;
  for (const auto& run : runs) {
    const GradcheckReport r = gradcheck(run.config, a.options);
    std::cout << run.name << ": " << r.to_text();
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

struct TrainArgs {
  std::string config;
  std::string out;
  std::size_t epochs = 0;
  long long seed = -1;
};

int run_train(const TrainArgs& a) {
  RunConfig rc = load_run_config(a.config);
  if (!a.out.empty()) rc.out_dir = a.out;
  if (a.epochs > 0) rc.epochs = a.epochs;
  if (a.seed >= 0) rc.seed = static_cast<std::uint64_t>(a.seed);
  const Dataset data = load_dataset(rc.data, CifarSplit::kTrain);
  const TrainResult r = train(rc, data);
  for (const auto& rec : r.log) std::cout << format_record(rec) << "\n";
  std::cout << "best train_acc " << r.best_acc << "\nfinal eval_acc " << r.final_eval_acc << "\n";
  if (r.steps_to_perfect) std::cout << "steps to 100% " << *r.steps_to_perfect << "\n";
  return 0;
}

struct DataArgs {
  std::string run_config;
  std::string split = "train";
};

Dataset data_from(const DataArgs& a) {
  DataSpec spec;
  if (!a.run_config.empty()) spec = load_run_config(a.run_config).data;
  if (a.split != "train" && a.split != "test")
    throw ConfigError("split '" + a.split + "' is not one of train, test");
  return load_dataset(spec, a.split == "train" ? CifarSplit::kTrain : CifarSplit::kTest);
}

int run_eval(const std::string& checkpoint, const DataArgs& d, std::size_t batch) {
  Model<float> model = load_model<float>(checkpoint);
  const EvalResult r = evaluate(model, data_from(d), batch);
  std::printf("samples %zu loss %.6f accuracy %.4f\n", r.samples, r.loss, r.accuracy);
  return 0;
}

struct ExportArgs {
  std::string checkpoint;
  std::string layers = "0";
  std::string out = "attention";
  std::size_t index = 0;
  double gray = -1.0;
  DataArgs data;
};

int run_export(const ExportArgs& a) {
  Model<float> model = load_model<float>(a.checkpoint);
  const ModelConfig& cfg = model.config();
  Tensor<float> image;
  if (a.gray >= 0.0) {
    image = Tensor<float>::full({1, cfg.in_channels, cfg.image_height, cfg.image_width},
                                static_cast<float>(a.gray));
  } else {
    const Dataset data = data_from(a.data);
    const std::size_t idx[] = {a.index};
    image = gather_images<float>(data, idx);
  }
  for (const auto& p : export_attention(model, image, parse_list(a.layers), a.out))
    std::cout << p.string() << "\n";
  return 0;
}

int run_make_config(const std::string& variant, const std::string& preset, std::size_t classes,
                    const std::string& out) {
  RunConfig rc;
  if (!variant.empty()) {
    rc.model = variant_from_name(variant);
    classes = rc.model.num_classes;
  } else {
    if (preset == "micro") {
      rc.model = micro_config();
    } else if (preset == "desk") {
      rc.model = desk_config(classes);
    } else if (preset == "desk-baseline") {
      rc.model = baseline_of(desk_config(classes));
    } else {
      throw ConfigError("make-config needs --variant or --preset {micro, desk, desk-baseline}");
    }
    rc.model.num_classes = classes;
    // Overfit runs: one full batch per epoch, stop once every sample is right.
    rc.epochs = 500;
    rc.stop_at_perfect = true;
  }
  rc.data.classes = classes;
  rc.data.size = rc.model.image_height;
  const nlohmann::json j = to_json(rc);
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    save_json(j, out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid vision transformer toolkit"};
  app.require_subcommand(1);
  int status = 0;

  CountArgs count;
  auto* c = app.add_subcommand("count", "Parameter and MAC counts");
  c->add_option("--variant", count.variant, "Reference variant, e.g. DHVT-T/CIFAR/4");
  c->add_option("--config", count.config, "Model or run config JSON");
  c->add_flag("--all", count.all, "Every reference variant against its target figures");
  c->add_flag("--json", count.json, "JSON output");
  c->add_option("--depth", count.depth, "Name depth of the rollup");
  c->callback([&] { status = run_count(count); });

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient check in f64");
  g->add_option("--config", gc.config, "Model or run config JSON (default: micro model)");
  g->add_option("--ablation", gc.ablation, "One ablation of the config, e.g. +abspe-sope-daff-ht");
  g->add_flag("--all-ablations", gc.all_ablations, "Check every ablation of the config");
  g->add_option("--samples", gc.options.samples, "Sampled parameters");
  g->add_option("--tolerance", gc.options.tolerance, "Max relative error");
  g->add_option("--step", gc.options.step, "Finite-difference step");
  g->add_option("--floor", gc.options.floor, "Denominator floor of the relative error");
  g->add_option("--seed", gc.options.seed, "Seed for weights, inputs and sampling");
  g->add_option("--negate-grad", gc.negate, "Fault injection: negate this tensor's gradient");
  g->callback([&] { status = run_gradcheck(gc); });

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train from a run config");
  t->add_option("--config", tr.config, "Run config JSON")->required();
  t->add_option("--out", tr.out, "Output directory (logs, checkpoints)");
  t->add_option("--epochs", tr.epochs, "Override epochs");
  t->add_option("--seed", tr.seed, "Override seed");
  t->callback([&] { status = run_train(tr); });

  std::string eval_ckpt;
  DataArgs eval_data;
  std::size_t eval_batch = 64;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  e->add_option("--data-config", eval_data.run_config, "Run config whose data section to use");
  e->add_option("--split", eval_data.split, "train or test");
  e->add_option("--batch", eval_batch, "Batch size");
  e->callback([&] { status = run_eval(eval_ckpt, eval_data, eval_batch); });

  ExportArgs ex;
  auto* x = app.add_subcommand("export-attention", "Write attention CSV and head-token PGMs");
  x->add_option("--checkpoint", ex.checkpoint, "Checkpoint file")->required();
  x->add_option("--layers", ex.layers, "Comma-separated block indices");
  x->add_option("--out", ex.out, "Output directory");
  x->add_option("--image-index", ex.index, "Sample index in the dataset");
  x->add_option("--gray", ex.gray, "Use a constant image with this value instead");
  x->add_option("--data-config", ex.data.run_config, "Run config whose data section to use");
  x->add_option("--split", ex.data.split, "train or test");
  x->callback([&] { status = run_export(ex); });

  std::string mc_variant, mc_preset, mc_out;
  std::size_t mc_classes = 4;
  auto* m = app.add_subcommand("make-config", "Emit a run config JSON");
  m->add_option("--variant", mc_variant, "Reference variant, e.g. DHVT-S/ImageNet/16");
  m->add_option("--preset", mc_preset, "micro, desk or desk-baseline");
  m->add_option("--classes", mc_classes, "Classes for presets and synthetic data");
  m->add_option("--out", mc_out, "Output file (default: stdout)");
  m->callback([&] { status = run_make_config(mc_variant, mc_preset, mc_classes, mc_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return status;
}
