// Command-line front end: training, evaluation, ablations, the verification
// suites, synthetic data generation and embedding export.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "loopalign/errors.hpp"
#include "loopalign/harness.hpp"
#include "loopalign/training.hpp"

namespace fs = std::filesystem;
using namespace loopalign;

namespace {

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", path, "JSON run configuration")->check(CLI::ExistingFile);
    app->add_option("-s,--set", overrides, "Dotted-path override, e.g. loop.loops=2 (repeatable)");
  }
  RunConfig resolve() const { return resolve_config(path, overrides); }
};

Dataset load_dataset(const std::string& manifest) {
  if (manifest.empty()) throw ConfigError("no dataset manifest (set data.manifest or pass --manifest)");
  return Dataset::load(manifest);
}

void print_accuracy(const std::string& what, const Accuracy& a) {
  std::cout << what << ": P-I " << a.per_instance << "  P-C " << a.per_class << "  (n = " << a.total << ")\n";
}

int run_train(const ConfigArgs& args) {
  const RunConfig cfg = args.resolve();
  const Dataset data = load_dataset(cfg.data.manifest);
  Pipeline pipeline(cfg, data.vocabulary());
  std::cout << "parameters: " << pipeline.parameters().scalar_count() << "  effective depth: "
            << cfg.loop.encoder_layers * cfg.loop.passes() << "\n";
  TrainOptions opts;
  opts.progress = &std::cout;
  const TrainResult r = train(pipeline, data, opts);
  if (r.evaluated) print_accuracy(cfg.data.eval_split, r.final_eval);
  std::cout << "checkpoint: " << r.checkpoint_path << "\n";
  return 0;
}

int run_eval(const std::string& checkpoint, std::string manifest, std::string split, const std::string& metrics) {
  const auto pipeline = load_checkpoint(checkpoint);
  const RunConfig& cfg = pipeline->config();
  if (manifest.empty()) manifest = cfg.data.manifest;
  if (split.empty()) split = cfg.data.eval_split;
  const Dataset data = load_dataset(manifest);
  const Accuracy a = evaluate(*pipeline, data, data.split(split), static_cast<std::size_t>(cfg.optim.batch_size));
  const nlohmann::json row = {{"schema", kMetricsSchema}, {"kind", "eval"},        {"checkpoint", checkpoint},
                              {"manifest", manifest},     {"split", split},        {"pi", a.per_instance},
                              {"pc", a.per_class},        {"n", a.total}};
  std::cout << row.dump() << "\n";
  if (!metrics.empty()) {
    std::ofstream out(metrics, std::ios::app);
    if (!out) throw IoError("cannot append to " + metrics);
    out << row.dump() << "\n";
  }
  return 0;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      seeds.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("invalid seed '" + item + "'");
    }
  }
  if (seeds.empty()) throw ConfigError("no seeds given");
  return seeds;
}

int run_ablate(const ConfigArgs& args, const std::string& axis, const std::string& seed_list) {
  const RunConfig base = args.resolve();
  const auto plan = harness::ablation_plan(axis, base);
  const Dataset data = load_dataset(base.data.manifest);
  const auto seeds = parse_seeds(seed_list);
  const auto rows = harness::run_ablation(axis, plan, data, seeds, &std::cout);
  const std::string path = (fs::path(base.output_dir) / "results.csv").string();
  harness::write_results_csv(path, rows);
  std::cout << "results: " << path << "\n";
  return 0;
}

int report_exit(const harness::Report& r) {
  harness::print_report(std::cout, r);
  for (const auto* f : r.failures()) std::cerr << "failed: " << r.suite << " " << f->name << "\n";
  return r.passed() ? 0 : 1;
}

int run_gen_data(const std::string& out, const SyntheticTaskSpec& spec) {
  const DatasetManifest m = generate_synthetic(spec, out);
  std::cout << "wrote " << m.records.size() << " samples (" << spec.classes << " classes) to "
            << (fs::path(out) / "manifest.json").string() << "\n";
  return 0;
}

int run_export(const std::string& checkpoint, std::string manifest, const std::string& out) {
  const auto pipeline = load_checkpoint(checkpoint);
  if (manifest.empty()) manifest = pipeline->config().data.manifest;
  const Dataset data = load_dataset(manifest);
  const fs::path p(out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  export_embeddings(*pipeline, data, out, static_cast<std::size_t>(pipeline->config().optim.batch_size));
  std::cout << "wrote " << data.size() << " embeddings to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Looped sign-to-gloss model with hyperbolic alignment"};
  app.require_subcommand(1);

  ConfigArgs train_args, ablate_args;
  auto* train_cmd = app.add_subcommand("train", "Train a model; writes metrics.jsonl and checkpoint.json");
  train_args.attach(train_cmd);

  std::string checkpoint, manifest, split, metrics;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint (greedy decoding, P-I / P-C)");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint.json")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--manifest", manifest, "Dataset manifest (default: the training manifest)");
  eval_cmd->add_option("--split", split, "Split to evaluate (default: the configured eval split)");
  eval_cmd->add_option("--metrics", metrics, "Append the record to this JSON-lines file");

  std::string axis, seeds = "0";
  auto* ablate_cmd = app.add_subcommand("ablate", "Run one ablation axis; writes <output_dir>/results.csv");
  ablate_args.attach(ablate_cmd);
  ablate_cmd->add_option("--axis", axis, "Ablation axis")
      ->required()
      ->check(CLI::IsMember(harness::ablation_axes()));
  ablate_cmd->add_option("--seeds", seeds, "Comma-separated seeds")->capture_default_str();

  std::uint64_t check_seed = 0;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every parameter (64-bit)");
  grad_cmd->add_option("--seed", check_seed, "Seed for the check batch and parameters");
  bool verbose = false;
  grad_cmd->add_flag("-v,--verbose", verbose, "Print the worst error of each setting as it finishes");
  auto* geom_cmd = app.add_subcommand("geomtest", "Manifold and Frechet-mean property suite (64-bit)");
  geom_cmd->add_option("--seed", check_seed, "Seed for random test points");

  std::string data_out;
  SyntheticTaskSpec spec;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a seeded synthetic skeleton dataset");
  gen_cmd->add_option("-o,--out", data_out, "Output directory")->required();
  gen_cmd->add_option("--classes", spec.classes, "Number of classes")->capture_default_str();
  gen_cmd->add_option("--samples-per-class", spec.samples_per_class, "Samples per class")->capture_default_str();
  gen_cmd->add_option("--frames", spec.frames, "Longest sequence")->capture_default_str();
  gen_cmd->add_option("--min-frames", spec.min_frames, "Shortest sequence")->capture_default_str();
  gen_cmd->add_option("--noise", spec.noise, "Per-sample variation")->capture_default_str();
  gen_cmd->add_option("--seed", spec.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_option("--train-fraction", spec.train_fraction, "Share of each class in train")->capture_default_str();
  gen_cmd->add_option("--val-fraction", spec.val_fraction, "Share of each class in val")->capture_default_str();

  std::string embed_out;
  auto* export_cmd = app.add_subcommand("export-embeddings", "Tangent-space sign embeddings as CSV");
  export_cmd->add_option("--checkpoint", checkpoint, "checkpoint.json")->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--manifest", manifest, "Dataset manifest (default: the training manifest)");
  export_cmd->add_option("-o,--out", embed_out, "Output CSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return run_train(train_args);
    if (eval_cmd->parsed()) return run_eval(checkpoint, manifest, split, metrics);
    if (ablate_cmd->parsed()) return run_ablate(ablate_args, axis, seeds);
    if (grad_cmd->parsed()) return report_exit(harness::gradient_suite(check_seed, verbose ? &std::cout : nullptr));
    if (geom_cmd->parsed()) {
      const int geometry = report_exit(harness::geometry_suite(check_seed));
      const int frechet = report_exit(harness::frechet_suite(check_seed));
      return geometry != 0 ? geometry : frechet;
    }
    if (gen_cmd->parsed()) return run_gen_data(data_out, spec);
    if (export_cmd->parsed()) return run_export(checkpoint, manifest, embed_out);
  } catch (const TrainingError& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
