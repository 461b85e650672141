#pragma once

// Run configuration: a single JSON document plus dotted-path overrides
// ("loop.loops=2"). Unknown keys are rejected so that typos surface early.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace loopalign {

enum class Variant { encoder_decoder, encoder, decoder };
enum class Injection { concat, add, attention };
enum class ExtraFeature { none, noise, temporal };
enum class ManifoldKind { euclidean, poincare, lorentz, adaptive_poincare, adaptive_lorentz };
enum class AlphaMode { learnable, fixed };
enum class FrechetWeighting { attention, uniform };
enum class Activation { gelu, relu };

std::string to_string(Variant v);
std::string to_string(Injection v);
std::string to_string(ExtraFeature v);
std::string to_string(ManifoldKind v);
std::string to_string(AlphaMode v);
std::string to_string(FrechetWeighting v);
std::string to_string(Activation v);

/// Row label used in ablation tables, e.g. "Adaptive Poincare".
std::string display_name(ManifoldKind v);
std::string display_name(Variant v);

bool is_hyperbolic(ManifoldKind m);
bool is_adaptive(ManifoldKind m);
bool is_lorentz(ManifoldKind m);

struct ModelConfig {
  int d_gcn = 32;
  int d_model = 64;
  int heads = 4;
  int d_ff = 128;
  int d_hyp = 32;
  Activation activation = Activation::gelu;
  bool tie_embeddings = false;
  /// Longest decoded sequence, BOS excluded.
  int max_decode_len = 8;
};

struct LoopConfig {
  Variant variant = Variant::encoder_decoder;
  int encoder_layers = 1;
  int decoder_layers = 1;
  /// Refinement iterations after the base pass; 0 is the plain Base(U x 1) model.
  int loops = 2;
  Injection injection = Injection::concat;
  /// For `add` injection: mean-pool the text state and broadcast it over frames.
  bool add_length_align = true;
  ExtraFeature extra_feature = ExtraFeature::none;
  double noise_std = 0.1;

  /// Forward passes through the looped stack (base pass included).
  int passes() const { return loops + 1; }
};

struct GeometryConfig {
  ManifoldKind manifold = ManifoldKind::adaptive_poincare;
  double curvature = 1.0;
  double scale = 1.0;
  double frechet_tol = 1e-6;
  int frechet_max_iters = 100;
  FrechetWeighting frechet_weights = FrechetWeighting::attention;
};

struct LossConfig {
  double tau = 0.07;
  double margin = 0.1;
  AlphaMode alpha_mode = AlphaMode::fixed;
  double alpha = 0.5;
  double w_aux = 0.1;
  bool symmetric = false;
};

struct OptimConfig {
  double lr = 3e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int steps = 1000;
  int warmup_steps = 0;
  int batch_size = 16;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  int eval_every = 0;
  int log_every = 1;
};

struct DataConfig {
  std::string manifest;
  std::string train_split = "train";
  std::string eval_split = "test";
};

struct RunConfig {
  ModelConfig model;
  LoopConfig loop;
  GeometryConfig geometry;
  LossConfig loss;
  OptimConfig optim;
  DataConfig data;
  std::string output_dir = "runs/default";
  /// "f32" or "f64".
  std::string precision = "f32";

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_config(const std::string& path);
/// Applies "a.b.c=value" overrides; values parse as JSON when possible and
/// fall back to plain strings.
void apply_overrides(nlohmann::json& doc, const std::vector<std::string>& overrides);
/// Defaults, optionally merged with a JSON file, then overrides, validated.
RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides);

}  // namespace loopalign
