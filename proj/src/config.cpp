#include "loopalign/config.hpp"

#include <array>
#include <fstream>
#include <utility>

#include "loopalign/errors.hpp"

namespace loopalign {

using nlohmann::json;

namespace {

template <class E, std::size_t N>
using Names = std::array<std::pair<E, const char*>, N>;

constexpr Names<Variant, 3> kVariants{{{Variant::encoder_decoder, "encoder-decoder"},
                                       {Variant::encoder, "encoder"},
                                       {Variant::decoder, "decoder"}}};
constexpr Names<Injection, 3> kInjections{
    {{Injection::concat, "concat"}, {Injection::add, "add"}, {Injection::attention, "attention"}}};
constexpr Names<ExtraFeature, 3> kExtras{{{ExtraFeature::none, "none"},
                                          {ExtraFeature::noise, "noise"},
                                          {ExtraFeature::temporal, "temporal"}}};
constexpr Names<ManifoldKind, 5> kManifolds{{{ManifoldKind::euclidean, "euclidean"},
                                             {ManifoldKind::poincare, "poincare"},
                                             {ManifoldKind::lorentz, "lorentz"},
                                             {ManifoldKind::adaptive_poincare, "adaptive-poincare"},
                                             {ManifoldKind::adaptive_lorentz, "adaptive-lorentz"}}};
constexpr Names<AlphaMode, 2> kAlphaModes{
    {{AlphaMode::learnable, "learnable"}, {AlphaMode::fixed, "fixed"}}};
constexpr Names<FrechetWeighting, 2> kWeightings{
    {{FrechetWeighting::attention, "attention"}, {FrechetWeighting::uniform, "uniform"}}};
constexpr Names<Activation, 2> kActivations{
    {{Activation::gelu, "gelu"}, {Activation::relu, "relu"}}};

template <class E, std::size_t N>
std::string name_of(const Names<E, N>& table, E v) {
  for (const auto& [e, n] : table) {
    if (e == v) return n;
  }
  return "?";
}

template <class E, std::size_t N>
E parse_enum(const Names<E, N>& table, const json& j, const char* field) {
  if (!j.is_string()) throw ConfigError(std::string(field) + " must be a string");
  const auto s = j.get<std::string>();
  std::string options;
  for (const auto& [e, n] : table) {
    if (s == n) return e;
    options += options.empty() ? n : std::string(", ") + n;
  }
  throw ConfigError(std::string(field) + ": unknown value '" + s + "' (expected one of " +
                    options + ")");
}

// Reads `key` from `obj` into `out` when present; type errors become ConfigError.
template <class T>
void read(const json& obj, const char* key, T& out, const std::string& path) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path + "." + key + ": " + e.what());
  }
}

template <class E, std::size_t N>
void read_enum(const json& obj, const char* key, E& out, const Names<E, N>& table,
               const std::string& path) {
  if (obj.contains(key)) out = parse_enum(table, obj.at(key), (path + "." + key).c_str());
}

void reject_unknown(const json& obj, std::initializer_list<const char*> known,
                    const std::string& path) {
  if (!obj.is_object()) throw ConfigError(path + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown config key " + path + "." + key);
  }
}

void require(bool cond, const std::string& message) {
  if (!cond) throw ConfigError(message);
}

}  // namespace

std::string to_string(Variant v) { return name_of(kVariants, v); }
std::string to_string(Injection v) { return name_of(kInjections, v); }
std::string to_string(ExtraFeature v) { return name_of(kExtras, v); }
std::string to_string(ManifoldKind v) { return name_of(kManifolds, v); }
std::string to_string(AlphaMode v) { return name_of(kAlphaModes, v); }
std::string to_string(FrechetWeighting v) { return name_of(kWeightings, v); }
std::string to_string(Activation v) { return name_of(kActivations, v); }

std::string display_name(ManifoldKind v) {
  switch (v) {
    case ManifoldKind::euclidean: return "Euclidean (Baseline)";
    case ManifoldKind::poincare: return "Poincare";
    case ManifoldKind::lorentz: return "Lorentz";
    case ManifoldKind::adaptive_poincare: return "Adaptive Poincare";
    case ManifoldKind::adaptive_lorentz: return "Adaptive Lorentz";
  }
  return "?";
}

std::string display_name(Variant v) {
  switch (v) {
    case Variant::encoder_decoder: return "Encoder-Decoder";
    case Variant::encoder: return "Encoder";
    case Variant::decoder: return "Decoder";
  }
  return "?";
}

bool is_hyperbolic(ManifoldKind m) { return m != ManifoldKind::euclidean; }
bool is_adaptive(ManifoldKind m) {
  return m == ManifoldKind::adaptive_poincare || m == ManifoldKind::adaptive_lorentz;
}
bool is_lorentz(ManifoldKind m) {
  return m == ManifoldKind::lorentz || m == ManifoldKind::adaptive_lorentz;
}

void RunConfig::validate() const {
  require(model.d_gcn >= 1 && model.d_model >= 1 && model.d_ff >= 1 && model.d_hyp >= 1,
          "model dimensions must be >= 1");
  require(model.heads >= 1, "model.heads must be >= 1");
  require(model.d_model % model.heads == 0,
          "model.d_model (" + std::to_string(model.d_model) + ") must be divisible by model.heads (" +
              std::to_string(model.heads) + ")");
  require(model.max_decode_len >= 1, "model.max_decode_len must be >= 1");
  require(loop.encoder_layers >= 1 && loop.decoder_layers >= 1, "loop layer counts must be >= 1");
  require(loop.loops >= 0, "loop.loops must be >= 0");
  require(loop.noise_std >= 0.0, "loop.noise_std must be >= 0");
  require(geometry.curvature > 0.0, "geometry.curvature must be > 0");
  require(geometry.scale > 0.0, "geometry.scale must be > 0");
  require(geometry.frechet_tol > 0.0 && geometry.frechet_max_iters >= 1,
          "geometry.frechet_tol must be > 0 and geometry.frechet_max_iters >= 1");
  require(loss.tau > 0.0, "loss.tau must be > 0");
  require(loss.margin >= 0.0, "loss.margin must be >= 0");
  require(loss.alpha > 0.0 && loss.alpha < 1.0, "loss.alpha must lie in (0, 1)");
  require(loss.w_aux >= 0.0, "loss.w_aux must be >= 0");
  require(optim.lr > 0.0, "optim.lr must be > 0");
  require(optim.weight_decay >= 0.0, "optim.weight_decay must be >= 0");
  require(optim.steps >= 0 && optim.warmup_steps >= 0, "optim step counts must be >= 0");
  require(optim.batch_size >= 1, "optim.batch_size must be >= 1");
  require(optim.grad_clip >= 0.0, "optim.grad_clip must be >= 0 (0 disables clipping)");
  require(optim.log_every >= 1 && optim.eval_every >= 0, "optim.log_every must be >= 1");
  require(precision == "f32" || precision == "f64", "precision must be \"f32\" or \"f64\"");
}

void to_json(json& j, const RunConfig& c) {
  j = json{
      {"model",
       {{"d_gcn", c.model.d_gcn},
        {"d_model", c.model.d_model},
        {"heads", c.model.heads},
        {"d_ff", c.model.d_ff},
        {"d_hyp", c.model.d_hyp},
        {"activation", to_string(c.model.activation)},
        {"tie_embeddings", c.model.tie_embeddings},
        {"max_decode_len", c.model.max_decode_len}}},
      {"loop",
       {{"variant", to_string(c.loop.variant)},
        {"encoder_layers", c.loop.encoder_layers},
        {"decoder_layers", c.loop.decoder_layers},
        {"loops", c.loop.loops},
        {"injection", to_string(c.loop.injection)},
        {"add_length_align", c.loop.add_length_align},
        {"extra_feature", to_string(c.loop.extra_feature)},
        {"noise_std", c.loop.noise_std}}},
      {"geometry",
       {{"manifold", to_string(c.geometry.manifold)},
        {"curvature", c.geometry.curvature},
        {"scale", c.geometry.scale},
        {"frechet_tol", c.geometry.frechet_tol},
        {"frechet_max_iters", c.geometry.frechet_max_iters},
        {"frechet_weights", to_string(c.geometry.frechet_weights)}}},
      {"loss",
       {{"tau", c.loss.tau},
        {"margin", c.loss.margin},
        {"alpha_mode", to_string(c.loss.alpha_mode)},
        {"alpha", c.loss.alpha},
        {"w_aux", c.loss.w_aux},
        {"symmetric", c.loss.symmetric}}},
      {"optim",
       {{"lr", c.optim.lr},
        {"weight_decay", c.optim.weight_decay},
        {"beta1", c.optim.beta1},
        {"beta2", c.optim.beta2},
        {"eps", c.optim.eps},
        {"steps", c.optim.steps},
        {"warmup_steps", c.optim.warmup_steps},
        {"batch_size", c.optim.batch_size},
        {"grad_clip", c.optim.grad_clip},
        {"seed", c.optim.seed},
        {"eval_every", c.optim.eval_every},
        {"log_every", c.optim.log_every}}},
      {"data",
       {{"manifest", c.data.manifest},
        {"train_split", c.data.train_split},
        {"eval_split", c.data.eval_split}}},
      {"output_dir", c.output_dir},
      {"precision", c.precision},
  };
}

void from_json(const json& j, RunConfig& c) {
  reject_unknown(j, {"model", "loop", "geometry", "loss", "optim", "data", "output_dir", "precision"},
                 "config");
  if (j.contains("model")) {
    const auto& m = j.at("model");
    reject_unknown(m, {"d_gcn", "d_model", "heads", "d_ff", "d_hyp", "activation", "tie_embeddings",
                       "max_decode_len"},
                   "model");
    read(m, "d_gcn", c.model.d_gcn, "model");
    read(m, "d_model", c.model.d_model, "model");
    read(m, "heads", c.model.heads, "model");
    read(m, "d_ff", c.model.d_ff, "model");
    read(m, "d_hyp", c.model.d_hyp, "model");
    read_enum(m, "activation", c.model.activation, kActivations, "model");
    read(m, "tie_embeddings", c.model.tie_embeddings, "model");
    read(m, "max_decode_len", c.model.max_decode_len, "model");
  }
  if (j.contains("loop")) {
    const auto& l = j.at("loop");
    reject_unknown(l, {"variant", "encoder_layers", "decoder_layers", "loops", "injection",
                       "add_length_align", "extra_feature", "noise_std"},
                   "loop");
    read_enum(l, "variant", c.loop.variant, kVariants, "loop");
    read(l, "encoder_layers", c.loop.encoder_layers, "loop");
    read(l, "decoder_layers", c.loop.decoder_layers, "loop");
    read(l, "loops", c.loop.loops, "loop");
    read_enum(l, "injection", c.loop.injection, kInjections, "loop");
    read(l, "add_length_align", c.loop.add_length_align, "loop");
    read_enum(l, "extra_feature", c.loop.extra_feature, kExtras, "loop");
    read(l, "noise_std", c.loop.noise_std, "loop");
  }
  if (j.contains("geometry")) {
    const auto& g = j.at("geometry");
    reject_unknown(g, {"manifold", "curvature", "scale", "frechet_tol", "frechet_max_iters",
                       "frechet_weights"},
                   "geometry");
    read_enum(g, "manifold", c.geometry.manifold, kManifolds, "geometry");
    read(g, "curvature", c.geometry.curvature, "geometry");
    read(g, "scale", c.geometry.scale, "geometry");
    read(g, "frechet_tol", c.geometry.frechet_tol, "geometry");
    read(g, "frechet_max_iters", c.geometry.frechet_max_iters, "geometry");
    read_enum(g, "frechet_weights", c.geometry.frechet_weights, kWeightings, "geometry");
  }
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    reject_unknown(l, {"tau", "margin", "alpha_mode", "alpha", "w_aux", "symmetric"}, "loss");
    read(l, "tau", c.loss.tau, "loss");
    read(l, "margin", c.loss.margin, "loss");
    read_enum(l, "alpha_mode", c.loss.alpha_mode, kAlphaModes, "loss");
    read(l, "alpha", c.loss.alpha, "loss");
    read(l, "w_aux", c.loss.w_aux, "loss");
    read(l, "symmetric", c.loss.symmetric, "loss");
  }
  if (j.contains("optim")) {
    const auto& o = j.at("optim");
    reject_unknown(o, {"lr", "weight_decay", "beta1", "beta2", "eps", "steps", "warmup_steps",
                       "batch_size", "grad_clip", "seed", "eval_every", "log_every"},
                   "optim");
    read(o, "lr", c.optim.lr, "optim");
    read(o, "weight_decay", c.optim.weight_decay, "optim");
    read(o, "beta1", c.optim.beta1, "optim");
    read(o, "beta2", c.optim.beta2, "optim");
    read(o, "eps", c.optim.eps, "optim");
    read(o, "steps", c.optim.steps, "optim");
    read(o, "warmup_steps", c.optim.warmup_steps, "optim");
    read(o, "batch_size", c.optim.batch_size, "optim");
    read(o, "grad_clip", c.optim.grad_clip, "optim");
    read(o, "seed", c.optim.seed, "optim");
    read(o, "eval_every", c.optim.eval_every, "optim");
    read(o, "log_every", c.optim.log_every, "optim");
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    reject_unknown(d, {"manifest", "train_split", "eval_split"}, "data");
    read(d, "manifest", c.data.manifest, "data");
    read(d, "train_split", c.data.train_split, "data");
    read(d, "eval_split", c.data.eval_split, "data");
  }
  read(j, "output_dir", c.output_dir, "config");
  read(j, "precision", c.precision, "config");
}

RunConfig load_config(const std::string& path) {
  return resolve_config(path, {});
}

void apply_overrides(json& doc, const std::vector<std::string>& overrides) {
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override '" + item + "' is not of the form key.path=value");
    }
    const std::string key = item.substr(0, eq);
    const std::string raw = item.substr(eq + 1);
    json value = json::parse(raw, nullptr, /*allow_exceptions=*/false);
    if (value.is_discarded()) value = raw;

    json* node = &doc;
    std::size_t start = 0;
    for (;;) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
      if (part.empty()) throw ConfigError("override '" + item + "' has an empty path segment");
      if (!node->is_object()) throw ConfigError("override '" + item + "' descends into a non-object");
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      node = &(*node)[part];
      start = dot + 1;
    }
  }
}

RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  json doc = RunConfig{};
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    json file;
    try {
      file = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config file " + path + ": " + e.what());
    }
    RunConfig probe;
    from_json(file, probe);  // rejects unknown keys with the file's own paths
    doc.merge_patch(file);
  }
  apply_overrides(doc, overrides);
  RunConfig c;
  from_json(doc, c);
  c.validate();
  return c;
}

}  // namespace loopalign
