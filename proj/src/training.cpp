#include "loopalign/training.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <ostream>

#include <json.hpp>

#include "loopalign/errors.hpp"

namespace loopalign {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

Precision precision_of(const RunConfig& cfg) {
  return cfg.precision == "f64" ? Precision::f64 : Precision::f32;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

}  // namespace

Pipeline::Pipeline(const RunConfig& cfg, const Vocabulary& vocab) : cfg_(cfg), vocab_(vocab) {
  cfg_.validate();
  Rng rng(cfg_.optim.seed);
  model_ = std::make_unique<SignModel>(cfg_, vocab_.size(), params_, rng);
  head_ = AlignmentHead::make(params_, cfg_, rng);
  objective_ = JointObjective::make(params_, cfg_.loss);
}

StepResult Pipeline::compute(const Batch& batch, Rng* noise_rng) const {
  StepResult r;
  const LoopState st = model_->forward(batch.sign, batch.input, noise_rng);
  const Tensor lm = lm_loss(model_->logits(st.final), batch.targets);

  const auto trace = head_.pool_sign(st.sign, batch.sign.frame_keep);
  r.frechet_iterations = trace.iterations;
  r.frechet_converged = trace.converged;
  const Tensor c = head_.curvature();
  const Tensor tau = head_.tau();
  const Tensor text_keep = batch.input.keep();
  auto ga = [&](const Tensor& h) {
    return ga_loss(head_.geometry(), trace.mean, head_.pool_text(h, text_keep), c, tau,
                   cfg_.loss.margin, cfg_.loss.symmetric);
  };
  const Tensor ga_final = ga(st.final);
  std::vector<Tensor> aux;
  for (std::size_t i = 0; i + 1 < st.snapshots.size(); ++i) aux.push_back(ga(st.snapshots[i]));
  const auto expected = static_cast<std::size_t>(std::max(cfg_.loop.loops - 1, 0));
  r.joint = objective_.combine(lm, ga_final, aux, expected, &r.breakdown);
  return r;
}

std::vector<std::string> Pipeline::predict(const Batch& batch) const {
  const auto decoded = model_->greedy_decode(batch.sign);
  std::vector<std::string> out;
  out.reserve(decoded.size());
  for (const auto& ids : decoded) out.push_back(vocab_.decode(ids));
  return out;
}

Tensor Pipeline::embed_signs(const Batch& batch) const {
  NoGradGuard no_grad;
  const Tensor s = model_->sign_features(batch.sign);
  const auto trace = head_.pool_sign(s, batch.sign.frame_keep);
  return geo::batched::to_tangent(head_.geometry(), trace.mean, head_.curvature());
}

// ---------------------------------------------------------------------------

double AdamW::learning_rate(int step) const {
  if (cfg_.warmup_steps > 0 && step < cfg_.warmup_steps) {
    return cfg_.lr * static_cast<double>(step + 1) / static_cast<double>(cfg_.warmup_steps);
  }
  const int span = std::max(cfg_.steps - cfg_.warmup_steps, 1);
  const double progress = std::clamp(static_cast<double>(step - cfg_.warmup_steps) / span, 0.0, 1.0);
  return cfg_.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double AdamW::step(const ParameterSet& params, int step) {
  const auto& ps = params.all();
  if (m_.size() != ps.size()) {
    m_.assign(ps.size(), {});
    v_.assign(ps.size(), {});
    for (std::size_t i = 0; i < ps.size(); ++i) {
      m_[i].assign(ps[i].value.numel(), 0.0);
      v_[i].assign(ps[i].value.numel(), 0.0);
    }
  }
  double sq = 0.0;
  for (const auto& p : ps) {
    for (double g : p.value.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  const double clip = (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;
  const double lr = learning_rate(step);
  const double t = static_cast<double>(step + 1);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto grad = ps[i].value.grad();
    if (grad.empty()) continue;
    auto w = ps[i].value.mutable_values();
    const double decay = ps[i].decay ? cfg_.weight_decay : 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double g = grad[k] * clip;
      m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0 - cfg_.beta1) * g;
      v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0 - cfg_.beta2) * g * g;
      const double update = (m_[i][k] / bc1) / (std::sqrt(v_[i][k] / bc2) + cfg_.eps);
      w[k] -= lr * (update + decay * w[k]);
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------

Accuracy accuracy(const std::vector<std::string>& truth, const std::vector<std::string>& predicted) {
  if (truth.empty()) throw DataError("cannot evaluate an empty sample set");
  if (truth.size() != predicted.size()) throw ContractError("prediction count does not match labels");
  std::map<std::string, std::pair<std::size_t, std::size_t>> per_class;  // correct, total
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool ok = truth[i] == predicted[i];
    correct += ok;
    auto& [c, n] = per_class[truth[i]];
    c += ok;
    ++n;
  }
  Accuracy a;
  a.total = truth.size();
  a.per_instance = static_cast<double>(correct) / static_cast<double>(truth.size());
  double sum = 0.0;
  for (const auto& [_, cn] : per_class) sum += static_cast<double>(cn.first) / static_cast<double>(cn.second);
  a.per_class = sum / static_cast<double>(per_class.size());
  return a;
}

Accuracy evaluate(const Pipeline& pipeline, const Dataset& data, const std::vector<std::size_t>& indices,
                  std::size_t batch_size) {
  if (indices.empty()) throw DataError("evaluation split is empty");
  if (!(pipeline.vocabulary() == data.vocabulary())) {
    throw ConfigError("checkpoint vocabulary does not match the dataset vocabulary");
  }
  PrecisionGuard precision(precision_of(pipeline.config()));
  std::vector<std::string> truth, predicted;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t end = std::min(indices.size(), start + batch_size);
    const Batch batch = load_batch(data, std::span(indices).subspan(start, end - start));
    const auto pred = pipeline.predict(batch);
    truth.insert(truth.end(), batch.glosses.begin(), batch.glosses.end());
    predicted.insert(predicted.end(), pred.begin(), pred.end());
  }
  return accuracy(truth, predicted);
}

// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const Pipeline& pipeline) {
  json params = json::object();
  for (const auto& p : pipeline.parameters().all()) {
    params[p.name] = {{"shape", p.value.shape()},
                      {"values", std::vector<double>(p.value.values().begin(), p.value.values().end())}};
  }
  const json j = {{"format", "loopalign-checkpoint"},
                  {"version", kCheckpointVersion},
                  {"config", pipeline.config()},
                  {"vocabulary", pipeline.vocabulary().tokens()},
                  {"parameters", params}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out << j.dump() << '\n';
}

std::unique_ptr<Pipeline> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError("checkpoint " + path + " is not valid JSON: " + e.what());
  }
  if (j.value("format", "") != "loopalign-checkpoint" || j.value("version", 0) != kCheckpointVersion) {
    throw IoError("checkpoint " + path + " has an unsupported format or version");
  }
  RunConfig cfg;
  from_json(j.at("config"), cfg);
  auto pipeline =
      std::make_unique<Pipeline>(cfg, Vocabulary(j.at("vocabulary").get<std::vector<std::string>>()));
  const json& params = j.at("parameters");
  for (const auto& p : pipeline->parameters().all()) {
    if (!params.contains(p.name)) throw IoError("checkpoint " + path + " lacks parameter " + p.name);
    const auto shape = params[p.name].at("shape").get<Shape>();
    const auto values = params[p.name].at("values").get<std::vector<double>>();
    if (shape != p.value.shape() || values.size() != p.value.numel()) {
      throw IoError("checkpoint " + path + ": parameter " + p.name + " has shape " + to_string(shape) +
                    ", model expects " + to_string(p.value.shape()));
    }
    std::copy(values.begin(), values.end(), p.value.mutable_values().begin());
  }
  if (params.size() != pipeline->parameters().all().size()) {
    throw IoError("checkpoint " + path + " holds parameters the model does not define");
  }
  return pipeline;
}

// ---------------------------------------------------------------------------

namespace {

bool all_finite(const ParameterSet& ps) {
  for (const auto& p : ps.all()) {
    for (double g : p.value.grad()) {
      if (!std::isfinite(g)) return false;
    }
  }
  return true;
}

[[noreturn]] void abort_non_finite(const Pipeline& pipeline, const Batch& batch, int step,
                                   const std::string& what, const TrainOptions& opts) {
  const json dump = {{"step", step},
                     {"reason", what},
                     {"batch_ids", batch.ids},
                     {"curvature", pipeline.curvature()},
                     {"sigma", pipeline.sigma()},
                     {"tau", pipeline.tau()}};
  std::string where;
  if (opts.write_outputs) {
    where = (fs::path(pipeline.config().output_dir) / "nan_dump.json").string();
    std::ofstream(where) << dump.dump(1) << '\n';
  }
  throw TrainingError(what + " at step " + std::to_string(step) + " (" + dump.dump() + ")" +
                      (where.empty() ? "" : "; diagnostics written to " + where));
}

}  // namespace

TrainResult train(Pipeline& pipeline, const Dataset& data, const TrainOptions& opts) {
  const RunConfig& cfg = pipeline.config();
  PrecisionGuard precision(precision_of(cfg));
  const auto train_idx = data.split(cfg.data.train_split);
  if (train_idx.empty()) throw DataError("train split '" + cfg.data.train_split + "' is empty");
  if (!(pipeline.vocabulary() == data.vocabulary())) {
    throw ConfigError("model vocabulary does not match the dataset vocabulary");
  }
  const auto eval_idx = data.split(cfg.data.eval_split);

  std::ofstream metrics;
  if (opts.write_outputs) {
    ensure_dir(cfg.output_dir);
    const auto path = (fs::path(cfg.output_dir) / "metrics.jsonl").string();
    metrics.open(path, std::ios::app);
    if (!metrics) throw IoError("cannot open metrics stream " + path);
  }

  Rng rng(cfg.optim.seed ^ 0x9e3779b97f4a7c15ULL);
  AdamW optimizer(cfg.optim);
  TrainResult result;
  std::vector<std::size_t> order = train_idx;
  std::size_t cursor = order.size();
  const auto batch_size = static_cast<std::size_t>(cfg.optim.batch_size);

  auto run_eval = [&](int step) {
    const Accuracy a = evaluate(pipeline, data, eval_idx, batch_size);
    if (metrics.is_open()) {
      metrics << json{{"schema", kMetricsSchema}, {"kind", "eval"},  {"step", step},
                      {"split", cfg.data.eval_split}, {"pi", a.per_instance}, {"pc", a.per_class},
                      {"n", a.total}}.dump()
              << '\n';
    }
    if (opts.progress) {
      *opts.progress << "eval step " << step << ": P-I " << a.per_instance << " P-C " << a.per_class << '\n';
    }
    return a;
  };

  for (int step = 0; step < cfg.optim.steps; ++step) {
    if (cursor + batch_size > order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const std::size_t take = std::min(batch_size, order.size());
    const Batch batch = load_batch(data, std::span(order).subspan(cursor, take));
    cursor += take;

    pipeline.parameters().zero_grad();
    StepResult r;
    try {
      r = pipeline.compute(batch, &rng);
    } catch (const DomainError& e) {
      abort_non_finite(pipeline, batch, step, std::string("non-finite forward pass: ") + e.what(), opts);
    }
    if (!std::isfinite(r.breakdown.joint)) abort_non_finite(pipeline, batch, step, "non-finite loss", opts);
    r.joint.backward();
    if (!all_finite(pipeline.parameters())) {
      abort_non_finite(pipeline, batch, step, "non-finite gradient", opts);
    }
    const double lr = optimizer.learning_rate(step);
    const double grad_norm = optimizer.step(pipeline.parameters(), step);
    assert(pipeline.sigma() > 0.0 && pipeline.tau() > 0.0);
    result.losses.push_back(r.breakdown.joint);

    if (metrics.is_open() && (step % cfg.optim.log_every == 0 || step + 1 == cfg.optim.steps)) {
      const auto& b = r.breakdown;
      metrics << json{{"schema", kMetricsSchema},
                      {"kind", "train"},
                      {"step", step},
                      {"lr", lr},
                      {"lm", b.lm},
                      {"ga_final", b.ga_final},
                      {"ga_aux", b.ga_aux},
                      {"joint", b.joint},
                      {"alpha", b.alpha},
                      {"w_aux", b.w_aux},
                      {"sigma", pipeline.sigma()},
                      {"curvature", pipeline.curvature()},
                      {"tau", pipeline.tau()},
                      {"grad_norm", grad_norm},
                      {"frechet_iterations", r.frechet_iterations},
                      {"frechet_converged", r.frechet_converged}}
                     .dump()
              << '\n';
    }
    if (opts.progress && (step % 50 == 0 || step + 1 == cfg.optim.steps)) {
      *opts.progress << "step " << step << " joint " << r.breakdown.joint << " lm " << r.breakdown.lm
                     << " ga " << r.breakdown.ga_final << '\n';
    }
    if (cfg.optim.eval_every > 0 && (step + 1) % cfg.optim.eval_every == 0 && step + 1 < cfg.optim.steps &&
        !eval_idx.empty()) {
      run_eval(step + 1);
    }
  }

  if (opts.final_eval && !eval_idx.empty()) {
    result.final_eval = run_eval(cfg.optim.steps);
    result.evaluated = true;
  }
  if (opts.write_outputs) {
    result.checkpoint_path = (fs::path(cfg.output_dir) / "checkpoint.json").string();
    save_checkpoint(result.checkpoint_path, pipeline);
  }
  return result;
}

void export_embeddings(const Pipeline& pipeline, const Dataset& data, const std::string& path,
                       std::size_t batch_size) {
  PrecisionGuard precision(Precision::f64);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write embeddings to " + path);
  out.precision(9);
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  bool header = false;
  for (std::size_t start = 0; start < all.size(); start += batch_size) {
    const std::size_t end = std::min(all.size(), start + batch_size);
    const Batch batch = load_batch(data, std::span(all).subspan(start, end - start));
    const Tensor e = pipeline.embed_signs(batch);
    const std::size_t D = e.size(1);
    if (!header) {
      out << "id,gloss,split";
      for (std::size_t d = 0; d < D; ++d) out << ",e" << d;
      out << '\n';
      header = true;
    }
    for (std::size_t b = 0; b < batch.size(); ++b) {
      out << batch.ids[b] << ',' << batch.glosses[b] << ',' << data.manifest().records[start + b].split;
      for (std::size_t d = 0; d < D; ++d) out << ',' << e.values()[b * D + d];
      out << '\n';
    }
  }
}

}  // namespace loopalign
