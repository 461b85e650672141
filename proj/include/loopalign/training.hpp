#pragma once

// Training pipeline: model + alignment head + joint objective over one
// parameter set, AdamW with a cosine schedule, metrics stream, checkpoints,
// evaluation and embedding export.

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "loopalign/config.hpp"
#include "loopalign/data.hpp"
#include "loopalign/losses.hpp"
#include "loopalign/model.hpp"

namespace loopalign {

inline constexpr int kMetricsSchema = 1;
inline constexpr int kCheckpointVersion = 1;

struct StepResult {
  Tensor joint;
  LossBreakdown breakdown;
  int frechet_iterations = 0;
  bool frechet_converged = true;
};

class Pipeline {
 public:
  /// Parameters are initialised from cfg.optim.seed.
  Pipeline(const RunConfig& cfg, const Vocabulary& vocab);
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  const RunConfig& config() const { return cfg_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  const SignModel& model() const { return *model_; }
  SignModel& model() { return *model_; }
  const AlignmentHead& head() const { return head_; }
  const JointObjective& objective() const { return objective_; }

  /// Forward pass and joint loss for one batch; `noise_rng` drives the
  /// optional extra-feature noise.
  StepResult compute(const Batch& batch, Rng* noise_rng = nullptr) const;
  /// Greedy decoding, returned as gloss strings.
  std::vector<std::string> predict(const Batch& batch) const;
  /// Tangent-space sign embeddings at the origin (identity for Euclidean), (B, D).
  Tensor embed_signs(const Batch& batch) const;

  double sigma() const { return std::exp(head_.log_scale.item()); }
  double curvature() const { return head_.curvature().item(); }
  double tau() const { return head_.tau().item(); }

 private:
  RunConfig cfg_;
  Vocabulary vocab_;
  ParameterSet params_;
  std::unique_ptr<SignModel> model_;
  AlignmentHead head_;
  JointObjective objective_;
};

class AdamW {
 public:
  explicit AdamW(const OptimConfig& cfg) : cfg_(cfg) {}
  /// Learning rate at `step` (0-based): linear warm-up then cosine decay to 0.
  double learning_rate(int step) const;
  /// Clips by global norm, then applies one update; returns the pre-clip norm.
  double step(const ParameterSet& params, int step);

 private:
  OptimConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
};

struct Accuracy {
  double per_instance = 0.0;
  double per_class = 0.0;
  std::size_t total = 0;
};

/// P-I = correct / total; P-C = mean over classes (by true label) of the
/// per-class accuracy. Throws DataError when empty.
Accuracy accuracy(const std::vector<std::string>& truth, const std::vector<std::string>& predicted);

Accuracy evaluate(const Pipeline& pipeline, const Dataset& data, const std::vector<std::size_t>& indices,
                  std::size_t batch_size);

void save_checkpoint(const std::string& path, const Pipeline& pipeline);
/// Rebuilds the pipeline from the stored configuration and vocabulary.
std::unique_ptr<Pipeline> load_checkpoint(const std::string& path);

struct TrainResult {
  std::vector<double> losses;
  Accuracy final_eval;
  bool evaluated = false;
  std::string checkpoint_path;
};

struct TrainOptions {
  /// Write metrics.jsonl and checkpoint.json under cfg.output_dir.
  bool write_outputs = true;
  /// Evaluate on cfg.data.eval_split after the last step.
  bool final_eval = true;
  std::ostream* progress = nullptr;
};

/// Trains `pipeline` on the dataset's train split. Throws TrainingError on a
/// non-finite loss or gradient after writing nan_dump.json.
TrainResult train(Pipeline& pipeline, const Dataset& data, const TrainOptions& opts = {});

/// CSV with columns id, gloss, split, e0 .. e{D-1}; one row per record.
void export_embeddings(const Pipeline& pipeline, const Dataset& data, const std::string& path,
                       std::size_t batch_size);

}  // namespace loopalign
