#pragma once

// Verification suites and the ablation runner shared by the command-line
// tool and the acceptance binary. Every suite returns named checks with the
// measured value and its limit.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "loopalign/config.hpp"
#include "loopalign/data.hpp"
#include "loopalign/training.hpp"

namespace loopalign::harness {

struct Check {
  std::string name;
  double measured = 0.0;
  double limit = 0.0;
  bool passed = false;
  std::string detail;
};

struct Report {
  std::string suite;
  std::vector<Check> checks;
  double seconds = 0.0;

  /// Passes when measured <= limit and measured is finite.
  Check& at_most(const std::string& name, double measured, double limit, std::string detail = {});
  /// Passes when measured > limit.
  Check& above(const std::string& name, double measured, double limit, std::string detail = {});
  bool passed() const;
  std::vector<const Check*> failures() const;
};

/// One row per check, then a summary line.
void print_report(std::ostream& os, const Report& r);

/// Manifold properties in 64-bit: exp/log roundtrips, distance identities,
/// Poincare/Lorentz isometry, Mobius cancellation, clipping, batched kernels.
Report geometry_suite(std::uint64_t seed = 0);
/// Frechet mean against a grid-search oracle, monotone objective, flat limit,
/// convergence and batched agreement.
Report frechet_suite(std::uint64_t seed = 0);
/// Central finite differences over every trainable parameter of the joint
/// objective, for each looping variant and manifold setting, in 64-bit.
Report gradient_suite(std::uint64_t seed = 0, std::ostream* progress = nullptr);
/// Parameter-count parity, encoder-variant detach, snapshot indexing and
/// decoder causality.
Report structural_audit(std::uint64_t seed = 0);

/// Fixed two-sample batch (5 and 4 frames, glosses of one and two tokens).
struct CheckBatch {
  Vocabulary vocabulary;
  Batch batch;
};
CheckBatch gradient_check_batch(std::uint64_t seed);

// ---------------------------------------------------------------------------

struct AblationEntry {
  std::string label;
  /// Rows sharing a group compare like with like (e.g. Base/Loop at one U).
  std::string group;
  RunConfig config;
};

std::vector<std::string> ablation_axes();
/// Sweep rows for `axis` built on top of `base`. Throws ConfigError for an
/// unknown axis.
std::vector<AblationEntry> ablation_plan(const std::string& axis, const RunConfig& base);

struct AblationResult {
  std::string axis;
  AblationEntry entry;
  std::uint64_t seed = 0;
  std::size_t parameters = 0;
  Accuracy accuracy;
  double final_loss = 0.0;
  double seconds = 0.0;
};

/// Trains and evaluates every entry once per seed. Each run writes its
/// artifacts under <entry.config.output_dir>/<slug>/seed<k>.
std::vector<AblationResult> run_ablation(const std::string& axis, const std::vector<AblationEntry>& plan,
                                         const Dataset& data, std::span<const std::uint64_t> seeds,
                                         std::ostream* progress = nullptr);

/// axis, label, group, unique_layers, passes, effective_depth, parameters,
/// seed, pi, pc, n, final_loss, seconds.
void write_results_csv(const std::string& path, const std::vector<AblationResult>& rows);

std::string slug(const std::string& label);

}  // namespace loopalign::harness
