#pragma once

// Skeleton dataset: JSON-lines sample files, a manifest, the gloss
// vocabulary, a seeded synthetic generator and padded batching.
//
// Sample line: {"id": str, "gloss": str, "frames": T,
//               "parts": {"body": [[[x, y, c] x 9] x T], "face": ..., "left": ..., "right": ...}}
//
// Manifest (manifest.json):
//   {"schema": 1, "vocabulary": ["<pad>", "<bos>", "<eos>", gloss tokens ...],
//    "records": [{"id", "gloss", "split", "path" (relative), "line" (1-based)}]}

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "loopalign/batch.hpp"

namespace loopalign {

struct SkeletonSequence {
  std::string id;
  std::string gloss;
  std::size_t frames = 0;
  /// parts[p] is flat (frames x kPartKeypoints[p] x 3).
  std::array<std::vector<double>, 4> parts;

  /// Throws DataError on wrong sizes, non-finite coordinates or confidences
  /// outside [0, 1].
  void validate() const;
  bool operator==(const SkeletonSequence&) const = default;
};

std::string to_json_line(const SkeletonSequence& s);
/// `where` names the source (path:line) in error messages.
SkeletonSequence parse_json_line(const std::string& line, const std::string& where);

void write_jsonl(const std::string& path, const std::vector<SkeletonSequence>& samples);
std::vector<SkeletonSequence> read_jsonl(const std::string& path);

/// Copy with x, y centred on the body centroid and scaled into [-1, 1].
SkeletonSequence normalized(const SkeletonSequence& s);

class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(std::vector<std::string> tokens);
  /// Specials followed by the sorted set of whitespace-separated gloss tokens.
  static Vocabulary from_glosses(const std::vector<std::string>& glosses);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const;
  /// Throws DataError for unknown tokens.
  int id(const std::string& token) const;
  bool contains(const std::string& token) const;
  std::vector<int> encode(const std::string& gloss) const;
  std::string decode(const std::vector<int>& ids) const;
  bool operator==(const Vocabulary&) const = default;

 private:
  std::vector<std::string> tokens_;
};

struct ManifestRecord {
  std::string id;
  std::string gloss;
  std::string split;
  std::string path;
  std::size_t line = 0;
};

struct DatasetManifest {
  Vocabulary vocabulary;
  std::vector<ManifestRecord> records;

  /// Labels in vocabulary, unique record ids (hence disjoint splits).
  void validate() const;
  std::vector<std::size_t> split_indices(const std::string& split) const;
};

void write_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::string& path);

/// Manifest plus every referenced sample, loaded eagerly.
class Dataset {
 public:
  static Dataset load(const std::string& manifest_path);
  Dataset(DatasetManifest manifest, std::vector<SkeletonSequence> samples);

  const DatasetManifest& manifest() const { return manifest_; }
  const Vocabulary& vocabulary() const { return manifest_.vocabulary; }
  const std::vector<SkeletonSequence>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  std::vector<std::size_t> split(const std::string& name) const { return manifest_.split_indices(name); }

 private:
  DatasetManifest manifest_;
  std::vector<SkeletonSequence> samples_;
};

struct Batch {
  SignInput sign;
  TextInput input;  // <bos> g_1 ... g_n, padded
  std::vector<std::vector<int>> targets;  // g_1 ... g_n <eos>, padded
  std::vector<std::string> ids;
  std::vector<std::string> glosses;
  std::vector<std::size_t> frames;

  std::size_t size() const { return ids.size(); }
};

/// Pads frames to `pad_to` (0 = longest in the batch) and tokenises labels.
Batch make_batch(const std::vector<const SkeletonSequence*>& samples, const Vocabulary& vocab,
                 std::size_t pad_to = 0);
Batch load_batch(const Dataset& data, std::span<const std::size_t> indices, std::size_t pad_to = 0);

struct SyntheticTaskSpec {
  int classes = 10;
  int frames = 16;
  /// Shortest sample; lengths are drawn uniformly from [min_frames, frames].
  int min_frames = 16;
  int samples_per_class = 200;
  double noise = 0.1;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
  double val_fraction = 0.1;
};

/// Per-class motion template, one row per part: frequency, phase, amplitude
/// and per-keypoint phase spread.
struct MotionTemplate {
  std::array<std::array<double, 4>, 4> part;
};

std::vector<MotionTemplate> synthetic_templates(const SyntheticTaskSpec& spec);
std::string synthetic_gloss(int cls);
/// Noise-free rendering of class `cls` with `frames` frames.
SkeletonSequence render_template(const MotionTemplate& t, int frames, double noise, std::uint64_t seed,
                                 const std::string& id, const std::string& gloss);

/// Writes train/val/test JSON-lines files and manifest.json into `dir`;
/// returns the manifest.
DatasetManifest generate_synthetic(const SyntheticTaskSpec& spec, const std::string& dir);

}  // namespace loopalign
