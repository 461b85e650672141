#include "loopalign/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "loopalign/errors.hpp"

namespace loopalign {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::size_t part_size(std::size_t p, std::size_t frames) { return frames * kPartKeypoints[p] * kChannels; }

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

}  // namespace

void SkeletonSequence::validate() const {
  if (frames == 0) throw DataError("sample '" + id + "' has no frames");
  for (std::size_t p = 0; p < 4; ++p) {
    if (parts[p].size() != part_size(p, frames)) {
      throw DataError("sample '" + id + "': part " + std::string(kPartNames[p]) + " holds " +
                      std::to_string(parts[p].size()) + " values, expected " +
                      std::to_string(frames) + " x " + std::to_string(kPartKeypoints[p]) + " x 3");
    }
    for (std::size_t i = 0; i < parts[p].size(); ++i) {
      const double v = parts[p][i];
      if (!std::isfinite(v)) throw DataError("sample '" + id + "' has a non-finite coordinate");
      if (i % 3 == 2 && (v < 0.0 || v > 1.0)) {
        throw DataError("sample '" + id + "' has confidence " + std::to_string(v) + " outside [0, 1]");
      }
    }
  }
}

std::string to_json_line(const SkeletonSequence& s) {
  json parts = json::object();
  for (std::size_t p = 0; p < 4; ++p) {
    const std::size_t n = kPartKeypoints[p];
    json frames = json::array();
    for (std::size_t t = 0; t < s.frames; ++t) {
      json points = json::array();
      for (std::size_t k = 0; k < n; ++k) {
        const double* v = &s.parts[p][(t * n + k) * 3];
        points.push_back(json::array({v[0], v[1], v[2]}));
      }
      frames.push_back(std::move(points));
    }
    parts[std::string(kPartNames[p])] = std::move(frames);
  }
  json j = {{"id", s.id}, {"gloss", s.gloss}, {"frames", s.frames}, {"parts", std::move(parts)}};
  return j.dump();
}

SkeletonSequence parse_json_line(const std::string& line, const std::string& where) {
  SkeletonSequence s;
  try {
    const json j = json::parse(line);
    s.id = j.at("id").get<std::string>();
    s.gloss = j.at("gloss").get<std::string>();
    s.frames = j.at("frames").get<std::size_t>();
    const json& parts = j.at("parts");
    for (std::size_t p = 0; p < 4; ++p) {
      const json& frames = parts.at(std::string(kPartNames[p]));
      if (frames.size() != s.frames) {
        throw DataError("part " + std::string(kPartNames[p]) + " has " + std::to_string(frames.size()) +
                        " frames, header says " + std::to_string(s.frames));
      }
      s.parts[p].reserve(part_size(p, s.frames));
      for (const json& points : frames) {
        if (points.size() != kPartKeypoints[p]) {
          throw DataError("part " + std::string(kPartNames[p]) + " needs " +
                          std::to_string(kPartKeypoints[p]) + " keypoints per frame, got " +
                          std::to_string(points.size()));
        }
        for (const json& pt : points) {
          if (pt.size() != 3) throw DataError("keypoints must be [x, y, confidence] triples");
          for (const json& v : pt) s.parts[p].push_back(v.get<double>());
        }
      }
    }
    s.validate();
  } catch (const json::exception& e) {
    throw DataError(where + ": malformed record: " + e.what());
  } catch (const DataError& e) {
    throw DataError(where + ": " + e.what());
  }
  return s;
}

void write_jsonl(const std::string& path, const std::vector<SkeletonSequence>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (const auto& s : samples) out << to_json_line(s) << '\n';
  if (!out) throw IoError("write failed for " + path);
}

std::vector<SkeletonSequence> read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<SkeletonSequence> out;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_json_line(line, path + ":" + std::to_string(lineno)));
  }
  return out;
}

SkeletonSequence normalized(const SkeletonSequence& s) {
  SkeletonSequence out = s;
  const auto& body = s.parts[0];
  double cx = 0.0, cy = 0.0;
  const std::size_t nb = body.size() / 3;
  for (std::size_t i = 0; i < nb; ++i) {
    cx += body[i * 3];
    cy += body[i * 3 + 1];
  }
  cx /= static_cast<double>(nb);
  cy /= static_cast<double>(nb);
  double extent = 0.0;
  for (auto& part : out.parts) {
    for (std::size_t i = 0; i < part.size(); i += 3) {
      part[i] -= cx;
      part[i + 1] -= cy;
      extent = std::max({extent, std::abs(part[i]), std::abs(part[i + 1])});
    }
  }
  if (extent > 0.0) {
    for (auto& part : out.parts) {
      for (std::size_t i = 0; i < part.size(); i += 3) {
        part[i] /= extent;
        part[i + 1] /= extent;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() : tokens_{"<pad>", "<bos>", "<eos>"} {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 3 || tokens_[kPadId] != "<pad>" || tokens_[kBosId] != "<bos>" ||
      tokens_[kEosId] != "<eos>") {
    throw DataError("vocabulary must start with <pad>, <bos>, <eos>");
  }
  std::set<std::string> seen(tokens_.begin(), tokens_.end());
  if (seen.size() != tokens_.size()) throw DataError("vocabulary contains duplicate tokens");
}

Vocabulary Vocabulary::from_glosses(const std::vector<std::string>& glosses) {
  std::set<std::string> words;
  for (const auto& g : glosses) {
    for (auto& w : split_words(g)) words.insert(w);
  }
  std::vector<std::string> tokens{"<pad>", "<bos>", "<eos>"};
  for (const auto& w : words) {
    if (w == "<pad>" || w == "<bos>" || w == "<eos>") continue;
    tokens.push_back(w);
  }
  return Vocabulary(std::move(tokens));
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocabulary::id(const std::string& token) const {
  const auto it = std::find(tokens_.begin(), tokens_.end(), token);
  if (it == tokens_.end()) throw DataError("token '" + token + "' is not in the vocabulary");
  return static_cast<int>(it - tokens_.begin());
}

bool Vocabulary::contains(const std::string& token) const {
  return std::find(tokens_.begin(), tokens_.end(), token) != tokens_.end();
}

std::vector<int> Vocabulary::encode(const std::string& gloss) const {
  std::vector<int> ids;
  for (const auto& w : split_words(gloss)) ids.push_back(id(w));
  if (ids.empty()) throw DataError("empty gloss");
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int i : ids) {
    if (!out.empty()) out += ' ';
    out += token(i);
  }
  return out;
}

// ---------------------------------------------------------------------------

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (!ids.insert(r.id).second) throw DataError("duplicate record id '" + r.id + "' in manifest");
    for (const auto& w : split_words(r.gloss)) {
      if (!vocabulary.contains(w)) {
        throw DataError("record '" + r.id + "' has label token '" + w + "' missing from the vocabulary");
      }
    }
  }
}

std::vector<std::size_t> DatasetManifest::split_indices(const std::string& split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split == split) out.push_back(i);
  }
  return out;
}

void write_manifest(const std::string& path, const DatasetManifest& m) {
  json records = json::array();
  for (const auto& r : m.records) {
    records.push_back(
        {{"id", r.id}, {"gloss", r.gloss}, {"split", r.split}, {"path", r.path}, {"line", r.line}});
  }
  const json j = {{"schema", 1}, {"vocabulary", m.vocabulary.tokens()}, {"records", records}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << j.dump(1) << '\n';
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  DatasetManifest m;
  try {
    const json j = json::parse(in);
    if (j.value("schema", 0) != 1) throw DataError(path + ": unsupported manifest schema");
    m.vocabulary = Vocabulary(j.at("vocabulary").get<std::vector<std::string>>());
    for (const json& r : j.at("records")) {
      m.records.push_back({r.at("id").get<std::string>(), r.at("gloss").get<std::string>(),
                           r.at("split").get<std::string>(), r.at("path").get<std::string>(),
                           r.at("line").get<std::size_t>()});
    }
  } catch (const json::exception& e) {
    throw DataError(path + ": malformed manifest: " + e.what());
  }
  m.validate();
  return m;
}

Dataset::Dataset(DatasetManifest manifest, std::vector<SkeletonSequence> samples)
    : manifest_(std::move(manifest)), samples_(std::move(samples)) {
  if (samples_.size() != manifest_.records.size()) {
    throw DataError("dataset holds " + std::to_string(samples_.size()) + " samples for " +
                    std::to_string(manifest_.records.size()) + " manifest records");
  }
}

Dataset Dataset::load(const std::string& manifest_path) {
  DatasetManifest m = read_manifest(manifest_path);
  const fs::path root = fs::path(manifest_path).parent_path();
  std::map<std::string, std::vector<SkeletonSequence>> files;
  std::vector<SkeletonSequence> samples;
  samples.reserve(m.records.size());
  for (const auto& r : m.records) {
    auto it = files.find(r.path);
    if (it == files.end()) it = files.emplace(r.path, read_jsonl((root / r.path).string())).first;
    const std::string where = (root / r.path).string() + ":" + std::to_string(r.line);
    if (r.line == 0 || r.line > it->second.size()) throw DataError(where + ": no such record");
    const SkeletonSequence& s = it->second[r.line - 1];
    if (s.id != r.id || s.gloss != r.gloss) {
      throw DataError(where + ": record '" + s.id + "' does not match manifest entry '" + r.id + "'");
    }
    samples.push_back(s);
  }
  return Dataset(std::move(m), std::move(samples));
}

// ---------------------------------------------------------------------------

Batch make_batch(const std::vector<const SkeletonSequence*>& samples, const Vocabulary& vocab,
                 std::size_t pad_to) {
  if (samples.empty()) throw DataError("cannot build an empty batch");
  const std::size_t B = samples.size();
  std::size_t T = pad_to;
  std::size_t longest_text = 0;
  Batch batch;
  std::vector<std::vector<int>> encoded;
  for (const auto* s : samples) {
    T = std::max(T, pad_to == 0 ? s->frames : 0);
    if (pad_to != 0 && s->frames > pad_to) {
      throw DataError("sample '" + s->id + "' has " + std::to_string(s->frames) +
                      " frames, more than pad_to = " + std::to_string(pad_to));
    }
    encoded.push_back(vocab.encode(s->gloss));
    longest_text = std::max(longest_text, encoded.back().size() + 1);
    batch.ids.push_back(s->id);
    batch.glosses.push_back(s->gloss);
    batch.frames.push_back(s->frames);
  }

  std::vector<double> keep(B * T, 0.0);
  for (std::size_t p = 0; p < 4; ++p) {
    const std::size_t n = kPartKeypoints[p] * kChannels;
    std::vector<double> v(B * T * n, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      const SkeletonSequence norm = normalized(*samples[b]);
      std::copy(norm.parts[p].begin(), norm.parts[p].end(), v.begin() + static_cast<long>(b * T * n));
    }
    batch.sign.parts[p] = Tensor::constant({B, T, kPartKeypoints[p], kChannels}, std::move(v));
  }
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < samples[b]->frames; ++t) keep[b * T + t] = 1.0;
  }
  batch.sign.frame_keep = Tensor::constant({B, T}, std::move(keep));

  for (const auto& ids : encoded) {
    std::vector<int> in{kBosId}, target;
    in.insert(in.end(), ids.begin(), ids.end());
    target.insert(target.end(), ids.begin(), ids.end());
    target.push_back(kEosId);
    in.resize(longest_text, kPadId);
    target.resize(longest_text, kPadId);
    batch.input.tokens.push_back(std::move(in));
    batch.targets.push_back(std::move(target));
  }
  return batch;
}

Batch load_batch(const Dataset& data, std::span<const std::size_t> indices, std::size_t pad_to) {
  std::vector<const SkeletonSequence*> picked;
  for (std::size_t i : indices) {
    if (i >= data.size()) {
      throw DataError("sample index " + std::to_string(i) + " outside dataset of size " +
                      std::to_string(data.size()));
    }
    picked.push_back(&data.samples()[i]);
  }
  return make_batch(picked, data.vocabulary(), pad_to);
}

// ---------------------------------------------------------------------------

namespace {

const char* const kGlossWords[] = {"book",  "drink", "computer", "before", "chair", "go",
                                   "clothes", "who", "candy",    "cousin", "deaf",  "fine",
                                   "help",  "no",    "thin",     "walk",   "year",  "yes"};

// Fixed rest pose of each part (not class dependent).
std::array<double, 2> rest_position(std::size_t p, std::size_t k) {
  const double kd = static_cast<double>(k);
  switch (p) {
    case 0: return {0.35 * std::cos(std::numbers::pi * kd / 8.0), -0.1 * kd};
    case 1: {
      const double a = 2.0 * std::numbers::pi * kd / 18.0;
      return {0.15 * std::cos(a), 0.8 + 0.18 * std::sin(a)};
    }
    default: {
      const double side = p == 2 ? -0.6 : 0.6;
      const double finger = k == 0 ? 0.0 : static_cast<double>((k - 1) / 4) - 2.0;
      const double joint = k == 0 ? 0.0 : static_cast<double>((k - 1) % 4 + 1);
      return {side + 0.03 * finger, -0.2 + 0.04 * joint};
    }
  }
}

double round4(double v) { return std::round(v * 1e4) / 1e4; }

}  // namespace

std::string synthetic_gloss(int cls) {
  constexpr int n = static_cast<int>(std::size(kGlossWords));
  if (cls < n) return kGlossWords[cls];
  return "gloss" + std::to_string(cls);
}

std::vector<MotionTemplate> synthetic_templates(const SyntheticTaskSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> freq(0.5, 2.0), phase(0.0, 2.0 * std::numbers::pi),
      spread(0.0, 0.1);
  std::vector<MotionTemplate> out;
  while (out.size() < static_cast<std::size_t>(spec.classes)) {
    MotionTemplate t;
    for (std::size_t p = 0; p < 4; ++p) {
      const double amp_hi = p >= 2 ? 0.3 : 0.15;
      t.part[p] = {freq(rng), phase(rng), std::uniform_real_distribution<double>(0.02, amp_hi)(rng),
                   spread(rng)};
    }
    bool distinct = true;
    for (const auto& o : out) {
      double d = 0.0;
      for (std::size_t p = 0; p < 4; ++p) {
        for (std::size_t k = 0; k < 4; ++k) d += std::abs(o.part[p][k] - t.part[p][k]);
      }
      distinct = distinct && d > 1e-3;
    }
    if (distinct) out.push_back(t);
  }
  return out;
}

SkeletonSequence render_template(const MotionTemplate& t, int frames, double noise, std::uint64_t seed,
                                 const std::string& id, const std::string& gloss) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  SkeletonSequence s;
  s.id = id;
  s.gloss = gloss;
  s.frames = static_cast<std::size_t>(frames);
  for (std::size_t p = 0; p < 4; ++p) {
    const auto [f, phi, amp, psi] = t.part[p];
    const double phase_jitter = noise * std::numbers::pi * n01(rng);
    const double amp_factor = std::exp(0.5 * noise * n01(rng));
    const std::size_t n = kPartKeypoints[p];
    auto& out = s.parts[p];
    out.reserve(s.frames * n * 3);
    for (std::size_t ti = 0; ti < s.frames; ++ti) {
      const double u = frames > 1 ? static_cast<double>(ti) / (frames - 1) : 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const auto rest = rest_position(p, k);
        const double a = 2.0 * std::numbers::pi * f * u + phi + phase_jitter + psi * static_cast<double>(k);
        const double x = rest[0] + amp * amp_factor * std::sin(a) + 0.05 * noise * n01(rng);
        const double y = rest[1] + amp * amp_factor * std::cos(a) + 0.05 * noise * n01(rng);
        const double c = std::clamp(1.0 - std::abs(0.1 * noise * n01(rng)), 0.0, 1.0);
        out.push_back(round4(x));
        out.push_back(round4(y));
        out.push_back(round4(c));
      }
    }
  }
  return s;
}

DatasetManifest generate_synthetic(const SyntheticTaskSpec& spec, const std::string& dir) {
  if (spec.classes < 1 || spec.frames < 1 || spec.samples_per_class < 1 || spec.min_frames < 1 ||
      spec.min_frames > spec.frames || spec.noise < 0.0 || spec.train_fraction < 0.0 ||
      spec.val_fraction < 0.0 || spec.train_fraction + spec.val_fraction > 1.0) {
    throw ConfigError("invalid synthetic task specification");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());

  const auto templates = synthetic_templates(spec);
  std::map<std::string, std::vector<SkeletonSequence>> splits;
  DatasetManifest m;
  std::vector<std::string> glosses;
  const int n = spec.samples_per_class;
  const int n_train = static_cast<int>(std::lround(spec.train_fraction * n));
  const int n_val = static_cast<int>(std::lround(spec.val_fraction * n));
  for (int cls = 0; cls < spec.classes; ++cls) {
    const std::string gloss = synthetic_gloss(cls);
    glosses.push_back(gloss);
    for (int i = 0; i < n; ++i) {
      std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                        static_cast<std::uint32_t>(cls), static_cast<std::uint32_t>(i)};
      std::mt19937_64 sample_rng(seq);
      int frames = spec.frames;
      if (spec.min_frames < spec.frames) {
        frames = std::uniform_int_distribution<int>(spec.min_frames, spec.frames)(sample_rng);
      }
      const std::string split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
      char id[64];
      std::snprintf(id, sizeof id, "c%03d_%04d", cls, i);
      splits[split].push_back(render_template(templates[static_cast<std::size_t>(cls)], frames, spec.noise,
                                              sample_rng(), id, gloss));
    }
  }
  m.vocabulary = Vocabulary::from_glosses(glosses);
  for (const char* split : {"train", "val", "test"}) {
    const auto it = splits.find(split);
    if (it == splits.end()) continue;
    const std::string file = std::string(split) + ".jsonl";
    write_jsonl((fs::path(dir) / file).string(), it->second);
    for (std::size_t line = 0; line < it->second.size(); ++line) {
      const auto& s = it->second[line];
      m.records.push_back({s.id, s.gloss, split, file, line + 1});
    }
  }
  m.validate();
  write_manifest((fs::path(dir) / "manifest.json").string(), m);
  return m;
}

}  // namespace loopalign
