#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "loopalign/data.hpp"
#include "loopalign/model.hpp"

namespace loopalign::testing {

/// Small model that keeps unit tests fast.
inline RunConfig tiny_config() {
  RunConfig cfg;
  cfg.model.d_gcn = 4;
  cfg.model.d_model = 8;
  cfg.model.heads = 2;
  cfg.model.d_ff = 12;
  cfg.model.d_hyp = 4;
  cfg.model.max_decode_len = 3;
  cfg.loop.loops = 2;
  cfg.precision = "f64";
  return cfg;
}

inline std::vector<double> normal_values(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

/// Random sign input with per-sample frame counts (padded to the longest).
inline SignInput random_sign(const std::vector<std::size_t>& frames, std::mt19937_64& rng) {
  const std::size_t B = frames.size();
  std::size_t T = 0;
  for (auto f : frames) T = std::max(T, f);
  SignInput s;
  for (std::size_t p = 0; p < 4; ++p) {
    const std::size_t N = kPartKeypoints[p];
    auto v = normal_values(B * T * N * 3, rng, 0.5);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t t = frames[b]; t < T; ++t) {
        std::fill_n(v.begin() + static_cast<long>((b * T + t) * N * 3), N * 3, 0.0);
      }
    }
    s.parts[p] = Tensor::constant({B, T, N, 3}, std::move(v));
  }
  std::vector<double> keep(B * T, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < frames[b]; ++t) keep[b * T + t] = 1.0;
  }
  s.frame_keep = Tensor::constant({B, T}, std::move(keep));
  return s;
}

/// Fresh scratch directory under the system temp path.
inline std::string scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("loopalign_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace loopalign::testing
