#pragma once

#include <array>
#include <string_view>
#include <vector>

#include "loopalign/tensor.hpp"

namespace loopalign {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;

/// Body parts in storage order.
inline constexpr std::array<std::string_view, 4> kPartNames = {"body", "face", "left", "right"};
inline constexpr std::array<std::size_t, 4> kPartKeypoints = {9, 18, 21, 21};
inline constexpr std::size_t kChannels = 3;  // x, y, confidence

/// Frame-padded skeleton input. parts[p] has shape (B, T, N_p, 3) and
/// frame_keep (B, T) is 1 on real frames and 0 on padding.
struct SignInput {
  std::array<Tensor, 4> parts;
  Tensor frame_keep;

  std::size_t batch() const { return frame_keep.size(0); }
  std::size_t frames() const { return frame_keep.size(1); }
};

/// Rectangular token matrix (B, T_text), padded with kPadId.
struct TextInput {
  std::vector<std::vector<int>> tokens;

  std::size_t batch() const { return tokens.size(); }
  std::size_t length() const { return tokens.empty() ? 0 : tokens.front().size(); }
  /// (B, T_text) with 1 on non-pad tokens.
  Tensor keep() const;
};

}  // namespace loopalign
