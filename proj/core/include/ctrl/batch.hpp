#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ctrl {

/// Label value stored in padded cells; ignored by the loss.
inline constexpr std::int32_t kIgnoreLabel = -1;
inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;

/// Padded [B x L] id/label/mask matrices, row-major. Each row's mask is a
/// prefix of ones followed by zeros.
struct Batch {
  std::size_t batch_size = 0;
  std::size_t max_len = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::int32_t> labels;
  std::vector<std::uint8_t> mask;

  std::span<const std::int32_t> row_ids(std::size_t b) const { return {ids.data() + b * max_len, max_len}; }
  std::span<const std::int32_t> row_labels(std::size_t b) const { return {labels.data() + b * max_len, max_len}; }
  std::span<const std::uint8_t> row_mask(std::size_t b) const { return {mask.data() + b * max_len, max_len}; }
  /// Number of real tokens in row `b`.
  std::size_t length(std::size_t b) const;
  std::size_t token_count() const;
};

}  // namespace ctrl
