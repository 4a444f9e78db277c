#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace ctrl {

/// BIO label; the numeric value is the class id used by the output layer.
enum class Tag : std::uint8_t { kB = 0, kI = 1, kO = 2 };

char tag_char(Tag tag);
/// Accepts exactly "B", "I" or "O"; throws ParseError otherwise.
Tag parse_tag(std::string_view text);

/// Inclusive token interval [start, end] of one aspect term.
struct ChunkSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  auto operator<=>(const ChunkSpan&) const = default;
};

/// B opens a span, I extends the open span, O closes it. An I with no open
/// span (sentence start or after O) opens a new span.
std::vector<ChunkSpan> decode_bio(std::span<const Tag> labels);
std::vector<ChunkSpan> decode_bio(std::span<const std::int32_t> class_ids);

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t n_gold = 0;
  std::size_t n_pred = 0;
  std::size_t n_correct = 0;
};

/// Derives P, R and F1 from the counts (0 when a denominator is 0).
PRF prf_from_counts(std::size_t n_gold, std::size_t n_pred, std::size_t n_correct);

/// Micro-averaged exact-match scores. Throws Error if the two lists differ in
/// sentence count.
PRF chunk_prf(std::span<const std::vector<ChunkSpan>> gold, std::span<const std::vector<ChunkSpan>> pred);

struct RunSummary {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation; 0 for a single run
};

RunSummary aggregate_runs(std::span<const double> scores);

}  // namespace ctrl
