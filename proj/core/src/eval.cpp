#include "ctrl/eval.hpp"

#include <cmath>
#include <string>

#include "ctrl/error.hpp"

namespace ctrl {

char tag_char(Tag tag) {
  switch (tag) {
    case Tag::kB: return 'B';
    case Tag::kI: return 'I';
    case Tag::kO: return 'O';
  }
  return '?';
}

Tag parse_tag(std::string_view text) {
  if (text == "B") return Tag::kB;
  if (text == "I") return Tag::kI;
  if (text == "O") return Tag::kO;
  throw ParseError("unknown label '" + std::string(text) + "' (expected B, I or O)");
}

std::vector<ChunkSpan> decode_bio(std::span<const Tag> labels) {
  std::vector<ChunkSpan> spans;
  bool open = false;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    switch (labels[t]) {
      case Tag::kB:
        spans.push_back({t, t});
        open = true;
        break;
      case Tag::kI:
        if (open) {
          spans.back().end = t;
        } else {
          spans.push_back({t, t});
          open = true;
        }
        break;
      case Tag::kO:
        open = false;
        break;
    }
  }
  return spans;
}

std::vector<ChunkSpan> decode_bio(std::span<const std::int32_t> class_ids) {
  std::vector<Tag> tags;
  tags.reserve(class_ids.size());
  for (std::int32_t id : class_ids) {
    if (id < 0 || id > 2) throw ParseError("class id " + std::to_string(id) + " is not a BIO tag");
    tags.push_back(static_cast<Tag>(id));
  }
  return decode_bio(std::span<const Tag>(tags));
}

PRF prf_from_counts(std::size_t n_gold, std::size_t n_pred, std::size_t n_correct) {
  PRF r;
  r.n_gold = n_gold;
  r.n_pred = n_pred;
  r.n_correct = n_correct;
  r.precision = n_pred ? static_cast<double>(n_correct) / static_cast<double>(n_pred) : 0.0;
  r.recall = n_gold ? static_cast<double>(n_correct) / static_cast<double>(n_gold) : 0.0;
  const double s = r.precision + r.recall;
  r.f1 = s > 0.0 ? 2.0 * r.precision * r.recall / s : 0.0;
  return r;
}

PRF chunk_prf(std::span<const std::vector<ChunkSpan>> gold, std::span<const std::vector<ChunkSpan>> pred) {
  if (gold.size() != pred.size()) {
    throw Error("chunk_prf: " + std::to_string(gold.size()) + " gold sentences vs " + std::to_string(pred.size()) +
                " predicted");
  }
  std::size_t n_gold = 0, n_pred = 0, n_correct = 0;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    const auto& g = gold[s];
    const auto& p = pred[s];
    n_gold += g.size();
    n_pred += p.size();
    // both lists are sorted by start and disjoint: merge walk
    std::size_t i = 0, j = 0;
    while (i < g.size() && j < p.size()) {
      if (g[i] == p[j]) {
        ++n_correct;
        ++i;
        ++j;
      } else if (g[i] < p[j]) {
        ++i;
      } else {
        ++j;
      }
    }
  }
  return prf_from_counts(n_gold, n_pred, n_correct);
}

RunSummary aggregate_runs(std::span<const double> scores) {
  if (scores.empty()) throw Error("aggregate_runs needs at least one score");
  double sum = 0.0;
  for (double s : scores) sum += s;
  const double mean = sum / static_cast<double>(scores.size());
  if (scores.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double s : scores) ss += (s - mean) * (s - mean);
  return {mean, std::sqrt(ss / static_cast<double>(scores.size() - 1))};
}

}  // namespace ctrl
