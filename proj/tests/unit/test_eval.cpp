#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <tuple>

#include "ctrl/error.hpp"
#include "ctrl/eval.hpp"

namespace ctrl {
namespace {

using Spans = std::vector<ChunkSpan>;
constexpr Tag B = Tag::kB, I = Tag::kI, O = Tag::kO;

Spans decode(std::vector<Tag> tags) { return decode_bio(tags); }

std::vector<Tag> random_tags(std::mt19937_64& rng, std::size_t max_len = 12) {
  std::vector<Tag> tags(1 + rng() % max_len);
  for (auto& t : tags) t = static_cast<Tag>(rng() % 3);
  return tags;
}

// Independent span reader: scan for maximal runs that start at B, I-after-O or
// I at position 0, and continue through I.
Spans oracle_spans(const std::vector<Tag>& tags) {
  Spans out;
  std::size_t i = 0;
  while (i < tags.size()) {
    if (tags[i] == O) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < tags.size() && tags[j] == I) ++j;
    out.push_back({i, j - 1});
    i = j;
  }
  return out;
}

TEST(DecodeBio, Examples) {
  EXPECT_EQ(decode({B, I, O, B}), (Spans{{0, 1}, {3, 3}}));
  EXPECT_EQ(decode({I, I}), (Spans{{0, 1}}));
  EXPECT_TRUE(decode({O, O, O}).empty());
  EXPECT_EQ(decode({B, B, I}), (Spans{{0, 0}, {1, 2}}));
  EXPECT_EQ(decode({O, I, O}), (Spans{{1, 1}}));
}

TEST(DecodeBio, ClassIdOverloadAgrees) {
  const std::vector<std::int32_t> ids{0, 1, 2, 1, 0};
  EXPECT_EQ(decode_bio(ids), decode({B, I, O, I, B}));
}

TEST(DecodeBio, SpansSortedDisjointInBounds) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto tags = random_tags(rng);
    const Spans spans = decode_bio(tags);
    EXPECT_EQ(spans, oracle_spans(tags));
    for (std::size_t k = 0; k < spans.size(); ++k) {
      EXPECT_LE(spans[k].start, spans[k].end);
      EXPECT_LT(spans[k].end, tags.size());
      if (k > 0) EXPECT_LT(spans[k - 1].end, spans[k].start);
    }
  }
}

TEST(Tags, ParseAndPrint) {
  for (Tag t : {B, I, O}) EXPECT_EQ(parse_tag(std::string(1, tag_char(t))), t);
  EXPECT_THROW(parse_tag("b"), ParseError);
  EXPECT_THROW(parse_tag(""), ParseError);
}

TEST(ChunkPrf, HalfRecall) {
  const std::vector<Spans> gold{{{0, 1}, {3, 3}}}, pred{{{0, 1}}};
  const PRF prf = chunk_prf(gold, pred);
  EXPECT_EQ(prf.precision, 1.0);
  EXPECT_EQ(prf.recall, 0.5);
  EXPECT_NEAR(prf.f1, 2.0 / 3.0, 1e-12);
  EXPECT_EQ(prf.n_correct, 1u);
}

TEST(ChunkPrf, PerfectAndEmpty) {
  const std::vector<Spans> gold{{{0, 1}}, {}, {{2, 4}}};
  const PRF same = chunk_prf(gold, gold);
  EXPECT_EQ(same.precision, 1.0);
  EXPECT_EQ(same.recall, 1.0);
  EXPECT_EQ(same.f1, 1.0);
  const std::vector<Spans> none(3);
  const PRF zero = chunk_prf(gold, none);
  EXPECT_EQ(zero.f1, 0.0);
  EXPECT_EQ(zero.precision, 0.0);
  EXPECT_THROW(chunk_prf(gold, std::vector<Spans>(2)), Error);
}

// Brute force: materialize (sentence, start, end) triples and intersect the sets.
TEST(ChunkPrf, MatchesSetIntersectionOracle) {
  std::mt19937_64 rng(2024);
  std::vector<Spans> gold, pred;
  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> gold_set, pred_set;
  for (std::size_t s = 0; s < 1000; ++s) {
    auto g = random_tags(rng);
    auto p = g;
    for (auto& t : p) {
      if (rng() % 4 == 0) t = static_cast<Tag>(rng() % 3);
    }
    gold.push_back(decode_bio(g));
    pred.push_back(decode_bio(p));
    for (const auto& sp : oracle_spans(g)) gold_set.insert({s, sp.start, sp.end});
    for (const auto& sp : oracle_spans(p)) pred_set.insert({s, sp.start, sp.end});
  }
  std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> common;
  std::set_intersection(gold_set.begin(), gold_set.end(), pred_set.begin(), pred_set.end(), std::back_inserter(common));
  const PRF prf = chunk_prf(gold, pred);
  EXPECT_EQ(prf.n_gold, gold_set.size());
  EXPECT_EQ(prf.n_pred, pred_set.size());
  EXPECT_EQ(prf.n_correct, common.size());
  const double p = static_cast<double>(common.size()) / pred_set.size();
  const double r = static_cast<double>(common.size()) / gold_set.size();
  EXPECT_EQ(prf.precision, p);
  EXPECT_EQ(prf.recall, r);
  EXPECT_EQ(prf.f1, 2 * p * r / (p + r));
}

TEST(ChunkPrf, SwapSymmetryAndReorderInvariance) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Spans> gold, pred;
    for (int s = 0; s < 30; ++s) {
      gold.push_back(decode_bio(random_tags(rng, 8)));
      pred.push_back(decode_bio(random_tags(rng, 8)));
    }
    const PRF a = chunk_prf(gold, pred), b = chunk_prf(pred, gold);
    EXPECT_EQ(a.precision, b.recall);
    EXPECT_EQ(a.recall, b.precision);
    EXPECT_EQ(a.f1, b.f1);

    std::vector<std::size_t> order(gold.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Spans> g2, p2;
    for (std::size_t i : order) {
      g2.push_back(gold[i]);
      p2.push_back(pred[i]);
    }
    EXPECT_EQ(chunk_prf(g2, p2).f1, a.f1);
    EXPECT_LE(a.n_correct, std::min(a.n_gold, a.n_pred));
  }
}

TEST(PrfFromCounts, ZeroDenominators) {
  const PRF p = prf_from_counts(0, 0, 0);
  EXPECT_EQ(p.f1, 0.0);
  EXPECT_EQ(prf_from_counts(4, 2, 2).f1, 2 * 1.0 * 0.5 / 1.5);
}

TEST(AggregateRuns, MeanAndSampleSd) {
  const std::vector<double> constant(5, 0.8);
  EXPECT_NEAR(aggregate_runs(constant).mean, 0.8, 1e-15);
  EXPECT_NEAR(aggregate_runs(constant).sd, 0.0, 1e-15);
  const std::vector<double> two{0.7, 0.9};
  EXPECT_NEAR(aggregate_runs(two).mean, 0.8, 1e-15);
  EXPECT_NEAR(aggregate_runs(two).sd, std::sqrt(0.02), 1e-12);
  EXPECT_NEAR(aggregate_runs(two).sd, 0.1414, 1e-4);
  const std::vector<double> one{0.42};
  EXPECT_EQ(aggregate_runs(one).mean, 0.42);
  EXPECT_EQ(aggregate_runs(one).sd, 0.0);
  EXPECT_THROW(aggregate_runs(std::vector<double>{}), Error);
}

}  // namespace
}  // namespace ctrl
