#include "ctrl/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <numeric>
#include <random>

#include "ctrl/error.hpp"

namespace ctrl {

namespace {

std::string_view trim_right(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = s.find(sep, pos);
    out.push_back(s.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

}  // namespace

std::vector<TaggedSentence> parse_corpus(std::istream& in, std::string_view source) {
  std::vector<TaggedSentence> sentences;
  TaggedSentence current;
  std::string line;
  std::size_t line_no = 0;
  auto flush = [&] {
    if (!current.tokens.empty()) sentences.push_back(std::move(current));
    current = {};
  };
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = trim_right(line);
    if (text.empty()) {
      flush();
      continue;
    }
    const auto fields = split(text, '\t');
    auto fail = [&](const std::string& what) {
      throw ParseError(std::string(source) + ":" + std::to_string(line_no) + ": " + what);
    };
    if (fields.size() != 2) {
      fail("expected 2 tab-separated columns, got " + std::to_string(fields.size()));
    }
    if (fields[0].empty()) fail("empty token");
    Tag tag;
    try {
      tag = parse_tag(fields[1]);
    } catch (const ParseError& e) {
      fail(e.what());
    }
    current.tokens.emplace_back(fields[0]);
    current.labels.push_back(tag);
  }
  flush();
  return sentences;
}

std::vector<TaggedSentence> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus '" + path.string() + "'");
  return parse_corpus(in, path.string());
}

void write_corpus(std::ostream& out, std::span<const TaggedSentence> sentences) {
  for (const auto& s : sentences) {
    for (std::size_t i = 0; i < s.tokens.size(); ++i) out << s.tokens[i] << '\t' << tag_char(s.labels[i]) << '\n';
    out << '\n';
  }
}

void save_corpus(const std::filesystem::path& path, std::span<const TaggedSentence> sentences) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_corpus(out, sentences);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

CorpusStats corpus_stats(std::span<const TaggedSentence> sentences) {
  CorpusStats stats;
  stats.sentences = sentences.size();
  for (const auto& s : sentences) {
    stats.tokens += s.tokens.size();
    stats.aspects += decode_bio(std::span<const Tag>(s.labels)).size();
  }
  return stats;
}

EmbeddingMap parse_embeddings(std::istream& in, std::size_t expected_dim) {
  EmbeddingMap map;
  map.dim = expected_dim;
  std::string line;
  std::vector<double> values;
  while (std::getline(in, line)) {
    const std::string_view text = trim_right(line);
    if (text.empty()) continue;
    const auto fields = split(text, ' ');
    if (fields.size() != expected_dim + 1 || fields[0].empty()) {
      ++map.skipped;
      continue;
    }
    values.assign(expected_dim, 0.0);
    bool ok = true;
    for (std::size_t i = 0; i < expected_dim && ok; ++i) {
      const auto f = fields[i + 1];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), values[i]);
      ok = ec == std::errc() && ptr == f.data() + f.size();
    }
    if (!ok) {
      ++map.skipped;
      continue;
    }
    map.vectors.try_emplace(std::string(fields[0]), values);
  }
  if (map.vectors.empty()) map.warnings.push_back("no vectors of dimension " + std::to_string(expected_dim) + " loaded");
  if (map.skipped > 0) map.warnings.push_back(std::to_string(map.skipped) + " lines skipped (wrong arity or bad number)");
  return map;
}

EmbeddingMap load_embeddings(const std::filesystem::path& path, std::size_t expected_dim) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embeddings '" + path.string() + "'");
  return parse_embeddings(in, expected_dim);
}

Vocab::Vocab() : tokens_{std::string(kPadToken), std::string(kUnkToken)} {
  ids_.emplace(tokens_[0], kPadId);
  ids_.emplace(tokens_[1], kUnkId);
}

Vocab Vocab::build(std::span<const TaggedSentence> sentences) {
  Vocab v;
  for (const auto& s : sentences) {
    for (const auto& tok : s.tokens) {
      if (v.ids_.try_emplace(tok, static_cast<std::int32_t>(v.tokens_.size())).second) v.tokens_.push_back(tok);
    }
  }
  return v;
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 2 || tokens[0] != kPadToken || tokens[1] != kUnkToken) {
    throw ConfigError("vocabulary must start with the reserved tokens <pad> and <unk>");
  }
  Vocab v;
  for (std::size_t i = 2; i < tokens.size(); ++i) {
    if (!v.ids_.try_emplace(tokens[i], static_cast<std::int32_t>(v.tokens_.size())).second) {
      throw ConfigError("duplicate vocabulary entry '" + tokens[i] + "'");
    }
    v.tokens_.push_back(std::move(tokens[i]));
  }
  return v;
}

std::int32_t Vocab::id(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw LookupError("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

EmbeddingTables build_tables(const Vocab& vocab, const EmbeddingMap& general, const EmbeddingMap& domain,
                             bool lowercase_fallback) {
  EmbeddingTables tables{Tensor({vocab.size(), general.dim}), Tensor({vocab.size(), domain.dim}), 0.0, 0.0};
  std::size_t found_general = 0, found_domain = 0;
  for (std::size_t id = 2; id < vocab.size(); ++id) {
    const std::string& tok = vocab.tokens()[id];
    auto g = general.vectors.find(tok);
    if (g == general.vectors.end() && lowercase_fallback) g = general.vectors.find(lowercase(tok));
    if (g != general.vectors.end()) {
      std::copy(g->second.begin(), g->second.end(), &tables.general.at(id, 0));
      ++found_general;
    }
    if (auto d = domain.vectors.find(tok); d != domain.vectors.end()) {
      std::copy(d->second.begin(), d->second.end(), &tables.domain.at(id, 0));
      ++found_domain;
    }
  }
  const std::size_t real = vocab.size() - 2;
  if (real > 0) {
    tables.general_coverage = static_cast<double>(found_general) / static_cast<double>(real);
    tables.domain_coverage = static_cast<double>(found_domain) / static_cast<double>(real);
  }
  return tables;
}

Split split_validation(std::span<const TaggedSentence> train, std::size_t n_val, std::uint64_t seed) {
  if (n_val > 0 && n_val >= train.size()) {
    throw ConfigError("validation holdout of " + std::to_string(n_val) + " needs more than " +
                      std::to_string(train.size()) + " training sentences");
  }
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> is_val(train.size(), false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;

  Split split;
  for (std::size_t i = 0; i < train.size(); ++i) (is_val[i] ? split.validation : split.train).push_back(train[i]);
  return split;
}

std::vector<EncodedSentence> encode(std::span<const TaggedSentence> sentences, const Vocab& vocab) {
  std::vector<EncodedSentence> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) {
    EncodedSentence e;
    for (const auto& tok : s.tokens) e.ids.push_back(vocab.id(tok));
    for (Tag t : s.labels) e.labels.push_back(static_cast<std::int32_t>(t));
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

Batch assemble(std::span<const EncodedSentence> sentences, std::span<const std::size_t> rows) {
  Batch b;
  b.batch_size = rows.size();
  for (std::size_t r : rows) b.max_len = std::max(b.max_len, sentences[r].ids.size());
  b.ids.assign(b.batch_size * b.max_len, kPadId);
  b.labels.assign(b.batch_size * b.max_len, kIgnoreLabel);
  b.mask.assign(b.batch_size * b.max_len, 0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& s = sentences[rows[i]];
    for (std::size_t t = 0; t < s.ids.size(); ++t) {
      b.ids[i * b.max_len + t] = s.ids[t];
      b.labels[i * b.max_len + t] = s.labels.empty() ? kIgnoreLabel : s.labels[t];
      b.mask[i * b.max_len + t] = 1;
    }
  }
  return b;
}

std::vector<Batch> chunk(std::span<const EncodedSentence> sentences, const std::vector<std::size_t>& order,
                         std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<Batch> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t n = std::min(batch_size, order.size() - i);
    batches.push_back(assemble(sentences, std::span<const std::size_t>(order).subspan(i, n)));
  }
  return batches;
}

}  // namespace

std::vector<Batch> make_batches(std::span<const EncodedSentence> sentences, std::size_t batch_size,
                                std::uint64_t shuffle_seed) {
  std::vector<std::size_t> order(sentences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(shuffle_seed);
  std::shuffle(order.begin(), order.end(), rng);
  return chunk(sentences, order, batch_size);
}

std::vector<Batch> make_batches(std::span<const TaggedSentence> sentences, const Vocab& vocab, std::size_t batch_size,
                                std::uint64_t shuffle_seed) {
  const auto encoded = encode(sentences, vocab);
  return make_batches(encoded, batch_size, shuffle_seed);
}

std::vector<Batch> make_ordered_batches(std::span<const EncodedSentence> sentences, std::size_t batch_size) {
  std::vector<std::size_t> order(sentences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  return chunk(sentences, order, batch_size);
}

std::vector<std::string> tokenize_whitespace(std::string_view line) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) tokens.emplace_back(line.substr(start, i - start));
  }
  return tokens;
}

}  // namespace ctrl
