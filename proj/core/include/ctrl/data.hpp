#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctrl/batch.hpp"
#include "ctrl/eval.hpp"
#include "ctrl/tensor.hpp"

namespace ctrl {

struct TaggedSentence {
  std::vector<std::string> tokens;
  std::vector<Tag> labels;

  bool operator==(const TaggedSentence&) const = default;
};

/// Two-column corpus: one `token<TAB>label` per line, blank line between
/// sentences. Throws ParseError with the 1-based line number.
std::vector<TaggedSentence> parse_corpus(std::istream& in, std::string_view source = "<stream>");
std::vector<TaggedSentence> load_corpus(const std::filesystem::path& path);

void write_corpus(std::ostream& out, std::span<const TaggedSentence> sentences);
void save_corpus(const std::filesystem::path& path, std::span<const TaggedSentence> sentences);

struct CorpusStats {
  std::size_t sentences = 0;
  std::size_t tokens = 0;
  std::size_t aspects = 0;  // decoded spans
};

CorpusStats corpus_stats(std::span<const TaggedSentence> sentences);

/// Word vectors read from `word v1 ... vd` lines.
struct EmbeddingMap {
  std::size_t dim = 0;
  std::unordered_map<std::string, std::vector<double>> vectors;
  std::size_t skipped = 0;  // lines whose arity did not match `dim`
  std::vector<std::string> warnings;
};

EmbeddingMap parse_embeddings(std::istream& in, std::size_t expected_dim);
/// Throws IoError if the file cannot be opened.
EmbeddingMap load_embeddings(const std::filesystem::path& path, std::size_t expected_dim);

/// Token ids with 0 = padding and 1 = unknown reserved.
class Vocab {
 public:
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocab();
  /// Ids assigned in order of first occurrence; keys keep their case.
  static Vocab build(std::span<const TaggedSentence> sentences);
  /// Inverse of tokens(); the first two entries must be the reserved tokens.
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::int32_t id(std::string_view token) const;
  const std::string& token(std::int32_t id) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

struct EmbeddingTables {
  Tensor general;  // [vocab x general dim]
  Tensor domain;   // [vocab x domain dim]
  double general_coverage = 0.0;  // fraction of non-reserved tokens found
  double domain_coverage = 0.0;
};

/// Fills rows from the maps; missing tokens and the padding row are zero.
/// With `lowercase_fallback`, a general-map miss retries the lowercased token.
EmbeddingTables build_tables(const Vocab& vocab, const EmbeddingMap& general, const EmbeddingMap& domain,
                             bool lowercase_fallback = true);

struct Split {
  std::vector<TaggedSentence> train;
  std::vector<TaggedSentence> validation;
};

/// Seeded sample of `n_val` sentences for validation; the remainder keeps its
/// original order. Throws ConfigError if n_val >= |train| (n_val = 0 is allowed).
Split split_validation(std::span<const TaggedSentence> train, std::size_t n_val, std::uint64_t seed);

/// Token ids and class ids for one sentence.
struct EncodedSentence {
  std::vector<std::int32_t> ids;
  std::vector<std::int32_t> labels;
};

std::vector<EncodedSentence> encode(std::span<const TaggedSentence> sentences, const Vocab& vocab);

/// Padded batches in a seeded shuffled order; each batch is padded to its own
/// longest sentence.
std::vector<Batch> make_batches(std::span<const EncodedSentence> sentences, std::size_t batch_size,
                                std::uint64_t shuffle_seed);
std::vector<Batch> make_batches(std::span<const TaggedSentence> sentences, const Vocab& vocab, std::size_t batch_size,
                                std::uint64_t shuffle_seed);
/// Batches in corpus order (for evaluation).
std::vector<Batch> make_ordered_batches(std::span<const EncodedSentence> sentences, std::size_t batch_size);

std::vector<std::string> tokenize_whitespace(std::string_view line);

}  // namespace ctrl
