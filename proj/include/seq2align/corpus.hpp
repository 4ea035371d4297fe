#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace seq2align {

using TokenId = int;
using Sentence = std::vector<TokenId>;
using Words = std::vector<std::string>;

/// Token <-> id map with ids 0..3 reserved for PAD, UNK, BOS, EOS.
class Vocabulary {
 public:
  static constexpr TokenId pad = 0;
  static constexpr TokenId unk = 1;
  static constexpr TokenId bos = 2;
  static constexpr TokenId eos = 3;
  static constexpr std::size_t reserved_count = 4;

  /// Only the reserved entries.
  Vocabulary();
  /// Content tokens in id order (first token gets id 4). Rejects duplicates and
  /// reserved spellings.
  explicit Vocabulary(std::vector<std::string> content_tokens);

  /// Keeps the (max_size - 4) most frequent tokens of the stream; ties go to
  /// the token seen first. max_size must be at least 5.
  static Vocabulary build(std::span<const std::string> token_stream, std::size_t max_size);
  static Vocabulary build(std::span<const Words> sentences, std::size_t max_size);

  /// One content token per line; line k holds id k + 4.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string serialize() const;
  /// FNV-1a 64 of serialize(); stored in checkpoints.
  std::uint64_t content_hash() const;

  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  bool contains(std::string_view token) const;

  Sentence encode(std::span<const std::string> words) const;
  Words decode(std::span<const TokenId> ids) const;

  static std::string_view reserved_name(TokenId id);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

struct SentencePair {
  Sentence source;
  Sentence target;
  friend bool operator==(const SentencePair&, const SentencePair&) = default;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  Vocabulary source_vocab;
  Vocabulary target_vocab;

  std::size_t size() const { return pairs.size(); }
  /// Throws if empty, a sentence is empty, holds PAD, or an id is out of range.
  void validate() const;
};

struct ShuffleSpec {
  double fraction = 1.0;
  std::uint64_t seed = 0;
};

enum class TaskKind { copy, reverse, cipher_reverse };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);

struct SyntheticTaskSpec {
  TaskKind kind = TaskKind::cipher_reverse;
  std::size_t vocab_size = 50;
  std::size_t min_length = 5;
  std::size_t max_length = 15;
  std::size_t pairs = 1000;
  std::uint64_t seed = 0;
  /// Source tokens are drawn with P(rank k) proportional to (k + 1)^-zipf_exponent;
  /// 0 is the uniform distribution.
  double zipf_exponent = 0.0;
};

/// Whitespace tokenization.
Words tokenize(std::string_view line);
std::string join(std::span<const std::string> words);

/// Reads lines; a trailing newline does not start a new line, trailing '\r' is dropped.
std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, std::span<const std::string> lines);

ParallelCorpus load_corpus(const std::filesystem::path& source_path,
                           const std::filesystem::path& target_path, const Vocabulary& source_vocab,
                           const Vocabulary& target_vocab);
/// Tokenized sides of a parallel file pair, validated like load_corpus.
std::pair<std::vector<Words>, std::vector<Words>> read_parallel_words(
    const std::filesystem::path& source_path, const std::filesystem::path& target_path);

void write_corpus(const ParallelCorpus& corpus, const std::filesystem::path& source_path,
                  const std::filesystem::path& target_path);

/// Sorted positions whose targets take part in the shuffle: round(fraction * n)
/// indices drawn uniformly without replacement.
std::vector<std::size_t> shuffle_positions(std::size_t n, const ShuffleSpec& spec);

/// The target permutation tau as a vector: new_target[n] = old_target[tau[n]].
/// A subset of round(fraction * n) positions is drawn uniformly without
/// replacement and permuted uniformly among themselves; other positions are
/// fixed.
std::vector<std::size_t> target_permutation(std::size_t n, const ShuffleSpec& spec);

ParallelCorpus shuffle_targets(const ParallelCorpus& corpus, const ShuffleSpec& spec);

/// Substitution cipher used by the cipher-reverse task: cipher[k] is the
/// image of content token k (0-based).
std::vector<std::size_t> synthetic_cipher(const SyntheticTaskSpec& spec);

ParallelCorpus generate_synthetic(const SyntheticTaskSpec& spec);

/// Token spelling for content index k of a synthetic vocabulary.
std::string synthetic_token(std::size_t k);

std::uint64_t hash_pair(const SentencePair& pair);

}  // namespace seq2align
