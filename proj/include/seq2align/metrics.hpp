#pragma once

#include "seq2align/corpus.hpp"
#include "seq2align/model.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace seq2align {

/// Runs of one repeated token longer than max_run are cut to max_run.
/// max_run == 0 leaves the sentence alone.
Words cap_repetitions(std::span<const std::string> sentence, std::size_t max_run = 4);
std::vector<Words> cap_repetitions(std::span<const Words> corpus, std::size_t max_run = 4);

struct BleuStats {
  std::array<std::uint64_t, 4> matches{};  // clipped n-gram matches
  std::array<std::uint64_t, 4> totals{};   // candidate n-grams
  std::uint64_t candidate_length = 0;
  std::uint64_t reference_length = 0;

  void add(std::span<const std::string> candidate, std::span<const std::string> reference);
};

struct BleuResult {
  double bleu = 0.0;                  // 0-100
  std::array<double, 4> precision{};  // p_1..p_4, 0-100, no brevity penalty
  double brevity_penalty = 0.0;
  std::uint64_t candidate_length = 0;
  std::uint64_t reference_length = 0;
};

BleuResult bleu_from_stats(const BleuStats& stats);
/// Corpus BLEU-4 against one reference per line, unsmoothed.
BleuResult bleu(std::span<const Words> candidates, std::span<const Words> references);

struct LengthStats {
  double average_candidate = 0.0;
  double average_reference = 0.0;
  double percent_of_reference = 0.0;
};

LengthStats length_stats(std::span<const Words> candidates, std::span<const Words> references,
                         std::size_t max_run = 4);

/// Unigram counts with lookups of unknown words falling back to the UNK count.
class UnigramModel {
 public:
  UnigramModel() = default;
  /// Counts used as given; every count must be positive.
  static UnigramModel from_counts(std::map<std::string, std::uint64_t> counts, double log_base = 2.0);
  /// Counts the words of a corpus and adds one to the UNK count.
  static UnigramModel from_corpus(std::span<const Words> corpus, double log_base = 2.0);

  double probability(const std::string& word) const;
  /// log_base logarithm of probability(word).
  double log_prob(const std::string& word) const;
  std::uint64_t count(const std::string& word) const;
  std::uint64_t total() const { return total_; }
  double log_base() const { return log_base_; }
  const std::map<std::string, std::uint64_t>& counts() const { return counts_; }

 private:
  std::map<std::string, std::uint64_t> counts_;
  std::uint64_t total_ = 0;
  double log_base_ = 2.0;
};

/// Mean of -log p_train(w) over every (capped) generated word.
double neg_log_prob(std::span<const Words> candidates, const UnigramModel& train, std::size_t max_run = 4);

/// Entropy of the empirical unigram distribution of the (capped) words.
double entropy(std::span<const Words> candidates, double log_base = 2.0, std::size_t max_run = 4);

struct MetricsReport {
  double bleu = 0.0;
  std::array<double, 4> bleu_n{};
  double avg_length_words = 0.0;
  double length_pct_of_ref = 0.0;
  double neg_log_prob = 0.0;
  double entropy = 0.0;
  std::size_t sentences = 0;
  double log_base = 2.0;
};

MetricsReport evaluate(std::span<const Words> candidates, std::span<const Words> references,
                       const UnigramModel& train, std::size_t max_run = 4);

struct RegressionFit {
  double r2 = 0.0;
  double intercept = 0.0;
  Eigen::VectorXd coefficients;
};

/// OLS with intercept, rows of x are samples. The normal equations carry a
/// 1e-8 ridge term for rank safety. Needs at least cols + 2 rows and a
/// non-constant y.
RegressionFit r2_fit(const Matrix& x, const Eigen::VectorXd& y, double ridge = 1e-8);

enum class ProbeSide { encoder, decoder };

struct ProbeSamples {
  Matrix states;              // one sample per row
  Eigen::VectorXd positions;  // 1-based time step
};

/// Encoder side: bidirectional states at source positions 1..|s|. Decoder
/// side: teacher-forced states after the second GRU block for j = 1..|t|.
/// At most sample_cap rows (0 = all), chosen by a seeded subsample.
ProbeSamples collect_probe_samples(const ModelParameters& model, const ParallelCorpus& corpus, ProbeSide side,
                                   std::size_t sample_cap = 100000, std::uint64_t seed = 0);

struct ProbeResult {
  double r2 = 0.0;
  std::size_t samples = 0;
};

ProbeResult r2_probe(const ModelParameters& model, const ParallelCorpus& corpus, ProbeSide side,
                     std::size_t sample_cap = 100000, std::uint64_t seed = 0);

struct ProbeReport {
  double r2_encoder = 0.0;
  double r2_decoder = 0.0;
  std::size_t encoder_samples = 0;
  std::size_t decoder_samples = 0;
};

ProbeReport probe(const ModelParameters& model, const ParallelCorpus& corpus, std::size_t sample_cap = 100000,
                  std::uint64_t seed = 0);

/// Report columns shared by the TSV writers.
std::vector<std::string> metrics_columns();
std::vector<std::string> metrics_cells(const MetricsReport& m);
std::vector<std::string> probe_columns();
std::vector<std::string> probe_cells(const ProbeReport& p);
/// Fixed-precision formatting used in all reports.
std::string format_number(double v);

void write_metrics_tsv(const std::filesystem::path& path, const std::string& label, const MetricsReport& m,
                       const std::optional<ProbeReport>& p = std::nullopt);
/// key=value dump, one per line.
void write_key_values(const std::filesystem::path& path, const MetricsReport* m, const ProbeReport* p);

}  // namespace seq2align
