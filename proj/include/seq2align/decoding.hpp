#pragma once

#include "seq2align/corpus.hpp"
#include "seq2align/model.hpp"

#include <functional>
#include <map>
#include <memory>
#include <span>
#include <vector>

namespace seq2align {

struct DecodeConfig {
  std::size_t beam_size = 12;
  /// Maximum decoding steps, counting the EOS step.
  std::size_t max_length = 100;
  bool length_normalization = true;

  void validate() const;
};

struct BeamHypothesis {
  std::vector<TokenId> tokens;  // includes the final EOS when finished
  double log_prob = 0.0;
  bool finished = false;
  std::size_t state = 0;  // column in the step model's current state set
};

struct DecodeResult {
  std::vector<TokenId> tokens;  // EOS stripped
  double log_prob = 0.0;
  /// False when max_length ran out before EOS.
  bool finished = false;
};

/// Anything that emits next-token log-probabilities for a set of prefixes.
/// Hypothesis sets are replaced wholesale: extend() builds hypothesis k from
/// old hypothesis parents[k] followed by tokens[k].
class StepModel {
 public:
  virtual ~StepModel() = default;
  virtual std::size_t vocab_size() const = 0;
  /// Resets to the single BOS prefix; returns [vocab x 1] log-probabilities.
  virtual Matrix start() = 0;
  /// Returns [vocab x parents.size()] log-probabilities.
  virtual Matrix extend(std::span<const std::size_t> parents, std::span<const TokenId> tokens) = 0;
};

/// Neural model over one source sentence. The encoder runs once; its states
/// and attention keys are tiled across the live hypotheses.
class Seq2SeqStepModel final : public StepModel {
 public:
  Seq2SeqStepModel(const ModelParameters& model, std::span<const TokenId> source);

  std::size_t vocab_size() const override { return model_.shape().target_vocab; }
  Matrix start() override;
  Matrix extend(std::span<const std::size_t> parents, std::span<const TokenId> tokens) override;

 private:
  struct Tiled {
    EncoderOutput enc;
    Var keys;
  };
  const Tiled& tiled(std::size_t copies);
  Matrix step(const Matrix& h_prev, std::span<const TokenId> previous);

  const ModelParameters& model_;
  Graph g_{false};
  BoundModel bound_;
  EncoderOutput enc_;
  Var keys_;
  std::map<std::size_t, Tiled> tiled_;
  Matrix state_;  // [decoder_hidden x live hypotheses]
};

/// Toy model defined by a function of the emitted prefix, for tests.
class PrefixStepModel final : public StepModel {
 public:
  using Table = std::function<std::vector<double>(std::span<const TokenId> prefix)>;
  PrefixStepModel(std::size_t vocab, Table table) : vocab_(vocab), table_(std::move(table)) {}

  std::size_t vocab_size() const override { return vocab_; }
  Matrix start() override;
  Matrix extend(std::span<const std::size_t> parents, std::span<const TokenId> tokens) override;

 private:
  Matrix lookup() const;

  std::size_t vocab_;
  Table table_;
  std::vector<std::vector<TokenId>> prefixes_;
};

/// Column-wise log-softmax.
Matrix log_softmax_columns(const Matrix& logits);

/// True for ids the decoders never emit (PAD and BOS).
bool never_emitted(TokenId id);

DecodeResult greedy_decode(StepModel& model, const DecodeConfig& config);
DecodeResult greedy_decode(const ModelParameters& model, std::span<const TokenId> source,
                           const DecodeConfig& config);

/// Beam search with finished hypotheses set aside (the live width shrinks by
/// one per finished hypothesis). Candidates are ranked by score, then token
/// id, then parent order.
DecodeResult beam_search(StepModel& model, const DecodeConfig& config);
DecodeResult beam_search(const ModelParameters& model, std::span<const TokenId> source,
                         const DecodeConfig& config);

/// Score used for the final choice among hypotheses.
double final_score(const BeamHypothesis& h, bool length_normalization);

/// Decodes every source sentence; beam_size 1 uses the greedy decoder.
std::vector<DecodeResult> decode_corpus(const ModelParameters& model, std::span<const Sentence> sources,
                                        const DecodeConfig& config);

}  // namespace seq2align
