#pragma once

#include "seq2align/corpus.hpp"
#include "seq2align/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace seq2align {

/// A padded mini-batch. Target inputs are BOS-prefixed, labels EOS-suffixed;
/// both are position-major like SourceBatch::ids.
struct Batch {
  SourceBatch source;
  std::size_t target_length = 0;
  std::vector<TokenId> target_input;
  std::vector<TokenId> target_output;
  Matrix target_mask;  // [target_length x batch]
  std::vector<std::size_t> indices;  // corpus positions, column order

  std::size_t size() const { return source.batch; }
  std::size_t label_count() const;
};

/// Pads the given corpus rows into one batch. Sentences longer than
/// max_length (0 = unlimited) are truncated to it; truncated counts how many.
Batch make_batch(const ParallelCorpus& corpus, std::span<const std::size_t> indices,
                 std::size_t max_length = 0, std::size_t* truncated = nullptr);

/// Shuffles the corpus order with the seed and cuts it into batches of
/// batch_size; the last batch may be shorter.
std::vector<Batch> make_batches(const ParallelCorpus& corpus, std::size_t batch_size, std::uint64_t seed,
                                std::size_t max_length = 0);

/// Teacher-forced negative log-likelihood averaged over unmasked labels.
Var sentence_loss(Graph& g, const BoundModel& m, const Batch& batch, const Dropout& d = {});
double sentence_loss(const ModelParameters& model, const Batch& batch);

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamState() = default;
  AdamState(const ParameterSet& params, AdamConfig config);

  AdamConfig config;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam step over params (same order the state was built
/// with). A non-finite gradient rejects the whole step and returns false.
bool adam_update(AdamState& state, const ParameterSet& params);

/// Scales gradients so their global L2 norm is at most max_norm; returns the
/// norm before scaling.
double clip_gradients(const ParameterSet& params, double max_norm);

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 60;
  double dropout = 0.2;
  double learning_rate = 1e-4;
  double max_grad_norm = 0.0;  // 0 disables clipping
  std::uint64_t seed = 0;
  std::size_t max_length = 100;  // 0 = no truncation
  std::size_t checkpoint_every = 0;  // epochs; 0 = final checkpoint only
  /// Checkpoints and the log go here when non-empty.
  std::filesystem::path output_dir;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double tokens_per_second = 0.0;
  std::string checkpoint_path;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  bool aborted = false;
  std::string message;
  std::size_t rejected_steps = 0;
  std::size_t truncated_sentences = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Runs config.epochs epochs of batched teacher-forced training with dropout
/// and Adam. Deterministic for a fixed config.seed. On a non-finite loss the
/// model is restored to the end of the last finished epoch and the result is
/// flagged aborted.
TrainResult train(const TrainConfig& config, const ParallelCorpus& corpus, ModelParameters& model,
                  const EpochCallback& on_epoch = {});

void write_train_log(const std::filesystem::path& path, std::span<const EpochRecord> log);

}  // namespace seq2align
