#pragma once

#include "seq2align/corpus.hpp"
#include "seq2align/decoding.hpp"
#include "seq2align/metrics.hpp"
#include "seq2align/model.hpp"
#include "seq2align/training.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace seq2align {

/// Everything one sweep needs. Serializes to the flat key=value format read
/// by --config; see docs/configuration.md for the keys.
struct ExperimentConfig {
  // Data: a synthetic task unless train_source/train_target are given.
  TaskKind task = TaskKind::cipher_reverse;
  std::size_t vocab_size = 50;
  std::size_t min_length = 5;
  std::size_t max_length = 15;
  double zipf_exponent = 0.7;
  std::size_t train_pairs = 10000;
  std::size_t test_pairs = 1000;
  std::filesystem::path train_source, train_target;
  std::filesystem::path test_source, test_target;  // optional with file corpora
  std::size_t source_vocab_max = 30000;
  std::size_t target_vocab_max = 30000;

  std::vector<double> fractions{0.0, 0.25, 0.5, 0.75, 1.0};

  ModelShape shape;  // vocab sizes are filled in from the data
  TrainConfig train;
  DecodeConfig decode;
  std::size_t probe_sample_cap = 100000;
  std::size_t repetition_cap = 4;
  double log_base = 2.0;

  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "experiment";

  ExperimentConfig();

  void validate() const;
  /// Sets one key; throws std::invalid_argument on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  std::string serialize() const;
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
};

struct ExperimentData {
  ParallelCorpus train;
  ParallelCorpus test;
  /// Test targets as words, used as references.
  std::vector<Words> references;
  std::size_t dropped_overlaps = 0;
};

/// Builds the train/test split: seeded index partition, then removal of any
/// test pair that also occurs in training.
ExperimentData prepare_data(const ExperimentConfig& config);

/// Seeds shared by every fraction, plus the per-fraction shuffle seed.
struct RunSeeds {
  std::uint64_t data = 0;
  std::uint64_t split = 0;
  std::uint64_t init = 0;
  std::uint64_t train = 0;
  std::uint64_t probe = 0;
  std::uint64_t shuffle(double fraction) const;

  std::uint64_t master = 0;
  static RunSeeds from_master(std::uint64_t master);
};

struct FractionResult {
  double fraction = 0.0;
  bool ok = false;
  std::string error;
  std::uint64_t shuffle_seed = 0;
  MetricsReport metrics;
  ProbeReport probe;
  double final_train_loss = 0.0;
  std::size_t epochs_run = 0;
  std::size_t unfinished_decodes = 0;
  std::filesystem::path directory;
};

struct ExperimentReport {
  std::vector<FractionResult> rows;
  std::string config_snapshot;
  RunSeeds seeds;
  std::filesystem::path report_path;
};

using ProgressCallback = std::function<void(const std::string&)>;

/// Runs the full sweep. A failing fraction is recorded and the sweep goes on.
ExperimentReport run_experiment(const ExperimentConfig& config, const ProgressCallback& progress = {});

/// report.tsv contents; contains no timings so reruns are byte-identical.
std::string format_report(const ExperimentReport& report, const ExperimentConfig& config);

/// Decoded id sequences to words.
std::vector<Words> to_words(const Vocabulary& vocab, std::span<const DecodeResult> results);

}  // namespace seq2align
