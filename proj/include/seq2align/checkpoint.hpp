#pragma once

#include "seq2align/model.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace seq2align {

/// Binary model container; the byte layout is described in docs/checkpoint_format.md.
struct Checkpoint {
  static constexpr std::uint32_t version = 1;

  ModelParameters model;
  std::uint64_t source_vocab_hash = 0;
  std::uint64_t target_vocab_hash = 0;
};

std::string serialize_checkpoint(const ModelParameters& model, std::uint64_t source_vocab_hash,
                                 std::uint64_t target_vocab_hash);
Checkpoint parse_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelParameters& model,
                     std::uint64_t source_vocab_hash, std::uint64_t target_vocab_hash);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Loads a checkpoint and rejects it if either vocabulary does not match the
/// stored content hash.
Checkpoint load_checkpoint(const std::filesystem::path& path, const Vocabulary& source_vocab,
                           const Vocabulary& target_vocab);

}  // namespace seq2align
