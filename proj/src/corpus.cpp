#include "seq2align/corpus.hpp"

#include "seq2align/rng.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace seq2align {

namespace {

constexpr std::string_view kReserved[] = {"<pad>", "<unk>", "<s>", "</s>"};

std::vector<std::size_t> ranked_by_frequency(std::span<const std::string> stream,
                                             std::vector<std::string>& order) {
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::size_t> counts;
  for (const auto& tok : stream) {
    auto [it, inserted] = index.try_emplace(tok, order.size());
    if (inserted) {
      order.push_back(tok);
      counts.push_back(0);
    }
    ++counts[it->second];
  }
  std::vector<std::size_t> ranking(order.size());
  for (std::size_t i = 0; i < ranking.size(); ++i) ranking[i] = i;
  // Indices are first-occurrence order, so a stable sort keeps the tie rule.
  std::stable_sort(ranking.begin(), ranking.end(),
                   [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  return ranking;
}

}  // namespace

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> content_tokens) {
  tokens_.reserve(content_tokens.size() + reserved_count);
  for (auto name : kReserved) tokens_.emplace_back(name);
  for (auto& tok : content_tokens) {
    if (tok.empty() || tok.find_first_of(" \t\n\r") != std::string::npos)
      throw std::invalid_argument("Vocabulary: invalid token '" + tok + "'");
    tokens_.push_back(std::move(tok));
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
      throw std::invalid_argument("Vocabulary: duplicate or reserved token '" + tokens_[i] + "'");
  }
}

Vocabulary Vocabulary::build(std::span<const std::string> token_stream, std::size_t max_size) {
  if (max_size < reserved_count + 1)
    throw std::invalid_argument("Vocabulary::build: max_size must be at least 5, got " +
                                std::to_string(max_size));
  if (token_stream.empty()) spdlog::warn("building vocabulary from an empty token stream");
  std::vector<std::string> order;
  const auto ranking = ranked_by_frequency(token_stream, order);
  std::vector<std::string> kept;
  for (auto idx : ranking) {
    if (kept.size() + reserved_count >= max_size) break;
    if (std::find(std::begin(kReserved), std::end(kReserved), order[idx]) != std::end(kReserved))
      continue;
    kept.push_back(order[idx]);
  }
  return Vocabulary(std::move(kept));
}

Vocabulary Vocabulary::build(std::span<const Words> sentences, std::size_t max_size) {
  std::vector<std::string> stream;
  for (const auto& s : sentences) stream.insert(stream.end(), s.begin(), s.end());
  return build(stream, max_size);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  auto lines = read_lines(path);
  return Vocabulary(std::move(lines));
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (std::size_t i = reserved_count; i < tokens_.size(); ++i) {
    out += tokens_[i];
    out += '\n';
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary " + path.string());
  out << serialize();
}

std::uint64_t Vocabulary::content_hash() const { return fnv1a64(serialize()); }

TokenId Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? unk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw std::out_of_range("Vocabulary: id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

bool Vocabulary::contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

Sentence Vocabulary::encode(std::span<const std::string> words) const {
  Sentence ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

Words Vocabulary::decode(std::span<const TokenId> ids) const {
  Words words;
  words.reserve(ids.size());
  for (auto i : ids) words.push_back(token(i));
  return words;
}

std::string_view Vocabulary::reserved_name(TokenId id) { return kReserved[id]; }

void ParallelCorpus::validate() const {
  if (pairs.empty()) throw std::invalid_argument("ParallelCorpus: no sentence pairs");
  auto check = [](const Sentence& s, const Vocabulary& v, std::size_t n, const char* side) {
    if (s.empty())
      throw std::invalid_argument(std::string("ParallelCorpus: empty ") + side + " at pair " +
                                  std::to_string(n));
    for (auto id : s)
      if (id == Vocabulary::pad || id < 0 || static_cast<std::size_t>(id) >= v.size())
        throw std::invalid_argument(std::string("ParallelCorpus: invalid ") + side + " id " +
                                    std::to_string(id) + " at pair " + std::to_string(n));
  };
  for (std::size_t n = 0; n < pairs.size(); ++n) {
    check(pairs[n].source, source_vocab, n, "source");
    check(pairs[n].target, target_vocab, n, "target");
  }
}

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::copy: return "copy";
    case TaskKind::reverse: return "reverse";
    case TaskKind::cipher_reverse: return "cipher-reverse";
  }
  return "?";
}

TaskKind parse_task_kind(std::string_view name) {
  if (name == "copy") return TaskKind::copy;
  if (name == "reverse") return TaskKind::reverse;
  if (name == "cipher-reverse") return TaskKind::cipher_reverse;
  throw std::invalid_argument("unknown task kind '" + std::string(name) + "'");
}

Words tokenize(std::string_view line) {
  Words words;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) words.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return words;
}

std::string join(std::span<const std::string> words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const std::filesystem::path& path, std::span<const std::string> lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

std::pair<std::vector<Words>, std::vector<Words>> read_parallel_words(
    const std::filesystem::path& source_path, const std::filesystem::path& target_path) {
  const auto src = read_lines(source_path);
  const auto tgt = read_lines(target_path);
  if (src.size() != tgt.size())
    throw std::invalid_argument("line count mismatch: " + source_path.string() + " has " +
                                std::to_string(src.size()) + " lines, " + target_path.string() +
                                " has " + std::to_string(tgt.size()));
  std::vector<Words> s, t;
  s.reserve(src.size());
  t.reserve(tgt.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    s.push_back(tokenize(src[i]));
    t.push_back(tokenize(tgt[i]));
    if (s.back().empty())
      throw std::invalid_argument("empty line " + std::to_string(i + 1) + " in " + source_path.string());
    if (t.back().empty())
      throw std::invalid_argument("empty line " + std::to_string(i + 1) + " in " + target_path.string());
  }
  return {std::move(s), std::move(t)};
}

ParallelCorpus load_corpus(const std::filesystem::path& source_path,
                           const std::filesystem::path& target_path, const Vocabulary& source_vocab,
                           const Vocabulary& target_vocab) {
  auto [src, tgt] = read_parallel_words(source_path, target_path);
  ParallelCorpus corpus{{}, source_vocab, target_vocab};
  corpus.pairs.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i)
    corpus.pairs.push_back({source_vocab.encode(src[i]), target_vocab.encode(tgt[i])});
  return corpus;
}

void write_corpus(const ParallelCorpus& corpus, const std::filesystem::path& source_path,
                  const std::filesystem::path& target_path) {
  std::vector<std::string> src, tgt;
  for (const auto& p : corpus.pairs) {
    src.push_back(join(corpus.source_vocab.decode(p.source)));
    tgt.push_back(join(corpus.target_vocab.decode(p.target)));
  }
  write_lines(source_path, src);
  write_lines(target_path, tgt);
}

std::vector<std::size_t> shuffle_positions(std::size_t n, const ShuffleSpec& spec) {
  if (!(spec.fraction >= 0.0 && spec.fraction <= 1.0))
    throw std::invalid_argument("shuffle fraction must lie in [0, 1], got " +
                                std::to_string(spec.fraction));
  const auto subset_size = static_cast<std::size_t>(std::llround(spec.fraction * static_cast<double>(n)));
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  // Partial Fisher-Yates: the first subset_size slots end up a uniform sample.
  Rng subset_rng(derive_seed(spec.seed, "shuffle-subset"));
  for (std::size_t i = 0; i < subset_size; ++i) {
    const auto j = i + static_cast<std::size_t>(subset_rng.below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(subset_size);
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::vector<std::size_t> target_permutation(std::size_t n, const ShuffleSpec& spec) {
  const auto positions = shuffle_positions(n, spec);
  std::vector<std::size_t> tau(n);
  for (std::size_t i = 0; i < n; ++i) tau[i] = i;
  std::vector<std::size_t> sources = positions;
  Rng permute_rng(derive_seed(spec.seed, "shuffle-permute"));
  fisher_yates(sources, permute_rng);
  for (std::size_t k = 0; k < positions.size(); ++k) tau[positions[k]] = sources[k];
  return tau;
}

ParallelCorpus shuffle_targets(const ParallelCorpus& corpus, const ShuffleSpec& spec) {
  if (corpus.pairs.empty()) throw std::invalid_argument("shuffle_targets: empty corpus");
  const auto tau = target_permutation(corpus.size(), spec);
  ParallelCorpus out{{}, corpus.source_vocab, corpus.target_vocab};
  out.pairs.reserve(corpus.size());
  for (std::size_t n = 0; n < corpus.size(); ++n)
    out.pairs.push_back({corpus.pairs[n].source, corpus.pairs[tau[n]].target});
  return out;
}

std::string synthetic_token(std::size_t k) { return "w" + std::to_string(k); }

std::vector<std::size_t> synthetic_cipher(const SyntheticTaskSpec& spec) {
  std::vector<std::size_t> cipher(spec.vocab_size);
  for (std::size_t k = 0; k < cipher.size(); ++k) cipher[k] = k;
  Rng rng(derive_seed(spec.seed, "synthetic-cipher"));
  fisher_yates(cipher, rng);
  return cipher;
}

ParallelCorpus generate_synthetic(const SyntheticTaskSpec& spec) {
  if (spec.vocab_size < 2) throw std::invalid_argument("synthetic task: vocab size must be at least 2");
  if (spec.min_length < 1 || spec.min_length > spec.max_length)
    throw std::invalid_argument("synthetic task: need 1 <= min_length <= max_length");
  if (spec.pairs < 1) throw std::invalid_argument("synthetic task: pair count must be positive");
  if (!(spec.zipf_exponent >= 0.0)) throw std::invalid_argument("synthetic task: zipf exponent must be >= 0");

  std::vector<std::string> names;
  for (std::size_t k = 0; k < spec.vocab_size; ++k) names.push_back(synthetic_token(k));
  Vocabulary vocab(names);

  std::vector<double> cdf(spec.vocab_size);
  double total = 0.0;
  for (std::size_t k = 0; k < spec.vocab_size; ++k)
    cdf[k] = total += std::pow(static_cast<double>(k + 1), -spec.zipf_exponent);
  for (auto& c : cdf) c /= total;
  cdf.back() = 1.0;

  const auto cipher = synthetic_cipher(spec);
  const auto offset = static_cast<TokenId>(Vocabulary::reserved_count);
  Rng rng(derive_seed(spec.seed, "synthetic-pairs"));

  ParallelCorpus corpus{{}, vocab, vocab};
  corpus.pairs.reserve(spec.pairs);
  for (std::size_t n = 0; n < spec.pairs; ++n) {
    const auto len = static_cast<std::size_t>(rng.between(spec.min_length, spec.max_length));
    std::vector<std::size_t> draw(len);
    for (auto& k : draw) {
      const double u = rng.uniform();
      k = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    }
    SentencePair pair;
    for (auto k : draw) pair.source.push_back(offset + static_cast<TokenId>(k));
    switch (spec.kind) {
      case TaskKind::copy: pair.target = pair.source; break;
      case TaskKind::reverse: pair.target.assign(pair.source.rbegin(), pair.source.rend()); break;
      case TaskKind::cipher_reverse:
        for (auto it = draw.rbegin(); it != draw.rend(); ++it)
          pair.target.push_back(offset + static_cast<TokenId>(cipher[*it]));
        break;
    }
    corpus.pairs.push_back(std::move(pair));
  }
  return corpus;
}

std::uint64_t hash_pair(const SentencePair& pair) {
  std::string bytes;
  auto put = [&](const Sentence& s) {
    const auto n = static_cast<std::uint32_t>(s.size());
    bytes.append(reinterpret_cast<const char*>(&n), sizeof n);
    for (auto id : s) bytes.append(reinterpret_cast<const char*>(&id), sizeof id);
  };
  put(pair.source);
  put(pair.target);
  return fnv1a64(bytes);
}

}  // namespace seq2align
