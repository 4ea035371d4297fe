#include "seq2align/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <tuple>

namespace seq2align {

void DecodeConfig::validate() const {
  if (beam_size < 1) throw std::invalid_argument("decode: beam_size must be at least 1");
  if (max_length < 1) throw std::invalid_argument("decode: max_length must be at least 1");
}

Matrix log_softmax_columns(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const double mx = logits.col(c).maxCoeff();
    const double lse = mx + std::log((logits.col(c).array() - mx).exp().sum());
    out.col(c) = logits.col(c).array() - lse;
  }
  return out;
}

bool never_emitted(TokenId id) { return id == Vocabulary::pad || id == Vocabulary::bos; }

Seq2SeqStepModel::Seq2SeqStepModel(const ModelParameters& model, std::span<const TokenId> source)
    : model_(model) {
  if (source.empty()) throw std::invalid_argument("decode: empty source sentence");
  for (auto id : source)
    if (id < 0 || static_cast<std::size_t>(id) >= model.shape().source_vocab)
      throw std::out_of_range("decode: source id " + std::to_string(id) + " outside the vocabulary");
  bound_ = bind(g_, model_);
  enc_ = encode(g_, bound_, SourceBatch::single(source));
  keys_ = attention_keys(g_, bound_, enc_);
}

const Seq2SeqStepModel::Tiled& Seq2SeqStepModel::tiled(std::size_t copies) {
  auto it = tiled_.find(copies);
  if (it != tiled_.end()) return it->second;
  Tiled t;
  if (copies == 1) {
    t.enc = enc_;
    t.keys = keys_;
  } else {
    const auto k = static_cast<Eigen::Index>(copies);
    t.enc.states = g_.tile_positions(enc_.states, k);
    t.enc.pooled = g_.tile_positions(enc_.pooled, k);
    t.enc.mask = Matrix::Ones(static_cast<Eigen::Index>(enc_.length), k);
    t.enc.length = enc_.length;
    t.enc.batch = copies;
    t.keys = g_.tile_positions(keys_, k);
  }
  return tiled_.emplace(copies, t).first->second;
}

Matrix Seq2SeqStepModel::step(const Matrix& h_prev, std::span<const TokenId> previous) {
  const Tiled& t = tiled(previous.size());
  const DecoderStep s = decoder_step(g_, bound_, previous, g_.constant(h_prev), t.enc, t.keys);
  state_ = g_.value(s.state);
  return log_softmax_columns(g_.value(s.logits));
}

Matrix Seq2SeqStepModel::start() {
  const Matrix h0 = g_.value(initial_state(g_, bound_, enc_));
  const TokenId bos = Vocabulary::bos;
  return step(h0, std::span(&bos, 1));
}

Matrix Seq2SeqStepModel::extend(std::span<const std::size_t> parents, std::span<const TokenId> tokens) {
  if (parents.size() != tokens.size() || parents.empty())
    throw std::invalid_argument("decode: parents/tokens size mismatch");
  Matrix h(state_.rows(), static_cast<Eigen::Index>(parents.size()));
  for (std::size_t k = 0; k < parents.size(); ++k) h.col(static_cast<Eigen::Index>(k)) = state_.col(static_cast<Eigen::Index>(parents[k]));
  return step(h, tokens);
}

Matrix PrefixStepModel::lookup() const {
  Matrix out(static_cast<Eigen::Index>(vocab_), static_cast<Eigen::Index>(prefixes_.size()));
  for (std::size_t k = 0; k < prefixes_.size(); ++k) {
    const auto row = table_(prefixes_[k]);
    if (row.size() != vocab_) throw std::invalid_argument("toy model: table row has the wrong width");
    for (std::size_t v = 0; v < vocab_; ++v) out(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(k)) = row[v];
  }
  return out;
}

Matrix PrefixStepModel::start() {
  prefixes_.assign(1, {});
  return lookup();
}

Matrix PrefixStepModel::extend(std::span<const std::size_t> parents, std::span<const TokenId> tokens) {
  std::vector<std::vector<TokenId>> next;
  next.reserve(parents.size());
  for (std::size_t k = 0; k < parents.size(); ++k) {
    next.push_back(prefixes_.at(parents[k]));
    next.back().push_back(tokens[k]);
  }
  prefixes_ = std::move(next);
  return lookup();
}

namespace {

DecodeResult to_result(const BeamHypothesis& h) {
  DecodeResult r;
  r.tokens = h.tokens;
  if (h.finished) r.tokens.pop_back();
  r.log_prob = h.log_prob;
  r.finished = h.finished;
  return r;
}

// Ranks on the accumulated score so ties resolve exactly as in a width-1 beam.
TokenId argmax_emittable(const Matrix& lp, double base) {
  TokenId best = -1;
  double best_score = -std::numeric_limits<double>::infinity();
  for (Eigen::Index v = 0; v < lp.rows(); ++v) {
    if (never_emitted(static_cast<TokenId>(v))) continue;
    const double s = base + lp(v, 0);
    if (best < 0 || s > best_score) {
      best = static_cast<TokenId>(v);
      best_score = s;
    }
  }
  if (best < 0) throw std::invalid_argument("decode: model has no emittable tokens");
  return best;
}

}  // namespace

double final_score(const BeamHypothesis& h, bool length_normalization) {
  if (!length_normalization || h.tokens.empty()) return h.log_prob;
  return h.log_prob / static_cast<double>(h.tokens.size());
}

DecodeResult greedy_decode(StepModel& model, const DecodeConfig& config) {
  config.validate();
  BeamHypothesis h;
  Matrix lp = model.start();
  for (std::size_t t = 0; t < config.max_length; ++t) {
    const TokenId tok = argmax_emittable(lp, h.log_prob);
    h.tokens.push_back(tok);
    h.log_prob += lp(tok, 0);
    if (tok == Vocabulary::eos) {
      h.finished = true;
      break;
    }
    if (t + 1 < config.max_length) {
      const std::size_t parent = 0;
      lp = model.extend(std::span(&parent, 1), std::span(&tok, 1));
    }
  }
  return to_result(h);
}

DecodeResult greedy_decode(const ModelParameters& model, std::span<const TokenId> source,
                           const DecodeConfig& config) {
  Seq2SeqStepModel m(model, source);
  return greedy_decode(m, config);
}

DecodeResult beam_search(StepModel& model, const DecodeConfig& config) {
  config.validate();
  struct Candidate {
    double score;
    TokenId token;
    std::size_t parent;
  };
  std::vector<BeamHypothesis> live(1);
  std::vector<BeamHypothesis> finished;
  Matrix lp = model.start();
  std::vector<Candidate> candidates;
  for (std::size_t t = 0; t < config.max_length; ++t) {
    const std::size_t width = config.beam_size - finished.size();
    candidates.clear();
    for (std::size_t k = 0; k < live.size(); ++k)
      for (Eigen::Index v = 0; v < lp.rows(); ++v) {
        if (never_emitted(static_cast<TokenId>(v))) continue;
        const double s = live[k].log_prob + lp(v, static_cast<Eigen::Index>(k));
        if (std::isnan(s) || s == -std::numeric_limits<double>::infinity()) continue;
        candidates.push_back({s, static_cast<TokenId>(v), k});
      }
    const auto keep = std::min(width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      [](const Candidate& a, const Candidate& b) {
                        return std::tie(b.score, a.token, a.parent) < std::tie(a.score, b.token, b.parent);
                      });
    std::vector<BeamHypothesis> next;
    std::vector<std::size_t> parents;
    std::vector<TokenId> tokens;
    for (std::size_t i = 0; i < keep; ++i) {
      const auto& c = candidates[i];
      BeamHypothesis h;
      h.tokens = live[c.parent].tokens;
      h.tokens.push_back(c.token);
      h.log_prob = c.score;
      if (c.token == Vocabulary::eos) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        h.state = next.size();
        parents.push_back(c.parent);
        tokens.push_back(c.token);
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
    if (live.empty() || finished.size() >= config.beam_size) break;
    if (t + 1 < config.max_length) lp = model.extend(parents, tokens);
  }
  const auto& pool = finished.empty() ? live : finished;
  if (pool.empty()) throw std::runtime_error("decode: every continuation has zero probability");
  std::size_t best = 0;
  for (std::size_t i = 1; i < pool.size(); ++i)
    if (final_score(pool[i], config.length_normalization) > final_score(pool[best], config.length_normalization))
      best = i;
  return to_result(pool[best]);
}

DecodeResult beam_search(const ModelParameters& model, std::span<const TokenId> source,
                         const DecodeConfig& config) {
  Seq2SeqStepModel m(model, source);
  return beam_search(m, config);
}

std::vector<DecodeResult> decode_corpus(const ModelParameters& model, std::span<const Sentence> sources,
                                        const DecodeConfig& config) {
  std::vector<DecodeResult> out;
  out.reserve(sources.size());
  for (const auto& s : sources)
    out.push_back(config.beam_size == 1 ? greedy_decode(model, s, config) : beam_search(model, s, config));
  return out;
}

}  // namespace seq2align
