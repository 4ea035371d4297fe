#include "seq2align/training.hpp"

#include "seq2align/checkpoint.hpp"
#include "seq2align/rng.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace seq2align {

std::size_t Batch::label_count() const {
  return static_cast<std::size_t>(target_mask.sum());
}

Batch make_batch(const ParallelCorpus& corpus, std::span<const std::size_t> indices, std::size_t max_length,
                 std::size_t* truncated) {
  if (indices.empty()) throw std::invalid_argument("make_batch: no rows");
  const std::size_t B = indices.size();
  auto clip = [&](std::size_t n) { return max_length ? std::min(n, max_length) : n; };
  std::size_t S = 0, T = 0;
  for (auto i : indices) {
    const auto& p = corpus.pairs.at(i);
    if (truncated && (clip(p.source.size()) < p.source.size() || clip(p.target.size()) < p.target.size()))
      ++*truncated;
    S = std::max(S, clip(p.source.size()));
    T = std::max(T, clip(p.target.size()) + 1);
  }
  Batch b;
  b.indices.assign(indices.begin(), indices.end());
  b.source.length = S;
  b.source.batch = B;
  b.source.ids.assign(S * B, Vocabulary::pad);
  b.source.mask = Matrix::Zero(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(B));
  b.target_length = T;
  b.target_input.assign(T * B, Vocabulary::pad);
  b.target_output.assign(T * B, Vocabulary::pad);
  b.target_mask = Matrix::Zero(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(B));
  for (std::size_t c = 0; c < B; ++c) {
    const auto& p = corpus.pairs[indices[c]];
    const auto sl = clip(p.source.size());
    const auto tl = clip(p.target.size());
    if (sl == 0 || tl == 0) throw std::invalid_argument("make_batch: empty sentence");
    for (std::size_t i = 0; i < sl; ++i) {
      b.source.ids[i * B + c] = p.source[i];
      b.source.mask(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = 1.0;
    }
    for (std::size_t j = 0; j <= tl; ++j) {
      b.target_input[j * B + c] = j == 0 ? Vocabulary::bos : p.target[j - 1];
      b.target_output[j * B + c] = j == tl ? Vocabulary::eos : p.target[j];
      b.target_mask(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) = 1.0;
    }
  }
  return b;
}

std::vector<Batch> make_batches(const ParallelCorpus& corpus, std::size_t batch_size, std::uint64_t seed,
                                std::size_t max_length) {
  if (corpus.pairs.empty()) throw std::invalid_argument("make_batches: empty corpus");
  if (batch_size == 0) throw std::invalid_argument("make_batches: batch size must be positive");
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  fisher_yates(order, rng);
  std::vector<Batch> batches;
  std::size_t truncated = 0;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const auto n = std::min(batch_size, order.size() - start);
    batches.push_back(make_batch(corpus, std::span(order).subspan(start, n), max_length, &truncated));
  }
  if (truncated) spdlog::info("truncated {} sentence pairs to {} tokens", truncated, max_length);
  return batches;
}

Var sentence_loss(Graph& g, const BoundModel& m, const Batch& batch, const Dropout& d) {
  const EncoderOutput enc = encode(g, m, batch.source, d);
  const Var keys = attention_keys(g, m, enc);
  Var h = initial_state(g, m, enc);
  const std::size_t B = batch.size();
  std::vector<Var> step_losses;
  std::vector<double> weights(B);
  for (std::size_t j = 0; j < batch.target_length; ++j) {
    const auto prev = std::span(batch.target_input).subspan(j * B, B);
    const auto labels = std::span(batch.target_output).subspan(j * B, B);
    for (std::size_t c = 0; c < B; ++c)
      weights[c] = batch.target_mask(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c));
    DecoderStep step = decoder_step(g, m, prev, h, enc, keys, d);
    step_losses.push_back(g.cross_entropy(step.logits, labels, weights));
    h = step.state;
  }
  Var total = step_losses.front();
  for (std::size_t j = 1; j < step_losses.size(); ++j) total = g.add(total, step_losses[j]);
  return g.scale(total, 1.0 / static_cast<double>(batch.label_count()));
}

double sentence_loss(const ModelParameters& model, const Batch& batch) {
  Graph g(false);
  const BoundModel m = bind(g, model);
  return g.value(sentence_loss(g, m, batch))(0, 0);
}

AdamState::AdamState(const ParameterSet& params, AdamConfig cfg) : config(cfg) {
  for (const auto* p : params.items()) {
    m.emplace_back(p->value.shape());
    v.emplace_back(p->value.shape());
  }
}

bool adam_update(AdamState& state, const ParameterSet& params) {
  const auto items = params.items();
  if (items.size() != state.m.size()) throw std::invalid_argument("adam_update: state/parameter count differs");
  for (const auto* p : items) {
    if (!p->gradient.all_finite()) {
      spdlog::warn("adam: non-finite gradient in {}; step {} rejected", p->name, state.step + 1);
      return false;
    }
  }
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < items.size(); ++k) {
    auto g = items[k]->gradient.values();
    auto x = items[k]->value.values();
    auto m = state.m[k].values();
    auto v = state.v[k].values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      x[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
  return true;
}

double clip_gradients(const ParameterSet& params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params.items())
    for (double g : p->gradient.values()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto* p : params.items())
      for (auto& g : p->gradient.values()) g *= factor;
  }
  return norm;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("train: dropout must lie in [0, 1)");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning rate must be positive");
}

TrainResult train(const TrainConfig& config, const ParallelCorpus& corpus, ModelParameters& model,
                  const EpochCallback& on_epoch) {
  config.validate();
  corpus.validate();
  if (corpus.source_vocab.size() != model.shape().source_vocab ||
      corpus.target_vocab.size() != model.shape().target_vocab)
    throw std::invalid_argument("train: corpus vocabularies do not match the model shape");

  TrainResult result;
  ParameterSet params = model.parameters();
  AdamState adam(params, AdamConfig{config.learning_rate});
  Rng dropout_rng(derive_seed(config.seed, "dropout"));
  const Dropout drop{config.dropout, &dropout_rng};
  const std::uint64_t order_seed = derive_seed(config.seed, "batch-order");
  const bool write_files = !config.output_dir.empty();
  if (write_files) std::filesystem::create_directories(config.output_dir);

  auto checkpoint = [&](const std::string& name) {
    const auto path = config.output_dir / name;
    save_checkpoint(path, model, corpus.source_vocab.content_hash(), corpus.target_vocab.content_hash());
    return path.string();
  };

  ModelParameters last_good = model;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::size_t truncated = 0;
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng order_rng(derive_seed(order_seed, "epoch-" + std::to_string(epoch)));
    fisher_yates(order, order_rng);

    double loss_sum = 0.0;
    std::size_t tokens = 0;
    bool diverged = false;
    for (std::size_t s = 0; s < order.size(); s += config.batch_size) {
      const auto n = std::min(config.batch_size, order.size() - s);
      const Batch batch = make_batch(corpus, std::span(order).subspan(s, n), config.max_length, &truncated);
      Graph g;
      const BoundModel bound = bind(g, model);
      const Var loss = sentence_loss(g, bound, batch, drop);
      const double value = g.value(loss)(0, 0);
      if (!std::isfinite(value)) {
        diverged = true;
        break;
      }
      params.zero_grad();
      g.backward(loss);
      if (config.max_grad_norm > 0.0) clip_gradients(params, config.max_grad_norm);
      if (!adam_update(adam, params)) ++result.rejected_steps;
      const auto labels = batch.label_count();
      loss_sum += value * static_cast<double>(labels);
      tokens += labels;
    }
    if (epoch == 1) result.truncated_sentences = truncated;
    if (diverged) {
      model = last_good;
      result.aborted = true;
      result.message = "non-finite loss in epoch " + std::to_string(epoch);
      spdlog::error("training aborted: {}", result.message);
      if (write_files) checkpoint("checkpoint.bin");
      break;
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(tokens);
    rec.tokens_per_second = seconds > 0 ? static_cast<double>(tokens) / seconds : 0.0;
    if (write_files && config.checkpoint_every && epoch % config.checkpoint_every == 0)
      rec.checkpoint_path = checkpoint("checkpoint-epoch" + std::to_string(epoch) + ".bin");
    last_good = model;
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (write_files) {
    if (!result.aborted) {
      const auto final_path = checkpoint("checkpoint.bin");
      if (!result.log.empty() && result.log.back().checkpoint_path.empty())
        result.log.back().checkpoint_path = final_path;
    }
    write_train_log(config.output_dir / "train_log.tsv", result.log);
  }
  return result;
}

void write_train_log(const std::filesystem::path& path, std::span<const EpochRecord> log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write training log " + path.string());
  out << "epoch\tmean_loss\ttokens_per_second\tcheckpoint_path\n";
  char buf[64];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%.6f\t%.1f", r.mean_loss, r.tokens_per_second);
    out << r.epoch << '\t' << buf << '\t' << r.checkpoint_path << '\n';
  }
}

}  // namespace seq2align
