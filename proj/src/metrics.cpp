#include "seq2align/metrics.hpp"

#include "seq2align/rng.hpp"
#include "seq2align/training.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace seq2align {

Words cap_repetitions(std::span<const std::string> sentence, std::size_t max_run) {
  Words out;
  out.reserve(sentence.size());
  std::size_t run = 0;
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    run = (i > 0 && sentence[i] == sentence[i - 1]) ? run + 1 : 1;
    if (max_run == 0 || run <= max_run) out.push_back(sentence[i]);
  }
  return out;
}

std::vector<Words> cap_repetitions(std::span<const Words> corpus, std::size_t max_run) {
  std::vector<Words> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) out.push_back(cap_repetitions(s, max_run));
  return out;
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::uint64_t>;

NgramCounts ngrams(std::span<const std::string> s, std::size_t n) {
  NgramCounts counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[std::vector<std::string>(s.begin() + i, s.begin() + i + n)];
  return counts;
}

void require_aligned(const char* what, std::size_t candidates, std::size_t references) {
  if (candidates != references)
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(candidates) + " candidates but " +
                                std::to_string(references) + " references");
  if (candidates == 0) throw std::invalid_argument(std::string(what) + ": empty corpus");
}

}  // namespace

void BleuStats::add(std::span<const std::string> candidate, std::span<const std::string> reference) {
  candidate_length += candidate.size();
  reference_length += reference.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto cand = ngrams(candidate, n);
    const auto ref = ngrams(reference, n);
    for (const auto& [gram, c] : cand) {
      totals[n - 1] += c;
      auto it = ref.find(gram);
      if (it != ref.end()) matches[n - 1] += std::min(c, it->second);
    }
  }
}

BleuResult bleu_from_stats(const BleuStats& stats) {
  BleuResult r;
  r.candidate_length = stats.candidate_length;
  r.reference_length = stats.reference_length;
  double log_sum = 0.0;
  bool any_zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    const double p = stats.totals[n] ? static_cast<double>(stats.matches[n]) / static_cast<double>(stats.totals[n]) : 0.0;
    r.precision[n] = 100.0 * p;
    if (p == 0.0)
      any_zero = true;
    else
      log_sum += std::log(p);
  }
  const double c = static_cast<double>(stats.candidate_length);
  const double ref = static_cast<double>(stats.reference_length);
  r.brevity_penalty = c == 0.0 ? 0.0 : std::min(1.0, std::exp(1.0 - ref / c));
  r.bleu = any_zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / 4.0);
  return r;
}

BleuResult bleu(std::span<const Words> candidates, std::span<const Words> references) {
  require_aligned("bleu", candidates.size(), references.size());
  BleuStats stats;
  for (std::size_t i = 0; i < candidates.size(); ++i) stats.add(candidates[i], references[i]);
  return bleu_from_stats(stats);
}

LengthStats length_stats(std::span<const Words> candidates, std::span<const Words> references, std::size_t max_run) {
  require_aligned("length_stats", candidates.size(), references.size());
  double cand = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    cand += static_cast<double>(cap_repetitions(candidates[i], max_run).size());
    ref += static_cast<double>(cap_repetitions(references[i], max_run).size());
  }
  const double n = static_cast<double>(candidates.size());
  LengthStats s;
  s.average_candidate = cand / n;
  s.average_reference = ref / n;
  s.percent_of_reference = ref > 0 ? 100.0 * cand / ref : 0.0;
  return s;
}

UnigramModel UnigramModel::from_counts(std::map<std::string, std::uint64_t> counts, double log_base) {
  if (!(log_base > 0.0) || log_base == 1.0) throw std::invalid_argument("unigram: invalid log base");
  UnigramModel m;
  m.log_base_ = log_base;
  for (const auto& [w, c] : counts) {
    if (c == 0) throw std::invalid_argument("unigram: zero count for " + w);
    m.total_ += c;
  }
  m.counts_ = std::move(counts);
  m.counts_.try_emplace(std::string(Vocabulary::reserved_name(Vocabulary::unk)), 0);
  return m;
}

UnigramModel UnigramModel::from_corpus(std::span<const Words> corpus, double log_base) {
  std::map<std::string, std::uint64_t> counts;
  for (const auto& s : corpus)
    for (const auto& w : s) ++counts[w];
  ++counts[std::string(Vocabulary::reserved_name(Vocabulary::unk))];
  return from_counts(std::move(counts), log_base);
}

std::uint64_t UnigramModel::count(const std::string& word) const {
  auto it = counts_.find(word);
  if (it != counts_.end()) return it->second;
  return counts_.at(std::string(Vocabulary::reserved_name(Vocabulary::unk)));
}

double UnigramModel::probability(const std::string& word) const {
  if (total_ == 0) throw std::logic_error("unigram: empty model");
  return static_cast<double>(count(word)) / static_cast<double>(total_);
}

double UnigramModel::log_prob(const std::string& word) const {
  return std::log(probability(word)) / std::log(log_base_);
}

double neg_log_prob(std::span<const Words> candidates, const UnigramModel& train, std::size_t max_run) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : candidates)
    for (const auto& w : cap_repetitions(s, max_run)) {
      sum -= train.log_prob(w);
      ++n;
    }
  if (n == 0) throw std::invalid_argument("neg_log_prob: no generated words");
  return sum / static_cast<double>(n);
}

double entropy(std::span<const Words> candidates, double log_base, std::size_t max_run) {
  std::map<std::string, std::uint64_t> counts;
  std::uint64_t n = 0;
  for (const auto& s : candidates)
    for (const auto& w : cap_repetitions(s, max_run)) {
      ++counts[w];
      ++n;
    }
  if (n == 0) throw std::invalid_argument("entropy: no generated words");
  double h = 0.0;
  for (const auto& [w, c] : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(n);
    h -= p * std::log(p);
  }
  return std::max(0.0, h / std::log(log_base));
}

MetricsReport evaluate(std::span<const Words> candidates, std::span<const Words> references,
                       const UnigramModel& train, std::size_t max_run) {
  require_aligned("evaluate", candidates.size(), references.size());
  MetricsReport m;
  const auto b = bleu(candidates, references);
  m.bleu = b.bleu;
  m.bleu_n = b.precision;
  const auto len = length_stats(candidates, references, max_run);
  m.avg_length_words = len.average_candidate;
  m.length_pct_of_ref = len.percent_of_reference;
  m.sentences = candidates.size();
  m.log_base = train.log_base();
  // Empty output everywhere leaves no words to score.
  if (len.average_candidate > 0) {
    m.neg_log_prob = neg_log_prob(candidates, train, max_run);
    m.entropy = entropy(candidates, train.log_base(), max_run);
  }
  return m;
}

RegressionFit r2_fit(const Matrix& x, const Eigen::VectorXd& y, double ridge) {
  const auto n = x.rows();
  const auto d = x.cols();
  if (y.size() != n) throw std::invalid_argument("r2_fit: sample count mismatch");
  if (n < d + 2)
    throw std::invalid_argument("r2_fit: need at least " + std::to_string(d + 2) + " samples, got " + std::to_string(n));
  const Eigen::RowVectorXd x_mean = x.colwise().mean();
  const double y_mean = y.mean();
  const Matrix xc = x.rowwise() - x_mean;
  const Eigen::VectorXd yc = y.array() - y_mean;
  const double ss_tot = yc.squaredNorm();
  if (ss_tot == 0.0) throw std::invalid_argument("r2_fit: target is constant");
  Matrix a = xc.transpose() * xc;
  a.diagonal().array() += ridge;
  RegressionFit fit;
  fit.coefficients = a.ldlt().solve(xc.transpose() * yc);
  fit.intercept = y_mean - x_mean.dot(fit.coefficients);
  const double ss_res = (yc - xc * fit.coefficients).squaredNorm();
  fit.r2 = 1.0 - ss_res / ss_tot;
  return fit;
}

ProbeSamples collect_probe_samples(const ModelParameters& model, const ParallelCorpus& corpus, ProbeSide side,
                                   std::size_t sample_cap, std::uint64_t seed) {
  if (corpus.pairs.empty()) throw std::invalid_argument("probe: empty corpus");
  std::size_t total = 0;
  for (const auto& p : corpus.pairs) total += side == ProbeSide::encoder ? p.source.size() : p.target.size();

  std::vector<char> keep(total, 1);
  std::size_t rows = total;
  if (sample_cap && total > sample_cap) {
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(seed, "probe-subsample"));
    for (std::size_t i = 0; i < sample_cap; ++i) std::swap(idx[i], idx[i + rng.below(total - i)]);
    std::fill(keep.begin(), keep.end(), 0);
    for (std::size_t i = 0; i < sample_cap; ++i) keep[idx[i]] = 1;
    rows = sample_cap;
  }

  const auto width = static_cast<Eigen::Index>(side == ProbeSide::encoder ? 2 * model.shape().encoder_hidden
                                                                           : model.shape().decoder_hidden);
  ProbeSamples out;
  out.states.resize(static_cast<Eigen::Index>(rows), width);
  out.positions.resize(static_cast<Eigen::Index>(rows));
  Eigen::Index row = 0;
  std::size_t global = 0;
  constexpr std::size_t chunk = 64;
  std::vector<std::size_t> indices;
  for (std::size_t start = 0; start < corpus.size(); start += chunk) {
    indices.clear();
    for (std::size_t i = start; i < std::min(corpus.size(), start + chunk); ++i) indices.push_back(i);
    const Batch batch = make_batch(corpus, indices);
    const std::size_t B = batch.size();
    Graph g(false);
    const BoundModel m = bind(g, model);
    const EncoderOutput enc = encode(g, m, batch.source);
    // states[b][pos] -> column of the relevant matrix
    std::vector<Matrix> per_step;
    if (side == ProbeSide::decoder) {
      const Var keys = attention_keys(g, m, enc);
      Var h = initial_state(g, m, enc);
      for (std::size_t j = 0; j + 1 < batch.target_length; ++j) {
        const auto prev = std::span(batch.target_input).subspan(j * B, B);
        const DecoderStep step = decoder_step(g, m, prev, h, enc, keys);
        per_step.push_back(g.value(step.state));
        h = step.state;
      }
    }
    const Matrix& enc_states = g.value(enc.states);
    for (std::size_t b = 0; b < B; ++b) {
      const auto& pair = corpus.pairs[indices[b]];
      const std::size_t len = side == ProbeSide::encoder ? pair.source.size() : pair.target.size();
      for (std::size_t i = 0; i < len; ++i, ++global) {
        if (!keep[global]) continue;
        if (side == ProbeSide::encoder)
          out.states.row(row) = enc_states.col(static_cast<Eigen::Index>(i * B + b)).transpose();
        else
          out.states.row(row) = per_step[i].col(static_cast<Eigen::Index>(b)).transpose();
        out.positions(row) = static_cast<double>(i + 1);
        ++row;
      }
    }
  }
  return out;
}

ProbeResult r2_probe(const ModelParameters& model, const ParallelCorpus& corpus, ProbeSide side,
                     std::size_t sample_cap, std::uint64_t seed) {
  const auto s = collect_probe_samples(model, corpus, side, sample_cap, seed);
  ProbeResult r;
  r.samples = static_cast<std::size_t>(s.states.rows());
  r.r2 = r2_fit(s.states, s.positions).r2;
  return r;
}

ProbeReport probe(const ModelParameters& model, const ParallelCorpus& corpus, std::size_t sample_cap,
                  std::uint64_t seed) {
  const auto e = r2_probe(model, corpus, ProbeSide::encoder, sample_cap, seed);
  const auto d = r2_probe(model, corpus, ProbeSide::decoder, sample_cap, seed);
  return {e.r2, d.r2, e.samples, d.samples};
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<std::string> metrics_columns() {
  return {"bleu", "bleu1", "bleu2", "bleu3", "bleu4", "avg_length", "length_pct_of_ref", "neg_log_prob",
          "entropy", "sentences", "log_base"};
}

std::vector<std::string> metrics_cells(const MetricsReport& m) {
  return {format_number(m.bleu),
          format_number(m.bleu_n[0]),
          format_number(m.bleu_n[1]),
          format_number(m.bleu_n[2]),
          format_number(m.bleu_n[3]),
          format_number(m.avg_length_words),
          format_number(m.length_pct_of_ref),
          format_number(m.neg_log_prob),
          format_number(m.entropy),
          std::to_string(m.sentences),
          format_number(m.log_base)};
}

std::vector<std::string> probe_columns() { return {"r2_encoder", "r2_decoder", "encoder_samples", "decoder_samples"}; }

std::vector<std::string> probe_cells(const ProbeReport& p) {
  return {format_number(p.r2_encoder), format_number(p.r2_decoder), std::to_string(p.encoder_samples),
          std::to_string(p.decoder_samples)};
}

namespace {

void write_row(std::ostream& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "\t" : "") << cells[i];
  out << '\n';
}

}  // namespace

void write_metrics_tsv(const std::filesystem::path& path, const std::string& label, const MetricsReport& m,
                       const std::optional<ProbeReport>& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  std::vector<std::string> head{"system"}, row{label};
  for (auto& c : metrics_columns()) head.push_back(c);
  for (auto& c : metrics_cells(m)) row.push_back(c);
  if (p) {
    for (auto& c : probe_columns()) head.push_back(c);
    for (auto& c : probe_cells(*p)) row.push_back(c);
  }
  write_row(out, head);
  write_row(out, row);
}

void write_key_values(const std::filesystem::path& path, const MetricsReport* m, const ProbeReport* p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  auto dump = [&](const std::vector<std::string>& keys, const std::vector<std::string>& values) {
    for (std::size_t i = 0; i < keys.size(); ++i) out << keys[i] << '=' << values[i] << '\n';
  };
  if (m) dump(metrics_columns(), metrics_cells(*m));
  if (p) dump(probe_columns(), probe_cells(*p));
}

}  // namespace seq2align
