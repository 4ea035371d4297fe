#include "seq2align/experiment.hpp"

#include "seq2align/checkpoint.hpp"
#include "seq2align/rng.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace seq2align {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size())
    throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size())
    throw std::invalid_argument("config: " + key + " expects a non-negative integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: " + key + " expects true/false, got '" + v + "'");
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

struct Field {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename T>
Field size_field(const char* key, T ExperimentConfig::*member) {
  return {key, [member](const ExperimentConfig& c) { return std::to_string(c.*member); },
          [key, member](ExperimentConfig& c, const std::string& v) { c.*member = static_cast<T>(parse_uint(key, v)); }};
}

Field double_field(const char* key, double ExperimentConfig::*member) {
  return {key, [member](const ExperimentConfig& c) { return fmt_double(c.*member); },
          [key, member](ExperimentConfig& c, const std::string& v) { c.*member = parse_double(key, v); }};
}

Field path_field(const char* key, std::filesystem::path ExperimentConfig::*member) {
  return {key, [member](const ExperimentConfig& c) { return (c.*member).string(); },
          [member](ExperimentConfig& c, const std::string& v) { c.*member = v; }};
}

template <typename S, typename T>
Field nested_size(const char* key, S ExperimentConfig::*outer, T S::*member) {
  return {key, [=](const ExperimentConfig& c) { return std::to_string(c.*outer.*member); },
          [=](ExperimentConfig& c, const std::string& v) { c.*outer.*member = static_cast<T>(parse_uint(key, v)); }};
}

template <typename S>
Field nested_double(const char* key, S ExperimentConfig::*outer, double S::*member) {
  return {key, [=](const ExperimentConfig& c) { return fmt_double(c.*outer.*member); },
          [=](ExperimentConfig& c, const std::string& v) { c.*outer.*member = parse_double(key, v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"task", [](const ExperimentConfig& c) { return std::string(to_string(c.task)); },
       [](ExperimentConfig& c, const std::string& v) { c.task = parse_task_kind(v); }},
      size_field("vocab_size", &ExperimentConfig::vocab_size),
      size_field("min_length", &ExperimentConfig::min_length),
      size_field("max_length", &ExperimentConfig::max_length),
      double_field("zipf_exponent", &ExperimentConfig::zipf_exponent),
      size_field("train_pairs", &ExperimentConfig::train_pairs),
      size_field("test_pairs", &ExperimentConfig::test_pairs),
      path_field("train_source", &ExperimentConfig::train_source),
      path_field("train_target", &ExperimentConfig::train_target),
      path_field("test_source", &ExperimentConfig::test_source),
      path_field("test_target", &ExperimentConfig::test_target),
      size_field("source_vocab_max", &ExperimentConfig::source_vocab_max),
      size_field("target_vocab_max", &ExperimentConfig::target_vocab_max),
      {"fractions",
       [](const ExperimentConfig& c) {
         std::string out;
         for (std::size_t i = 0; i < c.fractions.size(); ++i) out += (i ? "," : "") + fmt_double(c.fractions[i]);
         return out;
       },
       [](ExperimentConfig& c, const std::string& v) {
         c.fractions.clear();
         std::stringstream ss(v);
         std::string item;
         while (std::getline(ss, item, ',')) c.fractions.push_back(parse_double("fractions", trim(item)));
       }},
      nested_size("embed", &ExperimentConfig::shape, &ModelShape::embed),
      nested_size("encoder_hidden", &ExperimentConfig::shape, &ModelShape::encoder_hidden),
      nested_size("decoder_hidden", &ExperimentConfig::shape, &ModelShape::decoder_hidden),
      nested_size("attention", &ExperimentConfig::shape, &ModelShape::attention),
      nested_size("readout", &ExperimentConfig::shape, &ModelShape::readout),
      nested_size("epochs", &ExperimentConfig::train, &TrainConfig::epochs),
      nested_size("batch_size", &ExperimentConfig::train, &TrainConfig::batch_size),
      nested_double("dropout", &ExperimentConfig::train, &TrainConfig::dropout),
      nested_double("learning_rate", &ExperimentConfig::train, &TrainConfig::learning_rate),
      nested_double("max_grad_norm", &ExperimentConfig::train, &TrainConfig::max_grad_norm),
      nested_size("max_train_length", &ExperimentConfig::train, &TrainConfig::max_length),
      nested_size("checkpoint_every", &ExperimentConfig::train, &TrainConfig::checkpoint_every),
      nested_size("beam_size", &ExperimentConfig::decode, &DecodeConfig::beam_size),
      nested_size("decode_max_length", &ExperimentConfig::decode, &DecodeConfig::max_length),
      {"length_normalization",
       [](const ExperimentConfig& c) { return std::string(c.decode.length_normalization ? "true" : "false"); },
       [](ExperimentConfig& c, const std::string& v) {
         c.decode.length_normalization = parse_bool("length_normalization", v);
       }},
      size_field("probe_sample_cap", &ExperimentConfig::probe_sample_cap),
      size_field("repetition_cap", &ExperimentConfig::repetition_cap),
      double_field("log_base", &ExperimentConfig::log_base),
      size_field("seed", &ExperimentConfig::seed),
      path_field("output_dir", &ExperimentConfig::output_dir),
  };
  return table;
}

std::string sanitize(std::string s) {
  for (auto& ch : s)
    if (ch == '\t' || ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  train.epochs = 6;
  train.learning_rate = 1e-3;
  decode.max_length = 50;
}

void ExperimentConfig::validate() const {
  if (fractions.empty()) throw std::invalid_argument("config: fractions must not be empty");
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (!(fractions[i] >= 0.0 && fractions[i] <= 1.0))
      throw std::invalid_argument("config: fraction " + fmt_double(fractions[i]) + " outside [0, 1]");
    if (i && !(fractions[i] > fractions[i - 1]))
      throw std::invalid_argument("config: fractions must be strictly increasing");
  }
  if (train_source.empty() != train_target.empty())
    throw std::invalid_argument("config: train_source and train_target go together");
  if (test_source.empty() != test_target.empty())
    throw std::invalid_argument("config: test_source and test_target go together");
  if (train_source.empty()) {
    if (min_length < 1 || min_length > max_length) throw std::invalid_argument("config: need 1 <= min_length <= max_length");
    if (vocab_size < 1) throw std::invalid_argument("config: vocab_size must be positive");
    if (train_pairs < 1) throw std::invalid_argument("config: train_pairs must be positive");
  }
  if (test_source.empty() && test_pairs < 1) throw std::invalid_argument("config: test_pairs must be positive");
  if (!(log_base > 0.0) || log_base == 1.0) throw std::invalid_argument("config: invalid log_base");
  train.validate();
  decode.validate();
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields())
    if (key == f.key) {
      f.set(*this, value);
      return;
    }
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::string ExperimentConfig::serialize() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + "=" + f.get(*this) + "\n";
  return out;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(number) + ": expected key=value");
    c.set(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

RunSeeds RunSeeds::from_master(std::uint64_t master) {
  RunSeeds s;
  s.master = master;
  s.data = derive_seed(master, "data");
  s.split = derive_seed(master, "split");
  s.init = derive_seed(master, "init");
  s.train = derive_seed(master, "train");
  s.probe = derive_seed(master, "probe");
  return s;
}

std::uint64_t RunSeeds::shuffle(double fraction) const { return derive_seed(master, "shuffle", fraction); }

ExperimentData prepare_data(const ExperimentConfig& config) {
  const RunSeeds seeds = RunSeeds::from_master(config.seed);
  ExperimentData data;
  std::vector<Words> src_words, tgt_words;
  Vocabulary sv, tv;
  std::vector<SentencePair> pool;
  std::vector<Words> pool_refs;

  if (config.train_source.empty()) {
    SyntheticTaskSpec spec;
    spec.kind = config.task;
    spec.vocab_size = config.vocab_size;
    spec.min_length = config.min_length;
    spec.max_length = config.max_length;
    spec.pairs = config.train_pairs + (config.test_source.empty() ? config.test_pairs : 0);
    spec.seed = seeds.data;
    spec.zipf_exponent = config.zipf_exponent;
    ParallelCorpus all = generate_synthetic(spec);
    sv = all.source_vocab;
    tv = all.target_vocab;
    pool = std::move(all.pairs);
    for (const auto& p : pool) pool_refs.push_back(tv.decode(p.target));
  } else {
    auto [s, t] = read_parallel_words(config.train_source, config.train_target);
    src_words = std::move(s);
    tgt_words = std::move(t);
  }

  // Index partition before anything else touches the data.
  std::size_t n = config.train_source.empty() ? pool.size() : src_words.size();
  std::vector<char> is_test(n, 0);
  if (config.test_source.empty()) {
    if (config.test_pairs >= n) throw std::invalid_argument("data: test_pairs leaves no training data");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seeds.split);
    for (std::size_t i = 0; i < config.test_pairs; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    for (std::size_t i = 0; i < config.test_pairs; ++i) is_test[idx[i]] = 1;
  }

  if (!config.train_source.empty()) {
    std::vector<Words> train_src, train_tgt;
    for (std::size_t i = 0; i < n; ++i)
      if (!is_test[i]) {
        train_src.push_back(src_words[i]);
        train_tgt.push_back(tgt_words[i]);
      }
    sv = Vocabulary::build(train_src, config.source_vocab_max);
    tv = Vocabulary::build(train_tgt, config.target_vocab_max);
    for (std::size_t i = 0; i < n; ++i) {
      pool.push_back({sv.encode(src_words[i]), tv.encode(tgt_words[i])});
      pool_refs.push_back(tgt_words[i]);
    }
  }

  data.train.source_vocab = data.test.source_vocab = sv;
  data.train.target_vocab = data.test.target_vocab = tv;
  std::vector<SentencePair> test_candidates;
  std::vector<Words> test_refs;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_test[i]) {
      test_candidates.push_back(pool[i]);
      test_refs.push_back(pool_refs[i]);
    } else {
      data.train.pairs.push_back(pool[i]);
    }
  }
  if (!config.test_source.empty()) {
    auto [s, t] = read_parallel_words(config.test_source, config.test_target);
    for (std::size_t i = 0; i < s.size(); ++i) {
      test_candidates.push_back({sv.encode(s[i]), tv.encode(t[i])});
      test_refs.push_back(t[i]);
    }
  }
  std::unordered_set<std::uint64_t> train_hashes;
  for (const auto& p : data.train.pairs) train_hashes.insert(hash_pair(p));
  for (std::size_t i = 0; i < test_candidates.size(); ++i) {
    if (train_hashes.count(hash_pair(test_candidates[i]))) {
      ++data.dropped_overlaps;
      continue;
    }
    data.test.pairs.push_back(test_candidates[i]);
    data.references.push_back(test_refs[i]);
  }
  if (data.dropped_overlaps) spdlog::info("dropped {} test pairs that also occur in training", data.dropped_overlaps);
  data.train.validate();
  data.test.validate();
  return data;
}

std::vector<Words> to_words(const Vocabulary& vocab, std::span<const DecodeResult> results) {
  std::vector<Words> out;
  out.reserve(results.size());
  for (const auto& r : results) out.push_back(vocab.decode(r.tokens));
  return out;
}

namespace {

void write_words(const std::filesystem::path& path, std::span<const Words> sentences) {
  std::vector<std::string> lines;
  lines.reserve(sentences.size());
  for (const auto& s : sentences) lines.push_back(join(s));
  write_lines(path, lines);
}

std::string fraction_dir(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "p%.4f", p);
  return buf;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& config, const ProgressCallback& progress) {
  config.validate();
  auto say = [&](const std::string& msg) {
    spdlog::info("{}", msg);
    if (progress) progress(msg);
  };
  ExperimentReport report;
  report.seeds = RunSeeds::from_master(config.seed);
  report.config_snapshot = config.serialize();
  std::filesystem::create_directories(config.output_dir);
  {
    std::ofstream snap(config.output_dir / "config.snapshot", std::ios::binary);
    snap << report.config_snapshot;
  }

  const ExperimentData data = prepare_data(config);
  write_corpus(data.test, config.output_dir / "test.src", config.output_dir / "test.tgt");
  data.train.source_vocab.save(config.output_dir / "source.vocab");
  data.train.target_vocab.save(config.output_dir / "target.vocab");
  std::vector<Words> train_targets;
  train_targets.reserve(data.train.size());
  for (const auto& p : data.train.pairs) train_targets.push_back(data.train.target_vocab.decode(p.target));
  const UnigramModel unigrams = UnigramModel::from_corpus(train_targets, config.log_base);
  std::vector<Sentence> test_sources;
  for (const auto& p : data.test.pairs) test_sources.push_back(p.source);

  ModelShape shape = config.shape;
  shape.source_vocab = data.train.source_vocab.size();
  shape.target_vocab = data.train.target_vocab.size();

  for (double p : config.fractions) {
    FractionResult row;
    row.fraction = p;
    row.shuffle_seed = report.seeds.shuffle(p);
    row.directory = config.output_dir / fraction_dir(p);
    try {
      std::filesystem::create_directories(row.directory);
      say("fraction " + fmt_double(p) + ": shuffling and training");
      const ParallelCorpus shuffled = shuffle_targets(data.train, {p, row.shuffle_seed});
      write_corpus(shuffled, row.directory / "train.src", row.directory / "train.tgt");

      ModelParameters model(shape);
      model.initialize(report.seeds.init);
      TrainConfig tc = config.train;
      tc.seed = report.seeds.train;
      tc.output_dir = row.directory;
      const TrainResult tr = train(tc, shuffled, model, [&](const EpochRecord& e) {
        say("fraction " + fmt_double(p) + " epoch " + std::to_string(e.epoch) + " loss " + format_number(e.mean_loss));
      });
      if (tr.aborted) throw std::runtime_error(tr.message);
      row.epochs_run = tr.log.size();
      row.final_train_loss = tr.log.empty() ? 0.0 : tr.log.back().mean_loss;

      say("fraction " + fmt_double(p) + ": decoding " + std::to_string(test_sources.size()) + " sentences");
      const auto decoded = decode_corpus(model, test_sources, config.decode);
      for (const auto& d : decoded) row.unfinished_decodes += d.finished ? 0 : 1;
      const auto candidates = to_words(data.test.target_vocab, decoded);
      write_words(row.directory / "decoded.txt", candidates);

      row.metrics = evaluate(candidates, data.references, unigrams, config.repetition_cap);
      row.probe = probe(model, data.test, config.probe_sample_cap, report.seeds.probe);
      write_metrics_tsv(row.directory / "metrics.tsv", fraction_dir(p), row.metrics, row.probe);
      write_key_values(row.directory / "metrics.txt", &row.metrics, &row.probe);
      row.ok = true;
      say("fraction " + fmt_double(p) + ": BLEU " + format_number(row.metrics.bleu));
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = sanitize(e.what());
      spdlog::error("fraction {} failed: {}", p, row.error);
    }
    report.rows.push_back(std::move(row));
  }

  report.report_path = config.output_dir / "report.tsv";
  std::ofstream out(report.report_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + report.report_path.string());
  out << format_report(report, config);
  return report;
}

std::string format_report(const ExperimentReport& report, const ExperimentConfig& config) {
  std::vector<std::string> head{"fraction", "status", "shuffle_seed"};
  for (auto& c : metrics_columns()) head.push_back(c);
  for (auto& c : probe_columns()) head.push_back(c);
  for (auto c : {"final_train_loss", "epochs", "unfinished_decodes", "beam_size", "length_normalization", "error"})
    head.push_back(c);
  std::string out;
  auto emit = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "\t" : "") + cells[i];
    out += '\n';
  };
  emit(head);
  for (const auto& r : report.rows) {
    std::vector<std::string> cells{format_number(r.fraction), r.ok ? "ok" : "failed", std::to_string(r.shuffle_seed)};
    const auto metric_cells = metrics_cells(r.metrics);
    const auto probe_cells_ = probe_cells(r.probe);
    for (std::size_t i = 0; i < metric_cells.size(); ++i) cells.push_back(r.ok ? metric_cells[i] : "NA");
    for (std::size_t i = 0; i < probe_cells_.size(); ++i) cells.push_back(r.ok ? probe_cells_[i] : "NA");
    cells.push_back(r.ok ? format_number(r.final_train_loss) : "NA");
    cells.push_back(std::to_string(r.epochs_run));
    cells.push_back(std::to_string(r.unfinished_decodes));
    cells.push_back(std::to_string(config.decode.beam_size));
    cells.push_back(config.decode.length_normalization ? "on" : "off");
    cells.push_back(r.error.empty() ? "-" : r.error);
    emit(cells);
  }
  return out;
}

}  // namespace seq2align
