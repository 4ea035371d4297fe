// seq2align command-line front end. Every subcommand prints key=path lines
// for the files it wrote; logs go to stderr.

#include "seq2align/checkpoint.hpp"
#include "seq2align/corpus.hpp"
#include "seq2align/decoding.hpp"
#include "seq2align/experiment.hpp"
#include "seq2align/metrics.hpp"
#include "seq2align/rng.hpp"
#include "seq2align/training.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace seq2align;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "flat key=value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "master seed (overrides the config)");
  cmd->add_option("--set", c.overrides, "extra KEY=VALUE configuration overrides")->type_name("KEY=VALUE");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected KEY=VALUE, got " + kv);
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

void print(const std::string& key, const fs::path& path) { std::cout << key << '=' << path.string() << '\n'; }

std::vector<Words> read_words(const fs::path& path) {
  std::vector<Words> out;
  for (const auto& line : read_lines(path)) out.push_back(tokenize(line));
  return out;
}

ModelShape shape_for(const ExperimentConfig& cfg, const Vocabulary& src, const Vocabulary& tgt) {
  ModelShape s = cfg.shape;
  s.source_vocab = src.size();
  s.target_vocab = tgt.size();
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("seq2align"));
  CLI::App app{"Attention GRU sequence-to-sequence trainer and target-shuffling experiments"};
  app.require_subcommand(1);

  // gen-data
  Common gen_c;
  std::string gen_prefix = "data";
  std::string gen_task;
  std::optional<std::size_t> gen_pairs;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic parallel corpus");
  add_common(gen, gen_c);
  gen->add_option("--out", gen_prefix, "output prefix; writes PREFIX.src, PREFIX.tgt and vocabularies");
  gen->add_option("--task", gen_task, "copy, reverse or cipher-reverse");
  gen->add_option("--pairs", gen_pairs, "number of sentence pairs");

  // shuffle
  Common sh_c;
  std::string sh_src, sh_tgt, sh_prefix = "shuffled";
  double sh_fraction = 1.0;
  auto* sh = app.add_subcommand("shuffle", "permute a fraction of the target sentences");
  add_common(sh, sh_c);
  sh->add_option("--source", sh_src, "source text file")->required()->check(CLI::ExistingFile);
  sh->add_option("--target", sh_tgt, "target text file")->required()->check(CLI::ExistingFile);
  sh->add_option("--fraction", sh_fraction, "fraction of targets to permute")->check(CLI::Range(0.0, 1.0));
  sh->add_option("--out", sh_prefix, "output prefix; writes PREFIX.src and PREFIX.tgt");

  // train
  Common tr_c;
  std::string tr_src, tr_tgt, tr_sv, tr_tv, tr_out = "model";
  bool tr_zero = false;
  std::optional<std::size_t> tr_epochs;
  auto* tr = app.add_subcommand("train", "train a model on a parallel corpus");
  add_common(tr, tr_c);
  tr->add_option("--source", tr_src, "source text file")->required()->check(CLI::ExistingFile);
  tr->add_option("--target", tr_tgt, "target text file")->required()->check(CLI::ExistingFile);
  tr->add_option("--source-vocab", tr_sv, "existing source vocabulary")->check(CLI::ExistingFile);
  tr->add_option("--target-vocab", tr_tv, "existing target vocabulary")->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "output directory");
  tr->add_option("--epochs", tr_epochs, "epochs (overrides the config)");
  tr->add_flag("--zero-init", tr_zero, "write an all-zero model instead of training");

  // decode
  Common de_c;
  std::string de_ckpt, de_sv, de_tv, de_in, de_out = "decoded.txt";
  std::optional<std::size_t> de_beam;
  std::optional<bool> de_norm;
  auto* de = app.add_subcommand("decode", "decode a source file with a trained model");
  add_common(de, de_c);
  de->add_option("--checkpoint", de_ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
  de->add_option("--source-vocab", de_sv, "source vocabulary")->required()->check(CLI::ExistingFile);
  de->add_option("--target-vocab", de_tv, "target vocabulary")->required()->check(CLI::ExistingFile);
  de->add_option("--input", de_in, "source sentences")->required()->check(CLI::ExistingFile);
  de->add_option("--output", de_out, "decoded sentences");
  de->add_option("--beam-size", de_beam, "beam width; 1 is greedy");
  de->add_option("--length-normalization", de_norm, "rank finished hypotheses by log-prob per token");

  // evaluate
  Common ev_c;
  std::string ev_cand, ev_ref, ev_train, ev_out = "metrics.tsv";
  auto* ev = app.add_subcommand("evaluate", "score candidates against references");
  add_common(ev, ev_c);
  ev->add_option("--candidates", ev_cand, "decoded sentences")->required()->check(CLI::ExistingFile);
  ev->add_option("--references", ev_ref, "reference sentences")->required()->check(CLI::ExistingFile);
  ev->add_option("--train-target", ev_train, "training targets for the unigram model (default: references)")
      ->check(CLI::ExistingFile);
  ev->add_option("--out", ev_out, "metrics TSV");

  // probe
  Common pr_c;
  std::string pr_ckpt, pr_sv, pr_tv, pr_src, pr_tgt, pr_out = "probe.tsv";
  auto* pr = app.add_subcommand("probe", "fit the time-step regression on hidden states");
  add_common(pr, pr_c);
  pr->add_option("--checkpoint", pr_ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
  pr->add_option("--source-vocab", pr_sv, "source vocabulary")->required()->check(CLI::ExistingFile);
  pr->add_option("--target-vocab", pr_tv, "target vocabulary")->required()->check(CLI::ExistingFile);
  pr->add_option("--source", pr_src, "source text file")->required()->check(CLI::ExistingFile);
  pr->add_option("--target", pr_tgt, "target text file")->required()->check(CLI::ExistingFile);
  pr->add_option("--out", pr_out, "probe TSV");

  // run
  Common run_c;
  std::string run_out;
  auto* run = app.add_subcommand("run", "run the full shuffling sweep");
  add_common(run, run_c);
  run->add_option("--out", run_out, "output directory (overrides the config)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      ExperimentConfig cfg = resolve(gen_c);
      SyntheticTaskSpec spec;
      spec.kind = gen_task.empty() ? cfg.task : parse_task_kind(gen_task);
      spec.vocab_size = cfg.vocab_size;
      spec.min_length = cfg.min_length;
      spec.max_length = cfg.max_length;
      spec.zipf_exponent = cfg.zipf_exponent;
      spec.pairs = gen_pairs.value_or(cfg.train_pairs);
      spec.seed = derive_seed(cfg.seed, "data");
      const ParallelCorpus c = generate_synthetic(spec);
      const fs::path prefix = gen_prefix;
      if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
      write_corpus(c, prefix.string() + ".src", prefix.string() + ".tgt");
      c.source_vocab.save(prefix.string() + ".src.vocab");
      c.target_vocab.save(prefix.string() + ".tgt.vocab");
      print("source", prefix.string() + ".src");
      print("target", prefix.string() + ".tgt");
      print("source_vocab", prefix.string() + ".src.vocab");
      print("target_vocab", prefix.string() + ".tgt.vocab");
    } else if (sh->parsed()) {
      ExperimentConfig cfg = resolve(sh_c);
      const auto src_lines = read_lines(sh_src);
      const auto tgt_lines = read_lines(sh_tgt);
      if (src_lines.size() != tgt_lines.size())
        throw std::invalid_argument("line count mismatch: " + sh_src + " has " + std::to_string(src_lines.size()) +
                                    " lines, " + sh_tgt + " has " + std::to_string(tgt_lines.size()));
      const fs::path prefix = sh_prefix;
      if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
      const fs::path out_src = prefix.string() + ".src", out_tgt = prefix.string() + ".tgt";
      const ShuffleSpec spec{sh_fraction, derive_seed(cfg.seed, "shuffle", sh_fraction)};
      const auto tau = target_permutation(tgt_lines.size(), spec);
      bool identity = true;
      for (std::size_t i = 0; i < tau.size(); ++i) identity = identity && tau[i] == i;
      fs::copy_file(sh_src, out_src, fs::copy_options::overwrite_existing);
      if (identity) {
        fs::copy_file(sh_tgt, out_tgt, fs::copy_options::overwrite_existing);
      } else {
        std::vector<std::string> permuted(tgt_lines.size());
        for (std::size_t i = 0; i < tau.size(); ++i) permuted[i] = tgt_lines[tau[i]];
        write_lines(out_tgt, permuted);
      }
      print("source", out_src);
      print("target", out_tgt);
    } else if (tr->parsed()) {
      ExperimentConfig cfg = resolve(tr_c);
      if (tr_epochs) cfg.train.epochs = *tr_epochs;
      const fs::path out = tr_out;
      fs::create_directories(out);
      Vocabulary sv, tv;
      if (tr_sv.empty() || tr_tv.empty()) {
        auto [s, t] = read_parallel_words(tr_src, tr_tgt);
        sv = tr_sv.empty() ? Vocabulary::build(s, cfg.source_vocab_max) : Vocabulary::load(tr_sv);
        tv = tr_tv.empty() ? Vocabulary::build(t, cfg.target_vocab_max) : Vocabulary::load(tr_tv);
      } else {
        sv = Vocabulary::load(tr_sv);
        tv = Vocabulary::load(tr_tv);
      }
      sv.save(out / "source.vocab");
      tv.save(out / "target.vocab");
      const ParallelCorpus corpus = load_corpus(tr_src, tr_tgt, sv, tv);
      ModelParameters model(shape_for(cfg, sv, tv));
      if (tr_zero) {
        save_checkpoint(out / "checkpoint.bin", model, sv.content_hash(), tv.content_hash());
      } else {
        model.initialize(derive_seed(cfg.seed, "init"));
        TrainConfig tc = cfg.train;
        tc.seed = derive_seed(cfg.seed, "train");
        tc.output_dir = out;
        const TrainResult r = train(tc, corpus, model, [](const EpochRecord& e) {
          spdlog::info("epoch {} mean loss {:.6f}", e.epoch, e.mean_loss);
        });
        if (r.aborted) {
          spdlog::error("{}", r.message);
          return 3;
        }
        print("train_log", out / "train_log.tsv");
      }
      print("checkpoint", out / "checkpoint.bin");
      print("source_vocab", out / "source.vocab");
      print("target_vocab", out / "target.vocab");
    } else if (de->parsed()) {
      ExperimentConfig cfg = resolve(de_c);
      if (de_beam) cfg.decode.beam_size = *de_beam;
      if (de_norm) cfg.decode.length_normalization = *de_norm;
      const Vocabulary sv = Vocabulary::load(de_sv), tv = Vocabulary::load(de_tv);
      const Checkpoint ck = load_checkpoint(de_ckpt, sv, tv);
      std::vector<Sentence> sources;
      for (const auto& w : read_words(de_in)) sources.push_back(sv.encode(w));
      const auto results = decode_corpus(ck.model, sources, cfg.decode);
      std::vector<std::string> lines;
      for (const auto& w : to_words(tv, results)) lines.push_back(join(w));
      write_lines(de_out, lines);
      print("decoded", de_out);
    } else if (ev->parsed()) {
      ExperimentConfig cfg = resolve(ev_c);
      const auto cand = read_words(ev_cand);
      const auto refs = read_words(ev_ref);
      const auto unigrams = UnigramModel::from_corpus(ev_train.empty() ? refs : read_words(ev_train), cfg.log_base);
      const MetricsReport m = evaluate(cand, refs, unigrams, cfg.repetition_cap);
      write_metrics_tsv(ev_out, fs::path(ev_cand).filename().string(), m);
      print("metrics", ev_out);
    } else if (pr->parsed()) {
      ExperimentConfig cfg = resolve(pr_c);
      const Vocabulary sv = Vocabulary::load(pr_sv), tv = Vocabulary::load(pr_tv);
      const Checkpoint ck = load_checkpoint(pr_ckpt, sv, tv);
      const ParallelCorpus corpus = load_corpus(pr_src, pr_tgt, sv, tv);
      const ProbeReport p = probe(ck.model, corpus, cfg.probe_sample_cap, derive_seed(cfg.seed, "probe"));
      std::ofstream out(pr_out, std::ios::binary);
      const auto cols = probe_columns();
      const auto cells = probe_cells(p);
      for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "\t" : "") << cols[i];
      out << '\n';
      for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "\t" : "") << cells[i];
      out << '\n';
      print("probe", pr_out);
    } else if (run->parsed()) {
      ExperimentConfig cfg = resolve(run_c);
      if (!run_out.empty()) cfg.output_dir = run_out;
      const ExperimentReport r = run_experiment(cfg);
      print("report", r.report_path);
      print("config_snapshot", cfg.output_dir / "config.snapshot");
      for (const auto& row : r.rows) print("fraction_dir", row.directory);
      for (const auto& row : r.rows)
        if (!row.ok) return 4;
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
