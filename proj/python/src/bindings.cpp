#include "seq2align/checkpoint.hpp"
#include "seq2align/corpus.hpp"
#include "seq2align/decoding.hpp"
#include "seq2align/experiment.hpp"
#include "seq2align/metrics.hpp"
#include "seq2align/model.hpp"
#include "seq2align/training.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace seq2align;

namespace {

py::dict to_dict(const MetricsReport& m) {
  py::dict d;
  d["bleu"] = m.bleu;
  d["bleu_n"] = m.bleu_n;
  d["avg_length_words"] = m.avg_length_words;
  d["length_pct_of_ref"] = m.length_pct_of_ref;
  d["neg_log_prob"] = m.neg_log_prob;
  d["entropy"] = m.entropy;
  d["sentences"] = m.sentences;
  return d;
}

py::dict to_dict(const ProbeReport& p) {
  py::dict d;
  d["r2_encoder"] = p.r2_encoder;
  d["r2_decoder"] = p.r2_decoder;
  d["encoder_samples"] = p.encoder_samples;
  d["decoder_samples"] = p.decoder_samples;
  return d;
}

ParallelCorpus corpus_from_words(const std::vector<Words>& src, const std::vector<Words>& tgt,
                                 const Vocabulary& sv, const Vocabulary& tv) {
  if (src.size() != tgt.size()) throw std::invalid_argument("source and target differ in length");
  ParallelCorpus c{{}, sv, tv};
  for (std::size_t i = 0; i < src.size(); ++i) c.pairs.push_back({sv.encode(src[i]), tv.encode(tgt[i])});
  c.validate();
  return c;
}

std::vector<Words> side_words(const ParallelCorpus& c, bool target) {
  std::vector<Words> out;
  out.reserve(c.size());
  for (const auto& p : c.pairs)
    out.push_back(target ? c.target_vocab.decode(p.target) : c.source_vocab.decode(p.source));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Attention GRU sequence-to-sequence models, target shuffling and output statistics";

  py::class_<Vocabulary>(m, "Vocabulary")
      .def(py::init<>())
      .def(py::init<std::vector<std::string>>(), py::arg("content_tokens"))
      .def_static(
          "build", [](const std::vector<Words>& s, std::size_t max_size) { return Vocabulary::build(s, max_size); },
                  py::arg("sentences"), py::arg("max_size") = 30000)
      .def_static("load", &Vocabulary::load)
      .def("save", &Vocabulary::save)
      .def("content_hash", &Vocabulary::content_hash)
      .def("id", [](const Vocabulary& v, const std::string& t) { return v.id(t); })
      .def("token", &Vocabulary::token)
      .def("__contains__", [](const Vocabulary& v, const std::string& t) { return v.contains(t); })
      .def("__len__", &Vocabulary::size)
      .def("encode", [](const Vocabulary& v, const Words& w) { return v.encode(w); })
      .def("decode", [](const Vocabulary& v, const Sentence& s) { return v.decode(s); })
      .def(py::self == py::self);
  m.attr("PAD") = Vocabulary::pad;
  m.attr("BOS") = Vocabulary::bos;
  m.attr("EOS") = Vocabulary::eos;
  m.attr("UNK") = Vocabulary::unk;

  py::class_<ParallelCorpus>(m, "Corpus")
      .def(py::init(&corpus_from_words), py::arg("source"), py::arg("target"), py::arg("source_vocab"),
           py::arg("target_vocab"))
      .def_readonly("source_vocab", &ParallelCorpus::source_vocab)
      .def_readonly("target_vocab", &ParallelCorpus::target_vocab)
      .def("__len__", &ParallelCorpus::size)
      .def("source_ids", [](const ParallelCorpus& c) {
        std::vector<Sentence> out;
        for (const auto& p : c.pairs) out.push_back(p.source);
        return out;
      })
      .def("target_ids", [](const ParallelCorpus& c) {
        std::vector<Sentence> out;
        for (const auto& p : c.pairs) out.push_back(p.target);
        return out;
      })
      .def("source_words", [](const ParallelCorpus& c) { return side_words(c, false); })
      .def("target_words", [](const ParallelCorpus& c) { return side_words(c, true); })
      .def("save", [](const ParallelCorpus& c, const std::filesystem::path& s, const std::filesystem::path& t) {
        write_corpus(c, s, t);
      });

  m.def("load_corpus", &load_corpus, py::arg("source_path"), py::arg("target_path"), py::arg("source_vocab"),
        py::arg("target_vocab"));

  m.def(
      "generate_synthetic",
      [](const std::string& task, std::size_t vocab_size, std::size_t min_length, std::size_t max_length,
         std::size_t pairs, std::uint64_t seed, double zipf_exponent) {
        SyntheticTaskSpec s;
        s.kind = parse_task_kind(task);
        s.vocab_size = vocab_size;
        s.min_length = min_length;
        s.max_length = max_length;
        s.pairs = pairs;
        s.seed = seed;
        s.zipf_exponent = zipf_exponent;
        return generate_synthetic(s);
      },
      py::arg("task") = "cipher-reverse", py::arg("vocab_size") = 50, py::arg("min_length") = 5,
      py::arg("max_length") = 15, py::arg("pairs") = 1000, py::arg("seed") = 0, py::arg("zipf_exponent") = 0.0);

  m.def(
      "target_permutation",
      [](std::size_t n, double fraction, std::uint64_t seed) { return target_permutation(n, {fraction, seed}); },
      py::arg("n"), py::arg("fraction"), py::arg("seed") = 0);
  m.def(
      "shuffle_targets",
      [](const ParallelCorpus& c, double fraction, std::uint64_t seed) {
        return shuffle_targets(c, {fraction, seed});
      },
      py::arg("corpus"), py::arg("fraction"), py::arg("seed") = 0);

  py::class_<ModelShape>(m, "ModelShape")
      .def(py::init<>())
      .def_readwrite("source_vocab", &ModelShape::source_vocab)
      .def_readwrite("target_vocab", &ModelShape::target_vocab)
      .def_readwrite("embed", &ModelShape::embed)
      .def_readwrite("encoder_hidden", &ModelShape::encoder_hidden)
      .def_readwrite("decoder_hidden", &ModelShape::decoder_hidden)
      .def_readwrite("attention", &ModelShape::attention)
      .def_readwrite("readout", &ModelShape::readout)
      .def(py::self == py::self);

  py::class_<ModelParameters>(m, "Model")
      .def(py::init<const ModelShape&>(), py::arg("shape"))
      .def("initialize", &ModelParameters::initialize, py::arg("seed"))
      .def("zero", &ModelParameters::zero)
      .def_property_readonly("shape", &ModelParameters::shape)
      .def("parameters",
           [](const ModelParameters& model) {
             py::dict d;
             for (const auto* p : model.parameters()) {
               const auto& t = p->value;
               d[py::str(p->name)] = t.to_matrix();
             }
             return d;
           })
      .def(
          "save",
          [](const ModelParameters& model, const std::filesystem::path& path, const Vocabulary& sv,
             const Vocabulary& tv) { save_checkpoint(path, model, sv.content_hash(), tv.content_hash()); },
          py::arg("path"), py::arg("source_vocab"), py::arg("target_vocab"))
      .def_static(
          "load",
          [](const std::filesystem::path& path, const Vocabulary& sv, const Vocabulary& tv) {
            return load_checkpoint(path, sv, tv).model;
          },
          py::arg("path"), py::arg("source_vocab"), py::arg("target_vocab"))
      .def("sentence_loss", [](const ModelParameters& model, const ParallelCorpus& c) {
        std::vector<std::size_t> all(c.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return sentence_loss(model, make_batch(c, all));
      });

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("dropout", &TrainConfig::dropout)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("max_grad_norm", &TrainConfig::max_grad_norm)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("max_length", &TrainConfig::max_length)
      .def_readwrite("checkpoint_every", &TrainConfig::checkpoint_every)
      .def_readwrite("output_dir", &TrainConfig::output_dir);

  m.def(
      "train",
      [](const TrainConfig& cfg, const ParallelCorpus& c, ModelParameters& model, const EpochCallback& cb) {
        TrainResult r;
        {
          py::gil_scoped_release release;
          EpochCallback wrapped;
          if (cb)
            wrapped = [&cb](const EpochRecord& e) {
              py::gil_scoped_acquire acquire;
              cb(e);
            };
          r = train(cfg, c, model, wrapped);
        }
        py::dict d;
        py::list losses;
        for (const auto& e : r.log) losses.append(e.mean_loss);
        d["losses"] = losses;
        d["aborted"] = r.aborted;
        d["message"] = r.message;
        d["rejected_steps"] = r.rejected_steps;
        d["truncated_sentences"] = r.truncated_sentences;
        return d;
      },
      py::arg("config"), py::arg("corpus"), py::arg("model"), py::arg("on_epoch") = EpochCallback{});

  py::class_<EpochRecord>(m, "EpochRecord")
      .def_readonly("epoch", &EpochRecord::epoch)
      .def_readonly("mean_loss", &EpochRecord::mean_loss)
      .def_readonly("tokens_per_second", &EpochRecord::tokens_per_second)
      .def_readonly("checkpoint_path", &EpochRecord::checkpoint_path);

  py::class_<DecodeResult>(m, "DecodeResult")
      .def_readonly("tokens", &DecodeResult::tokens)
      .def_readonly("log_prob", &DecodeResult::log_prob)
      .def_readonly("finished", &DecodeResult::finished);

  m.def(
      "decode",
      [](const ModelParameters& model, const std::vector<Sentence>& sources, std::size_t beam_size,
         std::size_t max_length, bool length_normalization) {
        const DecodeConfig cfg{beam_size, max_length, length_normalization};
        cfg.validate();
        py::gil_scoped_release release;
        return decode_corpus(model, sources, cfg);
      },
      py::arg("model"), py::arg("sources"), py::arg("beam_size") = 12, py::arg("max_length") = 100,
      py::arg("length_normalization") = true);

  m.def(
      "bleu",
      [](const std::vector<Words>& cand, const std::vector<Words>& refs) {
        const auto b = bleu(cand, refs);
        py::dict d;
        d["bleu"] = b.bleu;
        d["precision"] = b.precision;
        d["brevity_penalty"] = b.brevity_penalty;
        d["candidate_length"] = b.candidate_length;
        d["reference_length"] = b.reference_length;
        return d;
      },
      py::arg("candidates"), py::arg("references"));

  m.def(
      "evaluate",
      [](const std::vector<Words>& cand, const std::vector<Words>& refs, const std::vector<Words>& train_targets,
         std::size_t max_run, double log_base) {
        return to_dict(evaluate(cand, refs, UnigramModel::from_corpus(train_targets, log_base), max_run));
      },
      py::arg("candidates"), py::arg("references"), py::arg("train_targets"), py::arg("max_run") = 4,
      py::arg("log_base") = 2.0);

  m.def(
      "entropy",
      [](const std::vector<Words>& cand, double log_base, std::size_t max_run) {
        return entropy(cand, log_base, max_run);
      },
      py::arg("candidates"), py::arg("log_base") = 2.0, py::arg("max_run") = 4);
  m.def(
      "neg_log_prob",
      [](const std::vector<Words>& cand, const std::vector<Words>& train_targets, double log_base,
         std::size_t max_run) {
        return neg_log_prob(cand, UnigramModel::from_corpus(train_targets, log_base), max_run);
      },
      py::arg("candidates"), py::arg("train_targets"), py::arg("log_base") = 2.0, py::arg("max_run") = 4);
  m.def(
      "cap_repetitions",
      [](const Words& w, std::size_t max_run) { return cap_repetitions(std::span<const std::string>(w), max_run); },
      py::arg("words"), py::arg("max_run") = 4);

  m.def(
      "r2_fit",
      [](const Matrix& x, const Eigen::VectorXd& y, double ridge) {
        const auto f = r2_fit(x, y, ridge);
        return py::make_tuple(f.r2, f.intercept, f.coefficients);
      },
      py::arg("x"), py::arg("y"), py::arg("ridge") = 1e-8);
  m.def(
      "probe",
      [](const ModelParameters& model, const ParallelCorpus& c, std::size_t sample_cap, std::uint64_t seed) {
        return to_dict(probe(model, c, sample_cap, seed));
      },
      py::arg("model"), py::arg("corpus"), py::arg("sample_cap") = 100000, py::arg("seed") = 0);

  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def(py::init<>())
      .def("set", &ExperimentConfig::set, py::arg("key"), py::arg("value"))
      .def("serialize", &ExperimentConfig::serialize)
      .def("validate", &ExperimentConfig::validate)
      .def_static("parse", &ExperimentConfig::parse)
      .def_static("load", &ExperimentConfig::load);

  m.def(
      "run_experiment",
      [](const ExperimentConfig& cfg, const ProgressCallback& cb) {
        ExperimentReport r;
        {
          py::gil_scoped_release release;
          ProgressCallback wrapped;
          if (cb)
            wrapped = [&cb](const std::string& msg) {
              py::gil_scoped_acquire acquire;
              cb(msg);
            };
          r = run_experiment(cfg, wrapped);
        }
        py::list rows;
        for (const auto& row : r.rows) {
          py::dict d;
          d["fraction"] = row.fraction;
          d["ok"] = row.ok;
          d["error"] = row.error;
          d["metrics"] = to_dict(row.metrics);
          d["probe"] = to_dict(row.probe);
          d["final_train_loss"] = row.final_train_loss;
          d["directory"] = row.directory;
          rows.append(d);
        }
        py::dict out;
        out["rows"] = rows;
        out["report_path"] = r.report_path;
        return out;
      },
      py::arg("config"), py::arg("progress") = ProgressCallback{});
}
