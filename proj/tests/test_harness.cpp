#include "seq2align/experiment.hpp"
#include "seq2align/rng.hpp"

#include "tsv.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

using namespace seq2align;
namespace fs = std::filesystem;

#ifndef SEQ2ALIGN_CLI
#error "SEQ2ALIGN_CLI must name the command-line binary"
#endif

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "seq2align_harness_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c;
  c.vocab_size = 6;
  c.min_length = 3;
  c.max_length = 5;
  c.train_pairs = 80;
  c.test_pairs = 20;
  c.fractions = {0.0, 1.0};
  c.shape.embed = 4;
  c.shape.encoder_hidden = c.shape.decoder_hidden = c.shape.attention = c.shape.readout = 6;
  c.train.epochs = 1;
  c.train.batch_size = 16;
  c.decode.beam_size = 3;
  c.decode.max_length = 12;
  c.output_dir = out;
  c.seed = 3;
  return c;
}

int run(const std::string& args) {
  const std::string cmd = std::string(SEQ2ALIGN_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config serializes and parses back") {
  ExperimentConfig c;
  c.fractions = {0.0, 0.1, 0.3333333333333333};
  c.train.learning_rate = 2.5e-4;
  c.decode.length_normalization = false;
  c.zipf_exponent = 0.7;
  c.output_dir = "some/dir";
  c.task = TaskKind::reverse;
  const auto text = c.serialize();
  const auto back = ExperimentConfig::parse(text);
  CHECK(back.serialize() == text);
  CHECK(back.fractions == c.fractions);
  CHECK(back.train.learning_rate == 2.5e-4);
  CHECK_FALSE(back.decode.length_normalization);
  CHECK(back.task == TaskKind::reverse);

  const auto commented = ExperimentConfig::parse("# comment\n\nepochs = 3\nbeam_size=5\n");
  CHECK(commented.train.epochs == 3);
  CHECK(commented.decode.beam_size == 5);
}

TEST_CASE("config rejects bad input") {
  CHECK_THROWS_AS(ExperimentConfig::parse("no_such_key=1\n"), std::invalid_argument);
  CHECK_THROWS_AS(ExperimentConfig::parse("epochs\n"), std::invalid_argument);
  CHECK_THROWS_AS(ExperimentConfig::parse("epochs=many\n"), std::invalid_argument);
  ExperimentConfig c;
  c.fractions = {0.5, 0.25};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.fractions = {0.0, 1.5};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.fractions = {0.0};
  c.decode.beam_size = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("seeds: shared across fractions, distinct per purpose") {
  const auto s = RunSeeds::from_master(7);
  CHECK(s.init != s.train);
  CHECK(s.data != s.split);
  CHECK(s.shuffle(0.25) != s.shuffle(0.5));
  CHECK(s.shuffle(0.25) == RunSeeds::from_master(7).shuffle(0.25));
  CHECK(RunSeeds::from_master(8).init != s.init);
}

TEST_CASE("test pairs never occur in training") {
  auto c = tiny_config(scratch("split"));
  // a small vocabulary with short sentences forces some collisions
  c.vocab_size = 3;
  c.min_length = 1;
  c.max_length = 2;
  c.train_pairs = 60;
  c.test_pairs = 30;
  const auto d = prepare_data(c);
  std::set<std::uint64_t> train;
  for (const auto& p : d.train.pairs) train.insert(hash_pair(p));
  for (const auto& p : d.test.pairs) CHECK(train.count(hash_pair(p)) == 0);
  CHECK(d.train.size() == 60);
  CHECK(d.test.size() + d.dropped_overlaps == 30);
  CHECK(d.dropped_overlaps > 0);
  CHECK(d.references.size() == d.test.size());
  CHECK(d.train.source_vocab == d.test.source_vocab);

  const auto again = prepare_data(c);
  CHECK(again.train.pairs == d.train.pairs);
  CHECK(again.test.pairs == d.test.pairs);
}

TEST_CASE("a tiny sweep is byte-identical when rerun") {
  const auto a = scratch("run_a"), b = scratch("run_b");
  const auto ra = run_experiment(tiny_config(a));
  const auto rb = run_experiment(tiny_config(b));
  REQUIRE(ra.rows.size() == 2);
  CHECK(ra.rows[0].ok);
  CHECK(ra.rows[1].ok);
  const auto text = tsv::slurp((a / "report.tsv").string());
  CHECK(text == tsv::slurp((b / "report.tsv").string()));
  CHECK(tsv::slurp((a / "p0.0000/checkpoint.bin").string()) == tsv::slurp((b / "p0.0000/checkpoint.bin").string()));
  for (const char* f : {"config.snapshot", "test.src", "test.tgt", "source.vocab", "target.vocab",
                        "p0.0000/train.src", "p0.0000/train.tgt", "p0.0000/decoded.txt", "p0.0000/metrics.tsv",
                        "p0.0000/metrics.txt", "p0.0000/train_log.tsv", "p1.0000/checkpoint.bin"})
    CHECK_MESSAGE(fs::exists(a / f), f);

  const auto t = tsv::read((a / "report.tsv").string());
  REQUIRE(t.rows.size() == 2);
  CHECK(t.cell(0, "status") == "ok");
  CHECK(t.number(0, "fraction") == 0.0);
  CHECK(t.number(1, "fraction") == 1.0);
  CHECK(t.cell(0, "beam_size") == "3");
  for (const char* col : {"bleu", "bleu1", "bleu4", "avg_length", "length_pct_of_ref", "neg_log_prob", "entropy",
                          "r2_encoder", "r2_decoder", "final_train_loss", "epochs", "unfinished_decodes"})
    CHECK_NOTHROW(t.column(col));

  // the snapshot alone reproduces the report
  auto again = ExperimentConfig::load(a / "config.snapshot");
  const auto c = scratch("run_c");
  again.output_dir = c;
  run_experiment(again);
  CHECK(tsv::slurp((c / "report.tsv").string()) == text);

  // training sources are identical across fractions; only targets differ
  CHECK(tsv::slurp((a / "p0.0000/train.src").string()) == tsv::slurp((a / "p1.0000/train.src").string()));
  CHECK(tsv::slurp((a / "p0.0000/train.tgt").string()) != tsv::slurp((a / "p1.0000/train.tgt").string()));
}

TEST_CASE("a failing fraction is reported and the sweep continues") {
  const auto dir = scratch("failing");
  // a plain file where the p=0 directory should go
  std::ofstream(dir / "p0.0000") << "in the way\n";
  const auto r = run_experiment(tiny_config(dir));
  REQUIRE(r.rows.size() == 2);
  CHECK_FALSE(r.rows[0].ok);
  CHECK_FALSE(r.rows[0].error.empty());
  CHECK(r.rows[1].ok);
  const auto t = tsv::read((dir / "report.tsv").string());
  CHECK(t.cell(0, "status") == "failed");
  CHECK(t.cell(0, "bleu") == "NA");
  CHECK(t.cell(1, "status") == "ok");
  CHECK(run("run --seed 3 --set vocab_size=6 --set train_pairs=80 --set test_pairs=20 --set epochs=1 "
            "--set fractions=0,1 --out " +
            dir.string()) == 4);
}

TEST_CASE("cli: shuffle at fraction 0 copies the files byte for byte") {
  const auto dir = scratch("cli_shuffle");
  REQUIRE(run("gen-data --pairs 50 --out " + (dir / "data").string()) == 0);
  REQUIRE(run("shuffle --fraction 0 --source " + (dir / "data.src").string() + " --target " +
              (dir / "data.tgt").string() + " --out " + (dir / "shuf").string()) == 0);
  CHECK(tsv::slurp((dir / "data.src").string()) == tsv::slurp((dir / "shuf.src").string()));
  CHECK(tsv::slurp((dir / "data.tgt").string()) == tsv::slurp((dir / "shuf.tgt").string()));

  REQUIRE(run("shuffle --fraction 1 --source " + (dir / "data.src").string() + " --target " +
              (dir / "data.tgt").string() + " --out " + (dir / "full").string()) == 0);
  CHECK(tsv::slurp((dir / "data.src").string()) == tsv::slurp((dir / "full.src").string()));
  CHECK(tsv::slurp((dir / "data.tgt").string()) != tsv::slurp((dir / "full.tgt").string()));
  CHECK(run("shuffle --fraction 2 --source " + (dir / "data.src").string() + " --target " +
            (dir / "data.tgt").string() + " --out " + (dir / "bad").string()) != 0);
}

TEST_CASE("cli: evaluate on identical files gives BLEU 100") {
  const auto dir = scratch("cli_eval");
  REQUIRE(run("gen-data --pairs 30 --out " + (dir / "data").string()) == 0);
  REQUIRE(run("evaluate --candidates " + (dir / "data.tgt").string() + " --references " +
              (dir / "data.tgt").string() + " --out " + (dir / "m.tsv").string()) == 0);
  const auto t = tsv::read((dir / "m.tsv").string());
  CHECK(t.number(0, "bleu") == doctest::Approx(100.0));
  CHECK(t.number(0, "length_pct_of_ref") == doctest::Approx(100.0));
}

TEST_CASE("cli: probe on a zero model gives near-zero R2") {
  const auto dir = scratch("cli_probe");
  REQUIRE(run("gen-data --pairs 100 --out " + (dir / "data").string()) == 0);
  const std::string src = (dir / "data.src").string(), tgt = (dir / "data.tgt").string();
  REQUIRE(run("train --zero-init --source " + src + " --target " + tgt + " --source-vocab " + src +
              ".vocab --target-vocab " + tgt + ".vocab --out " + (dir / "model").string()) == 0);
  REQUIRE(run("probe --checkpoint " + (dir / "model/checkpoint.bin").string() + " --source-vocab " + src +
              ".vocab --target-vocab " + tgt + ".vocab --source " + src + " --target " + tgt + " --out " +
              (dir / "p.tsv").string()) == 0);
  const auto t = tsv::read((dir / "p.tsv").string());
  CHECK(std::abs(t.number(0, "r2_encoder")) <= 0.01);
  CHECK(std::abs(t.number(0, "r2_decoder")) <= 0.01);
}

TEST_CASE("cli: train, decode and usage errors") {
  const auto dir = scratch("cli_train");
  REQUIRE(run("gen-data --task copy --pairs 40 --set vocab_size=5 --set min_length=2 --set max_length=4 --out " +
              (dir / "data").string()) == 0);
  const std::string src = (dir / "data.src").string(), tgt = (dir / "data.tgt").string();
  REQUIRE(run("train --epochs 1 --set embed=4 --set encoder_hidden=4 --set decoder_hidden=4 --set attention=4 "
              "--set readout=4 --source " + src + " --target " + tgt + " --out " + (dir / "m").string()) == 0);
  CHECK(fs::exists(dir / "m/train_log.tsv"));
  REQUIRE(run("decode --beam-size 2 --set decode_max_length=6 --checkpoint " + (dir / "m/checkpoint.bin").string() +
              " --source-vocab " + (dir / "m/source.vocab").string() + " --target-vocab " +
              (dir / "m/target.vocab").string() + " --input " + src + " --output " + (dir / "out.txt").string()) == 0);
  std::ifstream in(dir / "out.txt");
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  CHECK(lines == 40);

  CHECK(run("") != 0);
  CHECK(run("frobnicate") != 0);
  CHECK(run("shuffle --fraction 0.5") != 0);
  CHECK(run("train --source /nonexistent --target /nonexistent") != 0);
  CHECK(run("run --set no_such_key=1") != 0);
}
