#include "seq2align/corpus.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

using namespace seq2align;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "seq2align_corpus_tests";
  fs::create_directories(dir);
  return dir / name;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

ParallelCorpus numbered_corpus(std::size_t n) {
  std::vector<std::string> names;
  for (std::size_t k = 0; k < n; ++k) names.push_back("t" + std::to_string(k));
  Vocabulary v(names);
  ParallelCorpus c{{}, v, v};
  for (std::size_t k = 0; k < n; ++k) {
    const auto id = static_cast<TokenId>(Vocabulary::reserved_count + k);
    c.pairs.push_back({{id}, {id, id}});
  }
  return c;
}

}  // namespace

TEST_CASE("reserved ids are fixed") {
  Vocabulary v;
  CHECK(v.size() == 4);
  CHECK(v.id("<pad>") == 0);
  CHECK(v.id("<unk>") == 1);
  CHECK(v.id("<s>") == 2);
  CHECK(v.id("</s>") == 3);
  CHECK(v.id("anything") == Vocabulary::unk);
}

TEST_CASE("build keeps the most frequent tokens") {
  const std::vector<std::string> stream{"a", "a", "b"};
  const auto v = Vocabulary::build(stream, 5);
  CHECK(v.size() == 5);
  CHECK(v.token(4) == "a");
  CHECK_FALSE(v.contains("b"));

  const auto all = Vocabulary::build(stream, 100);
  CHECK(all.size() == 6);
  CHECK(all.contains("b"));

  const std::vector<std::string> tie{"b", "a", "a", "b", "c"};
  // b and a both occur twice; b was seen first
  CHECK(Vocabulary::build(tie, 5).token(4) == "b");
  const std::vector<std::string> tie2{"a", "b", "b", "a"};
  CHECK(Vocabulary::build(tie2, 5).token(4) == "a");

  CHECK_THROWS_AS(Vocabulary::build(stream, 4), std::invalid_argument);
  CHECK(Vocabulary::build(std::vector<std::string>{}, 10).size() == 4);
}

TEST_CASE("encode then decode is the identity on known tokens") {
  const Vocabulary v({"x", "y", "z"});
  const Words w{"z", "x", "x", "y"};
  CHECK(v.decode(v.encode(w)) == w);
  CHECK(v.encode(Words{"q"}) == Sentence{Vocabulary::unk});
}

TEST_CASE("vocabulary file round trip and hash") {
  const Vocabulary v({"alpha", "beta"});
  const auto p = scratch("v.vocab");
  v.save(p);
  const auto back = Vocabulary::load(p);
  CHECK(back == v);
  CHECK(back.id("alpha") == 4);
  CHECK(back.content_hash() == v.content_hash());
  CHECK(Vocabulary({"beta", "alpha"}).content_hash() != v.content_hash());
  CHECK_THROWS_AS(Vocabulary({"a", "a"}), std::invalid_argument);
  CHECK_THROWS_AS(Vocabulary({"<s>"}), std::invalid_argument);
}

TEST_CASE("load_corpus examples") {
  const auto s = scratch("a.src"), t = scratch("a.tgt");
  write_file(s, "a b\n");
  write_file(t, "c\n");
  const Vocabulary v({"a", "b", "c"});
  const auto c = load_corpus(s, t, v, v);
  CHECK(c.size() == 1);
  CHECK(c.pairs[0].source.size() == 2);
  CHECK(c.pairs[0].target.size() == 1);

  write_file(s, "a zzz\n");
  CHECK(load_corpus(s, t, v, v).pairs[0].source[1] == Vocabulary::unk);

  write_file(s, "a\nb\nc\n");
  write_file(t, "a\nb\n");
  try {
    load_corpus(s, t, v, v);
    FAIL("expected a mismatch error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("3 lines") != std::string::npos);
    CHECK(msg.find("2") != std::string::npos);
  }

  write_file(s, "a\n\nc\n");
  write_file(t, "a\nb\nc\n");
  try {
    load_corpus(s, t, v, v);
    FAIL("expected an empty-line error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("empty line 2") != std::string::npos);
  }
}

TEST_CASE("shuffle p=0 leaves the corpus alone") {
  const auto c = numbered_corpus(50);
  CHECK(shuffle_targets(c, {0.0, 9}).pairs == c.pairs);
}

TEST_CASE("shuffle p=1 permutes targets and keeps sources") {
  const auto c = numbered_corpus(200);
  const auto s = shuffle_targets(c, {1.0, 3});
  std::multiset<Sentence> before, after;
  std::size_t fixed = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(s.pairs[i].source == c.pairs[i].source);
    before.insert(c.pairs[i].target);
    after.insert(s.pairs[i].target);
    fixed += s.pairs[i].target == c.pairs[i].target;
  }
  CHECK(before == after);
  CHECK(fixed < 10);
  CHECK(shuffle_targets(c, {1.0, 3}).pairs == s.pairs);
  CHECK(shuffle_targets(c, {1.0, 4}).pairs != s.pairs);
}

TEST_CASE("partial shuffle selects round(p*N) positions") {
  const auto pos = shuffle_positions(100, {0.5, 17});
  CHECK(pos.size() == 50);
  CHECK(std::is_sorted(pos.begin(), pos.end()));
  CHECK(std::adjacent_find(pos.begin(), pos.end()) == pos.end());
  CHECK(shuffle_positions(100, {0.5, 17}) == pos);
  CHECK(shuffle_positions(7, {0.25, 1}).size() == 2);

  const auto c = numbered_corpus(100);
  const auto s = shuffle_targets(c, {0.5, 17});
  const auto tau = target_permutation(100, {0.5, 17});
  for (std::size_t i = 0; i < 100; ++i) {
    const bool selected = std::binary_search(pos.begin(), pos.end(), i);
    if (!selected) CHECK(s.pairs[i].target == c.pairs[i].target);
    if (!selected) CHECK(tau[i] == i);
    if (selected) CHECK(std::binary_search(pos.begin(), pos.end(), tau[i]));
  }
  CHECK(shuffle_targets(c, {0.5, 17}).pairs == s.pairs);
  CHECK_THROWS_AS(shuffle_positions(10, {1.5, 0}), std::invalid_argument);
}

TEST_CASE("fixed points of a full shuffle average about one") {
  // Expected fixed points of a uniform permutation is exactly 1.
  double total = 0;
  const int runs = 400;
  for (int seed = 0; seed < runs; ++seed) {
    const auto tau = target_permutation(60, {1.0, static_cast<std::uint64_t>(seed)});
    for (std::size_t i = 0; i < tau.size(); ++i) total += tau[i] == i;
  }
  CHECK(total / runs == doctest::Approx(1.0).epsilon(0.2));
}

TEST_CASE("synthetic tasks") {
  SyntheticTaskSpec spec;
  spec.pairs = 200;
  spec.seed = 5;
  spec.kind = TaskKind::copy;
  for (const auto& p : generate_synthetic(spec).pairs) CHECK(p.target == p.source);

  spec.kind = TaskKind::reverse;
  for (const auto& p : generate_synthetic(spec).pairs) CHECK(p.target == Sentence(p.source.rbegin(), p.source.rend()));

  spec.kind = TaskKind::cipher_reverse;
  const auto c = generate_synthetic(spec);
  const auto pi = synthetic_cipher(spec);
  const auto off = static_cast<TokenId>(Vocabulary::reserved_count);
  for (const auto& p : c.pairs) {
    CHECK(p.source.size() >= spec.min_length);
    CHECK(p.source.size() <= spec.max_length);
    REQUIRE(p.target.size() == p.source.size());
    for (std::size_t i = 0; i < p.source.size(); ++i)
      CHECK(p.target[p.source.size() - 1 - i] == off + static_cast<TokenId>(pi[static_cast<std::size_t>(p.source[i] - off)]));
  }
  auto sorted = pi;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t k = 0; k < sorted.size(); ++k) CHECK(sorted[k] == k);

  CHECK(generate_synthetic(spec).pairs == c.pairs);
  c.validate();
}

TEST_CASE("synthetic sources are uniform at exponent 0 and skewed above it") {
  SyntheticTaskSpec spec;
  spec.vocab_size = 10;
  spec.pairs = 4000;
  spec.seed = 8;
  auto freq = [&](double s) {
    spec.zipf_exponent = s;
    std::map<TokenId, double> f;
    double n = 0;
    for (const auto& p : generate_synthetic(spec).pairs)
      for (auto id : p.source) f[id] += 1, n += 1;
    for (auto& [k, v] : f) v /= n;
    return f;
  };
  for (const auto& [k, v] : freq(0.0)) CHECK(v == doctest::Approx(0.1).epsilon(0.1));
  const auto skew = freq(1.0);
  // P(rank 0) = 1 / H_10 for exponent 1
  double h10 = 0;
  for (int k = 1; k <= 10; ++k) h10 += 1.0 / k;
  CHECK(skew.at(4) == doctest::Approx(1.0 / h10).epsilon(0.05));
  CHECK(skew.at(4) > skew.at(13));
}

TEST_CASE("synthetic spec validation") {
  SyntheticTaskSpec spec;
  spec.vocab_size = 1;
  CHECK_THROWS_AS(generate_synthetic(spec), std::invalid_argument);
  spec.vocab_size = 5;
  spec.min_length = 4;
  spec.max_length = 3;
  CHECK_THROWS_AS(generate_synthetic(spec), std::invalid_argument);
  CHECK(parse_task_kind("cipher-reverse") == TaskKind::cipher_reverse);
  CHECK_THROWS_AS(parse_task_kind("rot13"), std::invalid_argument);
}

TEST_CASE("write then load reproduces a corpus") {
  SyntheticTaskSpec spec;
  spec.pairs = 30;
  const auto c = generate_synthetic(spec);
  const auto s = scratch("w.src"), t = scratch("w.tgt");
  write_corpus(c, s, t);
  CHECK(load_corpus(s, t, c.source_vocab, c.target_vocab).pairs == c.pairs);
}

TEST_CASE("pair hashes separate token boundaries") {
  const SentencePair a{{4, 5}, {6}}, b{{4}, {5, 6}};
  CHECK(hash_pair(a) != hash_pair(b));
  CHECK(hash_pair(a) == hash_pair(SentencePair{{4, 5}, {6}}));
}
