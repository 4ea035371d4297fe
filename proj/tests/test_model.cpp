#include "seq2align/checkpoint.hpp"
#include "seq2align/model.hpp"

#include "gradcheck.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace seq2align;

namespace {

oracle::Vec column(const Matrix& m, Eigen::Index c) {
  return oracle::Vec(m.col(c).data(), m.col(c).data() + m.rows());
}

void check_close(const oracle::Vec& a, const oracle::Vec& b, double tol = 1e-12) {
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(tol).scale(1.0));
}

// Two sentences of different lengths, padded to the longer one.
SourceBatch padded(const Sentence& a, const Sentence& b) {
  SourceBatch s;
  s.length = std::max(a.size(), b.size());
  s.batch = 2;
  s.ids.assign(s.length * 2, Vocabulary::pad);
  s.mask = Matrix::Zero(static_cast<Eigen::Index>(s.length), 2);
  for (std::size_t i = 0; i < a.size(); ++i) s.ids[i * 2] = a[i], s.mask(static_cast<Eigen::Index>(i), 0) = 1;
  for (std::size_t i = 0; i < b.size(); ++i) s.ids[i * 2 + 1] = b[i], s.mask(static_cast<Eigen::Index>(i), 1) = 1;
  return s;
}

}  // namespace

TEST_CASE("gru with zero weights halves the state") {
  ModelShape shape;
  shape.source_vocab = shape.target_vocab = 6;
  shape.embed = 2;
  shape.encoder_hidden = 3;
  ModelParameters m(shape);
  const auto h = gru_step(m.encoder.forward, Tensor::vector({0.4, -1.0, 2.0}), Tensor::vector({5.0, 7.0}));
  CHECK(h[0] == doctest::Approx(0.2));
  CHECK(h[1] == doctest::Approx(-0.5));
  CHECK(h[2] == doctest::Approx(1.0));
  CHECK_THROWS_AS(gru_step(m.encoder.forward, Tensor::vector({0.0}), Tensor::vector({5.0, 7.0})),
                  std::invalid_argument);
}

TEST_CASE("gru matches the scalar formula") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto m = gradcheck::random_model(seed);
    Rng rng(seed + 100);
    oracle::Vec h(3), x(3);
    for (auto& v : h) v = rng.uniform() * 2 - 1;
    for (auto& v : x) v = rng.uniform() * 2 - 1;
    Tensor ht({3}, h), xt({3}, x);
    const auto got = gru_step(m.encoder.forward, ht, xt);
    check_close(oracle::Vec(got.values().begin(), got.values().end()), oracle::gru(m.encoder.forward, h, x));
  }
}

TEST_CASE("gru output stays within [-1, 1] for bounded states") {
  auto m = gradcheck::random_model(3);
  Rng rng(9);
  for (int t = 0; t < 200; ++t) {
    oracle::Vec h(3), x(3);
    for (auto& v : h) v = rng.uniform() * 2 - 1;
    for (auto& v : x) v = (rng.uniform() * 2 - 1) * 50;
    const auto out = gru_step(m.encoder.forward, Tensor({3}, h), Tensor({3}, x));
    for (double v : out.values()) CHECK(std::abs(v) <= 1.0);
  }
}

TEST_CASE("encoder states and pooling match the loop oracle, with padding") {
  const auto m = gradcheck::random_model(11);
  const Sentence a{4, 5, 6, 4}, b{6, 5};
  Graph g(false);
  const auto bm = bind(g, m);
  const auto enc = encode(g, bm, padded(a, b));
  const auto& states = g.value(enc.states);
  CHECK(states.rows() == 6);
  CHECK(states.cols() == 8);
  const auto ea = oracle::encode(m, a), eb = oracle::encode(m, b);
  for (std::size_t i = 0; i < a.size(); ++i) check_close(column(states, static_cast<Eigen::Index>(i * 2)), ea.states[i]);
  for (std::size_t i = 0; i < b.size(); ++i)
    check_close(column(states, static_cast<Eigen::Index>(i * 2 + 1)), eb.states[i]);

  oracle::Vec mean_b(6, 0.0);
  for (const auto& s : eb.states)
    for (std::size_t k = 0; k < 6; ++k) mean_b[k] += s[k] / 2.0;
  check_close(column(g.value(enc.pooled), 1), mean_b);

  const auto h0 = initial_state(g, bm, enc);
  check_close(column(g.value(h0), 0), oracle::initial_state(m, ea));
  check_close(column(g.value(h0), 1), oracle::initial_state(m, eb));
}

TEST_CASE("mirrored directions give mirrored states on a palindrome") {
  auto m = gradcheck::random_model(4);
  for (auto [f, b] : {std::pair{&m.encoder.forward.W_z, &m.encoder.backward.W_z},
                      {&m.encoder.forward.U_z, &m.encoder.backward.U_z},
                      {&m.encoder.forward.W_r, &m.encoder.backward.W_r},
                      {&m.encoder.forward.U_r, &m.encoder.backward.U_r},
                      {&m.encoder.forward.W, &m.encoder.backward.W},
                      {&m.encoder.forward.U, &m.encoder.backward.U}})
    b->value = f->value;
  const Sentence s{4, 6, 5, 6, 4};
  Graph g(false);
  const auto enc = encode(g, bind(g, m), SourceBatch::single(s));
  const auto& st = g.value(enc.states);
  for (Eigen::Index i = 0; i < 5; ++i)
    for (Eigen::Index k = 0; k < 3; ++k) CHECK(st(k, i) == doctest::Approx(st(3 + k, 4 - i)));
}

TEST_CASE("attention weights form a distribution and context is a convex combination") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto m = gradcheck::random_model(seed);
    const Sentence src{4, 5, 6, 5, 6, 4};
    Graph g(false);
    const auto bm = bind(g, m);
    const auto enc = encode(g, bm, SourceBatch::single(src));
    Rng rng(seed);
    Matrix q(4, 1);
    for (Eigen::Index k = 0; k < 4; ++k) q(k, 0) = rng.uniform() * 4 - 2;
    const auto att = attend(g, bm, g.constant(q), enc, attention_keys(g, bm, enc));
    const auto& w = g.value(att.weights);
    CHECK(w.sum() == doctest::Approx(1.0));
    CHECK((w.array() >= 0).all());
    const auto& st = g.value(enc.states);
    const auto& c = g.value(att.context);
    for (Eigen::Index k = 0; k < c.rows(); ++k) {
      CHECK(c(k, 0) <= st.row(k).maxCoeff() + 1e-12);
      CHECK(c(k, 0) >= st.row(k).minCoeff() - 1e-12);
    }
    const auto ref = oracle::attend(m, column(q, 0), oracle::encode(m, src));
    check_close(column(w, 0), ref.weights);
    check_close(column(c, 0), ref.context);
  }
}

TEST_CASE("zero attention parameters give uniform weights") {
  auto m = gradcheck::random_model(2);
  m.decoder.attention.v_a.value.fill(0.0);
  Graph g(false);
  const auto bm = bind(g, m);
  const auto enc = encode(g, bm, SourceBatch::single(Sentence{4, 5, 6, 4}));
  const auto att = attend(g, bm, g.constant(Matrix::Ones(4, 1)), enc, attention_keys(g, bm, enc));
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(g.value(att.weights)(i, 0) == doctest::Approx(0.25));
}

TEST_CASE("a zero model gives zero logits and a zero state") {
  ModelShape shape;
  shape.source_vocab = 9;
  shape.target_vocab = 7;
  ModelParameters m(shape);
  Graph g(false);
  const auto bm = bind(g, m);
  const auto enc = encode(g, bm, SourceBatch::single(Sentence{4, 5}));
  const auto keys = attention_keys(g, bm, enc);
  const std::vector<TokenId> prev{Vocabulary::bos};
  const auto step = decoder_step(g, bm, prev, initial_state(g, bm, enc), enc, keys);
  CHECK(g.value(step.logits).rows() == 7);
  CHECK(g.value(step.logits).isZero());
  CHECK(g.value(step.state).isZero());
}

TEST_CASE("decoder step matches the loop oracle") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = gradcheck::random_model(seed);
    const Sentence src{5, 4, 6};
    Graph g(false);
    const auto bm = bind(g, m);
    const auto enc = encode(g, bm, SourceBatch::single(src));
    const auto keys = attention_keys(g, bm, enc);
    const auto oe = oracle::encode(m, src);
    Var h = initial_state(g, bm, enc);
    oracle::Vec oh = oracle::initial_state(m, oe);
    for (TokenId prev : {Vocabulary::bos, 5, 6, 4}) {
      const std::vector<TokenId> p{prev};
      const auto step = decoder_step(g, bm, p, h, enc, keys);
      const auto ref = oracle::decoder_step(m, prev, oh, oe);
      check_close(column(g.value(step.state), 0), ref.state);
      check_close(column(g.value(step.logits), 0), ref.logits);
      check_close(column(g.value(step.attention.weights), 0), ref.attention.weights);
      h = step.state;
      oh = ref.state;
    }
    const std::vector<TokenId> bad{99};
    CHECK_THROWS_AS(decoder_step(g, bm, bad, h, enc, keys), std::out_of_range);
  }
}

TEST_CASE("initialization is seeded, bounded, and leaves biases at zero") {
  ModelShape shape;
  shape.source_vocab = 20;
  shape.target_vocab = 30;
  ModelParameters a(shape), b(shape), c(shape);
  a.initialize(5);
  b.initialize(5);
  c.initialize(6);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool differs = false;
  for (std::size_t k = 0; k < pa.size(); ++k) {
    const auto& t = pa.items()[k]->value;
    CHECK(t == pb.items()[k]->value);
    differs = differs || !(t == pc.items()[k]->value);
    const auto& name = pa.items()[k]->name;
    if (name.ends_with(".b") || name.ends_with(".b_o")) {
      for (double v : t.values()) CHECK(v == 0.0);
    } else {
      // a vector counts as one output unit
      const double fan = t.rank() == 1 ? static_cast<double>(t.size() + 1) : static_cast<double>(t.rows() + t.cols());
      const double s = std::sqrt(6.0 / fan);
      double mx = 0.0;
      for (double v : t.values()) mx = std::max(mx, std::abs(v));
      CHECK(mx <= s);
      CHECK(mx > 0.5 * s);
    }
  }
  CHECK(differs);
}

TEST_CASE("dropout is the identity at rate zero and preserves the mean otherwise") {
  Graph g(false);
  const Var x = g.constant(Matrix::Ones(200, 50));
  CHECK(g.value(dropout(g, x, {})).isApprox(Matrix::Ones(200, 50)));
  Rng rng(1);
  const auto& y = g.value(dropout(g, x, {0.2, &rng}));
  CHECK(y.mean() == doctest::Approx(1.0).epsilon(0.03));
  for (Eigen::Index i = 0; i < y.size(); ++i) CHECK((y.data()[i] == 0.0 || std::abs(y.data()[i] - 1.25) < 1e-12));
  CHECK_THROWS_AS(dropout(g, x, {1.0, &rng}), std::invalid_argument);
}

TEST_CASE("checkpoint round trip is exact") {
  ModelShape shape;
  shape.source_vocab = 10;
  shape.target_vocab = 12;
  shape.embed = 3;
  shape.encoder_hidden = 4;
  shape.decoder_hidden = 5;
  shape.attention = 2;
  shape.readout = 6;
  ModelParameters m(shape);
  m.initialize(3);
  m.decoder.output.b.value[2] = 0.125;
  const auto bytes = serialize_checkpoint(m, 77, 88);
  auto back = parse_checkpoint(bytes);
  CHECK(back.model.shape() == shape);
  CHECK(back.source_vocab_hash == 77);
  CHECK(back.target_vocab_hash == 88);
  const auto pa = m.parameters();
  const auto pb = back.model.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t k = 0; k < pa.size(); ++k) CHECK(pa.items()[k]->value == pb.items()[k]->value);
  CHECK(serialize_checkpoint(back.model, 77, 88) == bytes);
}

TEST_CASE("corrupted checkpoints are rejected") {
  ModelShape shape;
  shape.source_vocab = shape.target_vocab = 6;
  shape.embed = shape.encoder_hidden = shape.decoder_hidden = shape.attention = shape.readout = 2;
  ModelParameters m(shape);
  m.initialize(1);
  const auto bytes = serialize_checkpoint(m, 1, 2);
  CHECK_THROWS(parse_checkpoint(bytes.substr(0, bytes.size() - 3)));
  CHECK_THROWS(parse_checkpoint(bytes + "x"));
  CHECK_THROWS(parse_checkpoint("XXXX" + bytes.substr(4)));
  CHECK_THROWS(parse_checkpoint(""));
  for (std::size_t pos : {std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    auto bad = bytes;
    bad[pos] = static_cast<char>(bad[pos] ^ 0x10);
    CHECK_THROWS(parse_checkpoint(bad));
  }

  const auto dir = std::filesystem::temp_directory_path() / "seq2align_model_tests";
  std::filesystem::create_directories(dir);
  const Vocabulary sv({"a", "b"}), tv({"c", "d"});
  save_checkpoint(dir / "m.bin", m, sv.content_hash(), tv.content_hash());
  CHECK_NOTHROW(load_checkpoint(dir / "m.bin", sv, tv));
  CHECK_THROWS_WITH(load_checkpoint(dir / "m.bin", tv, tv), doctest::Contains("source vocabulary"));
  CHECK_THROWS_WITH(load_checkpoint(dir / "m.bin", sv, sv), doctest::Contains("target vocabulary"));
  CHECK_THROWS(load_checkpoint(dir / "missing.bin"));
}

TEST_CASE("sentence loss gradients match finite differences on a tiny model") {
  auto m = gradcheck::random_model(21, 2, 2);
  ParallelCorpus c{{{{4, 5, 4}, {5, 4}}, {{5}, {4, 4, 5}}}, Vocabulary({"a", "b"}), Vocabulary({"a", "b"})};
  const std::vector<std::size_t> idx{0, 1};
  const auto batch = make_batch(c, idx);
  const auto r = gradcheck::check_sentence_loss(m, batch);
  CHECK(r.checked == m.parameters().value_count());
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("encoder and attention edge cases") {
  ModelShape shape;
  shape.source_vocab = shape.target_vocab = 6;
  shape.embed = 2;
  shape.encoder_hidden = 3;
  shape.decoder_hidden = 4;
  shape.attention = 2;
  const ModelParameters zero(shape);
  Graph g(false);
  const auto bz = bind(g, zero);
  const auto ez = encode(g, bz, SourceBatch::single(Sentence{4, 5, 4}));
  CHECK(g.value(ez.states).isZero());
  CHECK(g.value(initial_state(g, bz, ez)).isZero());

  const auto m = gradcheck::random_model(31);
  const auto bm = bind(g, m);
  const auto one = encode(g, bm, SourceBatch::single(Sentence{5}));
  CHECK(g.value(one.states).rows() == 6);
  CHECK(g.value(one.states).cols() == 1);
  const auto att = attend(g, bm, g.constant(Matrix::Ones(4, 1)), one, attention_keys(g, bm, one));
  CHECK(g.value(att.weights)(0, 0) == doctest::Approx(1.0));
  CHECK(g.value(att.context).isApprox(g.value(one.states)));

  const Sentence empty;
  CHECK_THROWS_AS(encode(g, bm, SourceBatch::single(empty)), std::invalid_argument);
}
