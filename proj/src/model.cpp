#include "seq2align/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace seq2align {

namespace {

Parameter make(const std::string& name, std::vector<std::size_t> shape) {
  return Parameter(name, Tensor(std::move(shape)));
}

GruCellParams make_cell(const std::string& prefix, std::size_t input, std::size_t hidden) {
  return GruCellParams{make(prefix + ".W_z", {hidden, input}), make(prefix + ".U_z", {hidden, hidden}),
                       make(prefix + ".W_r", {hidden, input}), make(prefix + ".U_r", {hidden, hidden}),
                       make(prefix + ".W", {hidden, input}),   make(prefix + ".U", {hidden, hidden})};
}

template <typename Cell, typename Fn>
void each_cell_param(Cell& c, Fn&& fn) {
  fn(c.W_z);
  fn(c.U_z);
  fn(c.W_r);
  fn(c.U_r);
  fn(c.W);
  fn(c.U);
}

/// Canonical parameter order; checkpoints and initialization follow it.
template <typename Model, typename Fn>
void each_param(Model& m, Fn&& fn) {
  fn(m.encoder.embedding);
  each_cell_param(m.encoder.forward, fn);
  each_cell_param(m.encoder.backward, fn);
  fn(m.decoder.embedding);
  each_cell_param(m.decoder.gru1, fn);
  each_cell_param(m.decoder.gru2, fn);
  fn(m.decoder.attention.v_a);
  fn(m.decoder.attention.U_a);
  fn(m.decoder.attention.W_a);
  fn(m.decoder.W_init);
  fn(m.decoder.output.O_h);
  fn(m.decoder.output.O_y);
  fn(m.decoder.output.O_c);
  fn(m.decoder.output.b_o);
  fn(m.decoder.output.V);
  fn(m.decoder.output.b);
}

bool is_bias(const Parameter& p) { return p.name.ends_with(".b_o") || p.name.ends_with(".b"); }

template <typename Cell>
BoundGru bind_cell(Graph& g, Cell& c) {
  const Var w[] = {g.param(c.W_z), g.param(c.W_r), g.param(c.W)};
  const Var u[] = {g.param(c.U_z), g.param(c.U_r), g.param(c.U)};
  return BoundGru{g.concat_rows(w), g.concat_rows(u)};
}

template <typename Model>
BoundModel bind_model(Graph& g, Model& m) {
  BoundModel b;
  b.shape = &m.shape();
  b.source_embedding = g.param(m.encoder.embedding);
  b.encoder_forward = bind_cell(g, m.encoder.forward);
  b.encoder_backward = bind_cell(g, m.encoder.backward);
  b.target_embedding = g.param(m.decoder.embedding);
  b.gru1 = bind_cell(g, m.decoder.gru1);
  b.gru2 = bind_cell(g, m.decoder.gru2);
  b.v_a = g.param(m.decoder.attention.v_a);
  b.U_a = g.param(m.decoder.attention.U_a);
  b.W_a = g.param(m.decoder.attention.W_a);
  b.W_init = g.param(m.decoder.W_init);
  b.O_h = g.param(m.decoder.output.O_h);
  b.O_y = g.param(m.decoder.output.O_y);
  b.O_c = g.param(m.decoder.output.O_c);
  b.b_o = g.param(m.decoder.output.b_o);
  b.V = g.param(m.decoder.output.V);
  b.b = g.param(m.decoder.output.b);
  return b;
}

}  // namespace

void ModelShape::validate() const {
  if (source_vocab <= Vocabulary::reserved_count || target_vocab <= Vocabulary::reserved_count)
    throw std::invalid_argument("ModelShape: vocabularies need at least one content token");
  if (!embed || !encoder_hidden || !decoder_hidden || !attention || !readout)
    throw std::invalid_argument("ModelShape: layer widths must be positive");
}

ModelParameters::ModelParameters(const ModelShape& s) : shape_(s) {
  s.validate();
  const auto ctx = 2 * s.encoder_hidden;
  encoder.embedding = make("encoder.embedding", {s.source_vocab, s.embed});
  encoder.forward = make_cell("encoder.forward", s.embed, s.encoder_hidden);
  encoder.backward = make_cell("encoder.backward", s.embed, s.encoder_hidden);
  decoder.embedding = make("decoder.embedding", {s.target_vocab, s.embed});
  decoder.gru1 = make_cell("decoder.gru1", s.embed, s.decoder_hidden);
  decoder.gru2 = make_cell("decoder.gru2", ctx, s.decoder_hidden);
  decoder.attention.v_a = make("decoder.attention.v_a", {s.attention});
  decoder.attention.U_a = make("decoder.attention.U_a", {s.attention, s.decoder_hidden});
  decoder.attention.W_a = make("decoder.attention.W_a", {s.attention, ctx});
  decoder.W_init = make("decoder.W_init", {s.decoder_hidden, ctx});
  decoder.output.O_h = make("decoder.output.O_h", {s.readout, s.decoder_hidden});
  decoder.output.O_y = make("decoder.output.O_y", {s.readout, s.embed});
  decoder.output.O_c = make("decoder.output.O_c", {s.readout, ctx});
  decoder.output.b_o = make("decoder.output.b_o", {s.readout});
  decoder.output.V = make("decoder.output.V", {s.target_vocab, s.readout});
  decoder.output.b = make("decoder.output.b", {s.target_vocab});
}

void ModelParameters::initialize(std::uint64_t seed) {
  Rng rng(seed);
  each_param(*this, [&](Parameter& p) {
    p.zero_grad();
    if (is_bias(p)) {
      p.value.fill(0.0);
      return;
    }
    const double fan = p.value.rank() == 1 ? static_cast<double>(p.value.rows() + 1)
                                           : static_cast<double>(p.value.rows() + p.value.cols());
    const double s = std::sqrt(6.0 / fan);
    for (auto& v : p.value.values()) v = (2.0 * rng.uniform() - 1.0) * s;
  });
}

void ModelParameters::zero() {
  each_param(*this, [](Parameter& p) {
    p.value.fill(0.0);
    p.zero_grad();
  });
}

ParameterSet ModelParameters::parameters() {
  ParameterSet set;
  each_param(*this, [&](Parameter& p) { set.add(p); });
  return set;
}

std::vector<const Parameter*> ModelParameters::parameters() const {
  std::vector<const Parameter*> out;
  each_param(*this, [&](const Parameter& p) { out.push_back(&p); });
  return out;
}

BoundGru bind(Graph& g, GruCellParams& cell) { return bind_cell(g, cell); }
BoundGru bind(Graph& g, const GruCellParams& cell) { return bind_cell(g, cell); }
BoundModel bind(Graph& g, ModelParameters& model) { return bind_model(g, model); }

BoundModel bind(Graph& g, const ModelParameters& model) {
  if (g.recording()) throw std::logic_error("bind: trainable graph needs a mutable model");
  return bind_model(g, model);
}

Var dropout(Graph& g, Var x, const Dropout& d) {
  if (!d.active()) return x;
  if (d.rate >= 1.0) throw std::invalid_argument("dropout rate must be below 1");
  const auto& v = g.value(x);
  const double keep = 1.0 - d.rate;
  Matrix mask(v.rows(), v.cols());
  for (Eigen::Index c = 0; c < mask.cols(); ++c)
    for (Eigen::Index r = 0; r < mask.rows(); ++r) mask(r, c) = d.rng->uniform() < keep ? 1.0 / keep : 0.0;
  return g.mul_constant(x, std::move(mask));
}

SourceBatch SourceBatch::single(std::span<const TokenId> source) {
  SourceBatch b;
  b.length = source.size();
  b.batch = 1;
  b.ids.assign(source.begin(), source.end());
  b.mask = Matrix::Ones(static_cast<Eigen::Index>(source.size()), 1);
  return b;
}

Var gru_step(Graph& g, const BoundGru& cell, Var h_prev, Var x) {
  return g.gru(g.matmul(cell.w, x), h_prev, cell.u);
}

EncoderOutput encode(Graph& g, const BoundModel& m, const SourceBatch& source, const Dropout& d) {
  if (source.length == 0 || source.batch == 0) throw std::invalid_argument("encode: empty source");
  const auto S = static_cast<Eigen::Index>(source.length);
  const auto B = static_cast<Eigen::Index>(source.batch);
  if (static_cast<Eigen::Index>(source.ids.size()) != S * B || source.mask.rows() != S ||
      source.mask.cols() != B)
    throw std::invalid_argument("encode: inconsistent source batch");
  const auto H = static_cast<Eigen::Index>(m.shape->encoder_hidden);

  Var emb = dropout(g, g.embedding(m.source_embedding, source.ids), d);
  Var wx_fwd = g.matmul(m.encoder_forward.w, emb);
  Var wx_bwd = g.matmul(m.encoder_backward.w, emb);

  std::vector<double> col_mask(static_cast<std::size_t>(B));
  auto mask_row = [&](Eigen::Index i) {
    for (Eigen::Index b = 0; b < B; ++b) col_mask[b] = source.mask(i, b);
    return std::span<const double>(col_mask);
  };

  std::vector<Var> fwd(static_cast<std::size_t>(S)), bwd(static_cast<std::size_t>(S));
  Var h = g.constant(Matrix::Zero(H, B));
  for (Eigen::Index i = 0; i < S; ++i) {
    Var next = g.gru(g.slice_cols(wx_fwd, i * B, B), h, m.encoder_forward.u);
    h = B == 1 && source.mask(i, 0) != 0.0 ? next : g.mask_blend(next, h, mask_row(i));
    fwd[i] = h;
  }
  h = g.constant(Matrix::Zero(H, B));
  for (Eigen::Index i = S; i-- > 0;) {
    Var next = g.gru(g.slice_cols(wx_bwd, i * B, B), h, m.encoder_backward.u);
    h = B == 1 && source.mask(i, 0) != 0.0 ? next : g.mask_blend(next, h, mask_row(i));
    bwd[i] = h;
  }
  const Var halves[] = {g.concat_cols(fwd), g.concat_cols(bwd)};
  EncoderOutput out;
  out.states = g.concat_rows(halves);
  out.pooled = g.masked_mean(out.states, source.mask);
  out.mask = source.mask;
  out.length = source.length;
  out.batch = source.batch;
  return out;
}

Var initial_state(Graph& g, const BoundModel& m, const EncoderOutput& enc) {
  return g.tanh(g.matmul(m.W_init, enc.pooled));
}

Var attention_keys(Graph& g, const BoundModel& m, const EncoderOutput& enc) {
  return g.matmul(m.W_a, enc.states);
}

Attention attend(Graph& g, const BoundModel& m, Var query, const EncoderOutput& enc, Var keys) {
  if (enc.length == 0) throw std::invalid_argument("attend: empty encoder output");
  Var scores = g.additive_scores(g.matmul(m.U_a, query), keys, m.v_a);
  Attention a;
  a.weights = g.softmax_columns(scores, enc.mask);
  a.context = g.weighted_sum(a.weights, enc.states);
  return a;
}

DecoderStep decoder_step(Graph& g, const BoundModel& m, std::span<const TokenId> previous, Var h_prev,
                         const EncoderOutput& enc, Var keys, const Dropout& d) {
  const auto vocab = static_cast<TokenId>(m.shape->target_vocab);
  for (auto id : previous)
    if (id < 0 || id >= vocab)
      throw std::out_of_range("decoder_step: token id " + std::to_string(id) + " outside target vocabulary");
  DecoderStep step;
  Var y = dropout(g, g.embedding(m.target_embedding, previous), d);
  step.intermediate = gru_step(g, m.gru1, h_prev, y);
  step.attention = attend(g, m, step.intermediate, enc, keys);
  step.state = gru_step(g, m.gru2, step.intermediate, step.attention.context);

  Var readout = g.add(g.matmul(m.O_h, dropout(g, step.state, d)), g.matmul(m.O_y, y));
  readout = g.add(readout, g.matmul(m.O_c, step.attention.context));
  readout = g.tanh(g.add_column(readout, m.b_o));
  step.logits = g.add_column(g.matmul(m.V, readout), m.b);
  return step;
}

Tensor gru_step(const GruCellParams& cell, const Tensor& h_prev, const Tensor& x) {
  if (h_prev.size() != cell.hidden() || x.size() != cell.input())
    throw std::invalid_argument("gru_step: state " + h_prev.shape_string() + " / input " +
                                x.shape_string() + " do not match cell");
  Graph g(false);
  BoundGru b = bind(g, cell);
  Var h = gru_step(g, b, g.constant(h_prev.to_matrix()), g.constant(x.to_matrix()));
  return Tensor({cell.hidden()}, std::vector<double>(g.value(h).data(), g.value(h).data() + cell.hidden()));
}

}  // namespace seq2align
