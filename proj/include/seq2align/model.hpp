#pragma once

#include "seq2align/autodiff.hpp"
#include "seq2align/corpus.hpp"
#include "seq2align/rng.hpp"
#include "seq2align/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace seq2align {

/// Layer widths. The defaults are desk-scale; the reference full-scale
/// translation setting is embed 512, hidden 1024.
struct ModelShape {
  std::size_t source_vocab = 0;
  std::size_t target_vocab = 0;
  std::size_t embed = 32;
  std::size_t encoder_hidden = 64;
  std::size_t decoder_hidden = 64;
  std::size_t attention = 64;
  std::size_t readout = 64;

  void validate() const;
  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

/// One GRU without biases:
///   z = sigmoid(W_z x + U_z h), r = sigmoid(W_r x + U_r h),
///   h~ = tanh(r o (U h) + W x), h' = (1 - z) o h~ + z o h.
struct GruCellParams {
  Parameter W_z, U_z, W_r, U_r, W, U;

  std::size_t hidden() const { return U.value.rows(); }
  std::size_t input() const { return W.value.cols(); }
};

struct EncoderParams {
  Parameter embedding;  // [source_vocab x embed]
  GruCellParams forward;
  GruCellParams backward;
};

struct AttentionParams {
  Parameter v_a;  // [attention]
  Parameter U_a;  // [attention x decoder_hidden]
  Parameter W_a;  // [attention x 2 * encoder_hidden]
};

/// logits = V tanh(O_h h + O_y y_prev + O_c c + b_o) + b
struct OutputParams {
  Parameter O_h, O_y, O_c, b_o, V, b;
};

struct DecoderParams {
  Parameter embedding;  // [target_vocab x embed]
  GruCellParams gru1;   // input: previous target embedding
  GruCellParams gru2;   // input: attention context
  AttentionParams attention;
  Parameter W_init;  // [decoder_hidden x 2 * encoder_hidden]
  OutputParams output;
};

class ModelParameters {
 public:
  ModelParameters() = default;
  /// All-zero weights of the given shape.
  explicit ModelParameters(const ModelShape& shape);

  /// Uniform in [-s, s], s = sqrt(6 / (fan_in + fan_out)), for every weight
  /// matrix and embedding table; biases stay zero.
  void initialize(std::uint64_t seed);
  void zero();

  const ModelShape& shape() const { return shape_; }
  /// Pointers into this object; invalidated if it is moved.
  ParameterSet parameters();
  std::vector<const Parameter*> parameters() const;

  EncoderParams encoder;
  DecoderParams decoder;

 private:
  ModelShape shape_;
};

/// Model weights bound to a graph, with the per-gate matrices of each GRU
/// stacked so one product covers all three gates.
struct BoundGru {
  Var w;  // [W_z; W_r; W]
  Var u;  // [U_z; U_r; U]
};

struct BoundModel {
  const ModelShape* shape = nullptr;
  Var source_embedding;
  BoundGru encoder_forward, encoder_backward;
  Var target_embedding;
  BoundGru gru1, gru2;
  Var v_a, U_a, W_a;
  Var W_init;
  Var O_h, O_y, O_c, b_o, V, b;
};

BoundGru bind(Graph& g, GruCellParams& cell);
BoundGru bind(Graph& g, const GruCellParams& cell);
/// Trainable binding: backward() writes into the model's gradients.
BoundModel bind(Graph& g, ModelParameters& model);
/// Read-only binding for inference.
BoundModel bind(Graph& g, const ModelParameters& model);

/// Inverted dropout; a null rng or zero rate is the identity.
struct Dropout {
  double rate = 0.0;
  Rng* rng = nullptr;
  bool active() const { return rng != nullptr && rate > 0.0; }
};

Var dropout(Graph& g, Var x, const Dropout& d);

/// Padded source ids, position-major: ids[i * batch + b]; mask(i, b) is 1 on
/// real tokens.
struct SourceBatch {
  std::size_t length = 0;
  std::size_t batch = 0;
  std::vector<TokenId> ids;
  Matrix mask;

  static SourceBatch single(std::span<const TokenId> source);
};

struct EncoderOutput {
  Var states;  // [2 * encoder_hidden x length * batch], column i * batch + b
  Var pooled;  // [2 * encoder_hidden x batch], mean over real positions
  Matrix mask;
  std::size_t length = 0;
  std::size_t batch = 0;
};

Var gru_step(Graph& g, const BoundGru& cell, Var h_prev, Var x);

EncoderOutput encode(Graph& g, const BoundModel& m, const SourceBatch& source, const Dropout& d = {});

Var initial_state(Graph& g, const BoundModel& m, const EncoderOutput& enc);

/// W_a applied to every encoder state; computed once per source batch.
Var attention_keys(Graph& g, const BoundModel& m, const EncoderOutput& enc);

struct Attention {
  Var weights;  // [length x batch]
  Var context;  // [2 * encoder_hidden x batch]
};

Attention attend(Graph& g, const BoundModel& m, Var query, const EncoderOutput& enc, Var keys);

struct DecoderStep {
  Var intermediate;  // state after the first GRU block
  Attention attention;
  Var state;   // state after the second GRU block
  Var logits;  // [target_vocab x batch]
};

/// One decoder transition for a batch of previous tokens.
DecoderStep decoder_step(Graph& g, const BoundModel& m, std::span<const TokenId> previous, Var h_prev,
                         const EncoderOutput& enc, Var keys, const Dropout& d = {});

// Single-example conveniences over an inference graph.

Tensor gru_step(const GruCellParams& cell, const Tensor& h_prev, const Tensor& x);

}  // namespace seq2align
