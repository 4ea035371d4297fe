#pragma once

#include "seq2align/tensor.hpp"

#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

namespace seq2align {

/// Handle to a node on a Graph.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Reverse-mode tape. Node values are column-major matrices; batched
/// quantities keep one example per column. Nodes are appended in evaluation
/// order, so backward() is a single reverse sweep.
///
/// A graph built with record_gradients = false evaluates the same ops without
/// storing any backward closures (inference mode).
class Graph {
 public:
  explicit Graph(bool record_gradients = true) : record_(record_gradients) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }
  std::size_t node_count() const { return nodes_.size(); }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient accumulated at a node by backward(); empty if none reached it.
  const Matrix& gradient(Var v) const { return nodes_[v.id].grad; }

  // Leaves.
  Var constant(Matrix value);
  /// Leaf bound to a parameter; repeated calls return the same node. Rank-1
  /// parameters become column vectors.
  Var param(Parameter& p);
  /// Read-only binding; the leaf never receives a gradient.
  Var param(const Parameter& p);

  // Primitives.
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var one_minus(Var a);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var transpose(Var a);
  /// m + v broadcast over columns; v is [rows x 1].
  Var add_column(Var m, Var v);
  /// Elementwise product with a fixed matrix (dropout masks).
  Var mul_constant(Var a, Matrix mask);
  Var sum(Var a);

  Var concat_rows(std::span<const Var> parts);
  Var concat_cols(std::span<const Var> parts);
  Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
  Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);

  /// Gathers rows of a [vocab x dim] table into columns: result [dim x ids.size()].
  Var embedding(Var table, std::span<const int> ids);

  /// Per column: fresh * m + old * (1 - m), with m[c] in {0, 1}.
  Var mask_blend(Var fresh, Var old, std::span<const double> column_mask);

  /// Column-wise softmax over rows with mask(r, c) == 0 entries excluded
  /// (they receive probability 0). Every column needs one unmasked entry.
  Var softmax_columns(Var scores, const Matrix& mask);

  /// sum_c weight[c] * -log softmax(logits.col(c))[labels[c]].
  Var cross_entropy(Var logits, std::span<const int> labels, std::span<const double> weights);

  // Fused layer ops; each has a hand-derived backward and is checked against
  // the primitive composition in the tests.

  /// GRU transition. wx holds [W_z x; W_r x; W x] stacked ([3h x B]),
  /// u_stack holds [U_z; U_r; U] ([3h x h]).
  Var gru(Var wx, Var h_prev, Var u_stack);

  /// Additive attention scores: out(i, b) = v^T tanh(query.col(b) + keys.col(i*B + b)),
  /// for positions i < keys.cols() / B. Result [positions x B].
  Var additive_scores(Var query, Var keys, Var v);

  /// out.col(b) = sum_i weights(i, b) * states.col(i*B + b). Result [dim x B].
  Var weighted_sum(Var weights, Var states);

  /// out.col(b) = mean over i with mask(i, b) != 0 of states.col(i*B + b).
  Var masked_mean(Var states, const Matrix& mask);

  /// Repeats each position block: out.col(i*copies + k) = a.col(i) for a [d x positions].
  Var tile_positions(Var a, Eigen::Index copies);

  /// Reverse sweep from a 1x1 node; adds d(loss)/d(param) into each bound
  /// Parameter's gradient.
  void backward(Var loss);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Graph&, const Matrix&)> backprop;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Matrix value);
  /// Records backprop only if recording and some input requires a gradient.
  Var push(Matrix value, std::initializer_list<Var> inputs,
           std::function<void(Graph&, const Matrix&)> backprop);
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }
  template <typename Expr>
  void accumulate(Var v, const Expr& delta);
  Matrix& grad_buffer(Var v);
  void check_same_shape(const char* op, Var a, Var b) const;

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

}  // namespace seq2align
