#include "seq2align/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace seq2align {

namespace {

std::string dims(const Matrix& m) {
  return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

Matrix sigmoid_matrix(const Matrix& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

}  // namespace

Var Graph::push(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var{nodes_.size() - 1};
}

Var Graph::push(Matrix value, std::initializer_list<Var> inputs,
                std::function<void(Graph&, const Matrix&)> backprop) {
  bool any = false;
  if (record_)
    for (auto v : inputs) any = any || needs(v);
  nodes_.push_back(Node{std::move(value), {}, any ? std::move(backprop) : nullptr, nullptr, any});
  return Var{nodes_.size() - 1};
}

Matrix& Graph::grad_buffer(Var v) {
  auto& node = nodes_[v.id];
  if (node.grad.size() == 0) node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

template <typename Expr>
void Graph::accumulate(Var v, const Expr& delta) {
  if (!needs(v)) return;
  auto& node = nodes_[v.id];
  if (node.grad.size() == 0)
    node.grad = delta;
  else
    node.grad += delta;
}

void Graph::check_same_shape(const char* op, Var a, Var b) const {
  const auto& x = value(a);
  const auto& y = value(b);
  if (x.rows() != y.rows() || x.cols() != y.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + dims(x) + " vs " + dims(y));
}

Var Graph::constant(Matrix value) { return push(std::move(value)); }

Var Graph::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{it->second};
  Var v = push(p.value.to_matrix());
  nodes_[v.id].param = &p;
  nodes_[v.id].requires_grad = record_;
  param_nodes_.emplace(&p, v.id);
  return v;
}

Var Graph::param(const Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{it->second};
  Var v = push(p.value.to_matrix());
  param_nodes_.emplace(&p, v.id);
  return v;
}

Var Graph::matmul(Var a, Var b) {
  const auto& x = value(a);
  const auto& y = value(b);
  if (x.cols() != y.rows())
    throw std::invalid_argument("matmul: incompatible shapes " + dims(x) + " and " + dims(y));
  Matrix out = x * y;
  return push(std::move(out), {a, b}, [a, b](Graph& g, const Matrix& grad) {
    if (g.needs(a)) g.grad_buffer(a).noalias() += grad * g.value(b).transpose();
    if (g.needs(b)) g.grad_buffer(b).noalias() += g.value(a).transpose() * grad;
  });
}

Var Graph::add(Var a, Var b) {
  check_same_shape("add", a, b);
  return push(value(a) + value(b), {a, b}, [a, b](Graph& g, const Matrix& grad) {
    g.accumulate(a, grad);
    g.accumulate(b, grad);
  });
}

Var Graph::sub(Var a, Var b) {
  check_same_shape("sub", a, b);
  return push(value(a) - value(b), {a, b}, [a, b](Graph& g, const Matrix& grad) {
    g.accumulate(a, grad);
    g.accumulate(b, -grad);
  });
}

Var Graph::mul(Var a, Var b) {
  check_same_shape("mul", a, b);
  return push(value(a).cwiseProduct(value(b)), {a, b}, [a, b](Graph& g, const Matrix& grad) {
    g.accumulate(a, grad.cwiseProduct(g.value(b)));
    g.accumulate(b, grad.cwiseProduct(g.value(a)));
  });
}

Var Graph::scale(Var a, double factor) {
  return push(value(a) * factor, {a},
              [a, factor](Graph& g, const Matrix& grad) { g.accumulate(a, grad * factor); });
}

Var Graph::one_minus(Var a) {
  return push((1.0 - value(a).array()).matrix(), {a},
              [a](Graph& g, const Matrix& grad) { g.accumulate(a, -grad); });
}

Var Graph::sigmoid(Var a) {
  Var out = push(sigmoid_matrix(value(a)), {a}, {});
  if (!needs(out)) return out;
  nodes_[out.id].backprop = [a, out](Graph& g, const Matrix& grad) {
    const auto& y = g.value(out).array();
    g.accumulate(a, (grad.array() * y * (1.0 - y)).matrix());
  };
  return out;
}

Var Graph::tanh(Var a) {
  Var out = push(value(a).array().tanh().matrix(), {a}, {});
  if (!needs(out)) return out;
  nodes_[out.id].backprop = [a, out](Graph& g, const Matrix& grad) {
    const auto& y = g.value(out).array();
    g.accumulate(a, (grad.array() * (1.0 - y.square())).matrix());
  };
  return out;
}

Var Graph::transpose(Var a) {
  return push(value(a).transpose(), {a},
              [a](Graph& g, const Matrix& grad) { g.accumulate(a, grad.transpose()); });
}

Var Graph::add_column(Var m, Var v) {
  const auto& x = value(m);
  const auto& c = value(v);
  if (c.cols() != 1 || c.rows() != x.rows())
    throw std::invalid_argument("add_column: cannot broadcast " + dims(c) + " over " + dims(x));
  Matrix out = x.colwise() + c.col(0);
  return push(std::move(out), {m, v}, [m, v](Graph& g, const Matrix& grad) {
    g.accumulate(m, grad);
    g.accumulate(v, grad.rowwise().sum());
  });
}

Var Graph::mul_constant(Var a, Matrix mask) {
  const auto& x = value(a);
  if (x.rows() != mask.rows() || x.cols() != mask.cols())
    throw std::invalid_argument("mul_constant: shape mismatch " + dims(x) + " vs " + dims(mask));
  Matrix out = x.cwiseProduct(mask);
  return push(std::move(out), {a}, [a, mask = std::move(mask)](Graph& g, const Matrix& grad) {
    g.accumulate(a, grad.cwiseProduct(mask));
  });
}

Var Graph::sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = value(a).sum();
  return push(std::move(out), {a}, [a](Graph& g, const Matrix& grad) {
    const auto& x = g.value(a);
    g.accumulate(a, Matrix::Constant(x.rows(), x.cols(), grad(0, 0)));
  });
}

Var Graph::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const auto cols = value(parts[0]).cols();
  Eigen::Index rows = 0;
  for (auto p : parts) {
    if (value(p).cols() != cols) throw std::invalid_argument("concat_rows: column counts differ");
    rows += value(p).rows();
  }
  Matrix out(rows, cols);
  Eigen::Index offset = 0;
  bool any = false;
  for (auto p : parts) {
    out.middleRows(offset, value(p).rows()) = value(p);
    offset += value(p).rows();
    any = any || needs(p);
  }
  Var result = push(std::move(out));
  if (record_ && any) {
    nodes_[result.id].requires_grad = true;
    nodes_[result.id].backprop = [list = std::vector<Var>(parts.begin(), parts.end())](
                                     Graph& g, const Matrix& grad) {
      Eigen::Index off = 0;
      for (auto p : list) {
        const auto r = g.value(p).rows();
        g.accumulate(p, grad.middleRows(off, r));
        off += r;
      }
    };
  }
  return result;
}

Var Graph::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const auto rows = value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (auto p : parts) {
    if (value(p).rows() != rows) throw std::invalid_argument("concat_cols: row counts differ");
    cols += value(p).cols();
  }
  Matrix out(rows, cols);
  Eigen::Index offset = 0;
  bool any = false;
  for (auto p : parts) {
    out.middleCols(offset, value(p).cols()) = value(p);
    offset += value(p).cols();
    any = any || needs(p);
  }
  Var result = push(std::move(out));
  if (record_ && any) {
    nodes_[result.id].requires_grad = true;
    nodes_[result.id].backprop = [list = std::vector<Var>(parts.begin(), parts.end())](
                                     Graph& g, const Matrix& grad) {
      Eigen::Index off = 0;
      for (auto p : list) {
        const auto c = g.value(p).cols();
        g.accumulate(p, grad.middleCols(off, c));
        off += c;
      }
    };
  }
  return result;
}

Var Graph::slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  const auto& x = value(a);
  if (start < 0 || count <= 0 || start + count > x.rows())
    throw std::invalid_argument("slice_rows: range out of bounds for " + dims(x));
  return push(x.middleRows(start, count), {a}, [a, start, count](Graph& g, const Matrix& grad) {
    g.grad_buffer(a).middleRows(start, count) += grad;
  });
}

Var Graph::slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  const auto& x = value(a);
  if (start < 0 || count <= 0 || start + count > x.cols())
    throw std::invalid_argument("slice_cols: range out of bounds for " + dims(x));
  return push(x.middleCols(start, count), {a}, [a, start, count](Graph& g, const Matrix& grad) {
    g.grad_buffer(a).middleCols(start, count) += grad;
  });
}

Var Graph::embedding(Var table, std::span<const int> ids) {
  const auto& t = value(table);
  Matrix out(t.cols(), static_cast<Eigen::Index>(ids.size()));
  for (std::size_t c = 0; c < ids.size(); ++c) {
    if (ids[c] < 0 || ids[c] >= t.rows())
      throw std::out_of_range("embedding: id " + std::to_string(ids[c]) + " outside table of " +
                              std::to_string(t.rows()) + " rows");
    out.col(static_cast<Eigen::Index>(c)) = t.row(ids[c]).transpose();
  }
  return push(std::move(out), {table},
              [table, list = std::vector<int>(ids.begin(), ids.end())](Graph& g, const Matrix& grad) {
                auto& buf = g.grad_buffer(table);
                for (std::size_t c = 0; c < list.size(); ++c)
                  buf.row(list[c]) += grad.col(static_cast<Eigen::Index>(c)).transpose();
              });
}

Var Graph::mask_blend(Var fresh, Var old, std::span<const double> column_mask) {
  check_same_shape("mask_blend", fresh, old);
  const auto& f = value(fresh);
  if (static_cast<Eigen::Index>(column_mask.size()) != f.cols())
    throw std::invalid_argument("mask_blend: mask length differs from column count");
  Eigen::RowVectorXd m = Eigen::Map<const Eigen::RowVectorXd>(column_mask.data(), f.cols());
  Matrix out = f.array().rowwise() * m.array() + value(old).array().rowwise() * (1.0 - m.array());
  return push(std::move(out), {fresh, old}, [fresh, old, m](Graph& g, const Matrix& grad) {
    if (g.needs(fresh)) g.accumulate(fresh, (grad.array().rowwise() * m.array()).matrix());
    if (g.needs(old)) g.accumulate(old, (grad.array().rowwise() * (1.0 - m.array())).matrix());
  });
}

Var Graph::softmax_columns(Var scores, const Matrix& mask) {
  const auto& s = value(scores);
  if (s.rows() != mask.rows() || s.cols() != mask.cols())
    throw std::invalid_argument("softmax_columns: mask shape " + dims(mask) + " vs " + dims(s));
  if (s.rows() == 0) throw std::invalid_argument("softmax_columns: empty input");
  Matrix out = Matrix::Zero(s.rows(), s.cols());
  for (Eigen::Index c = 0; c < s.cols(); ++c) {
    double max = -INFINITY;
    for (Eigen::Index r = 0; r < s.rows(); ++r)
      if (mask(r, c) != 0.0) max = std::max(max, s(r, c));
    if (max == -INFINITY) throw std::invalid_argument("softmax_columns: column fully masked");
    double total = 0.0;
    for (Eigen::Index r = 0; r < s.rows(); ++r)
      if (mask(r, c) != 0.0) total += out(r, c) = std::exp(s(r, c) - max);
    out.col(c) /= total;
  }
  Var result = push(std::move(out), {scores}, {});
  if (!needs(result)) return result;
  nodes_[result.id].backprop = [scores, result](Graph& g, const Matrix& grad) {
    const auto& y = g.value(result);
    Eigen::RowVectorXd dot = (y.cwiseProduct(grad)).colwise().sum();
    g.accumulate(scores, (y.array() * (grad.array().rowwise() - dot.array())).matrix());
  };
  return result;
}

Var Graph::cross_entropy(Var logits, std::span<const int> labels, std::span<const double> weights) {
  const auto& z = value(logits);
  if (static_cast<Eigen::Index>(labels.size()) != z.cols() || labels.size() != weights.size())
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) + " labels, " +
                                std::to_string(weights.size()) + " weights for logits " + dims(z));
  Matrix probs(z.rows(), z.cols());
  double loss = 0.0;
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const int label = labels[c];
    if (label < 0 || label >= z.rows())
      throw std::out_of_range("cross_entropy: label " + std::to_string(label) + " out of range");
    const double max = z.col(c).maxCoeff();
    probs.col(c) = (z.col(c).array() - max).exp();
    const double total = probs.col(c).sum();
    probs.col(c) /= total;
    if (weights[c] != 0.0) loss += weights[c] * (std::log(total) + max - z(label, c));
  }
  Matrix out(1, 1);
  out(0, 0) = loss;
  return push(std::move(out), {logits},
              [logits, probs = std::move(probs), lbl = std::vector<int>(labels.begin(), labels.end()),
               w = std::vector<double>(weights.begin(), weights.end())](Graph& g, const Matrix& grad) {
                Matrix delta = probs;
                for (Eigen::Index c = 0; c < delta.cols(); ++c) {
                  delta(lbl[c], c) -= 1.0;
                  delta.col(c) *= w[c] * grad(0, 0);
                }
                g.accumulate(logits, delta);
              });
}

Var Graph::gru(Var wx, Var h_prev, Var u_stack) {
  const auto& x = value(wx);
  const auto& h = value(h_prev);
  const auto& u = value(u_stack);
  const auto n = h.rows();
  if (x.rows() != 3 * n || x.cols() != h.cols() || u.rows() != 3 * n || u.cols() != n)
    throw std::invalid_argument("gru: inconsistent shapes wx " + dims(x) + ", h " + dims(h) +
                                ", U " + dims(u));
  Matrix uh = u * h;
  Matrix z = sigmoid_matrix(x.topRows(n) + uh.topRows(n));
  Matrix r = sigmoid_matrix(x.middleRows(n, n) + uh.middleRows(n, n));
  Matrix cand_u = uh.bottomRows(n);
  Matrix cand = (r.cwiseProduct(cand_u) + x.bottomRows(n)).array().tanh().matrix();
  Matrix out = (1.0 - z.array()) * cand.array() + z.array() * h.array();
  return push(std::move(out), {wx, h_prev, u_stack},
              [wx, h_prev, u_stack, n, z = std::move(z), r = std::move(r),
               cand_u = std::move(cand_u), cand = std::move(cand)](Graph& g, const Matrix& grad) {
                const auto& hp = g.value(h_prev);
                const auto cols = hp.cols();
                Matrix d_pre(3 * n, cols);
                // candidate branch
                Matrix d_cand = (grad.array() * (1.0 - z.array()) * (1.0 - cand.array().square())).matrix();
                Matrix d_r = d_cand.cwiseProduct(cand_u);
                d_pre.topRows(n) = (grad.array() * (hp.array() - cand.array()) * z.array() *
                                    (1.0 - z.array())).matrix();
                d_pre.middleRows(n, n) = (d_r.array() * r.array() * (1.0 - r.array())).matrix();
                d_pre.bottomRows(n) = d_cand.cwiseProduct(r);
                // d_pre rows 0..2n are gradients of pre-activations for z, r; the
                // bottom block is the gradient w.r.t. U h.
                g.accumulate(wx, (Matrix(3 * n, cols) << d_pre.topRows(2 * n), d_cand).finished());
                if (g.needs(u_stack)) g.grad_buffer(u_stack).noalias() += d_pre * hp.transpose();
                if (g.needs(h_prev)) {
                  Matrix dh = (grad.array() * z.array()).matrix();
                  dh.noalias() += g.value(u_stack).transpose() * d_pre;
                  g.accumulate(h_prev, dh);
                }
              });
}

Var Graph::additive_scores(Var query, Var keys, Var v) {
  const auto& q = value(query);
  const auto& k = value(keys);
  const auto& a = value(v);
  const auto batch = q.cols();
  if (k.rows() != q.rows() || batch == 0 || k.cols() % batch != 0 || k.cols() == 0 ||
      a.rows() != q.rows() || a.cols() != 1)
    throw std::invalid_argument("additive_scores: inconsistent shapes query " + dims(q) + ", keys " +
                                dims(k) + ", v " + dims(a));
  const auto positions = k.cols() / batch;
  Matrix act(k.rows(), k.cols());
  Matrix out(positions, batch);
  for (Eigen::Index i = 0; i < positions; ++i) {
    auto block = act.middleCols(i * batch, batch);
    block = (k.middleCols(i * batch, batch) + q).array().tanh().matrix();
    out.row(i).noalias() = a.col(0).transpose() * block;
  }
  return push(std::move(out), {query, keys, v},
              [query, keys, v, batch, positions, act = std::move(act)](Graph& g, const Matrix& grad) {
                const auto& a = g.value(v);
                Matrix d_act(act.rows(), act.cols());
                for (Eigen::Index i = 0; i < positions; ++i) {
                  auto block = d_act.middleCols(i * batch, batch);
                  block.noalias() = a.col(0) * grad.row(i);
                  block.array() *= 1.0 - act.middleCols(i * batch, batch).array().square();
                }
                if (g.needs(v)) {
                  Matrix dv = Matrix::Zero(a.rows(), 1);
                  for (Eigen::Index i = 0; i < positions; ++i)
                    dv.noalias() += act.middleCols(i * batch, batch) * grad.row(i).transpose();
                  g.accumulate(v, dv);
                }
                if (g.needs(query)) {
                  Matrix dq = Matrix::Zero(act.rows(), batch);
                  for (Eigen::Index i = 0; i < positions; ++i) dq += d_act.middleCols(i * batch, batch);
                  g.accumulate(query, dq);
                }
                g.accumulate(keys, d_act);
              });
}

Var Graph::weighted_sum(Var weights, Var states) {
  const auto& w = value(weights);
  const auto& s = value(states);
  const auto batch = w.cols();
  const auto positions = w.rows();
  if (s.cols() != positions * batch)
    throw std::invalid_argument("weighted_sum: weights " + dims(w) + " do not cover states " + dims(s));
  Matrix out = Matrix::Zero(s.rows(), batch);
  for (Eigen::Index i = 0; i < positions; ++i)
    out.array() += s.middleCols(i * batch, batch).array().rowwise() * w.row(i).array();
  return push(std::move(out), {weights, states},
              [weights, states, batch, positions](Graph& g, const Matrix& grad) {
                const auto& w = g.value(weights);
                const auto& s = g.value(states);
                if (g.needs(weights)) {
                  Matrix dw(positions, batch);
                  for (Eigen::Index i = 0; i < positions; ++i)
                    dw.row(i) = s.middleCols(i * batch, batch).cwiseProduct(grad).colwise().sum();
                  g.accumulate(weights, dw);
                }
                if (g.needs(states)) {
                  auto& buf = g.grad_buffer(states);
                  for (Eigen::Index i = 0; i < positions; ++i)
                    buf.middleCols(i * batch, batch).array() += grad.array().rowwise() * w.row(i).array();
                }
              });
}

Var Graph::masked_mean(Var states, const Matrix& mask) {
  const auto& s = value(states);
  const auto positions = mask.rows();
  const auto batch = mask.cols();
  if (s.cols() != positions * batch)
    throw std::invalid_argument("masked_mean: mask " + dims(mask) + " does not cover states " + dims(s));
  Eigen::RowVectorXd counts = mask.colwise().sum();
  for (Eigen::Index b = 0; b < batch; ++b)
    if (counts(b) == 0.0) throw std::invalid_argument("masked_mean: column with no positions");
  Matrix coeff = mask.array().rowwise() / counts.array();
  Matrix out = Matrix::Zero(s.rows(), batch);
  for (Eigen::Index i = 0; i < positions; ++i)
    out.array() += s.middleCols(i * batch, batch).array().rowwise() * coeff.row(i).array();
  return push(std::move(out), {states},
              [states, batch, positions, coeff = std::move(coeff)](Graph& g, const Matrix& grad) {
                auto& buf = g.grad_buffer(states);
                for (Eigen::Index i = 0; i < positions; ++i)
                  buf.middleCols(i * batch, batch).array() += grad.array().rowwise() * coeff.row(i).array();
              });
}

Var Graph::tile_positions(Var a, Eigen::Index copies) {
  const auto& x = value(a);
  if (copies <= 0) throw std::invalid_argument("tile_positions: copies must be positive");
  Matrix out(x.rows(), x.cols() * copies);
  for (Eigen::Index i = 0; i < x.cols(); ++i) out.middleCols(i * copies, copies) = x.col(i).replicate(1, copies);
  return push(std::move(out), {a}, [a, copies](Graph& g, const Matrix& grad) {
    auto& buf = g.grad_buffer(a);
    for (Eigen::Index i = 0; i < buf.cols(); ++i)
      buf.col(i) += grad.middleCols(i * copies, copies).rowwise().sum();
  });
}

void Graph::backward(Var loss) {
  if (!record_) throw std::logic_error("backward: graph was built without gradient recording");
  const auto& l = value(loss);
  if (l.rows() != 1 || l.cols() != 1)
    throw std::invalid_argument("backward: loss must be a scalar, got " + dims(l));
  if (!needs(loss)) return;
  grad_buffer(loss)(0, 0) += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.backprop && node.grad.size() != 0) node.backprop(*this, node.grad);
  }
  for (auto& node : nodes_) {
    if (node.param && node.grad.size() != 0) node.param->gradient.view() += node.grad;
  }
}

}  // namespace seq2align
