#include "seq2align/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace seq2align {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_shape(const std::vector<std::size_t>& shape) {
  if (shape.empty()) throw std::invalid_argument("Tensor: shape must have at least one dimension");
  for (auto d : shape)
    if (d == 0) throw std::invalid_argument("Tensor: dimensions must be positive");
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                                b.shape_string());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  values_.assign(product(shape_), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  check_shape(shape_);
  if (product(shape_) != values_.size())
    throw std::invalid_argument("Tensor: shape " + shape_string() + " needs " +
                                std::to_string(product(shape_)) + " values, got " +
                                std::to_string(values_.size()));
  if (!all_finite()) throw std::invalid_argument("Tensor: values must be finite");
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<double> values;
  const std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& row : rows) {
    if (row.size() != cols) throw std::invalid_argument("Tensor::matrix: ragged rows");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), cols}, std::move(values));
}

Tensor Tensor::from_matrix(const Matrix& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  t.view() = m;
  return t;
}

Tensor Tensor::from_vector(const Eigen::VectorXd& v) {
  Tensor t({static_cast<std::size_t>(v.size())});
  t.view() = v;
  return t;
}

std::size_t Tensor::rows() const { return shape_.empty() ? 0 : shape_[0]; }

std::size_t Tensor::cols() const {
  if (shape_.size() <= 1) return shape_.empty() ? 0 : 1;
  return values_.size() / shape_[0];
}

Eigen::Map<const RowMajorMatrix> Tensor::view() const {
  return {values_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
}

Eigen::Map<RowMajorMatrix> Tensor::view() {
  return {values_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
}

void Tensor::fill(double value) { std::fill(values_.begin(), values_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::string s = "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape_[i]);
  }
  return s + "]";
}

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)), gradient(value.shape()) {}

void ParameterSet::add(Parameter& p) {
  for (const auto* q : items_)
    if (q->name == p.name) throw std::invalid_argument("ParameterSet: duplicate name " + p.name);
  if (p.value.shape() != p.gradient.shape())
    throw std::invalid_argument("ParameterSet: gradient shape differs for " + p.name);
  items_.push_back(&p);
}

std::size_t ParameterSet::value_count() const {
  std::size_t n = 0;
  for (const auto* p : items_) n += p->value.size();
  return n;
}

Parameter& ParameterSet::find(const std::string& name) const {
  for (auto* p : items_)
    if (p->name == name) return *p;
  throw std::out_of_range("ParameterSet: no parameter named " + name);
}

void ParameterSet::zero_grad() const {
  for (auto* p : items_) p->zero_grad();
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw std::invalid_argument("matmul: incompatible shapes " + a.shape_string() + " and " +
                                b.shape_string());
  Tensor out({a.rows(), b.cols()});
  out.view().noalias() = a.view() * b.view();
  return out;
}

Tensor elementwise(UnaryOp op, const Tensor& a) {
  Tensor out = a;
  for (auto& v : out.values()) v = op == UnaryOp::sigmoid ? sigmoid(v) : std::tanh(v);
  return out;
}

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  const char* names[] = {"mul", "add", "sub"};
  require_same_shape(names[static_cast<int>(op)], a, b);
  Tensor out = a;
  auto lhs = out.values();
  auto rhs = b.values();
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    switch (op) {
      case BinaryOp::mul: lhs[i] *= rhs[i]; break;
      case BinaryOp::add: lhs[i] += rhs[i]; break;
      case BinaryOp::sub: lhs[i] -= rhs[i]; break;
    }
  }
  return out;
}

Tensor softmax(const Tensor& v) {
  if (v.empty()) throw std::invalid_argument("softmax: empty vector");
  if (v.rank() != 1) throw std::invalid_argument("softmax: expected rank-1, got " + v.shape_string());
  const auto in = v.values();
  const double max = *std::max_element(in.begin(), in.end());
  Tensor out({v.size()});
  double total = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) total += out[i] = std::exp(in[i] - max);
  for (auto& x : out.values()) x /= total;
  return out;
}

}  // namespace seq2align
