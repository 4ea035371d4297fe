#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace seq2align {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = Eigen::MatrixXd;

/// Dense double tensor, row-major. Rank-1 tensors behave as column vectors
/// wherever a matrix view is needed.
class Tensor {
 public:
  Tensor() = default;
  /// Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<std::size_t> shape);
  /// Takes ownership of values; rejects count mismatch and non-finite values.
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor from_matrix(const Matrix& m);
  static Tensor from_vector(const Eigen::VectorXd& v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  /// Leading dimension; for rank-2 tensors, rows() * cols() == size().
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }

  Eigen::Map<const RowMajorMatrix> view() const;
  Eigen::Map<RowMajorMatrix> view();
  Matrix to_matrix() const { return view(); }

  void fill(double value);
  bool all_finite() const;
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

/// A named learnable tensor with its gradient buffer.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor value;
  Tensor gradient;

  void zero_grad() { gradient.fill(0.0); }
};

/// Ordered, non-owning collection of parameters with unique names.
class ParameterSet {
 public:
  void add(Parameter& p);
  std::span<Parameter* const> items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t value_count() const;
  Parameter& find(const std::string& name) const;
  void zero_grad() const;

 private:
  std::vector<Parameter*> items_;
};

// Tensor-level primitives. All throw std::invalid_argument on shape errors.

Tensor matmul(const Tensor& a, const Tensor& b);

enum class UnaryOp { sigmoid, tanh };
enum class BinaryOp { mul, add, sub };

Tensor elementwise(UnaryOp op, const Tensor& a);
Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);

inline Tensor sigmoid(const Tensor& a) { return elementwise(UnaryOp::sigmoid, a); }
inline Tensor tanh(const Tensor& a) { return elementwise(UnaryOp::tanh, a); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::mul, a, b); }
inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::sub, a, b); }

/// Max-subtracted softmax of a rank-1 tensor.
Tensor softmax(const Tensor& v);

double sigmoid(double x);

}  // namespace seq2align
