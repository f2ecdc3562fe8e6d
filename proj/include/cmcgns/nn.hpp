#pragma once

// Parameter tensors and the two dense building blocks (linear map and
// two-layer perceptron) with explicit backward passes. Inputs are row-major
// in the sense that each row is one feature vector.

#include <functional>
#include <string>
#include <vector>

#include "cmcgns/common.hpp"
#include "cmcgns/rng.hpp"

namespace cmcgns {

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;

  Param() = default;
  Param(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using ParamVisitor = std::function<void(Param&)>;

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) in row-major fill order.
inline Matrix init_uniform(Index rows, Index cols, Index fan_in, CounterRng rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(std::max<Index>(fan_in, 1)));
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-a, a);
  return m;
}

inline Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

inline Matrix relu_backward(const Matrix& pre, const Matrix& grad) {
  return (pre.array() > 0.0).select(grad, 0.0);
}

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, Index in, Index out, CounterRng rng)
      : weight(name + ".weight", init_uniform(out, in, in, rng)),
        bias(name + ".bias", init_uniform(1, out, in, rng.split(0x62696173))) {}

  Index in_dim() const { return weight.value.cols(); }
  Index out_dim() const { return weight.value.rows(); }

  Matrix forward(const Matrix& x) const {
    require_dims(x.cols() == in_dim(), weight.name + ": input has " + std::to_string(x.cols()) +
                                           " columns, expected " + std::to_string(in_dim()));
    Matrix y = x * weight.value.transpose();
    y.rowwise() += bias.value.row(0);
    return y;
  }

  // Accumulates parameter gradients; returns dL/dx.
  Matrix backward(const Matrix& x, const Matrix& dy) {
    weight.grad.noalias() += dy.transpose() * x;
    bias.grad.row(0) += dy.colwise().sum();
    return dy * weight.value;
  }

  void visit(const ParamVisitor& f) {
    f(weight);
    f(bias);
  }

  Param weight;
  Param bias;
};

// Linear -> ReLU -> Linear.
class Mlp {
 public:
  struct Cache {
    Matrix x;
    Matrix pre;
    Matrix hidden;
  };

  Mlp() = default;
  Mlp(const std::string& name, Index in, Index hidden, Index out, CounterRng rng)
      : fc1(name + ".fc1", in, hidden, rng.split(1)), fc2(name + ".fc2", hidden, out, rng.split(2)) {}

  // Exact identity on R^dim: hidden width 2*dim with W1 = [I; -I], W2 = [I, -I].
  static Mlp identity(const std::string& name, Index dim) {
    Mlp m(name, dim, 2 * dim, dim, CounterRng(0));
    m.fc1.weight.value.setZero();
    m.fc1.weight.value.topRows(dim).setIdentity();
    m.fc1.weight.value.bottomRows(dim) = -Matrix::Identity(dim, dim);
    m.fc2.weight.value.setZero();
    m.fc2.weight.value.leftCols(dim).setIdentity();
    m.fc2.weight.value.rightCols(dim) = -Matrix::Identity(dim, dim);
    m.fc1.bias.value.setZero();
    m.fc2.bias.value.setZero();
    return m;
  }

  Index in_dim() const { return fc1.in_dim(); }
  Index out_dim() const { return fc2.out_dim(); }

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const {
    Matrix pre = fc1.forward(x);
    Matrix h = relu(pre);
    Matrix y = fc2.forward(h);
    if (cache) *cache = Cache{x, std::move(pre), std::move(h)};
    return y;
  }

  Matrix backward(const Cache& c, const Matrix& dy) {
    const Matrix dh = fc2.backward(c.hidden, dy);
    return fc1.backward(c.x, relu_backward(c.pre, dh));
  }

  void visit(const ParamVisitor& f) {
    fc1.visit(f);
    fc2.visit(f);
  }

  Linear fc1;
  Linear fc2;
};

}  // namespace cmcgns
