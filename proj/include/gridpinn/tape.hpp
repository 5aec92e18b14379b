// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode tape over matrix-valued nodes. Every node holds a primal
// value and a tangent with respect to one scalar input (time), so the
// forward pass yields d/dt of every intermediate. The tangent arithmetic is
// part of the recorded graph: the reverse sweep propagates adjoints of both
// channels and therefore differentiates losses that use time derivatives.
//
// Columns are independent samples; parameters are shared across columns.

#pragma once

#include "gridpinn/core.hpp"
#include "gridpinn/psmodels.hpp"

#include <functional>
#include <span>
#include <vector>

namespace gridpinn::nn {

using NodeId = std::size_t;

/// A matrix view into a flat parameter vector. `offset` locates the block
/// inside the gradient vector, column-major.
struct ParamRef {
  const double* data = nullptr;
  Index rows = 0;
  Index cols = 0;
  Index offset = 0;

  Eigen::Map<const Matrix> map() const { return {data, rows, cols}; }
};

class Tape {
 public:
  explicit Tape(Index n_params = 0);

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Constant input with zero tangent.
  NodeId input(Matrix value);
  /// Constant input with an explicit tangent seed (same shape as value).
  NodeId input(Matrix value, Matrix tangent);

  // -- primitives -----------------------------------------------------------

  /// y = W x + b (b broadcast over columns).
  NodeId linear(NodeId x, const ParamRef& weight, const ParamRef& bias);
  /// Elementwise tanh.
  NodeId tanh(NodeId x);
  /// y = scale .* x + shift, row-wise broadcast.
  NodeId affine_rows(NodeId x, const Vector& scale, const Vector& shift);
  /// y = scale .* x, row-wise broadcast.
  NodeId scale_rows(NodeId x, const Vector& scale);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  /// Value of y is the tangent of x (the time derivative). The second time
  /// derivative is not tracked: y carries a zero tangent.
  NodeId time_rate(NodeId x);
  /// Column-wise model right-hand side f(x_k, t_k). The reverse sweep uses
  /// the model Jacobian; adjoints on the tangent of the result are rejected
  /// because they would need second derivatives of the model.
  NodeId model_rhs(NodeId x, const models::DynamicsModel& model,
                   const Vector& times);
  /// Scalar sum of squares of all entries divided by `divisor`.
  NodeId sum_squares(NodeId x, double divisor);
  /// Scalar max over columns of the squared column norm.
  NodeId max_column_square(NodeId x);
  /// Scalar sum_i coeffs_i * s_i over scalar nodes.
  NodeId weighted_sum(std::span<const NodeId> scalars,
                      std::span<const double> coeffs);

  // -- access ----------------------------------------------------------------

  const Matrix& value(NodeId id) const { return nodes_.at(id).value; }
  const Matrix& tangent(NodeId id) const { return nodes_.at(id).tangent; }
  double scalar(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }
  Index n_params() const { return grad_.size(); }

  /// Reverse sweep from a 1x1 node. Accumulates into param_grad(); call
  /// clear_gradients() between independent sweeps. Throws ContractError
  /// for a non-scalar root.
  void backward(NodeId root);
  const Vector& param_grad() const { return grad_; }
  void clear_gradients();

 private:
  struct Node {
    Matrix value;
    Matrix tangent;
    Matrix adj_value;    // empty means zero
    Matrix adj_tangent;  // empty means zero
    bool needs_grad = false;
    std::function<void(Tape&, NodeId)> backward;
  };

  NodeId push(Node node);
  Node& node(NodeId id) { return nodes_[id]; }
  Eigen::Map<Matrix> grad_block(const ParamRef& p);

  template <typename Expr>
  static void accumulate(Matrix& dst, const Expr& expr) {
    // Operands never alias an adjoint buffer, so products may write in place.
    if (dst.size() == 0) {
      dst.noalias() = expr;
    } else {
      dst.noalias() += expr;
    }
  }

  std::vector<Node> nodes_;
  Vector grad_;
  std::vector<std::vector<Matrix>> jacobians_;  // owned by model_rhs nodes
};

}  // namespace gridpinn::nn
