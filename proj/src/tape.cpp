// SPDX-License-Identifier: Apache-2.0

#include "gridpinn/tape.hpp"

#include "gridpinn/activation.hpp"

#include <cmath>

namespace gridpinn::nn {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": operand shapes differ");
  }
}

}  // namespace

Tape::Tape(Index n_params) : grad_(Vector::Zero(n_params)) {}

NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

Eigen::Map<Matrix> Tape::grad_block(const ParamRef& p) {
  if (p.offset < 0 || p.offset + p.rows * p.cols > grad_.size()) {
    throw ShapeError("tape: parameter block outside gradient vector");
  }
  return {grad_.data() + p.offset, p.rows, p.cols};
}

NodeId Tape::input(Matrix value) {
  Node n;
  n.tangent = Matrix::Zero(value.rows(), value.cols());
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::input(Matrix value, Matrix tangent) {
  require_same_shape(value, tangent, "input");
  Node n;
  n.value = std::move(value);
  n.tangent = std::move(tangent);
  return push(std::move(n));
}

double Tape::scalar(NodeId id) const {
  const Matrix& v = value(id);
  if (v.rows() != 1 || v.cols() != 1) throw ContractError("tape: node is not scalar");
  return v(0, 0);
}

NodeId Tape::linear(NodeId x, const ParamRef& weight, const ParamRef& bias) {
  const Node& xn = nodes_.at(x);
  if (weight.cols != xn.value.rows()) throw ShapeError("linear: weight/input mismatch");
  if (bias.rows != weight.rows || bias.cols != 1) throw ShapeError("linear: bias shape");
  const auto w = weight.map();
  const auto b = bias.map();
  Node y;
  y.value.noalias() = w * xn.value;
  y.value.colwise() += b.col(0);
  y.tangent.noalias() = w * xn.tangent;
  y.needs_grad = true;
  const bool x_needs = xn.needs_grad;
  y.backward = [x, weight, bias, x_needs](Tape& tape, NodeId self) {
    Node& yn = tape.node(self);
    Node& xn = tape.node(x);
    auto gw = tape.grad_block(weight);
    auto gb = tape.grad_block(bias);
    const auto w = weight.map();
    if (yn.adj_value.size() != 0) {
      gw.noalias() += yn.adj_value * xn.value.transpose();
      gb.col(0) += yn.adj_value.rowwise().sum();
      if (x_needs) accumulate(xn.adj_value, w.transpose() * yn.adj_value);
    }
    if (yn.adj_tangent.size() != 0) {
      gw.noalias() += yn.adj_tangent * xn.tangent.transpose();
      if (x_needs) accumulate(xn.adj_tangent, w.transpose() * yn.adj_tangent);
    }
  };
  return push(std::move(y));
}

NodeId Tape::tanh(NodeId x) {
  const Node& xn = nodes_.at(x);
  Node y;
  y.value = tanh_matrix(xn.value);
  y.tangent.resize(xn.tangent.rows(), xn.tangent.cols());
  {
    const double* yv = y.value.data();
    const double* xt = xn.tangent.data();
    double* yt = y.tangent.data();
    for (Index i = 0; i < y.value.size(); ++i) yt[i] = (1.0 - yv[i] * yv[i]) * xt[i];
  }
  y.needs_grad = xn.needs_grad;
  if (y.needs_grad) {
    y.backward = [x](Tape& tape, NodeId self) {
      Node& yn = tape.node(self);
      Node& xn = tape.node(x);
      const Index n = yn.value.size();
      const bool has_v = yn.adj_value.size() != 0;
      const bool has_t = yn.adj_tangent.size() != 0;
      const bool fresh_v = xn.adj_value.size() == 0;
      const bool fresh_t = xn.adj_tangent.size() == 0;
      if (fresh_v) xn.adj_value.resize(yn.value.rows(), yn.value.cols());
      if (has_t && fresh_t) xn.adj_tangent.resize(yn.value.rows(), yn.value.cols());
      const double* yv = yn.value.data();
      const double* xt = xn.tangent.data();
      const double* av = has_v ? yn.adj_value.data() : nullptr;
      const double* at = has_t ? yn.adj_tangent.data() : nullptr;
      double* bv = xn.adj_value.data();
      double* bt = has_t ? xn.adj_tangent.data() : nullptr;
      // y = tanh(u), yT = d uT with d = 1 - y^2 and dd/du = -2 y d.
      for (Index i = 0; i < n; ++i) {
        const double d = 1.0 - yv[i] * yv[i];
        double gv = has_v ? d * av[i] : 0.0;
        if (has_t) {
          gv -= 2.0 * yv[i] * d * xt[i] * at[i];
          bt[i] = fresh_t ? d * at[i] : bt[i] + d * at[i];
        }
        bv[i] = fresh_v ? gv : bv[i] + gv;
      }
    };
  }
  return push(std::move(y));
}

NodeId Tape::affine_rows(NodeId x, const Vector& scale, const Vector& shift) {
  const Node& xn = nodes_.at(x);
  if (scale.size() != xn.value.rows() || shift.size() != xn.value.rows()) {
    throw ShapeError("affine_rows: vector length mismatch");
  }
  Node y;
  y.value = (xn.value.array().colwise() * scale.array()).matrix();
  y.value.colwise() += shift;
  y.tangent = (xn.tangent.array().colwise() * scale.array()).matrix();
  y.needs_grad = xn.needs_grad;
  if (y.needs_grad) {
    y.backward = [x, scale](Tape& tape, NodeId self) {
      Node& yn = tape.node(self);
      Node& xn = tape.node(x);
      if (yn.adj_value.size() != 0) {
        accumulate(xn.adj_value, (yn.adj_value.array().colwise() * scale.array()).matrix());
      }
      if (yn.adj_tangent.size() != 0) {
        accumulate(xn.adj_tangent, (yn.adj_tangent.array().colwise() * scale.array()).matrix());
      }
    };
  }
  return push(std::move(y));
}

NodeId Tape::scale_rows(NodeId x, const Vector& scale) {
  return affine_rows(x, scale, Vector::Zero(scale.size()));
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Node& an = nodes_.at(a);
  const Node& bn = nodes_.at(b);
  require_same_shape(an.value, bn.value, "add");
  Node y;
  y.value = an.value + bn.value;
  y.tangent = an.tangent + bn.tangent;
  const bool a_needs = an.needs_grad;
  const bool b_needs = bn.needs_grad;
  y.needs_grad = a_needs || b_needs;
  if (y.needs_grad) {
    y.backward = [a, b, a_needs, b_needs](Tape& tape, NodeId self) {
      Node& yn = tape.node(self);
      for (auto [id, needs] : {std::pair{a, a_needs}, std::pair{b, b_needs}}) {
        if (!needs) continue;
        Node& pn = tape.node(id);
        if (yn.adj_value.size() != 0) accumulate(pn.adj_value, yn.adj_value);
        if (yn.adj_tangent.size() != 0) accumulate(pn.adj_tangent, yn.adj_tangent);
      }
    };
  }
  return push(std::move(y));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  const Node& an = nodes_.at(a);
  const Node& bn = nodes_.at(b);
  require_same_shape(an.value, bn.value, "sub");
  Node y;
  y.value = an.value - bn.value;
  y.tangent = an.tangent - bn.tangent;
  const bool a_needs = an.needs_grad;
  const bool b_needs = bn.needs_grad;
  y.needs_grad = a_needs || b_needs;
  if (y.needs_grad) {
    y.backward = [a, b, a_needs, b_needs](Tape& tape, NodeId self) {
      Node& yn = tape.node(self);
      if (a_needs) {
        Node& an = tape.node(a);
        if (yn.adj_value.size() != 0) accumulate(an.adj_value, yn.adj_value);
        if (yn.adj_tangent.size() != 0) accumulate(an.adj_tangent, yn.adj_tangent);
      }
      if (b_needs) {
        Node& bn = tape.node(b);
        if (yn.adj_value.size() != 0) accumulate(bn.adj_value, -yn.adj_value);
        if (yn.adj_tangent.size() != 0) accumulate(bn.adj_tangent, -yn.adj_tangent);
      }
    };
  }
  return push(std::move(y));
}

NodeId Tape::time_rate(NodeId x) {
  const Node& xn = nodes_.at(x);
  Node y;
  y.value = xn.tangent;
  y.tangent = Matrix::Zero(xn.tangent.rows(), xn.tangent.cols());
  y.needs_grad = xn.needs_grad;
  if (y.needs_grad) {
    y.backward = [x](Tape& tape, NodeId self) {
      Node& yn = tape.node(self);
      Node& xn = tape.node(x);
      if (yn.adj_tangent.size() != 0 && !yn.adj_tangent.isZero(0.0)) {
        throw ContractError("time_rate: second time derivative is not tracked");
      }
      if (yn.adj_value.size() != 0) accumulate(xn.adj_tangent, yn.adj_value);
    };
  }
  return push(std::move(y));
}

NodeId Tape::model_rhs(NodeId x, const models::DynamicsModel& model,
                       const Vector& times) {
  const Node& xn = nodes_.at(x);
  const Index n = model.state_dim();
  const Index cols = xn.value.cols();
  if (xn.value.rows() != n) throw ShapeError("model_rhs: state rows mismatch");
  if (times.size() != cols) throw ShapeError("model_rhs: one time per column required");
  Node y;
  y.value.resize(n, cols);
  y.tangent.resize(n, cols);
  std::vector<Matrix> jacs(static_cast<size_t>(cols));
  Vector f;
  for (Index k = 0; k < cols; ++k) {
    Matrix& jac = jacs[static_cast<size_t>(k)];
    model.linearize(xn.value.col(k), times(k), f, jac);
    y.value.col(k) = f;
    y.tangent.col(k).noalias() = jac * xn.tangent.col(k);
  }
  y.needs_grad = xn.needs_grad;
  const size_t slot = jacobians_.size();
  jacobians_.push_back(std::move(jacs));
  if (y.needs_grad) {
    y.backward = [x, slot](Tape& tape, NodeId self) {
      Node& yn = tape.node(self);
      Node& xn = tape.node(x);
      if (yn.adj_tangent.size() != 0 && !yn.adj_tangent.isZero(0.0)) {
        throw ContractError("model_rhs: tangent adjoint needs model second derivatives");
      }
      if (yn.adj_value.size() == 0) return;
      const auto& jacs = tape.jacobians_[slot];
      Matrix contrib(xn.value.rows(), xn.value.cols());
      for (Index k = 0; k < contrib.cols(); ++k) {
        contrib.col(k).noalias() = jacs[static_cast<size_t>(k)].transpose() * yn.adj_value.col(k);
      }
      accumulate(xn.adj_value, contrib);
    };
  }
  return push(std::move(y));
}

NodeId Tape::sum_squares(NodeId x, double divisor) {
  if (!(divisor > 0.0)) throw ContractError("sum_squares: divisor must be positive");
  const Node& xn = nodes_.at(x);
  Node y;
  y.value = Matrix::Constant(1, 1, xn.value.squaredNorm() / divisor);
  y.tangent = Matrix::Constant(1, 1, 2.0 * xn.value.cwiseProduct(xn.tangent).sum() / divisor);
  y.needs_grad = xn.needs_grad;
  if (y.needs_grad) {
    y.backward = [x, divisor](Tape& tape, NodeId self) {
      Node& yn = tape.node(self);
      Node& xn = tape.node(x);
      if (yn.adj_tangent.size() != 0 && yn.adj_tangent(0, 0) != 0.0) {
        const double at = yn.adj_tangent(0, 0);
        accumulate(xn.adj_value, (2.0 * at / divisor) * xn.tangent);
        accumulate(xn.adj_tangent, (2.0 * at / divisor) * xn.value);
      }
      if (yn.adj_value.size() == 0) return;
      accumulate(xn.adj_value, (2.0 * yn.adj_value(0, 0) / divisor) * xn.value);
    };
  }
  return push(std::move(y));
}

NodeId Tape::max_column_square(NodeId x) {
  const Node& xn = nodes_.at(x);
  if (xn.value.cols() == 0) throw ShapeError("max_column_square: empty input");
  Index arg = 0;
  const double best = xn.value.colwise().squaredNorm().maxCoeff(&arg);
  Node y;
  y.value = Matrix::Constant(1, 1, best);
  y.tangent = Matrix::Constant(1, 1, 2.0 * xn.value.col(arg).dot(xn.tangent.col(arg)));
  y.needs_grad = xn.needs_grad;
  if (y.needs_grad) {
    y.backward = [x, arg](Tape& tape, NodeId self) {
      Node& yn = tape.node(self);
      Node& xn = tape.node(x);
      if (yn.adj_value.size() == 0) return;
      Matrix contrib = Matrix::Zero(xn.value.rows(), xn.value.cols());
      contrib.col(arg) = 2.0 * yn.adj_value(0, 0) * xn.value.col(arg);
      accumulate(xn.adj_value, contrib);
    };
  }
  return push(std::move(y));
}

NodeId Tape::weighted_sum(std::span<const NodeId> scalars,
                          std::span<const double> coeffs) {
  if (scalars.size() != coeffs.size()) throw ShapeError("weighted_sum: size mismatch");
  Node y;
  y.value = Matrix::Zero(1, 1);
  y.tangent = Matrix::Zero(1, 1);
  std::vector<NodeId> ids(scalars.begin(), scalars.end());
  std::vector<double> cs(coeffs.begin(), coeffs.end());
  for (size_t i = 0; i < ids.size(); ++i) {
    const Node& s = nodes_.at(ids[i]);
    if (s.value.size() != 1) throw ShapeError("weighted_sum: operands must be scalar");
    y.value(0, 0) += cs[i] * s.value(0, 0);
    y.tangent(0, 0) += cs[i] * s.tangent(0, 0);
    y.needs_grad = y.needs_grad || s.needs_grad;
  }
  if (y.needs_grad) {
    y.backward = [ids = std::move(ids), cs = std::move(cs)](Tape& tape, NodeId self) {
      Node& yn = tape.node(self);
      for (size_t i = 0; i < ids.size(); ++i) {
        Node& s = tape.node(ids[i]);
        if (!s.needs_grad) continue;
        if (yn.adj_value.size() != 0) accumulate(s.adj_value, cs[i] * yn.adj_value);
        if (yn.adj_tangent.size() != 0) accumulate(s.adj_tangent, cs[i] * yn.adj_tangent);
      }
    };
  }
  return push(std::move(y));
}

void Tape::clear_gradients() {
  grad_.setZero();
  for (auto& n : nodes_) {
    n.adj_value.resize(0, 0);
    n.adj_tangent.resize(0, 0);
  }
}

void Tape::backward(NodeId root) {
  Node& r = nodes_.at(root);
  if (r.value.rows() != 1 || r.value.cols() != 1) {
    throw ContractError("backward: root must be a scalar node");
  }
  for (auto& n : nodes_) {
    n.adj_value.resize(0, 0);
    n.adj_tangent.resize(0, 0);
  }
  if (!r.needs_grad) return;
  r.adj_value = Matrix::Ones(1, 1);
  for (NodeId id = root + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.needs_grad || !n.backward) continue;
    if (n.adj_value.size() == 0 && n.adj_tangent.size() == 0) continue;
    n.backward(*this, id);
  }
}

}  // namespace gridpinn::nn
