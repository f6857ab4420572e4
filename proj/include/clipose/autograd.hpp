#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "clipose/param_store.hpp"
#include "clipose/tensor.hpp"

// Tape-free reverse-mode differentiation: every Var owns a node that points at
// its inputs, and backward() walks the resulting DAG in reverse topological
// order. Graphs are built per forward pass and discarded afterwards.
namespace clipose::ag {

struct Node {
  Tensor value;
  /// Parameter leaves read their value from the store instead of copying it.
  const Tensor* external = nullptr;
  Tensor grad;
  bool grad_init = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  Parameter* param = nullptr;

  const Tensor& val() const { return external ? *external : value; }
  /// Gradient buffer, allocated as zeros on first use.
  Tensor& g();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->val(); }
  const Shape& shape() const { return value().shape(); }
  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Leaf that never receives gradient.
Var constant(Tensor value);
/// Leaf viewing a tensor owned elsewhere; must outlive the graph.
Var view(const Tensor& value);
/// Leaf whose gradient is accumulated into `p.grad` by backward().
Var parameter(Parameter& p);

Var matmul(const Var& a, const Var& b);
/// a · bᵀ
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
/// x[m×n] + bias[1×n] broadcast over rows.
Var add_row_bias(const Var& x, const Var& bias);
Var scale(const Var& x, double factor);
Var tanh(const Var& x);
/// exp(log_scale) * x, with log_scale a one-element tensor.
Var mul_exp_scalar(const Var& x, const Var& log_scale);
/// Rows of `table` selected by `indices`, in order.
Var gather_rows(const Var& table, std::vector<std::size_t> indices);
/// out[g] = sum_j weights[g*group + j] * x[g*group + j], for consecutive row groups.
Var weighted_group_sum(const Var& x, std::size_t group, std::vector<double> weights);
Var l2_normalize_rows(const Var& x);
/// Mean over rows of -log softmax(row)[target].
Var cross_entropy_mean(const Var& logits, std::vector<std::size_t> targets);
Var sum(const Var& x);
Var sum_squares(const Var& x);

/// Reverse pass from a one-element root. Parameter gradients accumulate
/// additively into their store and are marked ready.
void backward(const Var& root);

/// Chooses how encoders see parameters: tracked (gradients flow into the
/// store) or read-only (plain views, no gradient bookkeeping).
class ParamAccess {
 public:
  explicit ParamAccess(ParamStore& trainable) : mutable_(&trainable), const_(&trainable) {}
  explicit ParamAccess(const ParamStore& frozen) : const_(&frozen) {}

  Var operator()(std::string_view name) const;
  const Tensor& value(std::string_view name) const { return const_->at(name).value; }
  bool tracked() const noexcept { return mutable_ != nullptr; }

 private:
  ParamStore* mutable_ = nullptr;
  const ParamStore* const_ = nullptr;
};

}  // namespace clipose::ag
