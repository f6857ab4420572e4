#include "clipose/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "clipose/errors.hpp"

namespace clipose::ag {

Tensor& Node::g() {
  if (!grad_init) {
    grad = Tensor::zeros(val().shape());
    grad_init = true;
  }
  return grad;
}

namespace {

Var make(Tensor value, std::vector<std::shared_ptr<Node>> parents,
         std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->backward = std::move(backward);
  return Var(std::move(n));
}

void accumulate(Tensor& dst, const Tensor& src) {
  auto d = dst.mutable_values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

// dst[m×n] += a[m×k] · b[k×n] with raw spans; used by the matmul adjoints.
void gemm_acc(std::span<double> dst, std::span<const double> a, std::span<const double> b,
              std::size_t m, std::size_t k, std::size_t n, bool a_t, bool b_t) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a_t ? a[p * m + i] : a[i * k + p];
      if (aip == 0.0) continue;
      double* out = dst.data() + i * n;
      if (b_t) {
        for (std::size_t j = 0; j < n; ++j) out[j] += aip * b[j * k + p];
      } else {
        const double* brow = b.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) out[j] += aip * brow[j];
      }
    }
  }
}

}  // namespace

Var constant(Tensor value) { return make(std::move(value), {}, nullptr); }

Var view(const Tensor& value) {
  auto n = std::make_shared<Node>();
  n->external = &value;
  return Var(std::move(n));
}

Var parameter(Parameter& p) {
  auto n = std::make_shared<Node>();
  n->external = &p.value;
  n->param = &p;
  return Var(std::move(n));
}

Var matmul(const Var& a, const Var& b) {
  Tensor out = clipose::matmul(a.value(), b.value());
  return make(std::move(out), {a.ptr(), b.ptr()}, [](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    const Tensor& A = na.val();
    const Tensor& B = nb.val();
    const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
    // dA = G · Bᵀ, dB = Aᵀ · G
    gemm_acc(na.g().mutable_values(), self.grad.values(), B.values(), m, n, k, false, true);
    gemm_acc(nb.g().mutable_values(), A.values(), self.grad.values(), k, m, n, true, false);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(1)) {
    throw DimensionError("matmul_nt: incompatible shapes " + shape_to_string(A.shape()) + " and " +
                         shape_to_string(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(0);
  std::vector<double> out(m * n, 0.0);
  gemm_acc(out, A.values(), B.values(), m, k, n, false, true);
  return make(Tensor({m, n}, std::move(out)), {a.ptr(), b.ptr()}, [m, k, n](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    // dA = G · B, dB = Gᵀ · A
    gemm_acc(na.g().mutable_values(), self.grad.values(), nb.val().values(), m, n, k, false, false);
    gemm_acc(nb.g().mutable_values(), self.grad.values(), na.val().values(), n, m, k, true, false);
  });
}

Var transpose(const Var& a) {
  return make(clipose::transpose(a.value()), {a.ptr()}, [](Node& self) {
    accumulate(self.parents[0]->g(), clipose::transpose(self.grad));
  });
}

Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  std::vector<double> out(a.value().values().begin(), a.value().values().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make(Tensor(a.shape(), std::move(out)), {a.ptr(), b.ptr()}, [](Node& self) {
    accumulate(self.parents[0]->g(), self.grad);
    accumulate(self.parents[1]->g(), self.grad);
  });
}

Var add_row_bias(const Var& x, const Var& bias) {
  const Tensor& X = x.value();
  const Tensor& B = bias.value();
  if (X.rank() != 2 || B.size() != X.dim(1)) {
    throw DimensionError("add_row_bias: " + shape_to_string(X.shape()) + " + " +
                         shape_to_string(B.shape()));
  }
  Tensor out = X;
  for (std::size_t r = 0; r < X.rows(); ++r) {
    auto row = out.mutable_row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += B[c];
  }
  return make(std::move(out), {x.ptr(), bias.ptr()}, [](Node& self) {
    accumulate(self.parents[0]->g(), self.grad);
    Tensor& gb = self.parents[1]->g();
    for (std::size_t r = 0; r < self.grad.rows(); ++r) {
      auto row = self.grad.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) gb[c] += row[c];
    }
  });
}

Var scale(const Var& x, double factor) {
  Tensor out = x.value();
  for (double& v : out.mutable_values()) v *= factor;
  return make(std::move(out), {x.ptr()}, [factor](Node& self) {
    Tensor& gx = self.parents[0]->g();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * self.grad[i];
  });
}

Var tanh(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.mutable_values()) v = std::tanh(v);
  return make(std::move(out), {x.ptr()}, [](Node& self) {
    Tensor& gx = self.parents[0]->g();
    const Tensor& y = self.val();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * (1.0 - y[i] * y[i]);
  });
}

Var mul_exp_scalar(const Var& x, const Var& log_scale) {
  const double s = std::exp(log_scale.value().item());
  Tensor out = x.value();
  for (double& v : out.mutable_values()) v *= s;
  return make(std::move(out), {x.ptr(), log_scale.ptr()}, [s](Node& self) {
    Tensor& gx = self.parents[0]->g();
    double gs = 0.0;
    const Tensor& y = self.val();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += s * self.grad[i];
      gs += self.grad[i] * y[i];
    }
    self.parents[1]->g()[0] += gs;
  });
}

Var gather_rows(const Var& table, std::vector<std::size_t> indices) {
  const Tensor& T = table.value();
  if (T.rank() != 2) throw DimensionError("gather_rows: table must be a matrix");
  if (indices.empty()) throw ContractError("gather_rows: no indices");
  const std::size_t width = T.dim(1);
  std::vector<double> out;
  out.reserve(indices.size() * width);
  for (std::size_t idx : indices) {
    if (idx >= T.rows()) throw IndexError("gather_rows: row " + std::to_string(idx) + " out of range");
    auto row = T.row(idx);
    out.insert(out.end(), row.begin(), row.end());
  }
  const std::size_t n = indices.size();
  return make(Tensor({n, width}, std::move(out)), {table.ptr()},
              [idx = std::move(indices), width](Node& self) {
                Tensor& gt = self.parents[0]->g();
                for (std::size_t r = 0; r < idx.size(); ++r) {
                  auto src = self.grad.row(r);
                  for (std::size_t c = 0; c < width; ++c) gt[idx[r] * width + c] += src[c];
                }
              });
}

Var weighted_group_sum(const Var& x, std::size_t group, std::vector<double> weights) {
  const Tensor& X = x.value();
  if (X.rank() != 2 || group == 0 || X.rows() % group != 0 || weights.size() != X.rows()) {
    throw DimensionError("weighted_group_sum: rows " + std::to_string(X.rows()) +
                         " not divisible into groups of " + std::to_string(group) +
                         " with matching weights");
  }
  const std::size_t groups = X.rows() / group, width = X.dim(1);
  std::vector<double> out(groups * width, 0.0);
  for (std::size_t r = 0; r < X.rows(); ++r) {
    const double w = weights[r];
    if (w == 0.0) continue;
    auto src = X.row(r);
    double* dst = out.data() + (r / group) * width;
    for (std::size_t c = 0; c < width; ++c) dst[c] += w * src[c];
  }
  return make(Tensor({groups, width}, std::move(out)), {x.ptr()},
              [w = std::move(weights), group, width](Node& self) {
                Tensor& gx = self.parents[0]->g();
                for (std::size_t r = 0; r < w.size(); ++r) {
                  if (w[r] == 0.0) continue;
                  auto src = self.grad.row(r / group);
                  for (std::size_t c = 0; c < width; ++c) gx[r * width + c] += w[r] * src[c];
                }
              });
}

Var l2_normalize_rows(const Var& x) {
  const Tensor& X = x.value();
  if (X.rank() != 2) throw DimensionError("l2_normalize_rows: expected a matrix");
  std::vector<double> norms(X.rows());
  Tensor out = X;
  for (std::size_t r = 0; r < X.rows(); ++r) {
    auto row = out.mutable_row(r);
    double sq = 0.0;
    for (double v : row) sq += v * v;
    norms[r] = std::max(std::sqrt(sq), kNormFloor);
    for (double& v : row) v /= norms[r];
  }
  return make(std::move(out), {x.ptr()}, [norms = std::move(norms)](Node& self) {
    Tensor& gx = self.parents[0]->g();
    const Tensor& y = self.val();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      auto gr = self.grad.row(r);
      auto dst = gx.mutable_row(r);
      const bool floored = norms[r] == kNormFloor;
      double dot = 0.0;
      if (!floored) {
        for (std::size_t c = 0; c < yr.size(); ++c) dot += yr[c] * gr[c];
      }
      for (std::size_t c = 0; c < yr.size(); ++c) dst[c] += (gr[c] - yr[c] * dot) / norms[r];
    }
  });
}

Var cross_entropy_mean(const Var& logits, std::vector<std::size_t> targets) {
  const Tensor& L = logits.value();
  const double loss = clipose::cross_entropy_mean(L, targets);
  return make(Tensor::scalar(loss), {logits.ptr()}, [t = std::move(targets)](Node& self) {
    Node& nl = *self.parents[0];
    const Tensor p = softmax_rows(nl.val());
    Tensor& gl = nl.g();
    const double upstream = self.grad[0] / static_cast<double>(p.rows());
    for (std::size_t r = 0; r < p.rows(); ++r) {
      auto pr = p.row(r);
      auto dst = gl.mutable_row(r);
      for (std::size_t c = 0; c < pr.size(); ++c) {
        dst[c] += upstream * (pr[c] - (c == t[r] ? 1.0 : 0.0));
      }
    }
  });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return make(Tensor::scalar(total), {x.ptr()}, [](Node& self) {
    Tensor& gx = self.parents[0]->g();
    for (double& v : gx.mutable_values()) v += self.grad[0];
  });
}

Var sum_squares(const Var& x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v * v;
  return make(Tensor::scalar(total), {x.ptr()}, [](Node& self) {
    Tensor& gx = self.parents[0]->g();
    const Tensor& xv = self.parents[0]->val();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * xv[i] * self.grad[0];
  });
}

void backward(const Var& root) {
  if (root.value().size() != 1) {
    throw ContractError("backward: root must be a scalar, got shape " +
                        shape_to_string(root.shape()));
  }
  // Iterative post-order DFS; reversed, it is a valid reverse topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{&root.node(), 0}};
  seen.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node().g()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->grad_init) continue;
    if (n->backward) n->backward(*n);
    if (n->param) {
      accumulate(n->param->grad, n->grad);
      n->param->grad_ready = true;
    }
  }
}

Var ParamAccess::operator()(std::string_view name) const {
  if (mutable_) return parameter(mutable_->at(name));
  return view(const_->at(name).value);
}

}  // namespace clipose::ag
