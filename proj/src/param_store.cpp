#include "clipose/param_store.hpp"

#include <algorithm>
#include <cmath>

#include "clipose/errors.hpp"

namespace clipose {

Parameter& ParamStore::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw ContractError("duplicate parameter name: " + name);
  Parameter p;
  p.name = name;
  p.grad = Tensor::zeros(value.shape());
  p.first_moment = Tensor::zeros(value.shape());
  p.second_moment = Tensor::zeros(value.shape());
  p.value = std::move(value);
  index_.emplace(std::move(name), params_.size());
  params_.push_back(std::move(p));
  return params_.back();
}

bool ParamStore::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

Parameter& ParamStore::at(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ContractError("unknown parameter: " + std::string(name));
  return params_[it->second];
}

const Parameter& ParamStore::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ContractError("unknown parameter: " + std::string(name));
  return params_[it->second];
}

std::size_t ParamStore::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) {
    std::fill(p.grad.mutable_values().begin(), p.grad.mutable_values().end(), 0.0);
    p.grad_ready = false;
  }
}

void optimizer_step(ParamStore& store, double learning_rate, double weight_decay) {
  for (const auto& p : store.params_) {
    if (!p.frozen && !p.grad_ready) {
      throw ContractError("optimizer_step: gradient of '" + p.name + "' was never populated");
    }
  }
  const double t = static_cast<double>(store.step_ + 1);
  const double correction1 = 1.0 - std::pow(kAdamBeta1, t);
  const double correction2 = 1.0 - std::pow(kAdamBeta2, t);

  for (auto& p : store.params_) {
    if (!p.frozen) {
      auto theta = p.value.mutable_values();
      auto g = p.grad.values();
      auto m = p.first_moment.mutable_values();
      auto v = p.second_moment.mutable_values();
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g[i];
        v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g[i] * g[i];
        const double m_hat = m[i] / correction1;
        const double v_hat = v[i] / correction2;
        const double old = theta[i];
        theta[i] = old - learning_rate * m_hat / (std::sqrt(v_hat) + kAdamEpsilon) -
                   learning_rate * weight_decay * old;
      }
      if (p.clamped) {
        for (double& x : theta) x = std::min(x, p.upper_clamp);
      }
      if (!p.value.all_finite()) {
        throw NumericError("optimizer_step produced a non-finite value in '" + p.name + "'");
      }
    }
    std::fill(p.grad.mutable_values().begin(), p.grad.mutable_values().end(), 0.0);
    p.grad_ready = false;
  }
  ++store.step_;
}

}  // namespace clipose
