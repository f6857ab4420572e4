#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <string_view>
#include <unordered_map>

#include "clipose/tensor.hpp"

namespace clipose {

/// A learnable tensor with its gradient and adaptive-moment accumulators.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor first_moment;
  Tensor second_moment;
  bool grad_ready = false;
  bool frozen = false;
  /// Optional upper bound re-applied after every optimizer step.
  double upper_clamp = 0.0;
  bool clamped = false;
};

/// Named parameters in insertion order. References returned by add()/at()
/// stay valid for the lifetime of the store.
class ParamStore {
 public:
  Parameter& add(std::string name, Tensor value);

  bool contains(std::string_view name) const;
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;

  std::deque<Parameter>& params() noexcept { return params_; }
  const std::deque<Parameter>& params() const noexcept { return params_; }
  std::size_t size() const noexcept { return params_.size(); }
  std::size_t element_count() const;

  std::uint64_t step() const noexcept { return step_; }
  void set_step(std::uint64_t step) noexcept { step_ = step; }

  void zero_grad();

 private:
  friend void optimizer_step(ParamStore&, double, double);
  std::deque<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t step_ = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

/// Adaptive-moment update with decoupled weight decay, then zeroes gradients
/// and increments the step counter. Frozen parameters are skipped.
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
void optimizer_step(ParamStore& params, double learning_rate, double weight_decay);

}  // namespace clipose
