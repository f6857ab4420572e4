#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "clipose/autograd.hpp"

namespace clipose {

struct GradCheckEntry {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t coordinates_checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  double step = 0.0;
  bool pass = false;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Tensors up to this size are checked exhaustively, larger ones sampled.
  std::size_t max_coordinates = 64;
  /// Denominator floor of the relative error, keeps exact zeros comparable.
  double relative_floor = 1e-6;
  std::uint64_t seed = 0;
};

/// Builds the scalar loss from the store; must be deterministic.
using LossGraph = std::function<ag::Var(ParamStore&)>;

/// Compares backward() against central differences (f(x+h) - f(x-h)) / 2h on
/// every checked coordinate. Relative error is |a - n| / max(|a|, |n|, floor).
/// Throws NumericError if any loss evaluation is non-finite. Leaves parameter
/// values untouched and gradients zeroed.
GradCheckReport check_gradients(const LossGraph& forward, ParamStore& params, double tolerance,
                                const GradCheckOptions& options = {});

}  // namespace clipose
