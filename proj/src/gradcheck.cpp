#include "clipose/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clipose/errors.hpp"
#include "clipose/rng.hpp"

namespace clipose {

namespace {

double evaluate(const LossGraph& forward, ParamStore& params, const std::string& where) {
  double loss = 0.0;
  try {
    loss = forward(params).value().item();
  } catch (const NumericError& e) {
    throw NumericError("gradient check aborted at " + where + ": " + e.what());
  }
  if (!std::isfinite(loss)) {
    throw NumericError("gradient check aborted at " + where + ": non-finite loss");
  }
  return loss;
}

}  // namespace

GradCheckReport check_gradients(const LossGraph& forward, ParamStore& params, double tolerance,
                                const GradCheckOptions& options) {
  params.zero_grad();
  ag::Var loss = forward(params);
  if (!std::isfinite(loss.value().item())) {
    throw NumericError("gradient check aborted: non-finite loss at the unperturbed point");
  }
  ag::backward(loss);

  std::vector<Tensor> analytic;
  for (const auto& p : params.params()) analytic.push_back(p.grad);
  params.zero_grad();

  Rng rng(options.seed);
  GradCheckReport report;
  report.tolerance = tolerance;
  report.step = options.step;
  report.pass = true;

  std::size_t pi = 0;
  for (auto& p : params.params()) {
    const std::size_t n = p.value.size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (n > options.max_coordinates) {
      rng.shuffle(coords);
      coords.resize(options.max_coordinates);
      std::sort(coords.begin(), coords.end());
    }

    GradCheckEntry entry{p.name, 0.0, coords.size()};
    for (std::size_t c : coords) {
      const double original = p.value[c];
      const std::string where = p.name + "[" + std::to_string(c) + "]";
      p.value[c] = original + options.step;
      const double plus = evaluate(forward, params, where);
      p.value[c] = original - options.step;
      const double minus = evaluate(forward, params, where);
      p.value[c] = original;

      const double numeric = (plus - minus) / (2.0 * options.step);
      const double exact = analytic[pi][c];
      const double denom =
          std::max({std::abs(exact), std::abs(numeric), options.relative_floor});
      entry.max_relative_error = std::max(entry.max_relative_error, std::abs(exact - numeric) / denom);
    }
    if (entry.max_relative_error > tolerance) report.pass = false;
    report.entries.push_back(std::move(entry));
    ++pi;
  }
  params.zero_grad();
  return report;
}

}  // namespace clipose
