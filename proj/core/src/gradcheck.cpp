#include "stablekd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "stablekd/errors.hpp"

namespace skd {

namespace {

double evaluate(const ScalarFn& f, const std::vector<Parameter<double>>& params) {
  Tape<double> tape;
  const Var<double> out = f(tape, params);
  if (out.value().numel() != 1) throw OracleError("gradient oracle needs a scalar function");
  const double v = out.value()[0];
  if (!std::isfinite(v)) throw OracleError("non-finite function value in gradient oracle");
  return v;
}

}  // namespace

GradCheckReport finite_diff_check(const ScalarFn& f, std::vector<Parameter<double>> params,
                                  double eps) {
  if (!(eps > 0.0)) throw ContractError("finite_diff_check: eps must be positive");

  GradientMap<double> analytic;
  {
    Tape<double> tape;
    const Var<double> out = f(tape, params);
    if (!out.value().all_finite()) throw OracleError("non-finite function value in gradient oracle");
    analytic = tape.backward(out);
  }

  GradCheckReport report;
  for (auto& param : params) {
    if (!param.trainable) continue;
    const auto it = analytic.find(param.id);
    const Tensor<double> grad =
        it != analytic.end() ? it->second : Tensor<double>::zeros(param.value.shape());
    for (std::size_t i = 0; i < param.value.numel(); ++i) {
      const double original = param.value[i];
      param.value[i] = original + eps;
      const double plus = evaluate(f, params);
      param.value[i] = original - eps;
      const double minus = evaluate(f, params);
      param.value[i] = original;

      const double numeric = (plus - minus) / (2.0 * eps);
      const double err = std::abs(grad[i] - numeric) / std::max(1.0, std::abs(numeric));
      ++report.coordinates;
      if (err > report.max_error || report.worst_param.empty()) {
        report.max_error = std::max(report.max_error, err);
        report.worst_param = param.id;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace skd
