// SPDX-License-Identifier: Apache-2.0
#include "rge/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rge {

template <typename T>
GradCheckResult finite_diff_check(const std::function<Tensor<T>()>& loss_fn, std::vector<Tensor<T>> params,
                                  double eps) {
  for (auto& p : params) {
    if (!p.requires_grad()) throw ContractError("finite_diff_check: parameter does not require grad");
    p.zero_grad();
  }

  std::vector<std::vector<T>> analytic;
  {
    Tape<T> tape;
    TapeScope<T> scope(tape);
    const Tensor<T> loss = loss_fn();
    if (!std::isfinite(static_cast<double>(loss.item()))) throw NumericError("finite_diff_check: loss is not finite");
    tape.backward(loss);
  }
  for (auto& p : params) {
    analytic.emplace_back(p.has_grad() ? std::vector<T>(p.grad().begin(), p.grad().end())
                                       : std::vector<T>(p.numel(), T{0}));
    p.zero_grad();
  }

  auto evaluate = [&] {
    NoGradGuard guard;
    return static_cast<double>(loss_fn().item());
  };

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      values[i] = static_cast<T>(static_cast<double>(saved) + eps);
      const double up = evaluate();
      values[i] = static_cast<T>(static_cast<double>(saved) - eps);
      const double down = evaluate();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double tape_grad = static_cast<double>(analytic[pi][i]);
      if (!std::isfinite(numeric) || !std::isfinite(tape_grad)) {
        throw NumericError("finite_diff_check: non-finite gradient at parameter " + std::to_string(pi) + " index " +
                           std::to_string(i));
      }
      const double denom = std::max({std::abs(tape_grad), std::abs(numeric), 1e-8});
      const double rel = std::abs(numeric - tape_grad) / denom;
      ++result.entries_checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = pi;
        result.worst_index = i;
      }
    }
  }
  return result;
}

template GradCheckResult finite_diff_check<float>(const std::function<Tensor<float>()>&, std::vector<Tensor<float>>,
                                                  double);
template GradCheckResult finite_diff_check<double>(const std::function<Tensor<double>()>&,
                                                   std::vector<Tensor<double>>, double);

}  // namespace rge
