// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "rge/tensor.hpp"

namespace rge {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t entries_checked = 0;
};

/// Compares tape gradients of `loss_fn` against central differences for every
/// entry of every tensor in `params`. Relative error uses the denominator
/// max(|g_tape|, |g_numeric|, 1e-8). `loss_fn` must rebuild the loss from the
/// current parameter values on each call.
template <typename T>
GradCheckResult finite_diff_check(const std::function<Tensor<T>()>& loss_fn, std::vector<Tensor<T>> params,
                                  double eps = 1e-4);

}  // namespace rge
