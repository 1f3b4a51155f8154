// SPDX-License-Identifier: Apache-2.0
//
// Small fixtures shared by the unit, integration and acceptance suites.

#pragma once

#include <cstdint>
#include <vector>

#include "rge/gradcheck.hpp"
#include "rge/hash.hpp"
#include "rge/model.hpp"
#include "rge/ops.hpp"
#include "rge/task.hpp"
#include "rge/tensor.hpp"

namespace rge::testing {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0, bool requires_grad = true) {
  Rng rng(seed);
  std::vector<T> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<T>(rng.normal() * scale);
  return Tensor<T>::from_data(std::move(shape), std::move(data), requires_grad);
}

/// sum(f(x) * W) with a fixed random W, so no gradient entry is trivially
/// zero by symmetry.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& y, std::uint64_t seed) {
  const auto w = random_tensor<T>(y.shape(), seed, 1.0, false);
  return ops::sum(ops::mul(y, w));
}

inline ModelConfig tiny_model(std::size_t vocab_size, std::uint64_t seed = 7) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_seq = 96;
  c.seed = seed;
  return c;
}

inline ModelConfig small_model(std::size_t vocab_size, std::uint64_t seed = 7) {
  auto c = tiny_model(vocab_size, seed);
  c.d_model = 32;
  c.n_layers = 2;
  c.n_heads = 4;
  c.d_ff = 64;
  return c;
}

}  // namespace rge::testing
