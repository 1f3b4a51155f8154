// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations. Matrices are row-major; "rows" of a tensor are
// all leading dimensions flattened. There is no implicit broadcasting: binary
// elementwise operations require identical shapes, and scaling by a constant
// is the only scalar-tensor interaction.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "rge/tensor.hpp"

namespace rge::ops {

// Matrix products. matmul: [m x k] . [k x n]; matmul_nt: [m x k] . [n x k]^T.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T c);

/// GELU, tanh approximation.
template <typename T> Tensor<T> gelu(const Tensor<T>& x);

template <typename T> Tensor<T> log_softmax_lastdim(const Tensor<T>& x);

/// Row-wise softmax where row i only sees columns j <= i + offset. Hidden
/// entries are exactly zero.
template <typename T> Tensor<T> causal_softmax(const Tensor<T>& x, std::size_t offset);

inline constexpr double kLayerNormEps = 1e-5;

/// Normalizes each row over the last dimension; gain and bias have shape [d].
template <typename T> Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias);

/// entry (i, j) = cos(Q_i, T_j); rows with zero norm give similarity 0.
template <typename T> Tensor<T> cosine_similarity_matrix(const Tensor<T>& q, const Tensor<T>& t);

/// Embedding lookup: result row r is table row ids[r].
template <typename T> Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int32_t> ids);

template <typename T> Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count);
template <typename T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

/// Picks x[r, c] for every (r, c) pair into a vector.
template <typename T>
Tensor<T> gather_elements(const Tensor<T>& x, std::span<const std::pair<std::size_t, std::size_t>> index);

}  // namespace rge::ops
