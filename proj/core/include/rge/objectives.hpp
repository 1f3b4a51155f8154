// SPDX-License-Identifier: Apache-2.0
//
// Contrastive and language-modeling losses and their weighted combination.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rge/tensor.hpp"
#include "rge/vocab.hpp"

namespace rge {

/// Normalized loss weights, alpha_lm + alpha_con == 1.
struct AlphaWeights {
  double lm = 1.0 / 11.0;
  double con = 10.0 / 11.0;
};

/// Accepts "lm:con" (e.g. "1:10"), a single number r meaning r:1, and "0"
/// for a pure contrastive objective. Throws ConfigError when both parts are
/// zero, negative or unparsable.
AlphaWeights parse_alpha_ratio(std::string_view ratio);

/// Cosine similarity divided by tau. Throws ConfigError for tau <= 0.
template <typename T>
Tensor<T> temp_scaled_logits(const Tensor<T>& queries, const Tensor<T>& targets, double tau);

/// Mean over rows of -log softmax(logits)[i][i]; row i of `targets` is the
/// positive for row i of `queries`, the other rows are its negatives. Throws
/// BatchError when fewer than two rows are given.
template <typename T>
Tensor<T> info_nce(const Tensor<T>& queries, const Tensor<T>& targets, double tau);

template <typename T>
struct LmTerm {
  Tensor<T> loss;  // per-token mean
  std::size_t n_tokens = 0;
};

/// Next-token loss over one sequence. Row p of `logits` predicts
/// `tokens[p + 1]`; `predicted` lists the supervised token positions, each in
/// [1, tokens.size()). Throws ContractError on an empty or invalid mask.
template <typename T>
LmTerm<T> lm_loss(const Tensor<T>& logits, const TokenSequence& tokens, std::span<const std::size_t> predicted);

/// (N_q * loss_q + N_t * loss_t) / (N_q + N_t): the mean over every supervised
/// token on both sides.
template <typename T>
Tensor<T> weighted_lm_loss(const LmTerm<T>& query_side, const LmTerm<T>& target_side);

/// Same weighting over any number of terms (a batch of query and target
/// sides). Throws ContractError when no term supervises a token.
template <typename T>
LmTerm<T> pooled_lm_loss(std::span<const LmTerm<T>> terms);

struct LossBreakdown {
  double lm_loss = 0;
  double con_loss = 0;
  double total = 0;
  std::size_t n_q_tokens = 0;
  std::size_t n_t_tokens = 0;
};

template <typename T>
struct JointLoss {
  Tensor<T> total;
  LossBreakdown breakdown;
};

/// total = alpha_lm * lm + alpha_con * con. Throws ConfigError when both
/// weights are zero or either is negative.
template <typename T>
JointLoss<T> joint_loss(const Tensor<T>& lm, const Tensor<T>& con, double alpha_lm, double alpha_con);

}  // namespace rge
