// SPDX-License-Identifier: Apache-2.0
#include "rge/objectives.hpp"

#include <charconv>
#include <cmath>
#include <utility>

#include "rge/error.hpp"
#include "rge/ops.hpp"

namespace rge {
namespace {

double parse_part(std::string_view s, std::string_view whole) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v) || v < 0) {
    throw ConfigError("invalid loss ratio '" + std::string(whole) + "', expected lm:con with non-negative numbers");
  }
  return v;
}

}  // namespace

AlphaWeights parse_alpha_ratio(std::string_view ratio) {
  const auto colon = ratio.find(':');
  const double lm = parse_part(ratio.substr(0, colon), ratio);
  const double con = colon == std::string_view::npos ? 1.0 : parse_part(ratio.substr(colon + 1), ratio);
  if (lm + con <= 0) throw ConfigError("loss ratio '" + std::string(ratio) + "' has both weights zero");
  return {lm / (lm + con), con / (lm + con)};
}

template <typename T>
Tensor<T> temp_scaled_logits(const Tensor<T>& queries, const Tensor<T>& targets, double tau) {
  if (!(tau > 0)) throw ConfigError("temperature must be positive, got " + std::to_string(tau));
  return ops::scale(ops::cosine_similarity_matrix(queries, targets), static_cast<T>(1.0 / tau));
}

template <typename T>
Tensor<T> info_nce(const Tensor<T>& queries, const Tensor<T>& targets, double tau) {
  if (queries.rank() != 2 || queries.rows() < 2) throw BatchError("info_nce needs a batch of at least 2 rows");
  if (targets.rank() != 2 || targets.rows() != queries.rows()) {
    throw DimensionError("info_nce batch mismatch: " + shape_to_string(queries.shape()) + " vs " +
                         shape_to_string(targets.shape()));
  }
  const std::size_t b = queries.rows();
  const auto logp = ops::log_softmax_lastdim(temp_scaled_logits(queries, targets, tau));
  std::vector<std::pair<std::size_t, std::size_t>> diag(b);
  for (std::size_t i = 0; i < b; ++i) diag[i] = {i, i};
  return ops::scale(ops::mean(ops::gather_elements(logp, diag)), T(-1));
}

template <typename T>
LmTerm<T> lm_loss(const Tensor<T>& logits, const TokenSequence& tokens, std::span<const std::size_t> predicted) {
  if (predicted.empty()) throw ContractError("lm_loss needs at least one supervised position");
  if (logits.rank() != 2 || logits.rows() != tokens.size()) {
    throw DimensionError("lm_loss logits " + shape_to_string(logits.shape()) + " do not match " +
                         std::to_string(tokens.size()) + " tokens");
  }
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  picks.reserve(predicted.size());
  for (std::size_t p : predicted) {
    if (p == 0 || p >= tokens.size()) {
      throw ContractError("supervised position " + std::to_string(p) + " outside [1, " + std::to_string(tokens.size()) +
                          ")");
    }
    const TokenId t = tokens[p];
    if (t < 0 || static_cast<std::size_t>(t) >= logits.cols()) throw VocabError("target token out of range");
    picks.emplace_back(p - 1, static_cast<std::size_t>(t));
  }
  const auto logp = ops::log_softmax_lastdim(logits);
  return {ops::scale(ops::mean(ops::gather_elements(logp, picks)), T(-1)), predicted.size()};
}

template <typename T>
LmTerm<T> pooled_lm_loss(std::span<const LmTerm<T>> terms) {
  std::size_t n = 0;
  for (const auto& t : terms) n += t.n_tokens;
  if (n == 0) throw ContractError("no supervised tokens to pool");
  Tensor<T> acc;
  for (const auto& t : terms) {
    if (t.n_tokens == 0) continue;
    const auto weighted = ops::scale(t.loss, static_cast<T>(static_cast<double>(t.n_tokens) / static_cast<double>(n)));
    acc = acc.defined() ? ops::add(acc, weighted) : weighted;
  }
  return {acc, n};
}

template <typename T>
Tensor<T> weighted_lm_loss(const LmTerm<T>& query_side, const LmTerm<T>& target_side) {
  if (query_side.n_tokens == 0 || target_side.n_tokens == 0) {
    throw ContractError("weighted_lm_loss needs supervised tokens on both sides");
  }
  const LmTerm<T> terms[2] = {query_side, target_side};
  return pooled_lm_loss<T>(terms).loss;
}

template <typename T>
JointLoss<T> joint_loss(const Tensor<T>& lm, const Tensor<T>& con, double alpha_lm, double alpha_con) {
  if (alpha_lm < 0 || alpha_con < 0 || !std::isfinite(alpha_lm) || !std::isfinite(alpha_con)) {
    throw ConfigError("loss weights must be finite and non-negative");
  }
  if (alpha_lm == 0 && alpha_con == 0) throw ConfigError("both loss weights are zero");
  JointLoss<T> out;
  out.total = ops::add(ops::scale(lm, static_cast<T>(alpha_lm)), ops::scale(con, static_cast<T>(alpha_con)));
  out.breakdown.lm_loss = static_cast<double>(lm.item());
  out.breakdown.con_loss = static_cast<double>(con.item());
  out.breakdown.total = static_cast<double>(out.total.item());
  return out;
}

#define RGE_INSTANTIATE(T)                                                                                 \
  template Tensor<T> temp_scaled_logits<T>(const Tensor<T>&, const Tensor<T>&, double);                    \
  template Tensor<T> info_nce<T>(const Tensor<T>&, const Tensor<T>&, double);                              \
  template LmTerm<T> lm_loss<T>(const Tensor<T>&, const TokenSequence&, std::span<const std::size_t>);     \
  template LmTerm<T> pooled_lm_loss<T>(std::span<const LmTerm<T>>);                                        \
  template Tensor<T> weighted_lm_loss<T>(const LmTerm<T>&, const LmTerm<T>&);                              \
  template JointLoss<T> joint_loss<T>(const Tensor<T>&, const Tensor<T>&, double, double);

RGE_INSTANTIATE(float)
RGE_INSTANTIATE(double)

#undef RGE_INSTANTIATE

}  // namespace rge
