// SPDX-License-Identifier: Apache-2.0
//
// Pre-norm decoder-only transformer with learned absolute positions and an
// output projection tied to the token embedding table. The final-layer hidden
// state at an <emb> token is the pooled embedding.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rge/tensor.hpp"
#include "rge/vocab.hpp"

namespace rge {

struct ModelConfig {
  std::size_t vocab_size = 32;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t max_seq = 96;
  std::uint64_t seed = 0;

  /// Throws ConfigError on inconsistent dimensions.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

inline constexpr double kInitStd = 0.02;

template <typename T>
struct LayerParams {
  Tensor<T> ln1_gain, ln1_bias;
  Tensor<T> w_query, w_key, w_value, w_out;
  Tensor<T> ln2_gain, ln2_bias;
  Tensor<T> w_up, w_down;
};

template <typename T>
struct Parameters {
  ModelConfig config;
  Tensor<T> token_embedding;     // [vocab x d], also the output projection
  Tensor<T> position_embedding;  // [max_seq x d]
  std::vector<LayerParams<T>> layers;
  Tensor<T> final_gain, final_bias;

  /// Stable order used by checkpoints and the optimizer.
  std::vector<std::pair<std::string, Tensor<T>>> named() const;
  std::vector<Tensor<T>> list() const;
  /// Deep copy with fresh leaf tensors.
  Parameters clone() const;
  void zero_grad() const;
};

/// Weights ~ N(0, 0.02), layer-norm gains 1 and biases 0; deterministic in
/// config.seed.
template <typename T>
Parameters<T> init_params(const ModelConfig& config);

template <typename T>
struct ForwardOutput {
  Tensor<T> logits;        // [seq x vocab]
  Tensor<T> final_hidden;  // [seq x d], after the final layer norm
};

template <typename T>
ForwardOutput<T> forward_full(const Parameters<T>& params, const TokenSequence& tokens);

template <typename T>
struct KVCache {
  std::vector<std::vector<T>> keys;    // per layer, len x d row-major
  std::vector<std::vector<T>> values;  // per layer, len x d row-major
  std::size_t len = 0;

  explicit KVCache(std::size_t n_layers = 0) : keys(n_layers), values(n_layers) {}
};

template <typename T>
struct StepOutput {
  std::vector<T> logits;
  std::vector<T> hidden;
};

/// One incremental decoding step. Gradients are never recorded.
template <typename T>
StepOutput<T> forward_step(const Parameters<T>& params, TokenId token, KVCache<T>& cache);

/// Argmax with ties broken by the lowest token id.
template <typename T>
TokenId argmax_token(const std::vector<T>& logits);

/// Appends argmax tokens after `prefix` until `stop` is produced or `max_new`
/// tokens were produced; in the latter case `stop` is appended. The returned
/// suffix always ends with `stop`.
template <typename T>
TokenSequence greedy_generate(const Parameters<T>& params, const TokenSequence& prefix, TokenId stop,
                              std::size_t max_new);

/// Final hidden state of an <emb> token appended to `tokens`, shape [d].
template <typename T>
Tensor<T> embed_direct(const Parameters<T>& params, const TokenSequence& tokens);

template <typename T>
struct ReasonedEmbedding {
  Tensor<T> embedding;      // [d]
  TokenSequence rationale;  // generated tokens, without the closing <emb>
  bool self_terminated = true;  // false when <emb> was forced at the budget
};

/// Generates a rationale until <emb>, then runs one more cached step on <emb>
/// and returns its final hidden state.
template <typename T>
ReasonedEmbedding<T> embed_with_reasoning(const Parameters<T>& params, const TokenSequence& query,
                                          std::size_t max_new);

}  // namespace rge
