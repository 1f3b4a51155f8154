// SPDX-License-Identifier: Apache-2.0
#include "rge/model.hpp"

#include <cmath>

#include "rge/hash.hpp"
#include "rge/ops.hpp"

namespace rge {

void ModelConfig::validate() const {
  if (vocab_size == 0 || d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || max_seq == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
  }
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> Parameters<T>::named() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  out.emplace_back("token_embedding", token_embedding);
  out.emplace_back("position_embedding", position_embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& p = layers[l];
    const std::string pre = "layers." + std::to_string(l) + ".";
    out.emplace_back(pre + "ln1_gain", p.ln1_gain);
    out.emplace_back(pre + "ln1_bias", p.ln1_bias);
    out.emplace_back(pre + "w_query", p.w_query);
    out.emplace_back(pre + "w_key", p.w_key);
    out.emplace_back(pre + "w_value", p.w_value);
    out.emplace_back(pre + "w_out", p.w_out);
    out.emplace_back(pre + "ln2_gain", p.ln2_gain);
    out.emplace_back(pre + "ln2_bias", p.ln2_bias);
    out.emplace_back(pre + "w_up", p.w_up);
    out.emplace_back(pre + "w_down", p.w_down);
  }
  out.emplace_back("final_gain", final_gain);
  out.emplace_back("final_bias", final_bias);
  return out;
}

template <typename T>
std::vector<Tensor<T>> Parameters<T>::list() const {
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

template <typename T>
Parameters<T> Parameters<T>::clone() const {
  auto copy = [](const Tensor<T>& t) {
    return Tensor<T>::from_data(t.shape(), std::vector<T>(t.data().begin(), t.data().end()), t.requires_grad());
  };
  Parameters out;
  out.config = config;
  out.token_embedding = copy(token_embedding);
  out.position_embedding = copy(position_embedding);
  for (const auto& p : layers) {
    out.layers.push_back(LayerParams<T>{copy(p.ln1_gain), copy(p.ln1_bias), copy(p.w_query), copy(p.w_key),
                                        copy(p.w_value), copy(p.w_out), copy(p.ln2_gain), copy(p.ln2_bias),
                                        copy(p.w_up), copy(p.w_down)});
  }
  out.final_gain = copy(final_gain);
  out.final_bias = copy(final_bias);
  return out;
}

template <typename T>
void Parameters<T>::zero_grad() const {
  for (auto t : list()) t.zero_grad();
}

template <typename T>
Parameters<T> init_params(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  auto normal = [&](Shape shape) {
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(kInitStd * rng.normal());
    return Tensor<T>::from_data(std::move(shape), std::move(v), true);
  };
  auto constant = [](std::size_t n, T value) { return Tensor<T>::from_data({n}, std::vector<T>(n, value), true); };

  const std::size_t d = config.d_model;
  Parameters<T> p;
  p.config = config;
  p.token_embedding = normal({config.vocab_size, d});
  p.position_embedding = normal({config.max_seq, d});
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    LayerParams<T> layer;
    layer.ln1_gain = constant(d, T(1));
    layer.ln1_bias = constant(d, T(0));
    layer.w_query = normal({d, d});
    layer.w_key = normal({d, d});
    layer.w_value = normal({d, d});
    layer.w_out = normal({d, d});
    layer.ln2_gain = constant(d, T(1));
    layer.ln2_bias = constant(d, T(0));
    layer.w_up = normal({d, config.d_ff});
    layer.w_down = normal({config.d_ff, d});
    p.layers.push_back(std::move(layer));
  }
  p.final_gain = constant(d, T(1));
  p.final_bias = constant(d, T(0));
  return p;
}

namespace {

template <typename T>
void check_tokens(const Parameters<T>& params, const TokenSequence& tokens, std::size_t start_pos) {
  const auto& c = params.config;
  if (tokens.empty()) throw LengthError("empty token sequence");
  if (start_pos + tokens.size() > c.max_seq) {
    throw LengthError("sequence of " + std::to_string(start_pos + tokens.size()) + " tokens exceeds max_seq " +
                      std::to_string(c.max_seq));
  }
  for (TokenId t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= c.vocab_size) {
      throw VocabError("token id " + std::to_string(t) + " outside vocabulary of " + std::to_string(c.vocab_size));
    }
  }
}

// Attention over keys/values whose first `offset + 1` rows are visible to the
// first query row; every following query row sees one more key.
template <typename T>
Tensor<T> attention(const ModelConfig& c, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    std::size_t offset) {
  const std::size_t dh = c.d_model / c.n_heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<Tensor<T>> heads;
  heads.reserve(c.n_heads);
  for (std::size_t h = 0; h < c.n_heads; ++h) {
    const auto qh = ops::slice_cols(q, h * dh, dh);
    const auto kh = ops::slice_cols(k, h * dh, dh);
    const auto vh = ops::slice_cols(v, h * dh, dh);
    const auto probs = ops::causal_softmax(ops::scale(ops::matmul_nt(qh, kh), inv_sqrt), offset);
    heads.push_back(ops::matmul(probs, vh));
  }
  return c.n_heads == 1 ? heads[0] : ops::concat_cols(heads);
}

template <typename T>
Tensor<T> mlp(const LayerParams<T>& p, const Tensor<T>& x) {
  const auto h = ops::layer_norm(x, p.ln2_gain, p.ln2_bias);
  return ops::matmul(ops::gelu(ops::matmul(h, p.w_up)), p.w_down);
}

}  // namespace

template <typename T>
ForwardOutput<T> forward_full(const Parameters<T>& params, const TokenSequence& tokens) {
  check_tokens(params, tokens, 0);
  const auto& c = params.config;
  auto x = ops::add(ops::gather_rows(params.token_embedding, std::span<const TokenId>(tokens)),
                    ops::slice_rows(params.position_embedding, 0, tokens.size()));
  for (const auto& layer : params.layers) {
    const auto h = ops::layer_norm(x, layer.ln1_gain, layer.ln1_bias);
    const auto q = ops::matmul(h, layer.w_query);
    const auto k = ops::matmul(h, layer.w_key);
    const auto v = ops::matmul(h, layer.w_value);
    x = ops::add(x, ops::matmul(attention(c, q, k, v, 0), layer.w_out));
    x = ops::add(x, mlp(layer, x));
  }
  auto final_hidden = ops::layer_norm(x, params.final_gain, params.final_bias);
  auto logits = ops::matmul_nt(final_hidden, params.token_embedding);
  return {std::move(logits), std::move(final_hidden)};
}

template <typename T>
StepOutput<T> forward_step(const Parameters<T>& params, TokenId token, KVCache<T>& cache) {
  const auto& c = params.config;
  check_tokens(params, TokenSequence{token}, cache.len);
  if (cache.keys.size() != c.n_layers) cache = KVCache<T>(c.n_layers);
  NoGradGuard no_grad;
  const std::size_t d = c.d_model;
  const TokenId ids[1] = {token};
  auto x = ops::add(ops::gather_rows(params.token_embedding, std::span<const TokenId>(ids)),
                    ops::slice_rows(params.position_embedding, cache.len, 1));
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& layer = params.layers[l];
    const auto h = ops::layer_norm(x, layer.ln1_gain, layer.ln1_bias);
    const auto q = ops::matmul(h, layer.w_query);
    const auto k = ops::matmul(h, layer.w_key);
    const auto v = ops::matmul(h, layer.w_value);
    auto& keys = cache.keys[l];
    auto& values = cache.values[l];
    keys.insert(keys.end(), k.data().begin(), k.data().end());
    values.insert(values.end(), v.data().begin(), v.data().end());
    const std::size_t len = cache.len + 1;
    const auto kt = Tensor<T>::from_data({len, d}, keys);
    const auto vt = Tensor<T>::from_data({len, d}, values);
    x = ops::add(x, ops::matmul(attention(c, q, kt, vt, cache.len), layer.w_out));
    x = ops::add(x, mlp(layer, x));
  }
  ++cache.len;
  const auto final_hidden = ops::layer_norm(x, params.final_gain, params.final_bias);
  const auto logits = ops::matmul_nt(final_hidden, params.token_embedding);
  return {std::vector<T>(logits.data().begin(), logits.data().end()),
          std::vector<T>(final_hidden.data().begin(), final_hidden.data().end())};
}

template <typename T>
TokenId argmax_token(const std::vector<T>& logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return static_cast<TokenId>(best);
}

template <typename T>
TokenSequence greedy_generate(const Parameters<T>& params, const TokenSequence& prefix, TokenId stop,
                              std::size_t max_new) {
  if (max_new == 0) return {stop};
  if (prefix.empty()) throw LengthError("greedy_generate needs a non-empty prefix");
  if (prefix.size() + max_new > params.config.max_seq) {
    throw LengthError("prefix of " + std::to_string(prefix.size()) + " plus " + std::to_string(max_new) +
                      " new tokens exceeds max_seq " + std::to_string(params.config.max_seq));
  }
  KVCache<T> cache(params.config.n_layers);
  StepOutput<T> out;
  for (TokenId t : prefix) out = forward_step(params, t, cache);
  TokenSequence generated;
  while (true) {
    const TokenId next = argmax_token(out.logits);
    generated.push_back(next);
    if (next == stop) return generated;
    if (generated.size() == max_new) break;
    out = forward_step(params, next, cache);
  }
  generated.push_back(stop);
  return generated;
}

template <typename T>
Tensor<T> embed_direct(const Parameters<T>& params, const TokenSequence& tokens) {
  if (!tokens.empty() && tokens.back() == Vocab::kEmb) throw ContractError("embed_direct input already ends with <emb>");
  TokenSequence seq = tokens;
  seq.push_back(Vocab::kEmb);
  const auto out = forward_full(params, seq);
  return ops::reshape(ops::slice_rows(out.final_hidden, seq.size() - 1, 1), Shape{params.config.d_model});
}

template <typename T>
ReasonedEmbedding<T> embed_with_reasoning(const Parameters<T>& params, const TokenSequence& query,
                                          std::size_t max_new) {
  const auto& c = params.config;
  if (query.empty()) throw LengthError("embed_with_reasoning needs a non-empty query");
  if (query.size() + max_new + 1 > c.max_seq) {
    throw LengthError("query of " + std::to_string(query.size()) + " with " + std::to_string(max_new) +
                      " new tokens does not fit max_seq " + std::to_string(c.max_seq));
  }
  KVCache<T> cache(c.n_layers);
  StepOutput<T> out;
  for (TokenId t : query) out = forward_step(params, t, cache);
  TokenSequence rationale;
  while (rationale.size() < max_new) {
    const TokenId next = argmax_token(out.logits);
    if (next == Vocab::kEmb) break;
    rationale.push_back(next);
    out = forward_step(params, next, cache);
  }
  out = forward_step(params, Vocab::kEmb, cache);
  const bool terminated = rationale.size() < max_new;
  return {Tensor<T>::from_data({c.d_model}, std::move(out.hidden)), std::move(rationale), terminated};
}

#define RGE_INSTANTIATE(T)                                                                                   \
  template struct Parameters<T>;                                                                             \
  template Parameters<T> init_params<T>(const ModelConfig&);                                                 \
  template ForwardOutput<T> forward_full<T>(const Parameters<T>&, const TokenSequence&);                     \
  template StepOutput<T> forward_step<T>(const Parameters<T>&, TokenId, KVCache<T>&);                        \
  template TokenId argmax_token<T>(const std::vector<T>&);                                                   \
  template TokenSequence greedy_generate<T>(const Parameters<T>&, const TokenSequence&, TokenId, std::size_t); \
  template Tensor<T> embed_direct<T>(const Parameters<T>&, const TokenSequence&);                            \
  template ReasonedEmbedding<T> embed_with_reasoning<T>(const Parameters<T>&, const TokenSequence&, std::size_t);

RGE_INSTANTIATE(float)
RGE_INSTANTIATE(double)

#undef RGE_INSTANTIATE

}  // namespace rge
