// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "rge/error.hpp"
#include "rge/gradcheck.hpp"
#include "rge/model.hpp"
#include "rge/objectives.hpp"
#include "rge/task.hpp"
#include "support/test_util.hpp"

namespace rge {
namespace {

using testing::small_model;
using testing::tiny_model;

template <typename T>
double max_abs_diff(std::span<const T> a, std::span<const T> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

TokenSequence random_tokens(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  TokenSequence t(n);
  for (auto& x : t) x = static_cast<TokenId>(rng.uniform_index(vocab));
  return t;
}

/// Makes <emb> the argmax at every position: the final norm collapses every
/// hidden row to the <emb> embedding row, which dominates its own logit.
template <typename T>
void force_stop(Parameters<T>& p) {
  const std::size_t d = p.config.d_model;
  auto table = p.token_embedding.mutable_data();
  for (std::size_t j = 0; j < d; ++j) table[Vocab::kEmb * d + j] = T(1);
  for (auto& g : p.final_gain.mutable_data()) g = T(0);
  for (auto& b : p.final_bias.mutable_data()) b = T(1);
}

TEST(ModelConfigTest, RejectsIndivisibleHeads) {
  auto c = tiny_model(31);
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(init_params<float>(c), ConfigError);
}

TEST(InitParamsTest, SameSeedIsBitIdentical) {
  const auto a = init_params<float>(tiny_model(31, 5));
  const auto b = init_params<float>(tiny_model(31, 5));
  const auto na = a.named(), nb = b.named();
  ASSERT_EQ(na.size(), nb.size());
  for (std::size_t i = 0; i < na.size(); ++i) {
    EXPECT_EQ(na[i].first, nb[i].first);
    EXPECT_TRUE(std::ranges::equal(na[i].second.data(), nb[i].second.data())) << na[i].first;
  }
}

TEST(InitParamsTest, DifferentSeedsDiffer) {
  const auto a = init_params<float>(tiny_model(31, 5));
  const auto b = init_params<float>(tiny_model(31, 6));
  EXPECT_FALSE(std::ranges::equal(a.token_embedding.data(), b.token_embedding.data()));
}

TEST(InitParamsTest, EmbeddingStatisticsAndNormDefaults) {
  auto config = small_model(31);
  config.d_model = 64;
  const auto p = init_params<double>(config);
  const auto e = p.token_embedding.data();
  ASSERT_GE(e.size(), 1000u);
  double mean = 0, sq = 0;
  for (double v : e) mean += v;
  mean /= double(e.size());
  for (double v : e) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / double(e.size()));
  EXPECT_LT(std::abs(mean), 3 * kInitStd / std::sqrt(double(e.size())));
  EXPECT_NEAR(sd, kInitStd, 0.1 * kInitStd);
  for (const auto& layer : p.layers) {
    for (double g : layer.ln1_gain.data()) EXPECT_EQ(g, 1.0);
    for (double b : layer.ln2_bias.data()) EXPECT_EQ(b, 0.0);
  }
}

TEST(ForwardTest, OutputShapes) {
  const auto p = init_params<float>(tiny_model(31));
  const auto one = forward_full(p, {3});
  EXPECT_EQ(one.logits.shape(), (Shape{1, 31}));
  const auto five = forward_full(p, {3, 4, 5, 6, 7});
  EXPECT_EQ(five.logits.shape(), (Shape{5, 31}));
  EXPECT_EQ(five.final_hidden.shape(), (Shape{5, 16}));
}

TEST(ForwardTest, PrefixLogitsIgnoreLaterTokens) {
  const auto p = init_params<double>(small_model(31));
  auto tokens = random_tokens(20, 31, 3);
  const auto base = forward_full(p, tokens);
  for (std::size_t j : {1u, 7u, 19u}) {
    auto changed = tokens;
    changed[j] = static_cast<TokenId>((changed[j] + 5) % 31);
    const auto out = forward_full(p, changed);
    const std::size_t n = j * 31;
    EXPECT_TRUE(std::equal(base.logits.data().begin(), base.logits.data().begin() + n, out.logits.data().begin()));
    EXPECT_FALSE(std::equal(base.logits.data().begin() + n, base.logits.data().begin() + n + 31,
                            out.logits.data().begin() + n));
  }
}

TEST(ForwardTest, LengthAndVocabErrors) {
  const auto p = init_params<float>(tiny_model(31));
  EXPECT_THROW(forward_full(p, {}), LengthError);
  EXPECT_THROW(forward_full(p, TokenSequence(97, 3)), LengthError);
  EXPECT_THROW(forward_full(p, {3, 31}), VocabError);
  EXPECT_THROW(forward_full(p, {3, -1}), VocabError);
}

TEST(ForwardStepTest, SingleTokenMatchesFullForwardExactly) {
  const auto p = init_params<float>(small_model(31));
  KVCache<float> cache(p.config.n_layers);
  const auto step = forward_step(p, 9, cache);
  const auto full = forward_full(p, {9});
  EXPECT_EQ(cache.len, 1u);
  EXPECT_TRUE(std::ranges::equal(step.logits, full.logits.data()));
  EXPECT_TRUE(std::ranges::equal(step.hidden, full.final_hidden.data()));
}

template <typename T>
double cache_gap(std::uint64_t seed) {
  Rng rng(seed);
  auto config = small_model(31, seed);
  const auto p = init_params<T>(config);
  const auto tokens = random_tokens(1 + rng.uniform_index(60), 31, seed + 1000);
  const auto full = forward_full(p, tokens);
  KVCache<T> cache(config.n_layers);
  double gap = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto step = forward_step(p, tokens[i], cache);
    const auto row_l = full.logits.data().subspan(i * 31, 31);
    const auto row_h = full.final_hidden.data().subspan(i * 32, 32);
    gap = std::max(gap, max_abs_diff<T>(step.logits, row_l));
    gap = std::max(gap, max_abs_diff<T>(step.hidden, row_h));
  }
  EXPECT_EQ(cache.len, tokens.size());
  return gap;
}

TEST(ForwardStepTest, CacheEquivalenceFloat) {
  for (std::uint64_t s = 0; s < 100; ++s) EXPECT_LT(cache_gap<float>(s), 1e-5) << "seed " << s;
}

TEST(ForwardStepTest, CacheEquivalenceDouble) {
  for (std::uint64_t s = 0; s < 100; ++s) EXPECT_LT(cache_gap<double>(s), 1e-10) << "seed " << s;
}

TEST(ForwardStepTest, OverflowIsLengthError) {
  auto c = tiny_model(31);
  c.max_seq = 4;
  const auto p = init_params<float>(c);
  KVCache<float> cache(1);
  for (int i = 0; i < 4; ++i) forward_step(p, 3, cache);
  EXPECT_THROW(forward_step(p, 3, cache), LengthError);
}

TEST(ArgmaxTest, TiesGoToLowestId) {
  EXPECT_EQ(argmax_token<float>({1, 3, 3, 2}), 1);
  EXPECT_EQ(argmax_token<double>({5, 5}), 0);
  EXPECT_EQ(argmax_token<float>({-1, -2, 0}), 2);
}

TEST(GreedyTest, StopDominantModelEmitsOnlyStop) {
  auto p = init_params<float>(tiny_model(31));
  force_stop(p);
  EXPECT_EQ(greedy_generate(p, {3, 13, 19, 25}, Vocab::kEmb, 64), (TokenSequence{Vocab::kEmb}));
}

TEST(GreedyTest, ZeroBudgetForcesStop) {
  const auto p = init_params<float>(tiny_model(31));
  EXPECT_EQ(greedy_generate(p, {3, 13}, Vocab::kEmb, 0), (TokenSequence{Vocab::kEmb}));
}

TEST(GreedyTest, DeterministicAndAlwaysEndsWithStop) {
  const auto p = init_params<float>(small_model(31, 11));
  const TokenSequence prefix{3, 13, 19, 25, 10, 19, 20};
  const auto a = greedy_generate(p, prefix, Vocab::kEmb, 20);
  const auto b = greedy_generate(p, prefix, Vocab::kEmb, 20);
  EXPECT_EQ(a, b);
  ASSERT_FALSE(a.empty());
  EXPECT_LE(a.size(), 21u);
  EXPECT_EQ(a.back(), Vocab::kEmb);
}

TEST(GreedyTest, PrefixPlusBudgetMustFit) {
  const auto p = init_params<float>(tiny_model(31));
  EXPECT_THROW(greedy_generate(p, TokenSequence(90, 3), Vocab::kEmb, 64), LengthError);
}

TEST(EmbedDirectTest, EqualsLastHiddenOfFullForward) {
  const auto p = init_params<float>(small_model(31));
  const TokenSequence x{3, 13, 19, 25, 11, 13};
  const auto e = embed_direct(p, x);
  auto with_emb = x;
  with_emb.push_back(Vocab::kEmb);
  const auto full = forward_full(p, with_emb);
  EXPECT_EQ(e.shape(), (Shape{32}));
  EXPECT_TRUE(std::ranges::equal(e.data(), full.final_hidden.data().subspan(6 * 32, 32)));
  EXPECT_TRUE(std::ranges::equal(e.data(), embed_direct(p, x).data()));
}

TEST(EmbedDirectTest, DistinctInputsGiveDistinctEmbeddings) {
  const auto p = init_params<float>(small_model(31));
  const auto a = embed_direct(p, {3, 13, 19, 25, 4, 14, 20, 26});
  const auto b = embed_direct(p, {3, 14, 20, 26, 4, 13, 19, 25});
  EXPECT_GT(max_abs_diff<float>(a.data(), b.data()), 1e-6);
}

TEST(EmbedDirectTest, RejectsTrailingEmbToken) {
  const auto p = init_params<float>(tiny_model(31));
  EXPECT_THROW(embed_direct(p, {3, Vocab::kEmb}), ContractError);
}

TEST(EmbedReasoningTest, MatchesDirectEmbeddingOfQueryPlusRationale) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto p = init_params<float>(small_model(31, seed));
    const TokenSequence q{3, 13, 19, 25, 10, 19, 20};
    const auto r = embed_with_reasoning(p, q, 24);
    EXPECT_EQ(std::ranges::count(r.rationale, Vocab::kEmb), 0);
    auto joined = q;
    joined.insert(joined.end(), r.rationale.begin(), r.rationale.end());
    EXPECT_LT(max_abs_diff<float>(r.embedding.data(), embed_direct(p, joined).data()), 1e-5);
  }
}

TEST(EmbedReasoningTest, ImmediateStopReducesToDirect) {
  auto p = init_params<float>(small_model(31));
  force_stop(p);
  const TokenSequence q{3, 13, 19, 25, 11, 13};
  const auto r = embed_with_reasoning(p, q, 64);
  EXPECT_TRUE(r.rationale.empty());
  EXPECT_TRUE(r.self_terminated);
  EXPECT_LT(max_abs_diff<float>(r.embedding.data(), embed_direct(p, q).data()), 1e-5);
}

TEST(EmbedReasoningTest, BudgetOverflowIsLengthError) {
  const auto p = init_params<float>(tiny_model(31));
  EXPECT_THROW(embed_with_reasoning(p, TokenSequence(40, 3), 64), LengthError);
}

TEST(ModelGradientTest, LmLossPassesFiniteDifferences) {
  auto config = tiny_model(31, 4);
  config.max_seq = 8;
  config.d_model = 8;
  config.d_ff = 16;
  const auto p = init_params<double>(config);
  const TokenSequence tokens{3, 13, 19, 25, 10, 19};
  const std::vector<std::size_t> predicted{1, 2, 3, 4, 5};
  const auto loss = [&] { return lm_loss(forward_full(p, tokens).logits, tokens, predicted).loss; };
  const auto result = finite_diff_check<double>(loss, p.list());
  EXPECT_GT(result.entries_checked, 0u);
  EXPECT_LT(result.max_rel_error, 1e-3);
}

TEST(ParametersTest, CloneIsDeep) {
  const auto p = init_params<float>(tiny_model(31));
  auto c = p.clone();
  c.token_embedding.mutable_data()[0] += 1.0f;
  EXPECT_NE(c.token_embedding.data()[0], p.token_embedding.data()[0]);
}

}  // namespace
}  // namespace rge
