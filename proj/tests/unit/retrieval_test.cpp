// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rge/error.hpp"
#include "rge/retrieval.hpp"
#include "support/test_util.hpp"

namespace rge {
namespace {

std::vector<double> random_row(std::size_t d, Rng& rng) {
  std::vector<double> v(d);
  for (auto& x : v) x = rng.normal();
  return v;
}

/// Brute-force ranking: full sort by (cosine desc, id asc).
std::vector<std::uint64_t> argsort_oracle(const std::vector<std::vector<double>>& rows,
                                          const std::vector<std::uint64_t>& ids, const std::vector<double>& q) {
  auto cosine = [&](const std::vector<double>& r) {
    double dot = 0, nr = 0, nq = 0;
    for (std::size_t i = 0; i < r.size(); ++i) dot += r[i] * q[i], nr += r[i] * r[i], nq += q[i] * q[i];
    return nr == 0 || nq == 0 ? 0.0 : dot / std::sqrt(nr * nq);
  };
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ca = cosine(rows[a]), cb = cosine(rows[b]);
    return ca != cb ? ca > cb : ids[a] < ids[b];
  });
  std::vector<std::uint64_t> out;
  for (auto i : order) out.push_back(ids[i]);
  return out;
}

TEST(IndexTest, RejectsBadInput) {
  EXPECT_THROW(make_index<double>({}, {}), ContractError);
  EXPECT_THROW(make_index<double>({{1, 0}, {0, 1}}, {4, 4}), ContractError);
  EXPECT_THROW(make_index<double>({{1, 0}, {0, 1, 2}}, {0, 1}), DimensionError);
}

TEST(IndexTest, TopKMatchesBruteForceIncludingTies) {
  Rng rng(17);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 12; ++i) rows.push_back(random_row(6, rng));
  rows.push_back(rows[3]);                // exact duplicate: tie on cosine
  rows.push_back({2 * rows[5][0], 2 * rows[5][1], 2 * rows[5][2], 2 * rows[5][3], 2 * rows[5][4], 2 * rows[5][5]});
  rows.push_back(std::vector<double>(6, 0.0));  // zero norm scores 0
  const std::vector<std::uint64_t> ids{40, 3, 17, 8, 99, 23, 5, 61, 12, 7, 70, 2, 1, 55, 30};
  const auto index = make_index(rows, ids);
  for (int t = 0; t < 100; ++t) {
    const auto q = t < 3 ? rows[t * 5] : random_row(6, rng);
    const auto expected = argsort_oracle(rows, ids, q);
    for (std::size_t k : {1u, 5u, 15u}) {
      const auto got = top_k(index, std::span<const double>(q), k);
      ASSERT_EQ(got, std::vector<std::uint64_t>(expected.begin(), expected.begin() + k)) << "query " << t;
    }
  }
  EXPECT_EQ(top_k(index, std::span<const double>(rows[3]), 2), (std::vector<std::uint64_t>{1, 8}));
  EXPECT_THROW(top_k(index, std::span<const double>(rows[0]), 0), ContractError);
  EXPECT_THROW(top_k(index, std::span<const double>(rows[0]), 16), ContractError);
}

TEST(IndexTest, QueryEqualToACandidateRanksItFirst) {
  Rng rng(2);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 20; ++i) rows.push_back(random_row(8, rng));
  std::vector<std::uint64_t> ids(20);
  std::iota(ids.begin(), ids.end(), 0);
  const auto index = make_index(rows, ids);
  for (std::size_t j = 0; j < 20; ++j) EXPECT_EQ(top_k(index, std::span<const double>(rows[j]), 1)[0], j);
  auto all = top_k(index, std::span<const double>(rows[0]), 20);
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, ids);
}

class EvalTest : public ::testing::Test {
 protected:
  TaskGenerator gen{TaskConfig{}};
  Parameters<float> params = init_params<float>(testing::tiny_model(31, 8));
};

TEST_F(EvalTest, BuildIndexEmbedsEveryCandidate) {
  const TokenSequence a{3, 13, 19, 25}, b{3, 14, 20, 26};
  const auto one = build_index(params, {a});
  EXPECT_EQ(one.size(), 1u);
  const auto dup = build_index(params, {a, b, a}, {10, 11, 12});
  EXPECT_TRUE(std::ranges::equal(dup.row(0), dup.row(2)));
  EXPECT_FALSE(std::ranges::equal(dup.row(0), dup.row(1)));
  EXPECT_TRUE(std::ranges::equal(dup.row(0), embed_direct(params, a).data()));
  EXPECT_EQ(build_index(params, {a, b, a}).embeddings, dup.embeddings);
  EXPECT_THROW(build_index(params, {TokenSequence(96, 3)}), LengthError);
}

TEST_F(EvalTest, UninformativeEmbedderIsAtChance) {
  const auto ds = generate_dataset(gen, 6, 0, 1200);
  const auto pools = build_eval_pools(gen, ds.eval, 16, 6);
  // Query and candidate vectors are hashed independently, so the target is
  // exchangeable with every distractor.
  auto hashed = [](const TokenSequence& s, std::uint64_t salt) {
    Rng rng(fnv1a(std::string_view(reinterpret_cast<const char*>(s.data()), s.size() * sizeof(TokenId))) ^ salt);
    return random_row(12, rng);
  };
  CandidateEmbedder<double> cand = [&](const TokenSequence& s) { return hashed(s, 0); };
  QueryEmbedder<double> query = [&](const ExampleTriple& ex) {
    return QueryEmbedding<double>{hashed(ex.query, 0x5a5a5a5aULL)};
  };
  const auto r = evaluate_with<double>(query, cand, ds.eval, pools, 2);
  const auto band = chance_band(16, ds.eval.size());
  EXPECT_EQ(r.overall.n_queries, 1200u);
  EXPECT_NEAR(r.overall.precision_at_1, band.expected, 3 * band.sigma);
  EXPECT_NEAR(r.overall.recall_at_5, 5.0 / 16.0, 3 * std::sqrt(5.0 / 16 * 11.0 / 16 / 1200));
}

TEST_F(EvalTest, ModelReportAggregatesFamilies) {
  const auto ds = generate_dataset(gen, 6, 0, 300);
  const auto pools = build_eval_pools(gen, ds.eval, 16, 6);
  EvalOptions opt;
  opt.threads = 2;
  const auto report = evaluate(params, ds.eval, pools, opt);
  EXPECT_EQ(report.overall.n_queries, 300u);
  EXPECT_EQ(report.pool_size, 16u);
  std::size_t n = 0;
  double weighted = 0;
  for (const auto& [fam, m] : report.per_family) {
    n += m.n_queries;
    weighted += m.precision_at_1 * double(m.n_queries);
    EXPECT_GE(m.recall_at_5, m.precision_at_1);
  }
  EXPECT_EQ(n, 300u);
  EXPECT_NEAR(weighted / 300.0, report.overall.precision_at_1, 1e-12);
}

TEST_F(EvalTest, OracleEmbedderIsPerfect) {
  const auto ds = generate_dataset(gen, 7, 0, 300);
  const auto pools = build_eval_pools(gen, ds.eval, 16, 7);
  // Candidates hash to pseudo-random vectors; the query copies its target's.
  CandidateEmbedder<double> cand = [](const TokenSequence& s) {
    Rng rng(fnv1a(std::string_view(reinterpret_cast<const char*>(s.data()), s.size() * sizeof(TokenId))));
    return random_row(12, rng);
  };
  QueryEmbedder<double> query = [&](const ExampleTriple& ex) { return QueryEmbedding<double>{cand(ex.target)}; };
  const auto r = evaluate_with<double>(query, cand, ds.eval, pools);
  EXPECT_EQ(r.overall.precision_at_1, 1.0);
  EXPECT_EQ(r.overall.recall_at_5, 1.0);
}

TEST_F(EvalTest, ReportIsDeterministicAndThreadInvariant) {
  const auto ds = generate_dataset(gen, 8, 0, 90);
  const auto pools = build_eval_pools(gen, ds.eval, 16, 8);
  EvalOptions opt;
  opt.reasoning = true;
  opt.max_new_tokens = 16;
  const auto a = evaluate(params, ds.eval, pools, opt);
  opt.threads = 3;
  const auto b = evaluate(params, ds.eval, pools, opt);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a.reasoning);
  EXPECT_GT(a.mean_rationale_length, 0.0);
  EXPECT_EQ(build_eval_pools(gen, ds.eval, 16, 8)[5].candidates, pools[5].candidates);
}

TEST_F(EvalTest, ImmediateStopMakesReasoningEqualDirect) {
  // <emb> gets a large positive logit everywhere while hidden states still vary.
  const std::size_t d = params.config.d_model;
  auto table = params.token_embedding.mutable_data();
  for (std::size_t j = 0; j < d; ++j) table[Vocab::kEmb * d + j] = 1.0f;
  for (auto& b : params.final_bias.mutable_data()) b = 1.0f;
  const auto ds = generate_dataset(gen, 9, 0, 200);
  const auto pools = build_eval_pools(gen, ds.eval, 16, 9);
  EvalOptions on;
  on.reasoning = true;
  const auto r_on = evaluate(params, ds.eval, pools, on);
  const auto r_off = evaluate(params, ds.eval, pools, EvalOptions{});
  EXPECT_EQ(r_on.mean_rationale_length, 0.0);
  EXPECT_EQ(r_on.self_terminated, 1.0);
  EXPECT_NEAR(r_on.overall.precision_at_1, r_off.overall.precision_at_1, 1e-6);
  EXPECT_NEAR(r_on.overall.recall_at_5, r_off.overall.recall_at_5, 1e-6);
}

TEST(ChanceBandTest, BinomialMoments) {
  const auto b = chance_band(16, 1000);
  EXPECT_DOUBLE_EQ(b.expected, 1.0 / 16);
  EXPECT_NEAR(b.sigma, std::sqrt((1.0 / 16) * (15.0 / 16) / 1000), 1e-15);
}

ComparisonRow row(SupervisionMode m, std::uint64_t seed, double p1, std::string error = {}) {
  ComparisonRow r;
  r.mode = m;
  r.seed = seed;
  r.p_at_1 = p1;
  r.error = std::move(error);
  return r;
}

TEST(ComparisonTest, OrderingIsDecidedPerSeedByMajority) {
  using M = SupervisionMode;
  ComparisonTable t;
  t.rows = {row(M::kBaseline, 1, 0.5), row(M::kOracleLeaky, 1, 0.4), row(M::kSelfGenerated, 1, 0.6),
            row(M::kBaseline, 2, 0.5), row(M::kOracleLeaky, 2, 0.46), row(M::kSelfGenerated, 2, 0.6),
            row(M::kBaseline, 3, 0.5), row(M::kOracleLeaky, 3, 0.2), row(M::kSelfGenerated, 3, 0.52)};
  EXPECT_EQ(t.n_seeds(), 3u);
  EXPECT_EQ(t.seeds_satisfying(0.02, 0.05), 2u);  // seed 2's leaky gap is only 0.04
  EXPECT_TRUE(t.ordering_holds());
  t.rows[8].p_at_1 = 0.51;
  EXPECT_FALSE(t.ordering_holds());
  t.rows[8].p_at_1 = 0.9;
  t.rows[8].error = "non-finite loss";
  EXPECT_FALSE(t.ordering_holds());
  EXPECT_TRUE(designated_reasoning(M::kSelfGenerated));
  EXPECT_FALSE(designated_reasoning(M::kOracleLeaky));
}

TEST(ComparisonTest, ReasoningHelpsCountsSelfRowsOnly) {
  ComparisonTable t;
  auto a = row(SupervisionMode::kSelfGenerated, 1, 0.5);
  a.p_at_1_reasoning = 0.5, a.p_at_1_direct = 0.3;
  auto b = row(SupervisionMode::kSelfGenerated, 2, 0.5);
  b.p_at_1_reasoning = 0.2, b.p_at_1_direct = 0.3;
  auto c = row(SupervisionMode::kBaseline, 1, 0.5);
  c.p_at_1_reasoning = 0.9;
  t.rows = {a, b, c};
  EXPECT_EQ(t.seeds_reasoning_helps(), 1u);
}

TEST(DiagnosticTest, SummaryUsesFirstAndLastTenth) {
  TrainTrace trace;
  for (std::size_t i = 0; i < 20; ++i) {
    TraceRecord r;
    r.step = i;
    r.lm_loss = 20.0 - double(i);
    r.con_loss = 2.0;
    trace.push_back(r);
  }
  const auto s = summarize_trace(trace);
  EXPECT_DOUBLE_EQ(s.initial_lm, 19.5);
  EXPECT_DOUBLE_EQ(s.final_lm, 1.5);
  EXPECT_DOUBLE_EQ(s.lm_reduction(), 1.0 - 1.5 / 19.5);
  EXPECT_DOUBLE_EQ(s.con_ratio(), 1.0);
  EXPECT_DOUBLE_EQ(summarize_trace(trace, 1).initial_lm, 20.0);
  EXPECT_DOUBLE_EQ(summarize_trace(TrainTrace(trace.begin(), trace.begin() + 3)).final_lm, 18.0);
  EXPECT_EQ(summarize_trace({}).lm_reduction(), 0.0);
}

class ProtocolTest : public ::testing::Test {
 protected:
  static TaskConfig small_task() {
    TaskConfig c;
    c.max_objects = 2;
    return c;
  }
  TrainConfig config() const {
    TrainConfig c;
    c.batch_size = 4;
    c.epochs = 1;
    c.learning_rate = 1e-3;
    c.max_new_tokens = gen.max_rationale_length();
    c.seed = 1;
    return c;
  }
  TaskGenerator gen{small_task()};
  DatasetSplits ds = generate_dataset(gen, 2, 12, 20);
  std::vector<CandidatePool> pools = build_eval_pools(gen, ds.eval, 8, 2);
  Parameters<double> cold = init_params<double>(testing::tiny_model(31, 3));
};

TEST_F(ProtocolTest, ComparisonSharesInitialisationAndReportsEveryMode) {
  ComparisonTable table;
  std::vector<SupervisionMode> seen;
  run_supervision_comparison<double>(cold, ds.train, ds.eval, pools, config(), 1, table,
                                     [&](SupervisionMode m, const TrainResult<double>& r) {
                                       seen.push_back(m);
                                       EXPECT_EQ(r.trace.size(), 3u);
                                     });
  ASSERT_EQ(table.rows.size(), 3u);
  EXPECT_EQ(seen.size(), 3u);
  for (const auto& r : table.rows) {
    EXPECT_TRUE(r.error.empty()) << r.error;
    EXPECT_EQ(r.seed, 1u);
    EXPECT_EQ(r.p_at_1, designated_reasoning(r.mode) ? r.p_at_1_reasoning : r.p_at_1_direct);
  }
}

TEST_F(ProtocolTest, DiagnosticTracesAlign) {
  auto c = config();
  c.epochs = 2;
  const auto d = run_leakage_diagnostic(cold, ds.train, c);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0].trace.size(), d[1].trace.size());
  EXPECT_NE(d[0].mode, d[1].mode);
  EXPECT_EQ(d[0].batch_size, 4u);
}

TEST_F(ProtocolTest, SweepDeduplicatesAndOrdersByLmShare) {
  const auto t = run_alpha_sweep(cold, ds.train, ds.eval, pools, config(), {"0", "1:10", "2:20"}, 1);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0].ratio, "1:10");
  EXPECT_EQ(t.rows[1].ratio, "0");
  ASSERT_EQ(t.warnings.size(), 1u);
  EXPECT_NE(t.warnings[0].find("2:20"), std::string::npos);
  EXPECT_THROW(run_alpha_sweep(cold, ds.train, ds.eval, pools, config(), {}, 1), ConfigError);
}

ReportBundle sample_bundle() {
  using M = SupervisionMode;
  ReportBundle b;
  b.meta = {"00ff00ff00ff00ff", 4, "1.2.3"};
  EvalReport e;
  e.per_family["RECOLOR"] = {10, 0.5, 0.9};
  e.per_family["SELECT"] = {5, 0.2, 0.6};
  e.overall = {15, 0.4, 0.8};
  e.reasoning = true;
  e.pool_size = 16;
  e.mean_rationale_length = 12.25;
  e.self_terminated = 1.0;
  e.fingerprint = "00ff00ff00ff00ff";
  b.evals.emplace_back("cold-start", e);
  ComparisonTable t;
  t.rows = {row(M::kBaseline, 0, 0.5123), row(M::kOracleLeaky, 0, 0.25), row(M::kSelfGenerated, 0, 0.61),
            row(M::kBaseline, 1, 0.4877), row(M::kOracleLeaky, 1, 0.2), row(M::kSelfGenerated, 1, 0.4, "aborted")};
  b.comparison = t;
  DiagnosticTrace d;
  d.mode = PerturbationMode::kWrongQuery;
  d.batch_size = 8;
  for (std::size_t i = 0; i < 4; ++i) d.trace.push_back({i, 1.0 / double(i + 1), 2.0, 1.5, 0.0, 0.0, 1.0});
  d.summary = summarize_trace(d.trace);
  b.diagnostic = {d};
  b.sweep = SweepTable{{{"1:10", parse_alpha_ratio("1:10"), 0.3, 0.7, ""}}, {"ratio '2:20' duplicates '1:10', skipped"}};
  return b;
}

TEST(ReportTest, ComparisonMarkdownHasThreeRowsThatParseBack) {
  const auto files = render_report(sample_bundle());
  const auto md = std::find_if(files.begin(), files.end(), [](const ReportFile& f) {
    return f.name == "supervision_comparison_00ff00ff00ff00ff.md";
  });
  ASSERT_NE(md, files.end());
  const auto rows = parse_markdown_numbers(md->contents);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_NEAR(rows[0][0], 0.5, 5e-4);   // baseline mean over both seeds
  EXPECT_NEAR(rows[1][0], 0.225, 5e-4);
  EXPECT_NEAR(rows[2][0], 0.61, 5e-4);  // the aborted seed is excluded
  EXPECT_EQ(rows[2].back(), 1.0);
}

TEST(ReportTest, CsvColumnsAreConstantAndRenderingIsStable) {
  const auto a = render_report(sample_bundle());
  const auto b = render_report(sample_bundle());
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].contents, b[i].contents);
    EXPECT_NE(a[i].name.find("00ff00ff00ff00ff"), std::string::npos);
    if (!a[i].name.ends_with(".csv")) continue;
    std::istringstream in(a[i].contents);
    std::string line;
    std::getline(in, line);
    const auto cols = std::ranges::count(line, ',');
    while (std::getline(in, line)) EXPECT_EQ(std::ranges::count(line, ','), cols) << a[i].name << ": " << line;
  }
  EXPECT_THROW(render_report(ReportBundle{}), ContractError);
}

TEST(ReportTest, BundleJsonRoundTrip) {
  const auto bundle = sample_bundle();
  const auto text = bundle_to_json(bundle);
  const auto back = bundle_from_json(text);
  EXPECT_EQ(bundle_to_json(back), text);
  EXPECT_EQ(back.evals, bundle.evals);
  ASSERT_TRUE(back.comparison.has_value());
  EXPECT_EQ(back.comparison->rows[5].error, "aborted");
  EXPECT_EQ(back.diagnostic[0].trace.size(), 4u);
  EXPECT_EQ(back.sweep->warnings, bundle.sweep->warnings);
  const auto files_a = render_report(bundle), files_b = render_report(back);
  for (std::size_t i = 0; i < files_a.size(); ++i) EXPECT_EQ(files_a[i].contents, files_b[i].contents);
  EXPECT_THROW(bundle_from_json("{\"meta\": 3"), ParseError);
  EXPECT_THROW(bundle_from_json("[]"), ParseError);
}

}  // namespace
}  // namespace rge
