// SPDX-License-Identifier: Apache-2.0
//
// Cosine retrieval over per-query candidate pools, Precision@1 / Recall@5,
// and the experiment protocols built on top of the trainer.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rge/model.hpp"
#include "rge/task.hpp"
#include "rge/trainer.hpp"

namespace rge {

template <typename T>
struct RetrievalIndex {
  std::vector<T> embeddings;  // M x dim, row-major
  std::vector<std::uint64_t> ids;
  std::vector<double> norms;
  std::size_t dim = 0;

  std::size_t size() const noexcept { return ids.size(); }
  std::span<const T> row(std::size_t i) const { return {embeddings.data() + i * dim, dim}; }
};

/// Throws ContractError on empty input or duplicate ids, DimensionError on
/// mismatched widths.
template <typename T>
RetrievalIndex<T> make_index(std::vector<std::vector<T>> rows, std::vector<std::uint64_t> ids);

/// Embeds every candidate with embed_direct; ids default to 0..M-1.
template <typename T>
RetrievalIndex<T> build_index(const Parameters<T>& params, const std::vector<TokenSequence>& candidates,
                              std::vector<std::uint64_t> ids = {});

/// Candidate ids by descending cosine similarity, ties by ascending id.
template <typename T>
std::vector<std::uint64_t> top_k(const RetrievalIndex<T>& index, std::span<const T> query, std::size_t k);

struct FamilyMetrics {
  std::size_t n_queries = 0;
  double precision_at_1 = 0;
  double recall_at_5 = 0;
  bool operator==(const FamilyMetrics&) const = default;
};

struct EvalReport {
  std::map<std::string, FamilyMetrics> per_family;  // keyed by family name
  FamilyMetrics overall;
  bool reasoning = false;
  bool target_reasoning = false;
  std::size_t pool_size = 0;
  double mean_rationale_length = 0;
  double self_terminated = 0;  // fraction of reasoning queries that emitted <emb>
  std::string fingerprint;

  bool operator==(const EvalReport&) const = default;
};

struct EvalOptions {
  bool reasoning = false;
  bool target_reasoning = false;
  std::size_t max_new_tokens = 64;
  unsigned threads = 1;
};

/// One pool per example: the target plus pool_size - 1 distractors, seeded by
/// derive_seed(seed, example_id).
std::vector<CandidatePool> build_eval_pools(const TaskGenerator& generator, const Dataset& eval_set,
                                            std::size_t pool_size, std::uint64_t seed);

template <typename T>
struct QueryEmbedding {
  std::vector<T> embedding;
  std::size_t rationale_length = 0;
  bool reasoned = false;
  bool self_terminated = true;
};

template <typename T>
using QueryEmbedder = std::function<QueryEmbedding<T>(const ExampleTriple&)>;
template <typename T>
using CandidateEmbedder = std::function<std::vector<T>(const TokenSequence&)>;

/// Metric core shared by the model-backed evaluation and test oracles. Each
/// worker thread handles a contiguous block of queries; results do not
/// depend on `threads`.
template <typename T>
EvalReport evaluate_with(const QueryEmbedder<T>& embed_query, const CandidateEmbedder<T>& embed_candidate,
                         const Dataset& eval_set, const std::vector<CandidatePool>& pools, unsigned threads = 1);

template <typename T>
EvalReport evaluate(const Parameters<T>& params, const Dataset& eval_set, const std::vector<CandidatePool>& pools,
                    const EvalOptions& options);

/// Chance-level Precision@1 for a pool and its binomial standard deviation.
struct ChanceBand {
  double expected = 0;
  double sigma = 0;
};
ChanceBand chance_band(std::size_t pool_size, std::size_t n_queries);

// ---------------------------------------------------------------------------
// Experiment protocols

struct ComparisonRow {
  SupervisionMode mode = SupervisionMode::kBaseline;
  std::uint64_t seed = 0;
  double p_at_1 = 0;            // with the mode's designated inference setting
  double r_at_5 = 0;
  double p_at_1_reasoning = 0;  // reasoning on
  double p_at_1_direct = 0;     // reasoning off
  double final_lm_loss = 0;
  double final_con_loss = 0;
  double mean_rationale_length = 0;
  double self_terminated = 0;
  std::string error;  // set when training aborted
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;
  /// self >= baseline + margin_self and leaky <= baseline - margin_leaky,
  /// decided per seed; the table passes when a majority of seeds does.
  bool ordering_holds(double margin_self = 0.02, double margin_leaky = 0.05) const;
  std::size_t seeds_satisfying(double margin_self, double margin_leaky) const;
  /// Reasoning-on >= reasoning-off for the SelfGenerated model, per seed.
  std::size_t seeds_reasoning_helps() const;
  std::size_t n_seeds() const;
};

/// SelfGenerated is evaluated with reasoning on, the other modes with it off.
bool designated_reasoning(SupervisionMode mode) noexcept;

template <typename T>
using TrainedHook = std::function<void(SupervisionMode, const TrainResult<T>&)>;

/// Trains the three modes from the same cold-start parameters with one seed
/// and appends one row per mode. `on_trained` sees each finished model.
template <typename T>
void run_supervision_comparison(const Parameters<T>& cold_start_params, const Dataset& train, const Dataset& eval_set,
                                const std::vector<CandidatePool>& pools, const TrainConfig& base_config,
                                unsigned threads, ComparisonTable& table, const TrainedHook<T>& on_trained = {});

struct DiagnosticSummary {
  double initial_lm = 0;
  double final_lm = 0;
  double initial_con = 0;
  double final_con = 0;
  /// 1 - final / initial.
  double lm_reduction() const { return initial_lm > 0 ? 1.0 - final_lm / initial_lm : 0.0; }
  double con_ratio() const { return initial_con > 0 ? final_con / initial_con : 0.0; }
};

struct DiagnosticTrace {
  PerturbationMode mode = PerturbationMode::kWrongQuery;
  TrainTrace trace;
  DiagnosticSummary summary;
  std::size_t batch_size = 0;
};

/// Means of the first and last `window` records; window defaults to a tenth
/// of the trace (at least one record).
DiagnosticSummary summarize_trace(const TrainTrace& trace, std::size_t window = 0);

/// OracleLeaky training on (q_w, r_o, t) and on (q, r_o, t_w).
template <typename T>
std::vector<DiagnosticTrace> run_leakage_diagnostic(const Parameters<T>& cold_start_params, const Dataset& train,
                                                    const TrainConfig& config);

struct SweepRow {
  std::string ratio;
  AlphaWeights alpha;
  double p_at_1 = 0;
  double r_at_5 = 0;
  std::string error;
};

struct SweepTable {
  std::vector<SweepRow> rows;  // by decreasing lm share
  std::vector<std::string> warnings;
};

/// One SelfGenerated run per distinct ratio; failures are recorded per row.
template <typename T>
SweepTable run_alpha_sweep(const Parameters<T>& cold_start_params, const Dataset& train, const Dataset& eval_set,
                           const std::vector<CandidatePool>& pools, const TrainConfig& base_config,
                           const std::vector<std::string>& ratios, unsigned threads);

// ---------------------------------------------------------------------------
// Reports

struct ReportMeta {
  std::string fingerprint;
  std::uint64_t seed = 0;
  std::string version;
};

struct ReportBundle {
  ReportMeta meta;
  std::vector<std::pair<std::string, EvalReport>> evals;  // (name, report)
  std::optional<ComparisonTable> comparison;
  std::vector<DiagnosticTrace> diagnostic;
  std::optional<SweepTable> sweep;
};

struct ReportFile {
  std::string name;
  std::string contents;
};

/// Renders every section of the bundle as CSV and markdown, file names
/// carrying the experiment name and fingerprint.
std::vector<ReportFile> render_report(const ReportBundle& bundle);

/// Writes render_report() under `dir` and returns the written paths.
std::vector<std::filesystem::path> emit_report(const ReportBundle& bundle, const std::filesystem::path& dir);

/// Lossless JSON form of a bundle, used to re-render reports later.
std::string bundle_to_json(const ReportBundle& bundle);
/// Throws ParseError on malformed input.
ReportBundle bundle_from_json(const std::string& text);

/// Numeric cells of every data row of the first markdown table in `text`.
std::vector<std::vector<double>> parse_markdown_numbers(const std::string& text);

}  // namespace rge
