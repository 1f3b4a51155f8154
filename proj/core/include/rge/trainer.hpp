// SPDX-License-Identifier: Apache-2.0
//
// Cold start, joint LM + contrastive training in the three supervision modes,
// AdamW, and resumable checkpointing.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rge/model.hpp"
#include "rge/objectives.hpp"
#include "rge/task.hpp"

namespace rge {

/// Baseline: anchor is <emb> right after the query.
/// OracleLeaky: anchor is <emb> after the query and its oracle rationale.
/// SelfGenerated: anchor is <emb> after the query and a greedy rationale the
/// model generates itself at every step.
enum class SupervisionMode { kBaseline, kOracleLeaky, kSelfGenerated };

std::string_view to_string(SupervisionMode m) noexcept;
SupervisionMode parse_supervision_mode(std::string_view s);

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // applied to matrices only
  double grad_clip = 1.0;      // global L2 norm, 0 disables
};

enum class LrSchedule { kConstant, kCosine };

std::string_view to_string(LrSchedule s) noexcept;
LrSchedule parse_lr_schedule(std::string_view s);

/// Linear warmup over `warmup_fraction` of the steps, then constant or cosine
/// decay to `min_factor` of the peak.
double scheduled_lr(double peak, LrSchedule schedule, double warmup_fraction, double min_factor, std::size_t step,
                    std::size_t total_steps);

struct TrainConfig {
  SupervisionMode mode = SupervisionMode::kSelfGenerated;
  std::string alpha_ratio = "1:10";
  double tau = 0.03;
  double learning_rate = 3e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 3;
  std::size_t max_new_tokens = 64;
  std::uint64_t seed = 0;
  std::size_t cold_start_steps = 500;
  double cold_start_learning_rate = 1e-3;
  LrSchedule lr_schedule = LrSchedule::kCosine;
  double warmup_fraction = 0.05;
  double min_lr_factor = 0.1;
  OptimizerConfig optimizer;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::filesystem::path checkpoint_dir;

  /// Throws ConfigError.
  void validate() const;
  AlphaWeights alpha() const { return parse_alpha_ratio(alpha_ratio); }
};

template <typename T>
struct OptimizerState {
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::uint64_t step = 0;

  static OptimizerState zeros_like(const Parameters<T>& params);
};

template <typename T>
std::string serialize_optimizer(const OptimizerState<T>& state);
template <typename T>
OptimizerState<T> deserialize_optimizer(const std::string& bytes, const Parameters<T>& params);

/// One AdamW update from the accumulated gradients, which are cleared
/// afterwards. Returns the global gradient norm before clipping.
template <typename T>
double adamw_step(const Parameters<T>& params, OptimizerState<T>& state, double learning_rate,
                  const OptimizerConfig& config);

struct TraceRecord {
  std::size_t step = 0;
  double lm_loss = 0;
  double con_loss = 0;
  double total = 0;
  double wall_time = 0;
  double mean_rationale_length = 0;  // generated rationales, SelfGenerated only
  double self_terminated = 0;        // fraction of rationales ending in <emb>
};

using TrainTrace = std::vector<TraceRecord>;

/// Columns step, lm_loss, con_loss, total.
std::string trace_to_csv(const TrainTrace& trace);

template <typename T>
struct QueryForward {
  Tensor<T> anchor;                  // [1 x d]
  std::optional<LmTerm<T>> lm;       // empty in Baseline
  TokenSequence rationale;           // rationale the anchor was conditioned on
  bool self_terminated = true;
};

/// Builds the query-side forward for `mode`. Baseline never touches the
/// oracle rationale.
template <typename T>
QueryForward<T> build_query_forward(SupervisionMode mode, const ExampleTriple& example, const Parameters<T>& params,
                                    std::size_t max_new_tokens);

template <typename T>
struct TargetForward {
  Tensor<T> embedding;  // [1 x d]
  LmTerm<T> lm;         // supervises the terminating <emb>
};

template <typename T>
TargetForward<T> build_target_forward(const TokenSequence& target, const Parameters<T>& params);

struct StepStats {
  LossBreakdown loss;
  double mean_rationale_length = 0;
  double self_terminated = 0;
};

using Batch = std::span<const ExampleTriple* const>;

/// Joint loss, backward and one AdamW update at `lr` (config.learning_rate
/// when absent). Throws NumericError on a non-finite loss.
template <typename T>
StepStats train_step(const Parameters<T>& params, OptimizerState<T>& state, Batch batch, const TrainConfig& config,
                     std::optional<double> lr = std::nullopt);

/// Loss of a batch without an update.
template <typename T>
StepStats evaluate_batch_loss(const Parameters<T>& params, Batch batch, const TrainConfig& config);

/// Example indices for step `step`: a seeded permutation per epoch, filled
/// to the full batch by wrapping around the same permutation.
std::vector<std::size_t> batch_indices(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                                       std::size_t step);
std::size_t steps_per_epoch(std::size_t dataset_size, std::size_t batch_size);

/// LM-only training on query ++ rationale ++ <emb> and target ++ <emb>.
template <typename T>
TrainTrace cold_start(Parameters<T>& params, const Dataset& dataset, const TrainConfig& config);

template <typename T>
struct TrainResult {
  Parameters<T> params;
  OptimizerState<T> optimizer;
  TrainTrace trace;
};

struct RunOptions {
  /// Stop after this many total steps (for resume tests); 0 runs to the end.
  std::size_t stop_after = 0;
  std::function<void(const TraceRecord&)> on_step;
};

/// Trains `init` (copied) for ceil(N / batch) * epochs steps. When `resume`
/// holds an optimizer state, training continues at its step count.
template <typename T>
TrainResult<T> run_training(const Parameters<T>& init, const Dataset& dataset, const TrainConfig& config,
                            const std::optional<OptimizerState<T>>& resume = std::nullopt,
                            const RunOptions& options = {});

/// Writes <dir>/<stem>.ckpt and <dir>/<stem>.opt.
template <typename T>
void save_training_state(const Parameters<T>& params, const OptimizerState<T>& state, const std::filesystem::path& dir,
                         const std::string& stem);

}  // namespace rge
