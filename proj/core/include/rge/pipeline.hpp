// SPDX-License-Identifier: Apache-2.0
//
// Run directory layout and the experiment stages behind the command line.
// Artifacts live under <run.root>/<fingerprint>/. A stage always recomputes
// and overwrites its own outputs and loads, never rebuilds, its inputs.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "rge/retrieval.hpp"
#include "rge/run_config.hpp"

namespace rge {

std::string_view library_version() noexcept;

class RunPaths {
 public:
  explicit RunPaths(const RunConfig& config);

  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path config_file() const { return root_ / "config.txt"; }
  std::filesystem::path seed_dir(std::uint64_t seed) const;
  std::filesystem::path train_data(std::uint64_t seed) const { return seed_dir(seed) / "train.jsonl"; }
  std::filesystem::path eval_data(std::uint64_t seed) const { return seed_dir(seed) / "eval.jsonl"; }
  std::filesystem::path cold_start(std::uint64_t seed) const { return seed_dir(seed) / "cold_start.ckpt"; }
  std::filesystem::path model_dir(std::uint64_t seed, SupervisionMode mode) const;
  std::filesystem::path model(std::uint64_t seed, SupervisionMode mode) const { return model_dir(seed, mode) / "final.ckpt"; }
  std::filesystem::path bundle() const { return root_ / "bundle.json"; }
  std::filesystem::path report_dir() const { return root_ / "report"; }

 private:
  std::filesystem::path root_;
};

/// Stages share one validated config. Progress lines go to `log` when set.
class Pipeline {
 public:
  explicit Pipeline(RunConfig config, std::ostream* log = nullptr);

  const RunConfig& config() const noexcept { return config_; }
  const RunPaths& paths() const noexcept { return paths_; }
  const TaskGenerator& generator() const noexcept { return generator_; }

  /// Generates the seed's splits and writes them to `dir` (the seed
  /// directory by default).
  DatasetSplits generate_data(std::uint64_t seed, const std::filesystem::path& dir = {}) const;
  /// Loaders throw ConfigError naming the missing artifact and the command
  /// that produces it.
  DatasetSplits load_data(std::uint64_t seed) const;
  std::vector<CandidatePool> pools(std::uint64_t seed, const Dataset& eval_set) const;

  template <typename T>
  Parameters<T> run_cold_start(std::uint64_t seed) const;
  template <typename T>
  Parameters<T> load_cold_start(std::uint64_t seed) const;

  /// Trains `mode` from the seed's cold start. With `resume`, continues from
  /// the newest periodic checkpoint in the model directory when there is one.
  template <typename T>
  Parameters<T> train(std::uint64_t seed, SupervisionMode mode, bool resume = false) const;
  template <typename T>
  Parameters<T> load_model(std::uint64_t seed, SupervisionMode mode) const;

  template <typename T>
  EvalReport evaluate_model(const Parameters<T>& params, std::uint64_t seed, bool reasoning) const;

  /// The three modes for every configured seed; saves each trained model.
  template <typename T>
  ComparisonTable compare() const;
  template <typename T>
  std::vector<DiagnosticTrace> diagnose(std::uint64_t seed) const;
  template <typename T>
  SweepTable sweep(std::uint64_t seed) const;

  /// Data, cold start, comparison, diagnostic and sweep for every seed, then
  /// publish().
  template <typename T>
  ReportBundle run_all() const;

  ReportMeta meta() const;
  /// Writes bundle.json and renders it into the report directory.
  std::vector<std::filesystem::path> publish(const ReportBundle& bundle) const;

 private:
  void note(const std::string& line) const;
  void write_config() const;
  /// Writes <artifact>.json with seed, fingerprint, version and producer.
  void stamp(const std::filesystem::path& artifact, std::uint64_t seed, std::string_view command) const;

  RunConfig config_;
  RunPaths paths_;
  TaskGenerator generator_;
  std::ostream* log_;
};

/// Calls fn.template operator()<T>() with T matching `precision`.
template <typename Fn>
decltype(auto) with_precision(Precision precision, Fn&& fn) {
  if (precision == Precision::kFloat64) return fn.template operator()<double>();
  return fn.template operator()<float>();
}

/// Whitespace-separated token names or ids per line; blank lines skipped.
std::vector<TokenSequence> parse_token_lines(const Vocab& vocab, const std::string& text);

/// One embedding per line, values printed with %.9g.
template <typename T>
std::string format_embeddings(const std::vector<std::vector<T>>& rows);

}  // namespace rge
