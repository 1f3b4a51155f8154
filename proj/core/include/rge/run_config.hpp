// SPDX-License-Identifier: Apache-2.0
//
// Merged experiment configuration. The file format is one `key = value` per
// line; `#` starts a comment. Keys are listed by RunConfig::keys().

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "rge/model.hpp"
#include "rge/task.hpp"
#include "rge/trainer.hpp"

namespace rge {

enum class Precision { kFloat32, kFloat64 };

struct RunConfig {
  ModelConfig model;  // vocab_size and seed are filled in per run
  TaskConfig task;
  std::size_t n_train = 20000;
  std::size_t n_eval = 2000;
  std::size_t pool_size = 16;
  TrainConfig train;
  std::size_t n_seeds = 3;
  std::vector<std::string> sweep_ratios = {"100:1", "10:1", "1:1", "1:10", "1:100", "0"};
  Precision precision = Precision::kFloat32;
  unsigned threads = 1;
  std::uint64_t seed = 0;
  std::filesystem::path run_root = "runs";

  RunConfig();

  /// Throws ConfigError on an unknown key or a malformed value.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  static const std::vector<std::string>& keys();

  /// Canonical "key = value" lines in key order.
  std::string to_text() const;
  /// to_text() without the keys that cannot change results.
  std::string canonical_text() const;
  /// Stable hash of canonical_text(), 16 hex digits.
  std::string fingerprint() const;
  /// Throws ConfigError on inconsistent values.
  void validate() const;

  /// Per-experiment seeds: seed, seed + 1, ...
  std::vector<std::uint64_t> seeds() const;
  /// Model config for one seed with the vocabulary size filled in.
  ModelConfig model_for(std::uint64_t run_seed) const;
  /// Train config for one seed.
  TrainConfig train_for(std::uint64_t run_seed) const;
};

/// Applies `key = value` lines. Errors carry the 1-based line number.
void apply_config_text(RunConfig& config, const std::string& text, const std::string& origin = "config");
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

/// Applies RGE_<KEY> variables, where KEY is the config key upper-cased with
/// '.' replaced by '_'. `env` is normally the process environment.
void apply_environment(RunConfig& config, const std::map<std::string, std::string>& env);
std::map<std::string, std::string> process_environment();

}  // namespace rge
