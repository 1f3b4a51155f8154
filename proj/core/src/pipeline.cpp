// SPDX-License-Identifier: Apache-2.0
#include "rge/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <optional>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "rge/checkpoint.hpp"
#include "rge/dataset_io.hpp"
#include "rge/error.hpp"

namespace rge {
namespace {

namespace fs = std::filesystem;

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string seconds_text(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1fs", s);
  return buf;
}

void require(const fs::path& path, const std::string& what, const std::string& command) {
  if (!fs::exists(path)) {
    throw ConfigError("missing " + what + " at " + path.string() + "; run `rge " + command + "` first");
  }
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

/// Newest step-NNNNNN stem that has both a checkpoint and optimizer state.
std::optional<std::string> newest_periodic_stem(const fs::path& dir) {
  std::optional<std::string> best;
  if (!fs::is_directory(dir)) return best;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto& p = entry.path();
    if (p.extension() != ".opt") continue;
    const auto stem = p.stem().string();
    if (!stem.starts_with("step-") || !fs::exists(dir / (stem + ".ckpt"))) continue;
    if (!best || stem > *best) best = stem;
  }
  return best;
}

RunConfig resolved(RunConfig config) {
  config.run_root = fs::absolute(config.run_root).lexically_normal();
  return config;
}

}  // namespace

std::string_view library_version() noexcept { return RGE_VERSION; }

RunPaths::RunPaths(const RunConfig& config) : root_(config.run_root / config.fingerprint()) {}

fs::path RunPaths::seed_dir(std::uint64_t seed) const { return root_ / ("seed-" + std::to_string(seed)); }

fs::path RunPaths::model_dir(std::uint64_t seed, SupervisionMode mode) const {
  return seed_dir(seed) / std::string(to_string(mode));
}

Pipeline::Pipeline(RunConfig config, std::ostream* log)
    : config_(resolved(std::move(config))), paths_(config_), generator_(config_.task), log_(log) {
  config_.validate();
}

void Pipeline::note(const std::string& line) const {
  if (log_) *log_ << line << std::endl;
}

void Pipeline::write_config() const { write_file(paths_.config_file(), config_.canonical_text()); }

ReportMeta Pipeline::meta() const { return {config_.fingerprint(), config_.seed, std::string(library_version())}; }

void Pipeline::stamp(const fs::path& artifact, std::uint64_t seed, std::string_view command) const {
  const nlohmann::json j = {{"artifact", artifact.filename().string()},
                            {"command", command},
                            {"fingerprint", config_.fingerprint()},
                            {"seed", seed},
                            {"version", library_version()}};
  write_file(fs::path(artifact.string() + ".json"), j.dump(1) + "\n");
}

DatasetSplits Pipeline::generate_data(std::uint64_t seed, const fs::path& dir) const {
  write_config();
  const auto out = dir.empty() ? paths_.seed_dir(seed) : dir;
  Stopwatch clock;
  auto splits = generate_dataset(generator_, seed, config_.n_train, config_.n_eval, config_.threads);
  for (const auto& [split, name] : {std::pair{&splits.train, "train.jsonl"}, std::pair{&splits.eval, "eval.jsonl"}}) {
    write_jsonl(*split, generator_.vocab(), out / name);
    stamp(out / name, seed, "gen-data");
  }
  note("seed " + std::to_string(seed) + ": generated " + std::to_string(splits.train.size()) + " train / " +
       std::to_string(splits.eval.size()) + " eval examples in " + seconds_text(clock.seconds()));
  return splits;
}

DatasetSplits Pipeline::load_data(std::uint64_t seed) const {
  require(paths_.train_data(seed), "training data", "gen-data");
  require(paths_.eval_data(seed), "eval data", "gen-data");
  return {read_jsonl(paths_.train_data(seed), generator_.vocab()), read_jsonl(paths_.eval_data(seed), generator_.vocab())};
}

std::vector<CandidatePool> Pipeline::pools(std::uint64_t seed, const Dataset& eval_set) const {
  return build_eval_pools(generator_, eval_set, config_.pool_size, seed);
}

template <typename T>
Parameters<T> Pipeline::run_cold_start(std::uint64_t seed) const {
  const auto splits = load_data(seed);
  auto params = init_params<T>(config_.model_for(seed));
  Stopwatch clock;
  const auto trace = cold_start(params, splits.train, config_.train_for(seed));
  const auto path = paths_.cold_start(seed);
  save_checkpoint(params, path);
  stamp(path, seed, "cold-start");
  write_file(paths_.seed_dir(seed) / "cold_start_trace.csv", trace_to_csv(trace));
  note("seed " + std::to_string(seed) + ": cold start " + std::to_string(trace.size()) + " steps, final lm " +
       fixed(trace.empty() ? 0.0 : trace.back().lm_loss) + " in " + seconds_text(clock.seconds()));
  return params;
}

template <typename T>
Parameters<T> Pipeline::load_cold_start(std::uint64_t seed) const {
  require(paths_.cold_start(seed), "cold-start checkpoint", "cold-start");
  return load_checkpoint<T>(paths_.cold_start(seed));
}

template <typename T>
Parameters<T> Pipeline::train(std::uint64_t seed, SupervisionMode mode, bool resume) const {
  const auto dir = paths_.model_dir(seed, mode);
  auto config = config_.train_for(seed);
  config.mode = mode;
  config.checkpoint_dir = dir;
  const auto splits = load_data(seed);

  Parameters<T> init;
  std::optional<OptimizerState<T>> state;
  const auto stem = resume ? newest_periodic_stem(dir) : std::nullopt;
  if (stem) {
    init = load_checkpoint<T>(dir / (*stem + ".ckpt"));
    state = deserialize_optimizer<T>(read_file(dir / (*stem + ".opt")), init);
    note("resuming " + std::string(to_string(mode)) + " from " + *stem);
  } else {
    init = load_cold_start<T>(seed);
  }
  Stopwatch clock;
  auto result = run_training(init, splits.train, config, state);
  save_training_state(result.params, result.optimizer, dir, "final");
  stamp(paths_.model(seed, mode), seed, "train");
  write_file(dir / "trace.csv", trace_to_csv(result.trace));
  note("seed " + std::to_string(seed) + ": trained " + std::string(to_string(mode)) + " for " +
       std::to_string(result.trace.size()) + " steps in " + seconds_text(clock.seconds()));
  return std::move(result.params);
}

template <typename T>
Parameters<T> Pipeline::load_model(std::uint64_t seed, SupervisionMode mode) const {
  require(paths_.model(seed, mode), std::string(to_string(mode)) + " model", "train --mode " + std::string(to_string(mode)));
  return load_checkpoint<T>(paths_.model(seed, mode));
}

template <typename T>
EvalReport Pipeline::evaluate_model(const Parameters<T>& params, std::uint64_t seed, bool reasoning) const {
  const auto splits = load_data(seed);
  EvalOptions options;
  options.reasoning = reasoning;
  options.max_new_tokens = config_.train.max_new_tokens;
  options.threads = config_.threads;
  auto report = evaluate(params, splits.eval, pools(seed, splits.eval), options);
  report.fingerprint = config_.fingerprint();
  return report;
}

template <typename T>
ComparisonTable Pipeline::compare() const {
  ComparisonTable table;
  for (const auto seed : config_.seeds()) {
    const auto splits = load_data(seed);
    const auto cold = load_cold_start<T>(seed);
    const auto first = table.rows.size();
    Stopwatch clock;
    run_supervision_comparison<T>(
        cold, splits.train, splits.eval, pools(seed, splits.eval), config_.train_for(seed), config_.threads, table,
        [&](SupervisionMode mode, const TrainResult<T>& result) {
          const auto dir = paths_.model_dir(seed, mode);
          save_training_state(result.params, result.optimizer, dir, "final");
          stamp(paths_.model(seed, mode), seed, "train");
          write_file(dir / "trace.csv", trace_to_csv(result.trace));
        });
    // Rows carry the derived training seed; report the run seed instead.
    for (auto i = first; i < table.rows.size(); ++i) {
      table.rows[i].seed = seed;
      const auto& r = table.rows[i];
      note("seed " + std::to_string(seed) + ": " + std::string(to_string(r.mode)) + " P@1 " + fixed(r.p_at_1) +
           (r.error.empty() ? "" : " (" + r.error + ")"));
    }
    note("seed " + std::to_string(seed) + ": comparison done in " + seconds_text(clock.seconds()));
  }
  return table;
}

template <typename T>
std::vector<DiagnosticTrace> Pipeline::diagnose(std::uint64_t seed) const {
  const auto splits = load_data(seed);
  const auto cold = load_cold_start<T>(seed);
  Stopwatch clock;
  auto out = run_leakage_diagnostic(cold, splits.train, config_.train_for(seed));
  note("seed " + std::to_string(seed) + ": leakage diagnostic in " + seconds_text(clock.seconds()));
  return out;
}

template <typename T>
SweepTable Pipeline::sweep(std::uint64_t seed) const {
  const auto splits = load_data(seed);
  const auto cold = load_cold_start<T>(seed);
  Stopwatch clock;
  auto out = run_alpha_sweep(cold, splits.train, splits.eval, pools(seed, splits.eval), config_.train_for(seed),
                             config_.sweep_ratios, config_.threads);
  note("seed " + std::to_string(seed) + ": alpha sweep in " + seconds_text(clock.seconds()));
  return out;
}

template <typename T>
ReportBundle Pipeline::run_all() const {
  ReportBundle bundle;
  bundle.meta = meta();
  for (const auto seed : config_.seeds()) {
    generate_data(seed);
    const auto cold = run_cold_start<T>(seed);
    bundle.evals.emplace_back("cold_start/seed-" + std::to_string(seed), evaluate_model(cold, seed, true));
  }
  bundle.comparison = compare<T>();
  const auto first = config_.seeds().front();
  for (auto mode : {SupervisionMode::kBaseline, SupervisionMode::kOracleLeaky, SupervisionMode::kSelfGenerated}) {
    const auto params = load_model<T>(first, mode);
    for (bool reasoning : {false, true}) {
      bundle.evals.emplace_back(std::string(to_string(mode)) + (reasoning ? "/reasoning" : "/direct"),
                                evaluate_model(params, first, reasoning));
    }
  }
  bundle.diagnostic = diagnose<T>(first);
  if (!config_.sweep_ratios.empty()) bundle.sweep = sweep<T>(first);
  publish(bundle);
  return bundle;
}

std::vector<fs::path> Pipeline::publish(const ReportBundle& bundle) const {
  write_file(paths_.bundle(), bundle_to_json(bundle));
  return emit_report(bundle, paths_.report_dir());
}

std::vector<TokenSequence> parse_token_lines(const Vocab& vocab, const std::string& text) {
  std::vector<TokenSequence> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(vocab.parse(line));
    } catch (const VocabError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

template <typename T>
std::string format_embeddings(const std::vector<std::vector<T>>& rows) {
  std::string out;
  char buf[32];
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::snprintf(buf, sizeof buf, i ? " %.9g" : "%.9g", static_cast<double>(row[i]));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

#define RGE_INSTANTIATE(T)                                                                                    \
  template Parameters<T> Pipeline::run_cold_start<T>(std::uint64_t) const;                                    \
  template Parameters<T> Pipeline::load_cold_start<T>(std::uint64_t) const;                                   \
  template Parameters<T> Pipeline::train<T>(std::uint64_t, SupervisionMode, bool) const;                      \
  template Parameters<T> Pipeline::load_model<T>(std::uint64_t, SupervisionMode) const;                       \
  template EvalReport Pipeline::evaluate_model<T>(const Parameters<T>&, std::uint64_t, bool) const;           \
  template ComparisonTable Pipeline::compare<T>() const;                                                      \
  template std::vector<DiagnosticTrace> Pipeline::diagnose<T>(std::uint64_t) const;                           \
  template SweepTable Pipeline::sweep<T>(std::uint64_t) const;                                                \
  template ReportBundle Pipeline::run_all<T>() const;                                                         \
  template std::string format_embeddings<T>(const std::vector<std::vector<T>>&);

RGE_INSTANTIATE(float)
RGE_INSTANTIATE(double)

#undef RGE_INSTANTIATE

}  // namespace rge
