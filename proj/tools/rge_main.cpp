// SPDX-License-Identifier: Apache-2.0
//
// rge: command-line driver for data generation, training, evaluation and
// the experiment reports. Exit codes: 0 success, 1 user or config error,
// 2 numeric abort, 3 IO error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rge/checkpoint.hpp"
#include "rge/dataset_io.hpp"
#include "rge/error.hpp"
#include "rge/pipeline.hpp"

namespace fs = std::filesystem;
using namespace rge;

namespace {

struct GlobalOptions {
  std::vector<std::string> config_files;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::optional<std::string> root;
  std::optional<std::string> precision;
  bool quiet = false;
};

/// Defaults, then config files, then RGE_* variables, then flags.
RunConfig merged_config(const GlobalOptions& g, const std::vector<std::pair<std::string, std::string>>& command_sets) {
  RunConfig config;
  for (const auto& f : g.config_files) apply_config_file(config, f);
  apply_environment(config, process_environment());
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed) config.seed = *g.seed;
  if (g.threads) config.threads = *g.threads;
  if (g.root) config.run_root = *g.root;
  if (g.precision) config.set("run.precision", *g.precision);
  for (const auto& [k, v] : command_sets) config.set(k, v);
  return config;
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

ReportBundle load_or_new_bundle(const Pipeline& p) {
  if (fs::exists(p.paths().bundle())) {
    auto b = bundle_from_json(read_file(p.paths().bundle()));
    b.meta = p.meta();
    return b;
  }
  ReportBundle b;
  b.meta = p.meta();
  return b;
}

void save_bundle(const Pipeline& p, const ReportBundle& b) { write_file(p.paths().bundle(), bundle_to_json(b)); }

void put_eval(ReportBundle& b, const std::string& name, const EvalReport& r) {
  for (auto& [n, existing] : b.evals) {
    if (n == name) {
      existing = r;
      return;
    }
  }
  b.evals.emplace_back(name, r);
}

void print_eval(const std::string& name, const EvalReport& r) {
  std::cout << name << " (reasoning " << (r.reasoning ? "on" : "off") << ", pool " << r.pool_size << ")\n";
  for (const auto& [family, m] : r.per_family) {
    std::cout << "  " << family << "  P@1 " << fixed(m.precision_at_1) << "  R@5 " << fixed(m.recall_at_5) << "  n "
              << m.n_queries << "\n";
  }
  std::cout << "  overall  P@1 " << fixed(r.overall.precision_at_1) << "  R@5 " << fixed(r.overall.recall_at_5)
            << "  n " << r.overall.n_queries << "\n";
  if (r.reasoning) {
    std::cout << "  mean rationale length " << fixed(r.mean_rationale_length) << ", self-terminated "
              << fixed(r.self_terminated) << "\n";
  }
}

void print_comparison(const ComparisonTable& t) {
  for (const auto& r : t.rows) {
    std::cout << "seed " << r.seed << "  " << to_string(r.mode) << "  P@1 " << fixed(r.p_at_1) << "  (on "
              << fixed(r.p_at_1_reasoning) << ", off " << fixed(r.p_at_1_direct) << ")"
              << (r.error.empty() ? "" : "  error: " + r.error) << "\n";
  }
  std::cout << "ordering holds on " << t.seeds_satisfying(0.02, 0.05) << " of " << t.n_seeds() << " seeds\n";
}

void print_diagnostic(const std::vector<DiagnosticTrace>& d) {
  for (const auto& t : d) {
    const auto& s = t.summary;
    std::cout << to_string(t.mode) << "  lm " << fixed(s.initial_lm) << " -> " << fixed(s.final_lm) << " (reduction "
              << fixed(s.lm_reduction()) << ")  con " << fixed(s.initial_con) << " -> " << fixed(s.final_con)
              << " (ratio " << fixed(s.con_ratio()) << ")\n";
  }
}

void print_sweep(const SweepTable& t) {
  for (const auto& w : t.warnings) std::cerr << "warning: " << w << "\n";
  for (const auto& r : t.rows) {
    std::cout << "alpha " << r.ratio << "  P@1 " << fixed(r.p_at_1) << "  R@5 " << fixed(r.r_at_5)
              << (r.error.empty() ? "" : "  error: " + r.error) << "\n";
  }
}

std::string read_input(const std::string& path) {
  if (path == "-") return {std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>()};
  return read_file(path);
}

/// "cold-start" or a supervision mode name.
std::optional<SupervisionMode> model_choice(const std::string& name) {
  if (name == "cold-start" || name == "cold_start") return std::nullopt;
  return parse_supervision_mode(name);
}

template <typename T>
Parameters<T> load_choice(const Pipeline& p, std::uint64_t seed, const std::string& model, const std::string& checkpoint) {
  if (!checkpoint.empty()) return load_checkpoint<T>(checkpoint);
  const auto mode = model_choice(model);
  return mode ? p.load_model<T>(seed, *mode) : p.load_cold_start<T>(seed);
}

int run(int argc, char** argv) {
  CLI::App app{"Rationale-conditioned embedding experiments: data, training, evaluation and reports", "rge"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(library_version()));

  GlobalOptions g;
  app.add_option("-c,--config", g.config_files, "Config file(s) of key = value lines, applied in order");
  app.add_option("--set", g.overrides, "Override one config key, as key=value (repeatable)");
  app.add_option("--seed", g.seed, "Run seed (run.seed)");
  app.add_option("--threads", g.threads, "Worker threads for data generation and evaluation")->check(CLI::PositiveNumber);
  app.add_option("--root", g.root, "Directory that holds run directories (run.root)");
  app.add_option("--precision", g.precision, "float or double (run.precision)");
  app.add_flag("-q,--quiet", g.quiet, "No progress lines on stderr");

  std::vector<std::pair<std::string, std::string>> sets;
  auto* show = app.add_subcommand("show-config", "Print the merged config, its fingerprint and run directory");
  auto* keys = app.add_subcommand("keys", "List every config key");

  auto* gen = app.add_subcommand("gen-data", "Generate train and eval JSONL files");
  std::string gen_out;
  std::optional<std::size_t> n_train, n_eval;
  std::optional<std::string> families;
  gen->add_option("--out", gen_out, "Output directory (default: the run's seed directory)");
  gen->add_option("--n-train", n_train, "Training examples (data.n_train)");
  gen->add_option("--n-eval", n_eval, "Eval examples (data.n_eval)");
  gen->add_option("--families", families, "Comma-separated task families (task.families)");

  auto* cold = app.add_subcommand("cold-start", "LM-only training on oracle rationales");

  auto* train = app.add_subcommand("train", "Train one supervision mode from the cold-start checkpoint");
  std::string train_mode;
  bool resume = false;
  train->add_option("--mode", train_mode, "baseline, oracle_leaky or self_generated")->required();
  train->add_flag("--resume", resume, "Continue from the newest periodic checkpoint");

  auto* compare = app.add_subcommand("compare", "Train and evaluate all three modes for every seed");

  auto* eval = app.add_subcommand("eval", "Precision@1 / Recall@5 on the eval split");
  std::string eval_model = "self_generated", eval_checkpoint, eval_reasoning;
  eval->add_option("--model", eval_model, "cold-start, baseline, oracle_leaky or self_generated");
  eval->add_option("--checkpoint", eval_checkpoint, "Evaluate this checkpoint instead");
  eval->add_option("--reasoning", eval_reasoning, "on or off (default: on for self_generated and cold-start)")
      ->check(CLI::IsMember({"on", "off"}));

  auto* diagnose = app.add_subcommand("diagnose", "Leakage diagnostic on perturbed triplets");

  auto* sweep = app.add_subcommand("sweep", "SelfGenerated training over loss-weight ratios");
  std::optional<std::string> ratios;
  sweep->add_option("--ratios", ratios, "Comma-separated lm:con ratios (experiment.sweep_ratios)");

  auto* embed = app.add_subcommand("embed", "Embed token sequences, one vector per output line");
  std::string embed_model = "self_generated", embed_checkpoint, embed_mode = "reasoning", embed_input = "-";
  embed->add_option("--model", embed_model, "cold-start, baseline, oracle_leaky or self_generated");
  embed->add_option("--checkpoint", embed_checkpoint, "Use this checkpoint instead");
  embed->add_option("--mode", embed_mode, "direct or reasoning")->check(CLI::IsMember({"direct", "reasoning"}));
  embed->add_option("--input", embed_input, "File of token sequences, one per line, or - for stdin");

  auto* report = app.add_subcommand("report", "Render bundle.json as CSV and markdown tables");
  std::string report_bundle, report_out;
  report->add_option("--bundle", report_bundle, "Bundle to render (default: the run's bundle.json)");
  report->add_option("--out", report_out, "Output directory (default: the run's report directory)");

  auto* run_all = app.add_subcommand("run-all", "gen-data, cold-start, compare, diagnose, sweep and report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (keys->parsed()) {
    for (const auto& k : RunConfig::keys()) std::cout << k << "\n";
    return 0;
  }
  if (n_train) sets.emplace_back("data.n_train", std::to_string(*n_train));
  if (n_eval) sets.emplace_back("data.n_eval", std::to_string(*n_eval));
  if (families) sets.emplace_back("task.families", *families);
  if (ratios) sets.emplace_back("experiment.sweep_ratios", *ratios);

  const auto config = merged_config(g, sets);
  Pipeline p(config, g.quiet ? nullptr : &std::cerr);
  const auto seed = config.seed;

  if (show->parsed()) {
    std::cout << config.to_text() << "# fingerprint " << config.fingerprint() << "\n# run directory "
              << p.paths().root().string() << "\n";
    return 0;
  }
  if (gen->parsed()) {
    if (config.n_train == 0) std::cerr << "warning: data.n_train is 0, the train file will be empty\n";
    const auto splits = p.generate_data(seed, gen_out);
    const auto dir = gen_out.empty() ? p.paths().seed_dir(seed) : fs::path(gen_out);
    std::cout << "train " << splits.train.size() << " examples, eval " << splits.eval.size() << " examples in "
              << dir.string() << " (vocab " << p.generator().vocab().fingerprint() << ", fingerprint "
              << config.fingerprint() << ", seed " << seed << ")\n";
    return 0;
  }
  if (report->parsed()) {
    const fs::path in = report_bundle.empty() ? p.paths().bundle() : fs::path(report_bundle);
    if (!fs::exists(in)) {
      throw ConfigError("missing report bundle at " + in.string() + "; run `rge run-all` or a stage command first");
    }
    const auto bundle = bundle_from_json(read_file(in));
    const fs::path out = report_out.empty() ? p.paths().report_dir() : fs::path(report_out);
    for (const auto& path : emit_report(bundle, out)) std::cout << path.string() << "\n";
    return 0;
  }

  return with_precision(config.precision, [&]<typename T>() -> int {
    if (cold->parsed()) {
      p.run_cold_start<T>(seed);
      std::cout << p.paths().cold_start(seed).string() << "\n";
    } else if (train->parsed()) {
      p.train<T>(seed, parse_supervision_mode(train_mode), resume);
      std::cout << p.paths().model(seed, parse_supervision_mode(train_mode)).string() << "\n";
    } else if (compare->parsed()) {
      auto bundle = load_or_new_bundle(p);
      bundle.comparison = p.compare<T>();
      save_bundle(p, bundle);
      print_comparison(*bundle.comparison);
    } else if (eval->parsed()) {
      const auto params = load_choice<T>(p, seed, eval_model, eval_checkpoint);
      const auto mode = eval_checkpoint.empty() ? model_choice(eval_model) : std::nullopt;
      const bool reasoning = eval_reasoning.empty() ? (!mode || designated_reasoning(*mode)) : eval_reasoning == "on";
      const auto r = p.evaluate_model(params, seed, reasoning);
      const auto name = (eval_checkpoint.empty() ? eval_model : fs::path(eval_checkpoint).stem().string()) +
                        (reasoning ? "/reasoning" : "/direct");
      auto bundle = load_or_new_bundle(p);
      put_eval(bundle, name, r);
      save_bundle(p, bundle);
      print_eval(name, r);
    } else if (diagnose->parsed()) {
      auto bundle = load_or_new_bundle(p);
      bundle.diagnostic = p.diagnose<T>(seed);
      save_bundle(p, bundle);
      print_diagnostic(bundle.diagnostic);
    } else if (sweep->parsed()) {
      auto bundle = load_or_new_bundle(p);
      bundle.sweep = p.sweep<T>(seed);
      save_bundle(p, bundle);
      print_sweep(*bundle.sweep);
    } else if (embed->parsed()) {
      const auto params = load_choice<T>(p, seed, embed_model, embed_checkpoint);
      const auto sequences = parse_token_lines(p.generator().vocab(), read_input(embed_input));
      std::vector<std::vector<T>> rows;
      for (const auto& seq : sequences) {
        const auto e = embed_mode == "direct" ? embed_direct(params, seq)
                                              : embed_with_reasoning(params, seq, config.train.max_new_tokens).embedding;
        rows.emplace_back(e.data().begin(), e.data().end());
      }
      std::cout << format_embeddings(rows);
    } else if (run_all->parsed()) {
      const auto bundle = p.run_all<T>();
      if (bundle.comparison) print_comparison(*bundle.comparison);
      print_diagnostic(bundle.diagnostic);
      if (bundle.sweep) print_sweep(*bundle.sweep);
      std::cout << "report in " << p.paths().report_dir().string() << "\n";
    }
    return 0;
  });
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
