// SPDX-License-Identifier: Apache-2.0
#include "rge/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "rge/dataset_io.hpp"
#include "rge/error.hpp"
#include "rge/hash.hpp"

namespace rge {
namespace {

template <typename T>
double norm_of(std::span<const T> v) {
  double s = 0;
  for (T x : v) s += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(s);
}

template <typename T>
std::vector<T> to_vector(const Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

std::string fmt(double v, const char* spec = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

template <typename T>
RetrievalIndex<T> make_index(std::vector<std::vector<T>> rows, std::vector<std::uint64_t> ids) {
  if (rows.empty()) throw ContractError("retrieval index needs at least one candidate");
  if (ids.empty()) {
    ids.resize(rows.size());
    std::iota(ids.begin(), ids.end(), std::uint64_t{0});
  }
  if (ids.size() != rows.size()) throw ContractError("retrieval index ids and rows differ in count");
  if (std::set<std::uint64_t>(ids.begin(), ids.end()).size() != ids.size()) {
    throw ContractError("retrieval index ids must be unique");
  }
  RetrievalIndex<T> index;
  index.dim = rows.front().size();
  index.ids = std::move(ids);
  index.embeddings.reserve(rows.size() * index.dim);
  for (const auto& r : rows) {
    if (r.size() != index.dim) throw DimensionError("retrieval index rows differ in width");
    for (T x : r)
      if (!std::isfinite(static_cast<double>(x))) throw NumericError("non-finite candidate embedding");
    index.embeddings.insert(index.embeddings.end(), r.begin(), r.end());
    index.norms.push_back(norm_of<T>(r));
  }
  return index;
}

template <typename T>
RetrievalIndex<T> build_index(const Parameters<T>& params, const std::vector<TokenSequence>& candidates,
                              std::vector<std::uint64_t> ids) {
  if (!ids.empty() && ids.size() != candidates.size()) throw ContractError("candidate ids and sequences differ in count");
  NoGradGuard no_grad;
  std::vector<std::vector<T>> rows;
  rows.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    try {
      rows.push_back(to_vector(embed_direct(params, candidates[i])));
    } catch (const LengthError& e) {
      throw LengthError("candidate " + std::to_string(ids.empty() ? i : ids[i]) + ": " + e.what());
    }
  }
  return make_index(std::move(rows), std::move(ids));
}

template <typename T>
std::vector<std::uint64_t> top_k(const RetrievalIndex<T>& index, std::span<const T> query, std::size_t k) {
  if (k < 1 || k > index.size()) {
    throw ContractError("top_k needs 1 <= k <= " + std::to_string(index.size()) + ", got " + std::to_string(k));
  }
  if (query.size() != index.dim) throw DimensionError("query width differs from the index width");
  const double qn = norm_of(query);
  std::vector<double> sim(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto row = index.row(i);
    double dot = 0;
    for (std::size_t j = 0; j < index.dim; ++j) dot += static_cast<double>(row[j]) * static_cast<double>(query[j]);
    const double denom = qn * index.norms[i];
    sim[i] = denom > 0 ? dot / denom : 0.0;
  }
  std::vector<std::size_t> order(index.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (sim[a] != sim[b]) return sim[a] > sim[b];
                      return index.ids[a] < index.ids[b];
                    });
  std::vector<std::uint64_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = index.ids[order[i]];
  return out;
}

std::vector<CandidatePool> build_eval_pools(const TaskGenerator& generator, const Dataset& eval_set,
                                            std::size_t pool_size, std::uint64_t seed) {
  if (pool_size < 3) throw ConfigError("pool_size must be at least 3");
  std::vector<CandidatePool> pools;
  pools.reserve(eval_set.size());
  for (const auto& ex : eval_set) {
    pools.push_back(generator.make_candidate_pool(ex, pool_size - 1, derive_seed(seed, ex.example_id)));
  }
  return pools;
}

template <typename T>
EvalReport evaluate_with(const QueryEmbedder<T>& embed_query, const CandidateEmbedder<T>& embed_candidate,
                         const Dataset& eval_set, const std::vector<CandidatePool>& pools, unsigned threads) {
  if (pools.size() != eval_set.size()) throw ContractError("one candidate pool per eval query is required");
  struct Outcome {
    bool hit1 = false;
    bool hit5 = false;
    std::size_t rationale_length = 0;
    bool reasoned = false;
    bool self_terminated = true;
  };
  std::vector<Outcome> outcomes(eval_set.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    NoGradGuard no_grad;
    for (std::size_t i = begin; i < end; ++i) {
      const auto& pool = pools[i];
      std::vector<std::vector<T>> rows;
      rows.reserve(pool.candidates.size());
      for (const auto& c : pool.candidates) rows.push_back(embed_candidate(c));
      const auto index = make_index(std::move(rows), {});
      const auto q = embed_query(eval_set[i]);
      const auto ranked = top_k<T>(index, q.embedding, std::min<std::size_t>(5, index.size()));
      auto& o = outcomes[i];
      o.hit1 = ranked.front() == pool.target_index;
      o.hit5 = std::find(ranked.begin(), ranked.end(), pool.target_index) != ranked.end();
      o.rationale_length = q.rationale_length;
      o.reasoned = q.reasoned;
      o.self_terminated = q.self_terminated;
    }
  };
  const std::size_t n = eval_set.size();
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (workers == 1) {
    work(0, n);
  } else {
    std::vector<std::jthread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (unsigned w = 0; w < workers; ++w) {
      const std::size_t b = n * w / workers, e = n * (w + 1) / workers;
      pool.emplace_back([&, b, e, w] {
        try {
          work(b, e);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    pool.clear();
    for (auto& err : errors)
      if (err) std::rethrow_exception(err);
  }

  EvalReport report;
  std::size_t hits1 = 0, hits5 = 0, reasoned = 0, total_len = 0, terminated = 0;
  std::map<std::string, std::pair<std::size_t, std::size_t>> fam_hits;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& o = outcomes[i];
    auto& f = report.per_family[std::string(to_string(eval_set[i].family))];
    ++f.n_queries;
    auto& fh = fam_hits[std::string(to_string(eval_set[i].family))];
    fh.first += o.hit1;
    fh.second += o.hit5;
    hits1 += o.hit1;
    hits5 += o.hit5;
    if (o.reasoned) {
      ++reasoned;
      total_len += o.rationale_length;
      terminated += o.self_terminated;
    }
  }
  for (auto& [name, m] : report.per_family) {
    m.precision_at_1 = static_cast<double>(fam_hits[name].first) / static_cast<double>(m.n_queries);
    m.recall_at_5 = static_cast<double>(fam_hits[name].second) / static_cast<double>(m.n_queries);
  }
  report.overall.n_queries = n;
  if (n > 0) {
    report.overall.precision_at_1 = static_cast<double>(hits1) / static_cast<double>(n);
    report.overall.recall_at_5 = static_cast<double>(hits5) / static_cast<double>(n);
  }
  if (reasoned > 0) {
    report.mean_rationale_length = static_cast<double>(total_len) / static_cast<double>(reasoned);
    report.self_terminated = static_cast<double>(terminated) / static_cast<double>(reasoned);
  }
  report.pool_size = pools.empty() ? 0 : pools.front().candidates.size();
  return report;
}

template <typename T>
EvalReport evaluate(const Parameters<T>& params, const Dataset& eval_set, const std::vector<CandidatePool>& pools,
                    const EvalOptions& options) {
  auto reasoned = [&](const TokenSequence& seq) {
    auto r = embed_with_reasoning(params, seq, options.max_new_tokens);
    return QueryEmbedding<T>{to_vector(r.embedding), r.rationale.size(), true, r.self_terminated};
  };
  QueryEmbedder<T> query = [&](const ExampleTriple& ex) {
    if (options.reasoning) return reasoned(ex.query);
    return QueryEmbedding<T>{to_vector(embed_direct(params, ex.query)), 0, false, true};
  };
  CandidateEmbedder<T> candidate = [&](const TokenSequence& seq) {
    if (options.target_reasoning) return reasoned(seq).embedding;
    return to_vector(embed_direct(params, seq));
  };
  auto report = evaluate_with<T>(query, candidate, eval_set, pools, options.threads);
  report.reasoning = options.reasoning;
  report.target_reasoning = options.target_reasoning;
  return report;
}

ChanceBand chance_band(std::size_t pool_size, std::size_t n_queries) {
  const double p = 1.0 / static_cast<double>(pool_size);
  return {p, std::sqrt(p * (1 - p) / static_cast<double>(n_queries))};
}

// ---------------------------------------------------------------------------

bool designated_reasoning(SupervisionMode mode) noexcept { return mode == SupervisionMode::kSelfGenerated; }

std::size_t ComparisonTable::n_seeds() const {
  std::set<std::uint64_t> seeds;
  for (const auto& r : rows) seeds.insert(r.seed);
  return seeds.size();
}

namespace {

const ComparisonRow* find_row(const std::vector<ComparisonRow>& rows, std::uint64_t seed, SupervisionMode mode) {
  for (const auto& r : rows)
    if (r.seed == seed && r.mode == mode && r.error.empty()) return &r;
  return nullptr;
}

}  // namespace

std::size_t ComparisonTable::seeds_satisfying(double margin_self, double margin_leaky) const {
  std::set<std::uint64_t> seeds;
  for (const auto& r : rows) seeds.insert(r.seed);
  std::size_t ok = 0;
  for (auto s : seeds) {
    const auto* base = find_row(rows, s, SupervisionMode::kBaseline);
    const auto* leak = find_row(rows, s, SupervisionMode::kOracleLeaky);
    const auto* self = find_row(rows, s, SupervisionMode::kSelfGenerated);
    if (!base || !leak || !self) continue;
    if (self->p_at_1 >= base->p_at_1 + margin_self && leak->p_at_1 <= base->p_at_1 - margin_leaky) ++ok;
  }
  return ok;
}

bool ComparisonTable::ordering_holds(double margin_self, double margin_leaky) const {
  const auto n = n_seeds();
  return n > 0 && 2 * seeds_satisfying(margin_self, margin_leaky) > n;
}

std::size_t ComparisonTable::seeds_reasoning_helps() const {
  std::size_t ok = 0;
  for (const auto& r : rows)
    if (r.mode == SupervisionMode::kSelfGenerated && r.error.empty() && r.p_at_1_reasoning >= r.p_at_1_direct) ++ok;
  return ok;
}

template <typename T>
void run_supervision_comparison(const Parameters<T>& cold_start_params, const Dataset& train, const Dataset& eval_set,
                                const std::vector<CandidatePool>& pools, const TrainConfig& base_config,
                                unsigned threads, ComparisonTable& table, const TrainedHook<T>& on_trained) {
  for (auto mode : {SupervisionMode::kBaseline, SupervisionMode::kOracleLeaky, SupervisionMode::kSelfGenerated}) {
    ComparisonRow row;
    row.mode = mode;
    row.seed = base_config.seed;
    TrainConfig config = base_config;
    config.mode = mode;
    try {
      const auto result = run_training(cold_start_params, train, config);
      if (on_trained) on_trained(mode, result);
      EvalOptions opts;
      opts.max_new_tokens = config.max_new_tokens;
      opts.threads = threads;
      opts.reasoning = true;
      const auto on = evaluate(result.params, eval_set, pools, opts);
      opts.reasoning = false;
      const auto off = evaluate(result.params, eval_set, pools, opts);
      const auto& chosen = designated_reasoning(mode) ? on : off;
      row.p_at_1 = chosen.overall.precision_at_1;
      row.r_at_5 = chosen.overall.recall_at_5;
      row.p_at_1_reasoning = on.overall.precision_at_1;
      row.p_at_1_direct = off.overall.precision_at_1;
      row.mean_rationale_length = on.mean_rationale_length;
      row.self_terminated = on.self_terminated;
      if (!result.trace.empty()) {
        row.final_lm_loss = result.trace.back().lm_loss;
        row.final_con_loss = result.trace.back().con_loss;
      }
    } catch (const NumericError& e) {
      row.error = e.what();
    }
    table.rows.push_back(std::move(row));
  }
}

DiagnosticSummary summarize_trace(const TrainTrace& trace, std::size_t window) {
  DiagnosticSummary s;
  if (trace.empty()) return s;
  if (window == 0) window = std::max<std::size_t>(1, trace.size() / 10);
  window = std::min(window, trace.size());
  for (std::size_t i = 0; i < window; ++i) {
    s.initial_lm += trace[i].lm_loss;
    s.initial_con += trace[i].con_loss;
    s.final_lm += trace[trace.size() - 1 - i].lm_loss;
    s.final_con += trace[trace.size() - 1 - i].con_loss;
  }
  const double w = static_cast<double>(window);
  s.initial_lm /= w;
  s.initial_con /= w;
  s.final_lm /= w;
  s.final_con /= w;
  return s;
}

template <typename T>
std::vector<DiagnosticTrace> run_leakage_diagnostic(const Parameters<T>& cold_start_params, const Dataset& train,
                                                    const TrainConfig& config) {
  TrainConfig leaky = config;
  leaky.mode = SupervisionMode::kOracleLeaky;
  std::vector<DiagnosticTrace> out;
  for (auto mode : {PerturbationMode::kWrongQuery, PerturbationMode::kWrongTarget}) {
    const auto perturbed = make_perturbed_triplets(train, mode, derive_seed(config.seed, static_cast<std::uint64_t>(mode) + 1));
    DiagnosticTrace d;
    d.mode = mode;
    d.trace = run_training(cold_start_params, perturbed, leaky).trace;
    d.summary = summarize_trace(d.trace);
    d.batch_size = std::min(leaky.batch_size, perturbed.size());
    out.push_back(std::move(d));
  }
  return out;
}

template <typename T>
SweepTable run_alpha_sweep(const Parameters<T>& cold_start_params, const Dataset& train, const Dataset& eval_set,
                           const std::vector<CandidatePool>& pools, const TrainConfig& base_config,
                           const std::vector<std::string>& ratios, unsigned threads) {
  if (ratios.empty()) throw ConfigError("alpha sweep needs at least one ratio");
  SweepTable table;
  std::vector<std::pair<std::string, AlphaWeights>> distinct;
  for (const auto& r : ratios) {
    const auto a = parse_alpha_ratio(r);
    const auto dup = std::find_if(distinct.begin(), distinct.end(),
                                  [&](const auto& d) { return std::abs(d.second.lm - a.lm) < 1e-12; });
    if (dup != distinct.end()) {
      table.warnings.push_back("ratio '" + r + "' duplicates '" + dup->first + "', skipped");
      continue;
    }
    distinct.emplace_back(r, a);
  }
  std::stable_sort(distinct.begin(), distinct.end(), [](const auto& a, const auto& b) { return a.second.lm > b.second.lm; });
  for (const auto& [ratio, alpha] : distinct) {
    SweepRow row;
    row.ratio = ratio;
    row.alpha = alpha;
    TrainConfig config = base_config;
    config.mode = SupervisionMode::kSelfGenerated;
    config.alpha_ratio = ratio;
    try {
      const auto result = run_training(cold_start_params, train, config);
      EvalOptions opts;
      opts.reasoning = true;
      opts.max_new_tokens = config.max_new_tokens;
      opts.threads = threads;
      const auto rep = evaluate(result.params, eval_set, pools, opts);
      row.p_at_1 = rep.overall.precision_at_1;
      row.r_at_5 = rep.overall.recall_at_5;
    } catch (const NumericError& e) {
      row.error = e.what();
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

std::string mode_label(SupervisionMode m) {
  switch (m) {
    case SupervisionMode::kBaseline: return "q -> t";
    case SupervisionMode::kOracleLeaky: return "(q, r_o) -> t";
    case SupervisionMode::kSelfGenerated: return "(q, r_self) -> t";
  }
  return "?";
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

std::string md_header(const std::vector<std::string>& cols) {
  std::string out = "|";
  for (const auto& c : cols) out += " " + c + " |";
  out += "\n|";
  for (std::size_t i = 0; i < cols.size(); ++i) out += i == 0 ? "---|" : "---:|";
  return out + "\n";
}

std::string md_row(const std::vector<std::string>& cells) {
  std::string out = "|";
  for (const auto& c : cells) out += " " + c + " |";
  return out + "\n";
}

std::string meta_block(const ReportMeta& m) {
  return "fingerprint: `" + m.fingerprint + "`, seed: " + std::to_string(m.seed) + ", version: " + m.version + "\n\n";
}

void render_evals(const ReportBundle& b, std::vector<ReportFile>& out) {
  std::string csv = "name,reasoning,target_reasoning,family,n_queries,p_at_1,r_at_5,mean_rationale_length,self_terminated\n";
  std::string md = "# Evaluation\n\n" + meta_block(b.meta) +
                   md_header({"Run", "Reasoning", "Family", "Queries", "P@1", "R@5"});
  for (const auto& [name, r] : b.evals) {
    auto line = [&](const std::string& fam, const FamilyMetrics& m) {
      csv += csv_escape(name) + "," + (r.reasoning ? "on" : "off") + "," + (r.target_reasoning ? "on" : "off") + "," +
             fam + "," + std::to_string(m.n_queries) + "," + fmt(m.precision_at_1) + "," + fmt(m.recall_at_5) + "," +
             fmt(r.mean_rationale_length) + "," + fmt(r.self_terminated) + "\n";
      md += md_row({name, r.reasoning ? "on" : "off", fam, std::to_string(m.n_queries), fmt(m.precision_at_1),
                    fmt(m.recall_at_5)});
    };
    for (const auto& [fam, m] : r.per_family) line(fam, m);
    line("overall", r.overall);
  }
  out.push_back({"eval_" + b.meta.fingerprint + ".csv", csv});
  out.push_back({"eval_" + b.meta.fingerprint + ".md", md});
}

void render_comparison(const ReportBundle& b, const ComparisonTable& t, std::vector<ReportFile>& out) {
  std::string csv =
      "mode,seed,p_at_1,r_at_5,p_at_1_reasoning,p_at_1_direct,final_lm_loss,final_con_loss,mean_rationale_length,"
      "self_terminated,error\n";
  for (const auto& r : t.rows) {
    csv += std::string(to_string(r.mode)) + "," + std::to_string(r.seed) + "," + fmt(r.p_at_1) + "," + fmt(r.r_at_5) +
           "," + fmt(r.p_at_1_reasoning) + "," + fmt(r.p_at_1_direct) + "," + fmt(r.final_lm_loss) + "," +
           fmt(r.final_con_loss) + "," + fmt(r.mean_rationale_length) + "," + fmt(r.self_terminated) + "," +
           csv_escape(r.error) + "\n";
  }
  std::string md = "# Supervision mode comparison\n\n" + meta_block(b.meta) +
                   md_header({"Anchor", "P@1", "R@5", "P@1 reasoning on", "P@1 reasoning off", "Seeds"});
  for (auto mode : {SupervisionMode::kBaseline, SupervisionMode::kOracleLeaky, SupervisionMode::kSelfGenerated}) {
    double p1 = 0, r5 = 0, on = 0, off = 0;
    std::size_t n = 0;
    for (const auto& r : t.rows) {
      if (r.mode != mode || !r.error.empty()) continue;
      p1 += r.p_at_1;
      r5 += r.r_at_5;
      on += r.p_at_1_reasoning;
      off += r.p_at_1_direct;
      ++n;
    }
    if (n == 0) continue;
    const double d = static_cast<double>(n);
    md += md_row({mode_label(mode), fmt(p1 / d), fmt(r5 / d), fmt(on / d), fmt(off / d), std::to_string(n)});
  }
  md += "\nP@1 uses reasoning on for (q, r_self) -> t and reasoning off otherwise.\n\n";
  md += "Seeds with self >= baseline + 0.02 and leaky <= baseline - 0.05: " +
        std::to_string(t.seeds_satisfying(0.02, 0.05)) + " of " + std::to_string(t.n_seeds()) + "\n\n";
  md += "## Per seed\n\n" + md_header({"Anchor", "Seed", "P@1", "R@5", "Mean rationale length", "Error"});
  for (const auto& r : t.rows) {
    md += md_row({mode_label(r.mode), std::to_string(r.seed), fmt(r.p_at_1), fmt(r.r_at_5),
                  fmt(r.mean_rationale_length, "%.2f"), r.error.empty() ? "-" : r.error});
  }
  out.push_back({"supervision_comparison_" + b.meta.fingerprint + ".csv", csv});
  out.push_back({"supervision_comparison_" + b.meta.fingerprint + ".md", md});
}

void render_diagnostic(const ReportBundle& b, const std::vector<DiagnosticTrace>& d, std::vector<ReportFile>& out) {
  std::string csv = "step";
  for (const auto& t : d) {
    const std::string m(to_string(t.mode));
    csv += ",lm_" + m + ",con_" + m;
  }
  csv += "\n";
  std::size_t len = 0;
  for (const auto& t : d) len = std::max(len, t.trace.size());
  for (std::size_t i = 0; i < len; ++i) {
    csv += std::to_string(i);
    for (const auto& t : d) {
      if (i < t.trace.size()) {
        csv += "," + fmt(t.trace[i].lm_loss, "%.6f") + "," + fmt(t.trace[i].con_loss, "%.6f");
      } else {
        csv += ",,";
      }
    }
    csv += "\n";
  }
  std::string md = "# Leakage diagnostic\n\n" + meta_block(b.meta) +
                   md_header({"Triplets", "Initial LM", "Final LM", "LM reduction", "Initial con", "Final con",
                              "Con final/initial", "ln(batch)"});
  for (const auto& t : d) {
    const auto& s = t.summary;
    const std::string label = t.mode == PerturbationMode::kWrongQuery ? "(q_w, r_o, t)" : "(q, r_o, t_w)";
    md += md_row({label, fmt(s.initial_lm), fmt(s.final_lm), fmt(s.lm_reduction()), fmt(s.initial_con),
                  fmt(s.final_con), fmt(s.con_ratio()), fmt(std::log(static_cast<double>(std::max<std::size_t>(t.batch_size, 1))))});
  }
  md += "\nInitial and final values are means over the first and last tenth of the steps.\n";
  out.push_back({"leakage_diagnostic_" + b.meta.fingerprint + ".csv", csv});
  out.push_back({"leakage_diagnostic_" + b.meta.fingerprint + ".md", md});
}

void render_sweep(const ReportBundle& b, const SweepTable& t, std::vector<ReportFile>& out) {
  std::string csv = "ratio,alpha_lm,alpha_con,p_at_1,r_at_5,error\n";
  std::string md = "# Loss balancing sweep\n\n" + meta_block(b.meta) +
                   md_header({"lm:con", "alpha_lm", "alpha_con", "P@1", "R@5"});
  for (const auto& r : t.rows) {
    csv += csv_escape(r.ratio) + "," + fmt(r.alpha.lm, "%.6f") + "," + fmt(r.alpha.con, "%.6f") + "," + fmt(r.p_at_1) +
           "," + fmt(r.r_at_5) + "," + csv_escape(r.error) + "\n";
    md += md_row({"`" + r.ratio + "`", fmt(r.alpha.lm), fmt(r.alpha.con), r.error.empty() ? fmt(r.p_at_1) : "failed",
                  r.error.empty() ? fmt(r.r_at_5) : "failed"});
  }
  for (const auto& w : t.warnings) md += "\nwarning: " + w + "\n";
  out.push_back({"alpha_sweep_" + b.meta.fingerprint + ".csv", csv});
  out.push_back({"alpha_sweep_" + b.meta.fingerprint + ".md", md});
}

}  // namespace

std::vector<ReportFile> render_report(const ReportBundle& bundle) {
  std::vector<ReportFile> out;
  if (!bundle.evals.empty()) render_evals(bundle, out);
  if (bundle.comparison) render_comparison(bundle, *bundle.comparison, out);
  if (!bundle.diagnostic.empty()) render_diagnostic(bundle, bundle.diagnostic, out);
  if (bundle.sweep) render_sweep(bundle, *bundle.sweep, out);
  if (out.empty()) throw ContractError("report bundle holds no results");
  std::string summary = "# Results\n\n" + meta_block(bundle.meta);
  for (const auto& f : out) {
    if (f.name.ends_with(".md")) summary += f.contents.substr(f.contents.find('\n') + 1) + "\n";
  }
  out.push_back({"summary_" + bundle.meta.fingerprint + ".md", summary});
  return out;
}

std::vector<std::filesystem::path> emit_report(const ReportBundle& bundle, const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> paths;
  for (const auto& f : render_report(bundle)) {
    paths.push_back(dir / f.name);
    write_file(paths.back(), f.contents);
  }
  return paths;
}

std::vector<std::vector<double>> parse_markdown_numbers(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  bool in_table = false;
  std::size_t row_index = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() != '|') {
      if (in_table) break;
      continue;
    }
    in_table = true;
    if (row_index++ < 2) continue;  // header and separator
    std::vector<double> nums;
    std::istringstream cells(line.substr(1));
    std::string cell;
    while (std::getline(cells, cell, '|')) {
      const auto b = cell.find_first_not_of(' ');
      const auto e = cell.find_last_not_of(' ');
      if (b == std::string::npos) continue;
      const std::string c = cell.substr(b, e - b + 1);
      char* endp = nullptr;
      const double v = std::strtod(c.c_str(), &endp);
      if (endp && *endp == '\0' && endp != c.c_str()) nums.push_back(v);
    }
    rows.push_back(std::move(nums));
  }
  return rows;
}

#define RGE_INSTANTIATE(T)                                                                                         \
  template RetrievalIndex<T> make_index<T>(std::vector<std::vector<T>>, std::vector<std::uint64_t>);               \
  template RetrievalIndex<T> build_index<T>(const Parameters<T>&, const std::vector<TokenSequence>&,                \
                                            std::vector<std::uint64_t>);                                           \
  template std::vector<std::uint64_t> top_k<T>(const RetrievalIndex<T>&, std::span<const T>, std::size_t);         \
  template EvalReport evaluate_with<T>(const QueryEmbedder<T>&, const CandidateEmbedder<T>&, const Dataset&,        \
                                       const std::vector<CandidatePool>&, unsigned);                               \
  template EvalReport evaluate<T>(const Parameters<T>&, const Dataset&, const std::vector<CandidatePool>&,          \
                                  const EvalOptions&);                                                             \
  template void run_supervision_comparison<T>(const Parameters<T>&, const Dataset&, const Dataset&,                 \
                                              const std::vector<CandidatePool>&, const TrainConfig&, unsigned,     \
                                              ComparisonTable&, const TrainedHook<T>&);                           \
  template std::vector<DiagnosticTrace> run_leakage_diagnostic<T>(const Parameters<T>&, const Dataset&,             \
                                                                  const TrainConfig&);                             \
  template SweepTable run_alpha_sweep<T>(const Parameters<T>&, const Dataset&, const Dataset&,                      \
                                         const std::vector<CandidatePool>&, const TrainConfig&,                    \
                                         const std::vector<std::string>&, unsigned);

RGE_INSTANTIATE(float)
RGE_INSTANTIATE(double)

#undef RGE_INSTANTIATE

}  // namespace rge
