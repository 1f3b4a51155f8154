// SPDX-License-Identifier: Apache-2.0
#include <string>

#include "json.hpp"
#include "rge/error.hpp"
#include "rge/retrieval.hpp"

namespace rge {
namespace {

using nlohmann::json;

json metrics_json(const FamilyMetrics& m) {
  return {{"n_queries", m.n_queries}, {"precision_at_1", m.precision_at_1}, {"recall_at_5", m.recall_at_5}};
}

FamilyMetrics metrics_from(const json& j) {
  FamilyMetrics m;
  m.n_queries = j.at("n_queries").get<std::size_t>();
  m.precision_at_1 = j.at("precision_at_1").get<double>();
  m.recall_at_5 = j.at("recall_at_5").get<double>();
  return m;
}

json eval_json(const EvalReport& r) {
  json families = json::object();
  for (const auto& [name, m] : r.per_family) families[name] = metrics_json(m);
  return {{"per_family", families},
          {"overall", metrics_json(r.overall)},
          {"reasoning", r.reasoning},
          {"target_reasoning", r.target_reasoning},
          {"pool_size", r.pool_size},
          {"mean_rationale_length", r.mean_rationale_length},
          {"self_terminated", r.self_terminated},
          {"fingerprint", r.fingerprint}};
}

EvalReport eval_from(const json& j) {
  EvalReport r;
  for (const auto& [name, m] : j.at("per_family").items()) r.per_family[name] = metrics_from(m);
  r.overall = metrics_from(j.at("overall"));
  r.reasoning = j.at("reasoning").get<bool>();
  r.target_reasoning = j.at("target_reasoning").get<bool>();
  r.pool_size = j.at("pool_size").get<std::size_t>();
  r.mean_rationale_length = j.at("mean_rationale_length").get<double>();
  r.self_terminated = j.at("self_terminated").get<double>();
  r.fingerprint = j.at("fingerprint").get<std::string>();
  return r;
}

json trace_json(const TrainTrace& trace) {
  json rows = json::array();
  // wall_time is left out so bundles stay reproducible.
  for (const auto& t : trace) {
    rows.push_back({t.step, t.lm_loss, t.con_loss, t.total, t.mean_rationale_length, t.self_terminated});
  }
  return rows;
}

TrainTrace trace_from(const json& j) {
  TrainTrace trace;
  for (const auto& r : j) {
    trace.push_back({r.at(0).get<std::size_t>(), r.at(1).get<double>(), r.at(2).get<double>(), r.at(3).get<double>(),
                     0.0, r.at(4).get<double>(), r.at(5).get<double>()});
  }
  return trace;
}

PerturbationMode perturbation_from(const std::string& s) {
  if (s == to_string(PerturbationMode::kWrongQuery)) return PerturbationMode::kWrongQuery;
  if (s == to_string(PerturbationMode::kWrongTarget)) return PerturbationMode::kWrongTarget;
  throw ParseError("unknown perturbation mode '" + s + "'");
}

}  // namespace

std::string bundle_to_json(const ReportBundle& bundle) {
  json j;
  j["meta"] = {{"fingerprint", bundle.meta.fingerprint}, {"seed", bundle.meta.seed}, {"version", bundle.meta.version}};
  j["evals"] = json::array();
  for (const auto& [name, r] : bundle.evals) j["evals"].push_back({{"name", name}, {"report", eval_json(r)}});
  if (bundle.comparison) {
    json rows = json::array();
    for (const auto& r : bundle.comparison->rows) {
      rows.push_back({{"mode", to_string(r.mode)},
                      {"seed", r.seed},
                      {"p_at_1", r.p_at_1},
                      {"r_at_5", r.r_at_5},
                      {"p_at_1_reasoning", r.p_at_1_reasoning},
                      {"p_at_1_direct", r.p_at_1_direct},
                      {"final_lm_loss", r.final_lm_loss},
                      {"final_con_loss", r.final_con_loss},
                      {"mean_rationale_length", r.mean_rationale_length},
                      {"self_terminated", r.self_terminated},
                      {"error", r.error}});
    }
    j["comparison"] = rows;
  }
  j["diagnostic"] = json::array();
  for (const auto& d : bundle.diagnostic) {
    j["diagnostic"].push_back({{"mode", to_string(d.mode)},
                               {"batch_size", d.batch_size},
                               {"summary",
                                {d.summary.initial_lm, d.summary.final_lm, d.summary.initial_con, d.summary.final_con}},
                               {"trace", trace_json(d.trace)}});
  }
  if (bundle.sweep) {
    json rows = json::array();
    for (const auto& r : bundle.sweep->rows) {
      rows.push_back({{"ratio", r.ratio},
                      {"alpha", {r.alpha.lm, r.alpha.con}},
                      {"p_at_1", r.p_at_1},
                      {"r_at_5", r.r_at_5},
                      {"error", r.error}});
    }
    j["sweep"] = {{"rows", rows}, {"warnings", bundle.sweep->warnings}};
  }
  return j.dump(1) + "\n";
}

ReportBundle bundle_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    ReportBundle b;
    b.meta.fingerprint = j.at("meta").at("fingerprint").get<std::string>();
    b.meta.seed = j.at("meta").at("seed").get<std::uint64_t>();
    b.meta.version = j.at("meta").at("version").get<std::string>();
    for (const auto& e : j.at("evals")) b.evals.emplace_back(e.at("name").get<std::string>(), eval_from(e.at("report")));
    if (j.contains("comparison")) {
      ComparisonTable table;
      for (const auto& r : j.at("comparison")) {
        ComparisonRow row;
        row.mode = parse_supervision_mode(r.at("mode").get<std::string>());
        row.seed = r.at("seed").get<std::uint64_t>();
        row.p_at_1 = r.at("p_at_1").get<double>();
        row.r_at_5 = r.at("r_at_5").get<double>();
        row.p_at_1_reasoning = r.at("p_at_1_reasoning").get<double>();
        row.p_at_1_direct = r.at("p_at_1_direct").get<double>();
        row.final_lm_loss = r.at("final_lm_loss").get<double>();
        row.final_con_loss = r.at("final_con_loss").get<double>();
        row.mean_rationale_length = r.at("mean_rationale_length").get<double>();
        row.self_terminated = r.at("self_terminated").get<double>();
        row.error = r.at("error").get<std::string>();
        table.rows.push_back(std::move(row));
      }
      b.comparison = std::move(table);
    }
    for (const auto& d : j.at("diagnostic")) {
      DiagnosticTrace t;
      t.mode = perturbation_from(d.at("mode").get<std::string>());
      t.batch_size = d.at("batch_size").get<std::size_t>();
      const auto& s = d.at("summary");
      t.summary = {s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>(), s.at(3).get<double>()};
      t.trace = trace_from(d.at("trace"));
      b.diagnostic.push_back(std::move(t));
    }
    if (j.contains("sweep")) {
      SweepTable table;
      for (const auto& r : j.at("sweep").at("rows")) {
        SweepRow row;
        row.ratio = r.at("ratio").get<std::string>();
        row.alpha = {r.at("alpha").at(0).get<double>(), r.at("alpha").at(1).get<double>()};
        row.p_at_1 = r.at("p_at_1").get<double>();
        row.r_at_5 = r.at("r_at_5").get<double>();
        row.error = r.at("error").get<std::string>();
        table.rows.push_back(std::move(row));
      }
      table.warnings = j.at("sweep").at("warnings").get<std::vector<std::string>>();
      b.sweep = std::move(table);
    }
    return b;
  } catch (const json::exception& e) {
    throw ParseError(std::string("report bundle: ") + e.what());
  }
}

}  // namespace rge
