// SPDX-License-Identifier: Apache-2.0
//
// Synthetic composed-retrieval benchmark. A query is a rendered scene followed
// by an edit rule; its target is the edited scene. Oracle rationales are
// deterministic derivation traces of the edit.
//
// Token grammar:
//   scene     := SCENE_BEGIN object (OBJ_SEP object)*
//   object    := shape color size
//   rule      := RECOLOR color color | REMOVE shape | SELECT shape color
//   rationale := RATIONALE_BEGIN rule step* scene       (NO_CHANGE when no step)
//   step      := object ARROW (object | DROP | KEEP)

#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rge/hash.hpp"
#include "rge/vocab.hpp"

namespace rge {

struct Object {
  int shape = 0;
  int color = 0;
  int size = 0;
  auto operator<=>(const Object&) const = default;
};

struct Scene {
  std::vector<Object> objects;
  bool operator==(const Scene&) const = default;
};

enum class TaskFamily { kRecolor, kRemove, kSelect };
enum class Split { kTrain, kEval };

std::string_view to_string(TaskFamily f) noexcept;
std::string_view to_string(Split s) noexcept;
TaskFamily parse_task_family(std::string_view s);
Split parse_split(std::string_view s);
std::vector<TaskFamily> parse_families(std::string_view comma_separated);

/// RECOLOR(arg0 -> arg1) over colors; REMOVE(arg0) over shapes;
/// SELECT(arg0 shape, arg1 color).
struct Rule {
  TaskFamily family = TaskFamily::kRecolor;
  int arg0 = 0;
  int arg1 = 0;
  bool operator==(const Rule&) const = default;
};

struct TaskConfig {
  VocabSpec vocab;
  int max_objects = 4;
  std::vector<TaskFamily> families = {TaskFamily::kRecolor, TaskFamily::kRemove, TaskFamily::kSelect};
};

/// Counts reads of ExampleTriple::oracle_rationale() across the process.
std::uint64_t oracle_rationale_reads() noexcept;
void reset_oracle_rationale_reads() noexcept;

struct ExampleTriple {
  std::uint64_t example_id = 0;
  TaskFamily family = TaskFamily::kRecolor;
  Split split = Split::kTrain;
  TokenSequence query;
  TokenSequence target;

  /// Reading the rationale is probed so that runs which must not see it can
  /// prove they never did.
  const TokenSequence& oracle_rationale() const;
  void set_oracle_rationale(TokenSequence r) { oracle_rationale_ = std::move(r); }
  /// Unprobed access for serialization only.
  const TokenSequence& oracle_rationale_unprobed() const noexcept { return oracle_rationale_; }

  friend bool operator==(const ExampleTriple& a, const ExampleTriple& b) {
    return a.example_id == b.example_id && a.family == b.family && a.split == b.split && a.query == b.query &&
           a.target == b.target && a.oracle_rationale_ == b.oracle_rationale_;
  }

 private:
  TokenSequence oracle_rationale_;
};

using Dataset = std::vector<ExampleTriple>;

/// Number of objects the rule touches (recolored, removed or selected).
int affected_count(const Scene& scene, const Rule& rule);

bool rule_applicable(const Scene& scene, const Rule& rule);

/// Throws TaskError when SELECT does not match exactly one object or REMOVE
/// would empty the scene.
Scene apply_rule(const Scene& scene, const Rule& rule);

TokenSequence render_scene(const Vocab& vocab, const Scene& scene);
TokenSequence render_rule(const Vocab& vocab, const Rule& rule);
TokenSequence render_query(const Vocab& vocab, const Scene& scene, const Rule& rule);

/// Parses a full scene rendering; throws ParseError on any grammar violation.
Scene parse_scene(const Vocab& vocab, const TokenSequence& tokens);

struct ParsedQuery {
  Scene scene;
  Rule rule;
};
ParsedQuery parse_query(const Vocab& vocab, const TokenSequence& query);

/// Throws TaskError when `target` is not apply_rule(scene, rule).
TokenSequence make_oracle_rationale(const Vocab& vocab, const Scene& scene, const Rule& rule, const Scene& target);

/// Extracts and parses the derived target from a rationale.
Scene rationale_target_summary(const Vocab& vocab, const TokenSequence& rationale);

/// True when `rationale` is exactly the oracle trace for `query`.
bool rationale_describes(const Vocab& vocab, const TokenSequence& query, const TokenSequence& rationale);

struct CandidatePool {
  std::vector<TokenSequence> candidates;
  std::size_t target_index = 0;
};

class TaskGenerator {
 public:
  explicit TaskGenerator(TaskConfig config);

  const Vocab& vocab() const noexcept { return vocab_; }
  const TaskConfig& config() const noexcept { return config_; }

  /// Compositional holdout: the eval split only uses (family, args)
  /// combinations never used in train.
  bool is_holdout(const Rule& rule) const;
  std::vector<Rule> rules_for(TaskFamily family, Split split) const;

  ExampleTriple make_example(TaskFamily family, std::uint64_t seed, Split split, std::uint64_t example_id) const;

  /// Target plus distractors: the unedited scene, the rule with a wrong
  /// argument, then random scenes, all distinct, shuffled by seed.
  CandidatePool make_candidate_pool(const ExampleTriple& example, std::size_t n_distractors, std::uint64_t seed) const;

  /// Upper bound on rationale length for this configuration (without <emb>).
  std::size_t max_rationale_length() const;
  /// Upper bound on query length.
  std::size_t max_query_length() const;

 private:
  Scene random_scene(Rng& rng, int min_objects) const;

  TaskConfig config_;
  Vocab vocab_;
};

struct DatasetSplits {
  Dataset train;
  Dataset eval;
};

inline constexpr std::uint64_t kEvalIdBase = 1'000'000'000ULL;

/// Per-example seeds are derive_seed(seed, example_id), so the result does
/// not depend on `threads`.
DatasetSplits generate_dataset(const TaskGenerator& generator, std::uint64_t seed, std::size_t n_train,
                               std::size_t n_eval, unsigned threads = 1);

enum class PerturbationMode { kWrongTarget, kWrongQuery };
std::string_view to_string(PerturbationMode m) noexcept;

/// wrong_target: each target replaced by another example's target.
/// wrong_query: each query replaced by another example's query, rationale and
/// target stay paired. Both use a derangement drawn from `seed`.
Dataset make_perturbed_triplets(const Dataset& dataset, PerturbationMode mode, std::uint64_t seed);

}  // namespace rge
