// SPDX-License-Identifier: Apache-2.0
#include "rge/task.hpp"

#include <algorithm>
#include <atomic>
#include <set>
#include <thread>
#include <tuple>

#include "rge/error.hpp"
#include "rge/hash.hpp"

namespace rge {
namespace {

std::atomic<std::uint64_t> g_oracle_reads{0};

void append(TokenSequence& out, const TokenSequence& more) { out.insert(out.end(), more.begin(), more.end()); }

void append_object(const Vocab& v, TokenSequence& out, const Object& o) {
  out.push_back(v.shape(o.shape));
  out.push_back(v.color(o.color));
  out.push_back(v.size_token(o.size));
}

bool matches(const Object& o, const Rule& r) {
  switch (r.family) {
    case TaskFamily::kRecolor: return o.color == r.arg0;
    case TaskFamily::kRemove: return o.shape == r.arg0;
    case TaskFamily::kSelect: return o.shape == r.arg0 && o.color == r.arg1;
  }
  return false;
}

Object parse_object(const Vocab& v, const TokenSequence& t, std::size_t at) {
  if (at + 3 > t.size()) throw ParseError("truncated object at token " + std::to_string(at));
  const auto s = v.shape_index(t[at]);
  const auto c = v.color_index(t[at + 1]);
  const auto z = v.size_index(t[at + 2]);
  if (!s || !c || !z) throw ParseError("malformed object at token " + std::to_string(at));
  return Object{*s, *c, *z};
}

}  // namespace

std::uint64_t oracle_rationale_reads() noexcept { return g_oracle_reads.load(); }
void reset_oracle_rationale_reads() noexcept { g_oracle_reads.store(0); }

const TokenSequence& ExampleTriple::oracle_rationale() const {
  g_oracle_reads.fetch_add(1, std::memory_order_relaxed);
  return oracle_rationale_;
}

std::string_view to_string(TaskFamily f) noexcept {
  switch (f) {
    case TaskFamily::kRecolor: return "RECOLOR";
    case TaskFamily::kRemove: return "REMOVE";
    case TaskFamily::kSelect: return "SELECT";
  }
  return "?";
}

std::string_view to_string(Split s) noexcept { return s == Split::kTrain ? "train" : "eval"; }

std::string_view to_string(PerturbationMode m) noexcept {
  return m == PerturbationMode::kWrongTarget ? "wrong_target" : "wrong_query";
}

TaskFamily parse_task_family(std::string_view s) {
  if (s == "RECOLOR" || s == "recolor") return TaskFamily::kRecolor;
  if (s == "REMOVE" || s == "remove") return TaskFamily::kRemove;
  if (s == "SELECT" || s == "select") return TaskFamily::kSelect;
  throw ParseError("unknown task family '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "eval") return Split::kEval;
  throw ParseError("unknown split '" + std::string(s) + "'");
}

std::vector<TaskFamily> parse_families(std::string_view text) {
  std::vector<TaskFamily> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(',', start), text.size());
    const auto item = text.substr(start, end - start);
    if (!item.empty()) {
      const auto f = parse_task_family(item);
      if (std::find(out.begin(), out.end(), f) == out.end()) out.push_back(f);
    }
    start = end + 1;
  }
  if (out.empty()) throw ConfigError("no task families selected");
  return out;
}

int affected_count(const Scene& scene, const Rule& rule) {
  return static_cast<int>(std::count_if(scene.objects.begin(), scene.objects.end(),
                                        [&](const Object& o) { return matches(o, rule); }));
}

bool rule_applicable(const Scene& scene, const Rule& rule) {
  const int hits = affected_count(scene, rule);
  switch (rule.family) {
    case TaskFamily::kRecolor: return rule.arg0 != rule.arg1;
    case TaskFamily::kRemove: return hits < static_cast<int>(scene.objects.size());
    case TaskFamily::kSelect: return hits == 1;
  }
  return false;
}

Scene apply_rule(const Scene& scene, const Rule& rule) {
  if (!rule_applicable(scene, rule)) {
    throw TaskError(std::string(to_string(rule.family)) + " rule is not applicable to this scene");
  }
  Scene out;
  for (const auto& o : scene.objects) {
    const bool hit = matches(o, rule);
    switch (rule.family) {
      case TaskFamily::kRecolor: out.objects.push_back(hit ? Object{o.shape, rule.arg1, o.size} : o); break;
      case TaskFamily::kRemove:
        if (!hit) out.objects.push_back(o);
        break;
      case TaskFamily::kSelect:
        if (hit) out.objects.push_back(o);
        break;
    }
  }
  return out;
}

TokenSequence render_scene(const Vocab& vocab, const Scene& scene) {
  TokenSequence out{Vocab::kSceneBegin};
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    if (i) out.push_back(Vocab::kObjSep);
    append_object(vocab, out, scene.objects[i]);
  }
  return out;
}

TokenSequence render_rule(const Vocab& vocab, const Rule& rule) {
  switch (rule.family) {
    case TaskFamily::kRecolor: return {Vocab::kRecolor, vocab.color(rule.arg0), vocab.color(rule.arg1)};
    case TaskFamily::kRemove: return {Vocab::kRemove, vocab.shape(rule.arg0)};
    case TaskFamily::kSelect: return {Vocab::kSelect, vocab.shape(rule.arg0), vocab.color(rule.arg1)};
  }
  return {};
}

TokenSequence render_query(const Vocab& vocab, const Scene& scene, const Rule& rule) {
  auto out = render_scene(vocab, scene);
  append(out, render_rule(vocab, rule));
  return out;
}

Scene parse_scene(const Vocab& vocab, const TokenSequence& t) {
  if (t.empty() || t[0] != Vocab::kSceneBegin) throw ParseError("scene must start with SCENE_BEGIN");
  Scene scene;
  std::size_t at = 1;
  while (true) {
    scene.objects.push_back(parse_object(vocab, t, at));
    at += 3;
    if (at == t.size()) break;
    if (t[at] != Vocab::kObjSep) throw ParseError("expected OBJ_SEP at token " + std::to_string(at));
    ++at;
  }
  return scene;
}

ParsedQuery parse_query(const Vocab& vocab, const TokenSequence& q) {
  const auto it = std::find_if(q.begin(), q.end(), [](TokenId t) {
    return t == Vocab::kRecolor || t == Vocab::kRemove || t == Vocab::kSelect;
  });
  if (it == q.end()) throw ParseError("query has no rule");
  const auto pos = static_cast<std::size_t>(it - q.begin());
  ParsedQuery out;
  out.scene = parse_scene(vocab, TokenSequence(q.begin(), it));
  const std::size_t rest = q.size() - pos;
  auto need = [&](std::size_t n) {
    if (rest != n) throw ParseError("rule has " + std::to_string(rest) + " tokens, expected " + std::to_string(n));
  };
  auto arg = [&](std::optional<int> v, std::size_t at) {
    if (!v) throw ParseError("bad rule argument at token " + std::to_string(at));
    return *v;
  };
  switch (q[pos]) {
    case Vocab::kRecolor:
      need(3);
      out.rule = {TaskFamily::kRecolor, arg(vocab.color_index(q[pos + 1]), pos + 1),
                  arg(vocab.color_index(q[pos + 2]), pos + 2)};
      break;
    case Vocab::kRemove:
      need(2);
      out.rule = {TaskFamily::kRemove, arg(vocab.shape_index(q[pos + 1]), pos + 1), 0};
      break;
    default:
      need(3);
      out.rule = {TaskFamily::kSelect, arg(vocab.shape_index(q[pos + 1]), pos + 1),
                  arg(vocab.color_index(q[pos + 2]), pos + 2)};
      break;
  }
  return out;
}

TokenSequence make_oracle_rationale(const Vocab& vocab, const Scene& scene, const Rule& rule, const Scene& target) {
  if (!rule_applicable(scene, rule) || apply_rule(scene, rule) != target) {
    throw TaskError("oracle rationale requested for an inconsistent (scene, rule, target)");
  }
  TokenSequence out{Vocab::kRationaleBegin};
  append(out, render_rule(vocab, rule));
  int steps = 0;
  for (const auto& o : scene.objects) {
    if (!matches(o, rule)) continue;
    ++steps;
    append_object(vocab, out, o);
    out.push_back(Vocab::kArrow);
    switch (rule.family) {
      case TaskFamily::kRecolor: append_object(vocab, out, Object{o.shape, rule.arg1, o.size}); break;
      case TaskFamily::kRemove: out.push_back(Vocab::kDrop); break;
      case TaskFamily::kSelect: out.push_back(Vocab::kKeep); break;
    }
  }
  if (steps == 0) out.push_back(Vocab::kNoChange);
  append(out, render_scene(vocab, target));
  return out;
}

Scene rationale_target_summary(const Vocab& vocab, const TokenSequence& rationale) {
  const auto it = std::find(rationale.begin(), rationale.end(), Vocab::kSceneBegin);
  if (it == rationale.end()) throw ParseError("rationale has no derived target");
  return parse_scene(vocab, TokenSequence(it, rationale.end()));
}

bool rationale_describes(const Vocab& vocab, const TokenSequence& query, const TokenSequence& rationale) {
  try {
    const auto pq = parse_query(vocab, query);
    if (!rule_applicable(pq.scene, pq.rule)) return false;
    return make_oracle_rationale(vocab, pq.scene, pq.rule, apply_rule(pq.scene, pq.rule)) == rationale;
  } catch (const Error&) {
    return false;
  }
}

TaskGenerator::TaskGenerator(TaskConfig config) : config_(std::move(config)), vocab_(config_.vocab) {
  if (config_.max_objects < 2) throw ConfigError("max_objects must be at least 2");
  if (config_.families.empty()) throw ConfigError("no task families configured");
  for (const auto family : {TaskFamily::kRecolor, TaskFamily::kRemove, TaskFamily::kSelect}) {
    if (rules_for(family, Split::kTrain).empty() || rules_for(family, Split::kEval).empty()) {
      throw ConfigError("attribute counts too small for a train/eval holdout of " + std::string(to_string(family)));
    }
  }
}

bool TaskGenerator::is_holdout(const Rule& rule) const {
  const auto& v = config_.vocab;
  switch (rule.family) {
    case TaskFamily::kRecolor: return (rule.arg1 - rule.arg0 + v.n_colors) % v.n_colors == 1;
    case TaskFamily::kRemove: return rule.arg0 == v.n_shapes - 1;
    case TaskFamily::kSelect: return (rule.arg0 + rule.arg1) % 3 == 0;
  }
  return false;
}

std::vector<Rule> TaskGenerator::rules_for(TaskFamily family, Split split) const {
  const auto& v = config_.vocab;
  std::vector<Rule> all;
  switch (family) {
    case TaskFamily::kRecolor:
      for (int a = 0; a < v.n_colors; ++a)
        for (int b = 0; b < v.n_colors; ++b)
          if (a != b) all.push_back({family, a, b});
      break;
    case TaskFamily::kRemove:
      for (int a = 0; a < v.n_shapes; ++a) all.push_back({family, a, 0});
      break;
    case TaskFamily::kSelect:
      for (int a = 0; a < v.n_shapes; ++a)
        for (int b = 0; b < v.n_colors; ++b) all.push_back({family, a, b});
      break;
  }
  std::vector<Rule> out;
  for (const auto& r : all)
    if (is_holdout(r) == (split == Split::kEval)) out.push_back(r);
  return out;
}

Scene TaskGenerator::random_scene(Rng& rng, int min_objects) const {
  const auto& v = config_.vocab;
  const int n = min_objects + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(config_.max_objects - min_objects + 1)));
  Scene s;
  for (int i = 0; i < n; ++i) {
    Object o;
    o.shape = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(v.n_shapes)));
    o.color = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(v.n_colors)));
    o.size = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(v.n_sizes)));
    s.objects.push_back(o);
  }
  return s;
}

ExampleTriple TaskGenerator::make_example(TaskFamily family, std::uint64_t seed, Split split,
                                          std::uint64_t example_id) const {
  Rng rng(seed);
  const auto& v = config_.vocab;
  const auto rules = rules_for(family, split);
  const Rule rule = rules[rng.uniform_index(rules.size())];
  Scene scene;
  switch (family) {
    case TaskFamily::kRecolor: {
      scene = random_scene(rng, 1);
      scene.objects[rng.uniform_index(scene.objects.size())].color = rule.arg0;
      break;
    }
    case TaskFamily::kRemove: {
      scene = random_scene(rng, 2);
      const std::size_t n = scene.objects.size();
      const std::size_t hit = rng.uniform_index(n);
      scene.objects[hit].shape = rule.arg0;
      const std::size_t keep = (hit + 1 + rng.uniform_index(n - 1)) % n;
      if (scene.objects[keep].shape == rule.arg0) {
        scene.objects[keep].shape =
            (rule.arg0 + 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(v.n_shapes - 1)))) %
            v.n_shapes;
      }
      break;
    }
    case TaskFamily::kSelect: {
      scene = random_scene(rng, 1);
      const std::size_t hit = rng.uniform_index(scene.objects.size());
      for (std::size_t i = 0; i < scene.objects.size(); ++i) {
        auto& o = scene.objects[i];
        if (i == hit) {
          o.shape = rule.arg0;
          o.color = rule.arg1;
        } else {
          while (o.shape == rule.arg0 && o.color == rule.arg1)
            o.color = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(v.n_colors)));
        }
      }
      break;
    }
  }
  const Scene target = apply_rule(scene, rule);
  ExampleTriple ex;
  ex.example_id = example_id;
  ex.family = family;
  ex.split = split;
  ex.query = render_query(vocab_, scene, rule);
  ex.target = render_scene(vocab_, target);
  ex.set_oracle_rationale(make_oracle_rationale(vocab_, scene, rule, target));
  return ex;
}

CandidatePool TaskGenerator::make_candidate_pool(const ExampleTriple& example, std::size_t n_distractors,
                                                 std::uint64_t seed) const {
  if (n_distractors < 2) throw ContractError("candidate pool needs at least 2 distractors");
  Rng rng(seed);
  const auto pq = parse_query(vocab_, example.query);
  std::vector<TokenSequence> pool{example.target};
  std::set<TokenSequence> seen{example.target};
  auto offer = [&](TokenSequence s) {
    if (seen.insert(s).second) pool.push_back(std::move(s));
  };

  offer(render_scene(vocab_, pq.scene));

  std::vector<Rule> alternatives = rules_for(pq.rule.family, Split::kTrain);
  const auto held = rules_for(pq.rule.family, Split::kEval);
  alternatives.insert(alternatives.end(), held.begin(), held.end());
  std::sort(alternatives.begin(), alternatives.end(), [](const Rule& a, const Rule& b) {
    return std::tie(a.arg0, a.arg1) < std::tie(b.arg0, b.arg1);
  });
  rng.shuffle(std::span<Rule>(alternatives));
  for (const auto& alt : alternatives) {
    if (alt == pq.rule || !rule_applicable(pq.scene, alt)) continue;
    auto seq = render_scene(vocab_, apply_rule(pq.scene, alt));
    if (seen.contains(seq)) continue;
    offer(std::move(seq));
    break;
  }

  while (pool.size() < n_distractors + 1) offer(render_scene(vocab_, random_scene(rng, 1)));

  rng.shuffle(std::span<TokenSequence>(pool));
  CandidatePool out;
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (pool[i] == example.target) out.target_index = i;
  out.candidates = std::move(pool);
  return out;
}

std::size_t TaskGenerator::max_rationale_length() const {
  const auto n = static_cast<std::size_t>(config_.max_objects);
  // RATIONALE_BEGIN + rule (3) + n steps of 7 + scene (4n)
  return 1 + 3 + 7 * n + 4 * n;
}

std::size_t TaskGenerator::max_query_length() const { return 4 * static_cast<std::size_t>(config_.max_objects) + 3; }

DatasetSplits generate_dataset(const TaskGenerator& generator, std::uint64_t seed, std::size_t n_train,
                               std::size_t n_eval, unsigned threads) {
  if (n_train >= kEvalIdBase) throw ConfigError("n_train must be below " + std::to_string(kEvalIdBase));
  DatasetSplits out;
  out.train.resize(n_train);
  out.eval.resize(n_eval);
  const auto& families = generator.config().families;

  auto build = [&](Dataset& dst, Split split, std::uint64_t id_base, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const std::uint64_t id = id_base + i;
      Rng rng(derive_seed(seed, id));
      const auto family = families[rng.uniform_index(families.size())];
      dst[i] = generator.make_example(family, rng.next_u64(), split, id);
    }
  };
  auto run = [&](Dataset& dst, Split split, std::uint64_t id_base) {
    const unsigned t = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(dst.size())));
    if (t <= 1) {
      build(dst, split, id_base, 0, dst.size());
      return;
    }
    std::vector<std::jthread> pool;
    const std::size_t chunk = (dst.size() + t - 1) / t;
    for (unsigned w = 0; w < t; ++w) {
      const std::size_t b = w * chunk, e = std::min(dst.size(), b + chunk);
      if (b < e) pool.emplace_back([&, b, e] { build(dst, split, id_base, b, e); });
    }
  };
  run(out.train, Split::kTrain, 0);
  run(out.eval, Split::kEval, kEvalIdBase);
  return out;
}

Dataset make_perturbed_triplets(const Dataset& dataset, PerturbationMode mode, std::uint64_t seed) {
  const std::size_t n = dataset.size();
  if (n < 2) throw TaskError("perturbed triplets need at least 2 examples");
  const bool wrong_target = mode == PerturbationMode::kWrongTarget;
  auto same = [&](std::size_t i, std::size_t donor) {
    return wrong_target ? dataset[donor].target == dataset[i].target : dataset[donor].query == dataset[i].query;
  };
  // Example i receives the field of example perm[i]; a donor must differ in
  // index and in content.
  auto clash = [&](std::size_t i, std::size_t donor) { return donor == i || same(i, donor); };

  // Sattolo's algorithm: a uniformly random single cycle, hence a derangement.
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_index(i)]);

  // Duplicate contents make some donors useless; swap those donors with
  // another example's where both sides end up valid.
  for (std::size_t i = 0; i < n; ++i) {
    if (!clash(i, perm[i])) continue;
    const std::size_t offset = rng.uniform_index(n);
    bool fixed = false;
    for (std::size_t k = 0; k < n && !fixed; ++k) {
      const std::size_t j = (offset + k) % n;
      if (!clash(i, perm[j]) && !clash(j, perm[i])) {
        std::swap(perm[i], perm[j]);
        fixed = true;
      }
    }
    if (!fixed) throw TaskError("could not find a derangement with distinct contents; dataset has too many duplicates");
  }

  Dataset out = dataset;
  for (std::size_t i = 0; i < n; ++i) {
    if (wrong_target) {
      out[i].target = dataset[perm[i]].target;
    } else {
      out[i].query = dataset[perm[i]].query;
    }
  }
  return out;
}

}  // namespace rge
