// SPDX-License-Identifier: Apache-2.0
#include "rge/run_config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <functional>
#include <sstream>

#include "rge/dataset_io.hpp"
#include "rge/error.hpp"
#include "rge/hash.hpp"

extern char** environ;

namespace rge {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename N>
N parse_integer(std::string_view key, std::string_view v) {
  N out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError("'" + std::string(key) + "' expects a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError("'" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
  }
  return out;
}

std::string real_text(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    auto part = trim(v.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!part.empty()) out.push_back(std::move(part));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "," : "") + parts[i];
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

#define RGE_INT(key, expr)                                                                                    \
  Field {                                                                                                     \
    key, [](const RunConfig& c) { return std::to_string(c.expr); },                                          \
        [](RunConfig& c, std::string_view v) { c.expr = parse_integer<std::decay_t<decltype(c.expr)>>(key, v); } \
  }

#define RGE_REAL(key, expr)                                                                          \
  Field {                                                                                            \
    key, [](const RunConfig& c) { return real_text(c.expr); },                                      \
        [](RunConfig& c, std::string_view v) { c.expr = parse_real(key, v); }                       \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f = {
        RGE_INT("data.n_eval", n_eval),
        RGE_INT("data.n_train", n_train),
        RGE_INT("data.pool_size", pool_size),
        RGE_INT("experiment.n_seeds", n_seeds),
        Field{"experiment.sweep_ratios", [](const RunConfig& c) { return join(c.sweep_ratios); },
              [](RunConfig& c, std::string_view v) {
                auto ratios = split_list(v);
                for (const auto& r : ratios) (void)parse_alpha_ratio(r);
                c.sweep_ratios = std::move(ratios);
              }},
        RGE_INT("model.d_ff", model.d_ff),
        RGE_INT("model.d_model", model.d_model),
        RGE_INT("model.max_seq", model.max_seq),
        RGE_INT("model.n_heads", model.n_heads),
        RGE_INT("model.n_layers", model.n_layers),
        Field{"run.precision",
              [](const RunConfig& c) { return std::string(c.precision == Precision::kFloat64 ? "double" : "float"); },
              [](RunConfig& c, std::string_view v) {
                if (v == "float" || v == "32") {
                  c.precision = Precision::kFloat32;
                } else if (v == "double" || v == "64") {
                  c.precision = Precision::kFloat64;
                } else {
                  throw ConfigError("run.precision expects float or double, got '" + std::string(v) + "'");
                }
              }},
        Field{"run.root", [](const RunConfig& c) { return c.run_root.string(); },
              [](RunConfig& c, std::string_view v) { c.run_root = std::string(v); }},
        RGE_INT("run.seed", seed),
        RGE_INT("run.threads", threads),
        Field{"task.families",
              [](const RunConfig& c) {
                std::vector<std::string> names;
                for (auto f : c.task.families) names.emplace_back(to_string(f));
                return join(names);
              },
              [](RunConfig& c, std::string_view v) { c.task.families = parse_families(v); }},
        RGE_INT("task.max_objects", task.max_objects),
        RGE_INT("task.n_colors", task.vocab.n_colors),
        RGE_INT("task.n_shapes", task.vocab.n_shapes),
        RGE_INT("task.n_sizes", task.vocab.n_sizes),
        Field{"train.alpha", [](const RunConfig& c) { return c.train.alpha_ratio; },
              [](RunConfig& c, std::string_view v) {
                (void)parse_alpha_ratio(v);
                c.train.alpha_ratio = std::string(v);
              }},
        RGE_INT("train.batch_size", train.batch_size),
        RGE_REAL("train.beta1", train.optimizer.beta1),
        RGE_REAL("train.beta2", train.optimizer.beta2),
        RGE_INT("train.checkpoint_every", train.checkpoint_every),
        RGE_REAL("train.cold_start_learning_rate", train.cold_start_learning_rate),
        RGE_INT("train.cold_start_steps", train.cold_start_steps),
        RGE_INT("train.epochs", train.epochs),
        RGE_REAL("train.eps", train.optimizer.eps),
        RGE_REAL("train.grad_clip", train.optimizer.grad_clip),
        RGE_REAL("train.learning_rate", train.learning_rate),
        Field{"train.lr_schedule", [](const RunConfig& c) { return std::string(to_string(c.train.lr_schedule)); },
              [](RunConfig& c, std::string_view v) { c.train.lr_schedule = parse_lr_schedule(v); }},
        RGE_INT("train.max_new_tokens", train.max_new_tokens),
        RGE_REAL("train.min_lr_factor", train.min_lr_factor),
        Field{"train.mode", [](const RunConfig& c) { return std::string(to_string(c.train.mode)); },
              [](RunConfig& c, std::string_view v) { c.train.mode = parse_supervision_mode(v); }},
        RGE_REAL("train.tau", train.tau),
        RGE_REAL("train.warmup_fraction", train.warmup_fraction),
        RGE_REAL("train.weight_decay", train.optimizer.weight_decay),
    };
    std::sort(f.begin(), f.end(), [](const Field& a, const Field& b) { return a.key < b.key; });
    return f;
  }();
  return table;
}

#undef RGE_INT
#undef RGE_REAL

const Field& find_field(std::string_view key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

RunConfig::RunConfig() {
  model.d_model = 64;
  model.n_layers = 2;
  model.n_heads = 4;
  model.d_ff = 256;
  model.max_seq = 96;
  train.learning_rate = 1e-4;
  train.epochs = 1;
  train.cold_start_steps = 1500;
  train.cold_start_learning_rate = 2e-3;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
  }();
  return k;
}

void RunConfig::set(std::string_view key, std::string_view value) { find_field(key).set(*this, trim(value)); }

std::string RunConfig::get(std::string_view key) const { return find_field(key).get(*this); }

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
  return out;
}

std::string RunConfig::canonical_text() const {
  // Output location, thread count and checkpoint cadence do not change results.
  std::string text;
  for (const auto& f : fields()) {
    if (f.key == "run.root" || f.key == "run.threads" || f.key == "train.checkpoint_every") continue;
    text += f.key + " = " + f.get(*this) + "\n";
  }
  return text;
}

std::string RunConfig::fingerprint() const { return to_hex(fnv1a(canonical_text())); }

void RunConfig::validate() const {
  TaskGenerator gen(task);
  const auto m = model_for(seed);
  m.validate();
  train.validate();
  if (pool_size < 3) throw ConfigError("data.pool_size must be at least 3");
  if (n_seeds == 0) throw ConfigError("experiment.n_seeds must be positive");
  if (threads == 0) throw ConfigError("run.threads must be positive");
  const std::size_t need = gen.max_query_length() + train.max_new_tokens + 1;
  if (m.max_seq < need) {
    throw ConfigError("model.max_seq " + std::to_string(m.max_seq) + " is below the longest query plus " +
                      "max_new_tokens plus <emb> (" + std::to_string(need) + ")");
  }
  if (train.max_new_tokens < gen.max_rationale_length()) {
    throw ConfigError("train.max_new_tokens " + std::to_string(train.max_new_tokens) +
                      " is below the longest oracle rationale (" + std::to_string(gen.max_rationale_length()) + ")");
  }
}

std::vector<std::uint64_t> RunConfig::seeds() const {
  std::vector<std::uint64_t> out(n_seeds);
  for (std::size_t i = 0; i < n_seeds; ++i) out[i] = seed + i;
  return out;
}

ModelConfig RunConfig::model_for(std::uint64_t run_seed) const {
  ModelConfig m = model;
  m.vocab_size = Vocab(task.vocab).size();
  m.seed = derive_seed(run_seed, 0x6d6f64656cULL);
  return m;
}

TrainConfig RunConfig::train_for(std::uint64_t run_seed) const {
  TrainConfig t = train;
  t.seed = derive_seed(run_seed, 0x747261696eULL);
  return t;
}

void apply_config_text(RunConfig& config, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      config.set(trim(std::string_view(body).substr(0, eq)), std::string_view(body).substr(eq + 1));
    } catch (const Error& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  apply_config_text(config, read_file(path), path.string());
}

void apply_environment(RunConfig& config, const std::map<std::string, std::string>& env) {
  for (const auto& key : RunConfig::keys()) {
    std::string name = "RGE_";
    for (char c : key) name += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    const auto it = env.find(name);
    if (it == env.end()) continue;
    try {
      config.set(key, it->second);
    } catch (const Error& e) {
      throw ConfigError(name + ": " + e.what());
    }
  }
}

std::map<std::string, std::string> process_environment() {
  std::map<std::string, std::string> out;
  for (char** e = environ; e && *e; ++e) {
    const std::string_view kv(*e);
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos || !kv.starts_with("RGE_")) continue;
    out.emplace(std::string(kv.substr(0, eq)), std::string(kv.substr(eq + 1)));
  }
  return out;
}

}  // namespace rge
