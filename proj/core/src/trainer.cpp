// SPDX-License-Identifier: Apache-2.0
#include "rge/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "rge/checkpoint.hpp"
#include "rge/dataset_io.hpp"
#include "rge/error.hpp"
#include "rge/hash.hpp"
#include "rge/ops.hpp"

namespace rge {

std::string_view to_string(SupervisionMode m) noexcept {
  switch (m) {
    case SupervisionMode::kBaseline: return "baseline";
    case SupervisionMode::kOracleLeaky: return "oracle_leaky";
    case SupervisionMode::kSelfGenerated: return "self_generated";
  }
  return "?";
}

SupervisionMode parse_supervision_mode(std::string_view s) {
  if (s == "baseline") return SupervisionMode::kBaseline;
  if (s == "oracle_leaky" || s == "leaky") return SupervisionMode::kOracleLeaky;
  if (s == "self_generated" || s == "self") return SupervisionMode::kSelfGenerated;
  throw ConfigError("unknown supervision mode '" + std::string(s) + "' (baseline, oracle_leaky, self_generated)");
}

std::string_view to_string(LrSchedule s) noexcept { return s == LrSchedule::kConstant ? "constant" : "cosine"; }

LrSchedule parse_lr_schedule(std::string_view s) {
  if (s == "constant") return LrSchedule::kConstant;
  if (s == "cosine") return LrSchedule::kCosine;
  throw ConfigError("unknown lr schedule '" + std::string(s) + "' (constant, cosine)");
}

double scheduled_lr(double peak, LrSchedule schedule, double warmup_fraction, double min_factor, std::size_t step,
                    std::size_t total_steps) {
  if (total_steps == 0) return peak;
  const double warmup = std::floor(warmup_fraction * static_cast<double>(total_steps));
  const double s = static_cast<double>(step);
  if (s < warmup) return peak * (s + 1) / warmup;
  if (schedule == LrSchedule::kConstant) return peak;
  const double span = std::max(1.0, static_cast<double>(total_steps) - warmup);
  const double progress = std::min(1.0, (s - warmup) / span);
  return peak * (min_factor + (1 - min_factor) * 0.5 * (1 + std::cos(std::numbers::pi * progress)));
}

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(tau, "tau");
  if (learning_rate < 0 || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be non-negative");
  if (cold_start_learning_rate < 0 || !std::isfinite(cold_start_learning_rate)) {
    throw ConfigError("cold_start_learning_rate must be non-negative");
  }
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2 for in-batch negatives");
  if (optimizer.beta1 < 0 || optimizer.beta1 >= 1 || optimizer.beta2 < 0 || optimizer.beta2 >= 1) {
    throw ConfigError("optimizer betas must lie in [0, 1)");
  }
  positive(optimizer.eps, "optimizer eps");
  if (optimizer.weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
  if (optimizer.grad_clip < 0) throw ConfigError("grad_clip must be non-negative");
  if (warmup_fraction < 0 || warmup_fraction >= 1) throw ConfigError("warmup_fraction must lie in [0, 1)");
  if (min_lr_factor < 0 || min_lr_factor > 1) throw ConfigError("min_lr_factor must lie in [0, 1]");
  (void)alpha();
}

template <typename T>
OptimizerState<T> OptimizerState<T>::zeros_like(const Parameters<T>& params) {
  OptimizerState s;
  for (const auto& t : params.list()) {
    s.first_moment.emplace_back(t.numel(), T(0));
    s.second_moment.emplace_back(t.numel(), T(0));
  }
  return s;
}

template <typename T>
std::string serialize_optimizer(const OptimizerState<T>& state) {
  ByteWriter w;
  w.bytes("RGEOPT\0\0", 8);
  w.u32(kCheckpointVersion);
  w.u32(sizeof(T));
  w.u64(state.step);
  w.u32(static_cast<std::uint32_t>(state.first_moment.size()));
  for (std::size_t i = 0; i < state.first_moment.size(); ++i) {
    w.u64(state.first_moment[i].size());
    w.bytes(state.first_moment[i].data(), state.first_moment[i].size() * sizeof(T));
    w.bytes(state.second_moment[i].data(), state.second_moment[i].size() * sizeof(T));
  }
  return w.finish();
}

template <typename T>
OptimizerState<T> deserialize_optimizer(const std::string& bytes, const Parameters<T>& params) {
  ByteReader r(bytes, "optimizer state");
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::string_view(magic, 6) != "RGEOPT") throw FormatError("not an rge optimizer state");
  if (r.u32() != kCheckpointVersion) throw FormatError("unsupported optimizer state version");
  if (r.u32() != sizeof(T)) throw FormatError("optimizer state precision differs from the model precision");
  OptimizerState<T> s;
  s.step = r.u64();
  const auto list = params.list();
  if (r.u32() != list.size()) throw FormatError("optimizer state does not match the model's tensor count");
  for (const auto& t : list) {
    const auto n = r.u64();
    if (n != t.numel()) throw FormatError("optimizer state tensor size does not match the model");
    std::vector<T> m(n), v(n);
    r.bytes(m.data(), n * sizeof(T));
    r.bytes(v.data(), n * sizeof(T));
    s.first_moment.push_back(std::move(m));
    s.second_moment.push_back(std::move(v));
  }
  if (!r.done()) throw FormatError("optimizer state has trailing bytes");
  return s;
}

template <typename T>
double adamw_step(const Parameters<T>& params, OptimizerState<T>& state, double learning_rate,
                  const OptimizerConfig& config) {
  auto list = params.list();
  if (state.first_moment.size() != list.size()) throw ContractError("optimizer state does not match parameters");

  double sq = 0;
  for (const auto& t : list)
    for (T g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm at step " + std::to_string(state.step));
  const double clip = (config.grad_clip > 0 && norm > config.grad_clip) ? config.grad_clip / norm : 1.0;

  ++state.step;
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < list.size(); ++i) {
    auto& t = list[i];
    auto data = t.mutable_data();
    const auto grad = t.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const double decay = t.rank() == 2 ? config.weight_decay : 0.0;
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[j]) * clip;
      const double mj = b1 * static_cast<double>(m[j]) + (1 - b1) * g;
      const double vj = b2 * static_cast<double>(v[j]) + (1 - b2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = (mj / c1) / (std::sqrt(vj / c2) + config.eps) + decay * static_cast<double>(data[j]);
      data[j] = static_cast<T>(static_cast<double>(data[j]) - learning_rate * update);
    }
    t.zero_grad();
  }
  return norm;
}

std::string trace_to_csv(const TrainTrace& trace) {
  std::string out = "step,lm_loss,con_loss,total\n";
  char buf[160];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g\n", r.step, r.lm_loss, r.con_loss, r.total);
    out += buf;
  }
  return out;
}

namespace {

TokenSequence concat(const TokenSequence& a, const TokenSequence& b, bool emb) {
  TokenSequence out;
  out.reserve(a.size() + b.size() + 1);
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  if (emb) out.push_back(Vocab::kEmb);
  return out;
}

template <typename T>
Tensor<T> last_row(const Tensor<T>& m) {
  return ops::slice_rows(m, m.rows() - 1, 1);
}

std::vector<std::size_t> range_positions(std::size_t from, std::size_t to) {
  std::vector<std::size_t> out(to - from);
  std::iota(out.begin(), out.end(), from);
  return out;
}

// Rationale tokens and the closing <emb> are supervised on the query side.
template <typename T>
std::pair<ForwardOutput<T>, LmTerm<T>> oracle_lm_forward(const ExampleTriple& ex, const Parameters<T>& params) {
  const auto seq = concat(ex.query, ex.oracle_rationale(), true);
  auto out = forward_full(params, seq);
  const auto positions = range_positions(ex.query.size(), seq.size());
  auto lm = lm_loss(out.logits, seq, positions);
  return {std::move(out), std::move(lm)};
}

template <typename T>
struct BatchLoss {
  JointLoss<T> joint;
  StepStats stats;
};

template <typename T>
BatchLoss<T> batch_loss(const Parameters<T>& params, Batch batch, const TrainConfig& config) {
  if (batch.size() < 2) throw BatchError("training batch needs at least 2 examples");
  std::vector<Tensor<T>> anchors, targets;
  std::vector<LmTerm<T>> lm_terms;
  std::size_t n_q = 0, n_t = 0, generated = 0, generated_len = 0, terminated = 0;
  for (const ExampleTriple* ex : batch) {
    auto q = build_query_forward(config.mode, *ex, params, config.max_new_tokens);
    if (q.lm) {
      n_q += q.lm->n_tokens;
      lm_terms.push_back(*q.lm);
    }
    if (config.mode == SupervisionMode::kSelfGenerated) {
      ++generated;
      generated_len += q.rationale.size();
      terminated += q.self_terminated ? 1 : 0;
    }
    anchors.push_back(q.anchor);
    auto t = build_target_forward(ex->target, params);
    n_t += t.lm.n_tokens;
    lm_terms.push_back(t.lm);
    targets.push_back(t.embedding);
  }
  const auto con = info_nce(ops::concat_rows(anchors), ops::concat_rows(targets), config.tau);
  const auto lm = pooled_lm_loss<T>(lm_terms);
  const auto alpha = config.alpha();
  BatchLoss<T> out{joint_loss(lm.loss, con, alpha.lm, alpha.con), {}};
  out.joint.breakdown.n_q_tokens = n_q;
  out.joint.breakdown.n_t_tokens = n_t;
  out.stats.loss = out.joint.breakdown;
  if (generated > 0) {
    out.stats.mean_rationale_length = static_cast<double>(generated_len) / static_cast<double>(generated);
    out.stats.self_terminated = static_cast<double>(terminated) / static_cast<double>(generated);
  }
  return out;
}

void check_finite(const LossBreakdown& b, std::uint64_t step) {
  if (!std::isfinite(b.total) || !std::isfinite(b.lm_loss) || !std::isfinite(b.con_loss)) {
    throw NumericError("non-finite loss at step " + std::to_string(step));
  }
}

std::vector<const ExampleTriple*> gather_batch(const Dataset& dataset, const std::vector<std::size_t>& idx) {
  std::vector<const ExampleTriple*> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(&dataset[i]);
  return out;
}

constexpr std::uint64_t kColdStartSalt = 0xc01d57a27ULL;

}  // namespace

template <typename T>
QueryForward<T> build_query_forward(SupervisionMode mode, const ExampleTriple& example, const Parameters<T>& params,
                                    std::size_t max_new_tokens) {
  QueryForward<T> out;
  switch (mode) {
    case SupervisionMode::kBaseline: {
      const auto f = forward_full(params, concat(example.query, {}, true));
      out.anchor = last_row(f.final_hidden);
      return out;
    }
    case SupervisionMode::kOracleLeaky: {
      auto [f, lm] = oracle_lm_forward(example, params);
      out.anchor = last_row(f.final_hidden);
      out.lm = std::move(lm);
      out.rationale = example.oracle_rationale();
      return out;
    }
    case SupervisionMode::kSelfGenerated: {
      auto [f, lm] = oracle_lm_forward(example, params);
      out.lm = std::move(lm);
      TokenSequence generated;
      {
        NoGradGuard no_grad;
        generated = greedy_generate(params, example.query, Vocab::kEmb, max_new_tokens);
      }
      // The suffix always ends in <emb>; it was self-emitted unless the
      // budget ran out first.
      out.self_terminated = generated.size() <= max_new_tokens;
      generated.pop_back();
      out.rationale = std::move(generated);
      if (out.rationale == example.oracle_rationale()) {
        out.anchor = last_row(f.final_hidden);
      } else {
        const auto g = forward_full(params, concat(example.query, out.rationale, true));
        out.anchor = last_row(g.final_hidden);
      }
      return out;
    }
  }
  throw ContractError("unknown supervision mode");
}

template <typename T>
TargetForward<T> build_target_forward(const TokenSequence& target, const Parameters<T>& params) {
  const auto seq = concat(target, {}, true);
  const auto f = forward_full(params, seq);
  const std::size_t last = seq.size() - 1;
  const std::size_t positions[1] = {last};
  return {last_row(f.final_hidden), lm_loss(f.logits, seq, std::span<const std::size_t>(positions))};
}

template <typename T>
StepStats train_step(const Parameters<T>& params, OptimizerState<T>& state, Batch batch, const TrainConfig& config,
                     std::optional<double> lr) {
  const double learning_rate = lr.value_or(config.learning_rate);
  Tape<T> tape;
  TapeScope<T> scope(tape);
  auto loss = batch_loss(params, batch, config);
  check_finite(loss.stats.loss, state.step);
  backward(loss.joint.total);
  tape.clear();
  adamw_step(params, state, learning_rate, config.optimizer);
  return loss.stats;
}

template <typename T>
StepStats evaluate_batch_loss(const Parameters<T>& params, Batch batch, const TrainConfig& config) {
  NoGradGuard no_grad;
  return batch_loss(params, batch, config).stats;
}

std::size_t steps_per_epoch(std::size_t dataset_size, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  return (dataset_size + batch_size - 1) / batch_size;
}

std::vector<std::size_t> batch_indices(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                                       std::size_t step) {
  if (dataset_size == 0) throw TaskError("cannot batch an empty dataset");
  const std::size_t b = std::min(batch_size, dataset_size);
  const std::size_t spe = steps_per_epoch(dataset_size, b);
  const std::size_t epoch = step / spe;
  const std::size_t k = step % spe;
  std::vector<std::size_t> perm(dataset_size);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(derive_seed(seed, epoch));
  rng.shuffle(std::span<std::size_t>(perm));
  std::vector<std::size_t> out(b);
  for (std::size_t j = 0; j < b; ++j) out[j] = perm[(k * b + j) % dataset_size];
  return out;
}

template <typename T>
TrainTrace cold_start(Parameters<T>& params, const Dataset& dataset, const TrainConfig& config) {
  config.validate();
  if (dataset.empty()) throw TaskError("cold start needs a non-empty dataset");
  auto state = OptimizerState<T>::zeros_like(params);
  TrainTrace trace;
  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t seed = derive_seed(config.seed, kColdStartSalt);
  for (std::size_t step = 0; step < config.cold_start_steps; ++step) {
    const auto batch = gather_batch(dataset, batch_indices(dataset.size(), config.batch_size, seed, step));
    Tape<T> tape;
    TapeScope<T> scope(tape);
    std::vector<LmTerm<T>> terms;
    std::size_t n_q = 0, n_t = 0;
    for (const ExampleTriple* ex : batch) {
      auto q = oracle_lm_forward(*ex, params).second;
      n_q += q.n_tokens;
      terms.push_back(std::move(q));
      auto t = build_target_forward(ex->target, params).lm;
      n_t += t.n_tokens;
      terms.push_back(std::move(t));
    }
    const auto lm = pooled_lm_loss<T>(terms);
    TraceRecord rec;
    rec.step = step;
    rec.lm_loss = rec.total = static_cast<double>(lm.loss.item());
    if (!std::isfinite(rec.lm_loss)) throw NumericError("non-finite cold-start loss at step " + std::to_string(step));
    backward(lm.loss);
    tape.clear();
    adamw_step(params, state,
               scheduled_lr(config.cold_start_learning_rate, config.lr_schedule, config.warmup_fraction,
                            config.min_lr_factor, step, config.cold_start_steps),
               config.optimizer);
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    trace.push_back(rec);
  }
  return trace;
}

template <typename T>
void save_training_state(const Parameters<T>& params, const OptimizerState<T>& state, const std::filesystem::path& dir,
                         const std::string& stem) {
  save_checkpoint(params, dir / (stem + ".ckpt"));
  write_file(dir / (stem + ".opt"), serialize_optimizer(state));
}

template <typename T>
TrainResult<T> run_training(const Parameters<T>& init, const Dataset& dataset, const TrainConfig& config,
                            const std::optional<OptimizerState<T>>& resume, const RunOptions& options) {
  config.validate();
  if (dataset.size() < 2) throw TaskError("training needs at least 2 examples");
  TrainResult<T> result{init.clone(), resume ? *resume : OptimizerState<T>::zeros_like(init), {}};
  const std::size_t total = steps_per_epoch(dataset.size(), std::min(config.batch_size, dataset.size())) * config.epochs;
  const std::size_t end = options.stop_after > 0 ? std::min(options.stop_after, total) : total;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t step = result.optimizer.step; step < end; ++step) {
    const auto batch = gather_batch(dataset, batch_indices(dataset.size(), config.batch_size, config.seed, step));
    const double lr = scheduled_lr(config.learning_rate, config.lr_schedule, config.warmup_fraction,
                                   config.min_lr_factor, step, total);
    const auto stats = train_step(result.params, result.optimizer, batch, config, lr);
    TraceRecord rec;
    rec.step = step;
    rec.lm_loss = stats.loss.lm_loss;
    rec.con_loss = stats.loss.con_loss;
    rec.total = stats.loss.total;
    rec.mean_rationale_length = stats.mean_rationale_length;
    rec.self_terminated = stats.self_terminated;
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.trace.push_back(rec);
    if (options.on_step) options.on_step(rec);
    if (config.checkpoint_every > 0 && !config.checkpoint_dir.empty() && (step + 1) % config.checkpoint_every == 0) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "step-%06zu", step + 1);
      save_training_state(result.params, result.optimizer, config.checkpoint_dir, stem);
    }
  }
  return result;
}

#define RGE_INSTANTIATE(T)                                                                                            \
  template struct OptimizerState<T>;                                                                                  \
  template std::string serialize_optimizer<T>(const OptimizerState<T>&);                                             \
  template OptimizerState<T> deserialize_optimizer<T>(const std::string&, const Parameters<T>&);                      \
  template double adamw_step<T>(const Parameters<T>&, OptimizerState<T>&, double, const OptimizerConfig&);            \
  template QueryForward<T> build_query_forward<T>(SupervisionMode, const ExampleTriple&, const Parameters<T>&,        \
                                                  std::size_t);                                                       \
  template TargetForward<T> build_target_forward<T>(const TokenSequence&, const Parameters<T>&);                      \
  template StepStats train_step<T>(const Parameters<T>&, OptimizerState<T>&, Batch, const TrainConfig&,               \
                                   std::optional<double>);                                                            \
  template StepStats evaluate_batch_loss<T>(const Parameters<T>&, Batch, const TrainConfig&);                         \
  template TrainTrace cold_start<T>(Parameters<T>&, const Dataset&, const TrainConfig&);                              \
  template void save_training_state<T>(const Parameters<T>&, const OptimizerState<T>&, const std::filesystem::path&,  \
                                       const std::string&);                                                           \
  template TrainResult<T> run_training<T>(const Parameters<T>&, const Dataset&, const TrainConfig&,                   \
                                          const std::optional<OptimizerState<T>>&, const RunOptions&);

RGE_INSTANTIATE(float)
RGE_INSTANTIATE(double)

#undef RGE_INSTANTIATE

}  // namespace rge
