// SPDX-License-Identifier: Apache-2.0
#include "rge/tensor.hpp"

#include <atomic>
#include <cstdio>
#include <numeric>

#include "rge/hash.hpp"

namespace rge {

std::size_t shape_numel(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::string to_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t next_node_id() noexcept {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool GradMode::enabled() noexcept { return g_grad_enabled; }
void GradMode::set_enabled(bool on) noexcept { g_grad_enabled = on; }

template <typename T>
std::vector<T>& TensorNode<T>::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), T{0});
  return grad;
}

template <typename T>
void TensorNode<T>::accumulate_grad(std::span<const T> g) {
  if (!requires_grad) return;
  auto& dst = ensure_grad();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_to_string(shape) + " does not match " + std::to_string(data.size()) +
                         " values");
  }
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node->id = next_node_id();
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return from_data({}, {value});
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  const auto& s = node_->shape;
  if (s.size() <= 1) return 1;
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
  return r;
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  const auto& s = node_->shape;
  return s.empty() ? 1 : s.back();
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!node_->is_leaf) throw ContractError("mutable_data() on a non-leaf tensor");
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
  return node_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from_data(shape(), node_->data, false);
}

template <typename T>
void Tape<T>::record(std::vector<std::uint64_t> input_ids, const Tensor<T>& output, std::function<void()> backward) {
  records_.push_back(Record{std::move(input_ids), output.node_id(), output.node(), std::move(backward)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  for (auto& r : records_) r.output->grad.clear();
  loss.node()->ensure_grad()[0] += T{1};
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward();
  }
}

namespace {
template <typename T>
Tape<T>*& tape_slot() noexcept {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}
}  // namespace

template <typename T>
Tape<T>* active_tape() noexcept {
  return tape_slot<T>();
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(tape_slot<T>()) {
  tape_slot<T>() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  tape_slot<T>() = previous_;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  Tape<T>* tape = active_tape<T>();
  if (tape == nullptr) throw ContractError("backward() without an active tape");
  tape->backward(loss);
}

#define RGE_INSTANTIATE(T)                  \
  template struct TensorNode<T>;            \
  template class Tensor<T>;                 \
  template class Tape<T>;                   \
  template Tape<T>* active_tape<T>() noexcept; \
  template class TapeScope<T>;              \
  template void backward<T>(const Tensor<T>&);

RGE_INSTANTIATE(float)
RGE_INSTANTIATE(double)

#undef RGE_INSTANTIATE

}  // namespace rge
