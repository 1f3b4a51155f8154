// SPDX-License-Identifier: Apache-2.0
//
// Dense tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to a node holding its values and (optionally)
// its gradient. Operations in ops.hpp record themselves on the thread's active
// Tape when gradient recording is enabled and at least one input requires a
// gradient. Tape::backward replays the records in reverse order.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rge/error.hpp"

namespace rge {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_to_string(const Shape& shape);

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something is accumulated
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t id = 0;

  void accumulate_grad(std::span<const T> g);
  std::vector<T>& ensure_grad();
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
  static Tensor scalar(T value);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  /// Rows of a matrix view: product of all dims but the last (1 for vectors).
  std::size_t rows() const;
  /// Size of the last dimension (1 for scalars).
  std::size_t cols() const;

  std::span<const T> data() const { return node_->data; }
  /// Write access for leaf tensors (parameter updates, test setup).
  std::span<T> mutable_data();
  T item() const;
  T at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  std::uint64_t node_id() const { return node_->id; }

  /// Value copy without gradient history.
  Tensor detach() const;

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

/// Ordered record of differentiable operations.
template <typename T>
class Tape {
 public:
  struct Record {
    std::vector<std::uint64_t> input_ids;
    std::uint64_t output_id;
    std::shared_ptr<TensorNode<T>> output;
    std::function<void()> backward;
  };

  void record(std::vector<std::uint64_t> input_ids, const Tensor<T>& output, std::function<void()> backward);

  /// Accumulates d(loss)/d(leaf) into every reachable leaf that requires a
  /// gradient. Intermediate gradients are recomputed on each call, so leaves
  /// accumulate across repeated calls until zero_grad.
  void backward(const Tensor<T>& loss);

  void clear() { records_.clear(); }
  std::size_t size() const noexcept { return records_.size(); }
  const std::vector<Record>& records() const noexcept { return records_; }

 private:
  std::vector<Record> records_;
};

/// Thread-local gradient-recording switch.
class GradMode {
 public:
  static bool enabled() noexcept;
  static void set_enabled(bool on) noexcept;
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
Tape<T>* active_tape() noexcept;

/// Installs a tape as the thread's active tape for the scope's lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Runs backward on the active tape.
template <typename T>
void backward(const Tensor<T>& loss);

std::uint64_t next_node_id() noexcept;

}  // namespace rge
