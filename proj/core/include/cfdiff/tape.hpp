// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cfdiff/tensor.hpp"

namespace cfdiff::nd {

enum class OpKind : std::uint8_t {
  leaf,
  matmul,
  block_matmul,
  add,
  scale,
  row_softmax,
  relu,
  tanh,
  mean_over_cols,
  mse,
  sinusoidal_embed,
  weighted_sum,
  reshape,
};

const char* op_name(OpKind kind);

using NodeId = std::uint32_t;

template <class T>
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Tensor<T>> grads) : grads_(std::move(grads)) {}

  /// Gradient of the loss w.r.t. parameter node `id`; all-zero when the loss
  /// does not depend on it. Intermediate nodes are not retained.
  const Tensor<T>& at(NodeId id) const { return grads_.at(id); }

 private:
  std::vector<Tensor<T>> grads_;
};

/// Eager reverse-mode tape. Every op computes its value immediately and
/// keeps what backward needs. Single-writer; not thread safe.
template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  /// Trainable leaf referencing external storage. `value` must outlive the
  /// tape and stay unmodified until backward() returns.
  NodeId parameter(const Tensor<T>& value);
  /// Non-trainable leaf (inputs, targets, noise). Copied into the tape.
  NodeId constant(Tensor<T> value);

  /// op(a) * op(b), where op transposes when the flag is set.
  NodeId matmul(NodeId a, NodeId b, bool transpose_a = false, bool transpose_b = false);
  /// Per-block product. `a` is split row-wise into `blocks` equal blocks,
  /// as is `b`; block i of the output is a_i * op(b_i).
  NodeId block_matmul(NodeId a, NodeId b, std::size_t blocks, bool transpose_b = false);
  /// a + b; b is either the same shape or a single row broadcast over rows.
  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  /// Max-subtracted softmax over each row.
  NodeId row_softmax(NodeId a);
  NodeId relu(NodeId a);
  NodeId tanh(NodeId a);
  NodeId mean_over_cols(NodeId a);
  /// (1/rows) * sum_r w_r * ||pred_r - target_r||^2, a 1x1 node. Empty
  /// `row_weights` means all ones.
  NodeId mse(NodeId pred, NodeId target, std::span<const double> row_weights = {});
  /// Constant rows: for each timestep t, `rows_per_step` copies of the
  /// standard sin/cos embedding of t in `dim` dimensions.
  NodeId sinusoidal_embed(std::span<const int> timesteps, std::size_t dim, std::size_t rows_per_step);
  NodeId weighted_sum(std::span<const NodeId> inputs, std::span<const double> weights);
  NodeId reshape(NodeId a, std::size_t rows, std::size_t cols);

  const Tensor<T>& value(NodeId id) const;
  Shape shape(NodeId id) const { return value(id).shape(); }
  OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
  std::span<const NodeId> inputs(NodeId id) const { return nodes_.at(id).inputs; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a 1x1 loss node.
  Gradients<T> backward(NodeId loss) const;

 private:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::vector<NodeId> inputs;
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    bool needs_grad = false;
    bool transpose_a = false;
    bool transpose_b = false;
    std::size_t blocks = 1;
    double factor = 1.0;
    std::vector<double> weights;
  };

  NodeId push(Node node);
  void check_finite(const Node& node) const;
  bool any_needs_grad(std::initializer_list<NodeId> ids) const;

  std::vector<Node> nodes_;
};

/// Standard transformer sinusoidal embedding of a scalar timestep.
std::vector<double> sinusoidal_embedding(int t, std::size_t dim);

}  // namespace cfdiff::nd
