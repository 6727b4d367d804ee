// SPDX-License-Identifier: Apache-2.0
#include "cfdiff/tape.hpp"

#include <Eigen/Core>
#include <cmath>

#include "cfdiff/errors.hpp"

namespace cfdiff::nd {

namespace {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapC = Eigen::Map<const Mat<T>>;
template <class T>
using MapM = Eigen::Map<Mat<T>>;

template <class T>
MapC<T> view(const Tensor<T>& t) {
  return MapC<T>(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
template <class T>
MapM<T> view(Tensor<T>& t) {
  return MapM<T>(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
template <class T>
MapC<T> block_view(const Tensor<T>& t, std::size_t block, std::size_t block_rows) {
  return MapC<T>(t.data().data() + block * block_rows * t.cols(), static_cast<Eigen::Index>(block_rows),
                 static_cast<Eigen::Index>(t.cols()));
}
template <class T>
MapM<T> block_view(Tensor<T>& t, std::size_t block, std::size_t block_rows) {
  return MapM<T>(t.data().data() + block * block_rows * t.cols(), static_cast<Eigen::Index>(block_rows),
                 static_cast<Eigen::Index>(t.cols()));
}

// out (+)= op(a) * op(b)
template <class T, class A, class B, class Out>
void gemm(const A& a, bool ta, const B& b, bool tb, Out&& out, bool accumulate) {
  if (!accumulate) out.setZero();
  if (!ta && !tb) {
    out.noalias() += a * b;
  } else if (ta && !tb) {
    out.noalias() += a.transpose() * b;
  } else if (!ta && tb) {
    out.noalias() += a * b.transpose();
  } else {
    out.noalias() += a.transpose() * b.transpose();
  }
}

std::string shapes_msg(const char* op, const Shape& a, const Shape& b) {
  return std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b);
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::block_matmul: return "block_matmul";
    case OpKind::add: return "add";
    case OpKind::scale: return "scale";
    case OpKind::row_softmax: return "row_softmax";
    case OpKind::relu: return "relu";
    case OpKind::tanh: return "tanh";
    case OpKind::mean_over_cols: return "mean_over_cols";
    case OpKind::mse: return "mse";
    case OpKind::sinusoidal_embed: return "sinusoidal_embed";
    case OpKind::weighted_sum: return "weighted_sum";
    case OpKind::reshape: return "reshape";
  }
  return "?";
}

std::vector<double> sinusoidal_embedding(int t, std::size_t dim) {
  std::vector<double> out(dim, 0.0);
  const std::size_t half = (dim + 1) / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(2 * i) / static_cast<double>(dim));
    const double angle = static_cast<double>(t) * freq;
    out[2 * i] = std::sin(angle);
    if (2 * i + 1 < dim) out[2 * i + 1] = std::cos(angle);
  }
  return out;
}

template <class T>
const Tensor<T>& Tape<T>::value(NodeId id) const {
  const auto& n = nodes_.at(id);
  return n.external ? *n.external : n.value;
}

template <class T>
bool Tape<T>::any_needs_grad(std::initializer_list<NodeId> ids) const {
  for (auto id : ids) {
    if (nodes_.at(id).needs_grad) return true;
  }
  return false;
}

template <class T>
void Tape<T>::check_finite(const Node& node) const {
  if (!node.value.all_finite()) {
    std::string msg = std::string(op_name(node.kind)) + ": non-finite output " + to_string(node.value.shape());
    for (auto in : node.inputs) msg += " in" + to_string(shape(in));
    throw NumericError(msg);
  }
}

template <class T>
NodeId Tape<T>::push(Node node) {
  if (node.kind != OpKind::leaf) check_finite(node);
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size() - 1);
}

template <class T>
NodeId Tape<T>::parameter(const Tensor<T>& value) {
  if (!value.all_finite()) throw NumericError("parameter contains non-finite values");
  Node n;
  n.external = &value;
  n.needs_grad = true;
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::constant(Tensor<T> value) {
  if (!value.all_finite()) throw NumericError("constant contains non-finite values");
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::matmul(NodeId a, NodeId b, bool ta, bool tb) {
  const auto& A = value(a);
  const auto& B = value(b);
  const auto ar = ta ? A.cols() : A.rows();
  const auto ac = ta ? A.rows() : A.cols();
  const auto br = tb ? B.cols() : B.rows();
  const auto bc = tb ? B.rows() : B.cols();
  if (ac != br) throw ShapeError(shapes_msg("matmul", {ar, ac}, {br, bc}));
  Node n;
  n.kind = OpKind::matmul;
  n.inputs = {a, b};
  n.transpose_a = ta;
  n.transpose_b = tb;
  n.needs_grad = any_needs_grad({a, b});
  n.value = Tensor<T>(ar, bc);
  gemm<T>(view(A), ta, view(B), tb, view(n.value), false);
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::block_matmul(NodeId a, NodeId b, std::size_t blocks, bool tb) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (blocks == 0 || A.rows() % blocks != 0 || B.rows() % blocks != 0) {
    throw ShapeError(shapes_msg("block_matmul", A.shape(), B.shape()) + " for " +
                     std::to_string(blocks) + " blocks");
  }
  const auto m = A.rows() / blocks;
  const auto brows = B.rows() / blocks;
  const auto inner_b = tb ? B.cols() : brows;
  const auto out_cols = tb ? brows : B.cols();
  if (A.cols() != inner_b) throw ShapeError(shapes_msg("block_matmul", A.shape(), B.shape()));
  Node n;
  n.kind = OpKind::block_matmul;
  n.inputs = {a, b};
  n.blocks = blocks;
  n.transpose_b = tb;
  n.needs_grad = any_needs_grad({a, b});
  n.value = Tensor<T>(A.rows(), out_cols);
  for (std::size_t i = 0; i < blocks; ++i) {
    gemm<T>(block_view(A, i, m), false, block_view(B, i, brows), tb, block_view(n.value, i, m), false);
  }
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::add(NodeId a, NodeId b) {
  const auto& A = value(a);
  const auto& B = value(b);
  const bool broadcast = B.rows() == 1 && A.rows() != 1;
  if (A.cols() != B.cols() || (!broadcast && A.rows() != B.rows())) {
    throw ShapeError(shapes_msg("add", A.shape(), B.shape()));
  }
  Node n;
  n.kind = OpKind::add;
  n.inputs = {a, b};
  n.needs_grad = any_needs_grad({a, b});
  n.value = A;
  auto out = view(n.value);
  if (broadcast) {
    out.rowwise() += view(B).row(0);
  } else {
    out += view(B);
  }
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::scale(NodeId a, double factor) {
  Node n;
  n.kind = OpKind::scale;
  n.inputs = {a};
  n.factor = factor;
  n.needs_grad = any_needs_grad({a});
  n.value = value(a);
  view(n.value) *= static_cast<T>(factor);
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::row_softmax(NodeId a) {
  const auto& A = value(a);
  Node n;
  n.kind = OpKind::row_softmax;
  n.inputs = {a};
  n.needs_grad = any_needs_grad({a});
  n.value = Tensor<T>(A.rows(), A.cols());
  for (std::size_t r = 0; r < A.rows(); ++r) {
    const auto in = A.row(r);
    auto out = n.value.row(r);
    T mx = in.empty() ? T(0) : in[0];
    for (auto v : in) mx = std::max(mx, v);
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      out[c] = std::exp(in[c] - mx);
      sum += static_cast<double>(out[c]);
    }
    const double inv = 1.0 / sum;
    for (auto& v : out) v = static_cast<T>(static_cast<double>(v) * inv);
  }
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::relu(NodeId a) {
  Node n;
  n.kind = OpKind::relu;
  n.inputs = {a};
  n.needs_grad = any_needs_grad({a});
  n.value = value(a);
  for (auto& v : n.value.data()) v = v > T(0) ? v : T(0);
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::tanh(NodeId a) {
  Node n;
  n.kind = OpKind::tanh;
  n.inputs = {a};
  n.needs_grad = any_needs_grad({a});
  n.value = value(a);
  for (auto& v : n.value.data()) v = std::tanh(v);
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::mean_over_cols(NodeId a) {
  const auto& A = value(a);
  if (A.cols() == 0) throw ShapeError("mean_over_cols: zero columns");
  Node n;
  n.kind = OpKind::mean_over_cols;
  n.inputs = {a};
  n.needs_grad = any_needs_grad({a});
  n.value = Tensor<T>(A.rows(), 1);
  for (std::size_t r = 0; r < A.rows(); ++r) {
    double s = 0.0;
    for (auto v : A.row(r)) s += static_cast<double>(v);
    n.value(r, 0) = static_cast<T>(s / static_cast<double>(A.cols()));
  }
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::mse(NodeId pred, NodeId target, std::span<const double> row_weights) {
  const auto& P = value(pred);
  const auto& Y = value(target);
  if (P.shape() != Y.shape()) throw ShapeError(shapes_msg("mse", P.shape(), Y.shape()));
  if (!row_weights.empty() && row_weights.size() != P.rows()) {
    throw ShapeError("mse: row weight count " + std::to_string(row_weights.size()) +
                     " != rows " + std::to_string(P.rows()));
  }
  if (P.rows() == 0) throw ShapeError("mse: empty input");
  Node n;
  n.kind = OpKind::mse;
  n.inputs = {pred, target};
  n.weights.assign(row_weights.begin(), row_weights.end());
  n.needs_grad = any_needs_grad({pred, target});
  double total = 0.0;
  for (std::size_t r = 0; r < P.rows(); ++r) {
    const auto p = P.row(r);
    const auto y = Y.row(r);
    double s = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) {
      const double d = static_cast<double>(p[c]) - static_cast<double>(y[c]);
      s += d * d;
    }
    total += (n.weights.empty() ? 1.0 : n.weights[r]) * s;
  }
  n.value = Tensor<T>(1, 1, static_cast<T>(total / static_cast<double>(P.rows())));
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::sinusoidal_embed(std::span<const int> timesteps, std::size_t dim,
                                 std::size_t rows_per_step) {
  Node n;
  n.kind = OpKind::sinusoidal_embed;
  n.value = Tensor<T>(timesteps.size() * rows_per_step, dim);
  for (std::size_t b = 0; b < timesteps.size(); ++b) {
    const auto emb = sinusoidal_embedding(timesteps[b], dim);
    for (std::size_t r = 0; r < rows_per_step; ++r) {
      auto row = n.value.row(b * rows_per_step + r);
      for (std::size_t c = 0; c < dim; ++c) row[c] = static_cast<T>(emb[c]);
    }
  }
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::weighted_sum(std::span<const NodeId> inputs, std::span<const double> weights) {
  if (inputs.empty() || inputs.size() != weights.size()) {
    throw ShapeError("weighted_sum: need one weight per input");
  }
  const auto shape0 = shape(inputs[0]);
  Node n;
  n.kind = OpKind::weighted_sum;
  n.inputs.assign(inputs.begin(), inputs.end());
  n.weights.assign(weights.begin(), weights.end());
  n.value = Tensor<T>(shape0.rows, shape0.cols);
  auto out = view(n.value);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (shape(inputs[i]) != shape0) throw ShapeError(shapes_msg("weighted_sum", shape0, shape(inputs[i])));
    n.needs_grad = n.needs_grad || nodes_.at(inputs[i]).needs_grad;
    out += static_cast<T>(weights[i]) * view(value(inputs[i]));
  }
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::reshape(NodeId a, std::size_t rows, std::size_t cols) {
  Node n;
  n.kind = OpKind::reshape;
  n.inputs = {a};
  n.needs_grad = any_needs_grad({a});
  n.value = value(a).reshaped(rows, cols);
  return push(std::move(n));
}

template <class T>
Gradients<T> Tape<T>::backward(NodeId loss) const {
  if (value(loss).shape() != Shape{1, 1}) {
    throw ContractError("backward: loss must be 1x1, got " + to_string(value(loss).shape()));
  }
  std::vector<Tensor<T>> grads(nodes_.size());
  auto grad_of = [&](NodeId id) -> Tensor<T>& {
    auto& g = grads[id];
    if (g.empty() && value(id).size() > 0) g = Tensor<T>(value(id).rows(), value(id).cols());
    return g;
  };
  grads[loss] = Tensor<T>(1, 1, T(1));

  for (std::size_t idx = loss + 1; idx-- > 0;) {
    const auto& node = nodes_[idx];
    if (!node.needs_grad || node.kind == OpKind::leaf || grads[idx].empty()) continue;
    const auto& G = grads[idx];
    const auto gv = view(G);
    const auto& in = node.inputs;
    auto wants = [&](std::size_t i) { return nodes_[in[i]].needs_grad; };

    switch (node.kind) {
      case OpKind::matmul: {
        const auto& A = value(in[0]);
        const auto& B = value(in[1]);
        // C = op(A) op(B)
        if (wants(0)) {
          auto ga = view(grad_of(in[0]));
          if (!node.transpose_a) {
            gemm<T>(gv, false, view(B), !node.transpose_b, ga, true);  // G op(B)^T
          } else {
            gemm<T>(view(B), node.transpose_b, gv, true, ga, true);  // op(B) G^T
          }
        }
        if (wants(1)) {
          auto gb = view(grad_of(in[1]));
          if (!node.transpose_b) {
            gemm<T>(view(A), !node.transpose_a, gv, false, gb, true);  // op(A)^T G
          } else {
            gemm<T>(gv, true, view(A), node.transpose_a, gb, true);  // G^T op(A)
          }
        }
        break;
      }
      case OpKind::block_matmul: {
        const auto& A = value(in[0]);
        const auto& B = value(in[1]);
        const auto m = A.rows() / node.blocks;
        const auto brows = B.rows() / node.blocks;
        Tensor<T>* ga = wants(0) ? &grad_of(in[0]) : nullptr;
        Tensor<T>* gb = wants(1) ? &grad_of(in[1]) : nullptr;
        for (std::size_t i = 0; i < node.blocks; ++i) {
          const auto g = block_view(G, i, m);
          if (ga) {
            // dA_i = G_i op(B_i)^T
            gemm<T>(g, false, block_view(B, i, brows), !node.transpose_b, block_view(*ga, i, m), true);
          }
          if (gb) {
            if (node.transpose_b) {
              gemm<T>(g, true, block_view(A, i, m), false, block_view(*gb, i, brows), true);
            } else {
              gemm<T>(block_view(A, i, m), true, g, false, block_view(*gb, i, brows), true);
            }
          }
        }
        break;
      }
      case OpKind::add: {
        if (wants(0)) view(grad_of(in[0])) += gv;
        if (wants(1)) {
          auto& gb = grad_of(in[1]);
          if (gb.rows() == 1 && G.rows() != 1) {
            for (std::size_t c = 0; c < G.cols(); ++c) {
              double s = 0.0;
              for (std::size_t r = 0; r < G.rows(); ++r) s += static_cast<double>(G(r, c));
              gb(0, c) += static_cast<T>(s);
            }
          } else {
            view(gb) += gv;
          }
        }
        break;
      }
      case OpKind::scale:
        if (wants(0)) view(grad_of(in[0])) += static_cast<T>(node.factor) * gv;
        break;
      case OpKind::row_softmax: {
        if (!wants(0)) break;
        auto& ga = grad_of(in[0]);
        const auto& Y = node.value;
        for (std::size_t r = 0; r < Y.rows(); ++r) {
          const auto y = Y.row(r);
          const auto g = G.row(r);
          double dot = 0.0;
          for (std::size_t c = 0; c < y.size(); ++c) dot += static_cast<double>(y[c]) * static_cast<double>(g[c]);
          auto out = ga.row(r);
          for (std::size_t c = 0; c < y.size(); ++c) {
            out[c] += static_cast<T>(static_cast<double>(y[c]) * (static_cast<double>(g[c]) - dot));
          }
        }
        break;
      }
      case OpKind::relu: {
        if (!wants(0)) break;
        auto ga = grad_of(in[0]).data();
        const auto y = node.value.data();
        const auto g = G.data();
        for (std::size_t i = 0; i < y.size(); ++i) {
          if (y[i] > T(0)) ga[i] += g[i];
        }
        break;
      }
      case OpKind::tanh: {
        if (!wants(0)) break;
        auto ga = grad_of(in[0]).data();
        const auto y = node.value.data();
        const auto g = G.data();
        for (std::size_t i = 0; i < y.size(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
        break;
      }
      case OpKind::mean_over_cols: {
        if (!wants(0)) break;
        auto& ga = grad_of(in[0]);
        const auto inv = T(1) / static_cast<T>(ga.cols());
        for (std::size_t r = 0; r < ga.rows(); ++r) {
          for (auto& v : ga.row(r)) v += G(r, 0) * inv;
        }
        break;
      }
      case OpKind::mse: {
        const auto& P = value(in[0]);
        const auto& Y = value(in[1]);
        const double g0 = static_cast<double>(G(0, 0));
        Tensor<T>* gp = wants(0) ? &grad_of(in[0]) : nullptr;
        Tensor<T>* gy = wants(1) ? &grad_of(in[1]) : nullptr;
        const double rows = static_cast<double>(P.rows());
        for (std::size_t r = 0; r < P.rows(); ++r) {
          const double coef = 2.0 * g0 * (node.weights.empty() ? 1.0 : node.weights[r]) / rows;
          for (std::size_t c = 0; c < P.cols(); ++c) {
            const double d = coef * (static_cast<double>(P(r, c)) - static_cast<double>(Y(r, c)));
            if (gp) (*gp)(r, c) += static_cast<T>(d);
            if (gy) (*gy)(r, c) -= static_cast<T>(d);
          }
        }
        break;
      }
      case OpKind::weighted_sum:
        for (std::size_t i = 0; i < in.size(); ++i) {
          if (wants(i)) view(grad_of(in[i])) += static_cast<T>(node.weights[i]) * gv;
        }
        break;
      case OpKind::reshape: {
        if (!wants(0)) break;
        auto ga = grad_of(in[0]).data();
        const auto g = G.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        break;
      }
      case OpKind::sinusoidal_embed:
      case OpKind::leaf:
        break;
    }
    if (idx != loss) grads[idx] = Tensor<T>();  // intermediate gradients are not kept
  }
  for (std::size_t idx = 0; idx < nodes_.size(); ++idx) {
    const auto& node = nodes_[idx];
    if (node.kind == OpKind::leaf && node.needs_grad && grads[idx].empty()) {
      grads[idx] = Tensor<T>(value(static_cast<NodeId>(idx)).rows(), value(static_cast<NodeId>(idx)).cols());
    }
  }
  return Gradients<T>(std::move(grads));
}

template class Tape<float>;
template class Tape<double>;

}  // namespace cfdiff::nd
