// SPDX-License-Identifier: Apache-2.0
#include "cfdiff/camae.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <utility>
#include <sstream>

#include "cfdiff/errors.hpp"
#include "cfdiff/rng.hpp"

namespace cfdiff::camae {

using nd::NodeId;
using nd::Tape;
using nd::Tensor;

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw ContractError("unknown activation '" + name + "'");
}

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

void CamAeConfig::validate() const {
  if (num_items == 0) throw ContractError("camae: num_items must be positive");
  if (k == 0 || d == 0 || layers == 0) throw ContractError("camae: k, d and layers must be >= 1");
  if (hops < 2) throw ContractError("camae: hops (H) must be >= 2");
  if (alpha.size() != static_cast<std::size_t>(hops - 1)) {
    throw ContractError("camae: need " + std::to_string(hops - 1) + " hop weights, got " +
                        std::to_string(alpha.size()));
  }
  double sum = 0.0;
  for (double a : alpha) {
    if (!(a >= 0.0)) throw ContractError("camae: hop weights must be non-negative");
    sum += a;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ContractError("camae: hop weights must sum to 1");
}

std::vector<double> parse_alpha(const std::string& text, int hops) {
  if (hops < 2) throw ContractError("hops (H) must be >= 2");
  std::vector<double> values;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(part, &used));
      if (part.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ContractError("alpha: cannot parse '" + text + "'");
    }
  }
  const auto n = static_cast<std::size_t>(hops - 1);
  if (n == 1) return {1.0};
  if (values.size() == 1) {
    const double a = values[0];
    if (!(a >= 0.0 && a <= 1.0)) throw ContractError("alpha must lie in [0, 1]");
    std::vector<double> out(n, (1.0 - a) / static_cast<double>(n - 1));
    out[0] = a;
    return out;
  }
  if (values.size() != n) {
    throw ContractError("alpha: expected 1 or " + std::to_string(n) + " values for H=" + std::to_string(hops));
  }
  return values;
}

template <class T>
void CamAeParameters<T>::add(std::string name, Tensor<T> value) {
  if (contains(name)) throw ContractError("duplicate parameter '" + name + "'");
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
}

template <class T>
bool CamAeParameters<T>::contains(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

template <class T>
const Tensor<T>& CamAeParameters<T>::get(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw ContractError("unknown parameter '" + name + "'");
  return tensors_[static_cast<std::size_t>(it - names_.begin())];
}

template <class T>
Tensor<T>& CamAeParameters<T>::get(const std::string& name) {
  return const_cast<Tensor<T>&>(std::as_const(*this).get(name));
}

template <class T>
std::vector<nd::Shape> CamAeParameters<T>::shapes() const {
  std::vector<nd::Shape> out;
  for (const auto& t : tensors_) out.push_back(t.shape());
  return out;
}

template <class T>
std::vector<Tensor<T>*> CamAeParameters<T>::pointers() {
  std::vector<Tensor<T>*> out;
  for (auto& t : tensors_) out.push_back(&t);
  return out;
}

template <class T>
std::size_t CamAeParameters<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

std::string hop_encoder_name(int h) { return "E" + std::to_string(h); }

std::string attention_name(std::size_t layer, int h, char which) {
  return "L" + std::to_string(layer) + ".H" + std::to_string(h) + ".W" + which;
}

std::string ff_name(int h, int which) { return "F" + std::to_string(h) + ".W" + std::to_string(which); }

template <class T>
CamAeParameters<T> init_params(const CamAeConfig& config, std::uint64_t seed) {
  config.validate();
  CamAeParameters<T> params;
  std::uint64_t stream = 0;
  auto xavier = [&](std::string name, std::size_t rows, std::size_t cols) {
    Rng rng(mix_seed(seed, stream++));
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Tensor<T> t(rows, cols);
    for (auto& x : t.data()) x = static_cast<T>((2.0 * rng.uniform01() - 1.0) * bound);
    params.add(std::move(name), std::move(t));
  };
  const auto k = config.k;
  const auto d = config.d;
  const auto m = config.context_length();
  const bool uses_hops = config.variant == Variant::full;
  const bool uses_attention = config.variant != Variant::no_cross_attn;

  if (!config.no_ae) xavier("E1", k, config.num_items);
  if (uses_hops && !config.no_ae) {
    for (int h = 2; h <= config.hops; ++h) xavier(hop_encoder_name(h), k, m);
  }
  if (!config.no_ae) xavier("D", config.num_items, k);
  xavier("Ev", 1, d);
  if (uses_hops) xavier("Eq", 1, d);
  if (uses_attention) {
    for (std::size_t l = 0; l < config.layers; ++l) {
      for (int h = 2; h <= config.hops; ++h) {
        xavier(attention_name(l, h, 'q'), d, d);
        xavier(attention_name(l, h, 'k'), d, d);
        xavier(attention_name(l, h, 'v'), d, d);
      }
    }
  }
  for (int h = 2; h <= config.hops; ++h) {
    xavier(ff_name(h, 1), d, config.hidden_width());
    xavier(ff_name(h, 2), config.hidden_width(), d);
  }
  xavier("P", d, 1);
  return params;
}

namespace {

/// Constant m x n selection: row i picks column i (i < min(m, n)).
template <class T>
Tensor<T> selection(std::size_t rows, std::size_t cols) {
  Tensor<T> s(rows, cols);
  for (std::size_t i = 0; i < std::min(rows, cols); ++i) s(i, i) = T(1);
  return s;
}

}  // namespace

template <class T>
ForwardNodes camae_forward(Tape<T>& tape, const CamAeParameters<T>& params, const CamAeConfig& config,
                           const Tensor<T>& u_t, std::span<const Tensor<T>> contexts,
                           std::span<const int> timesteps) {
  const std::size_t batch = u_t.rows();
  const std::size_t n_items = config.num_items;
  const std::size_t m = config.context_length();
  const std::size_t rows = config.latent();
  const std::size_t d = config.d;
  if (u_t.cols() != n_items) {
    throw ShapeError("camae_forward: u_t has " + std::to_string(u_t.cols()) + " columns, expected " +
                     std::to_string(n_items));
  }
  if (timesteps.size() != batch) throw ShapeError("camae_forward: one timestep per row required");
  const bool uses_hops = config.variant == Variant::full;
  if (uses_hops) {
    if (contexts.size() != static_cast<std::size_t>(config.hops - 1)) {
      throw ShapeError("camae_forward: expected " + std::to_string(config.hops - 1) + " hop inputs");
    }
    for (const auto& c : contexts) {
      if (c.rows() != batch || c.cols() != m) {
        throw ShapeError("camae_forward: hop input shape " + nd::to_string(c.shape()) + ", expected " +
                         nd::to_string({batch, m}));
      }
    }
  }

  ForwardNodes out;
  for (std::size_t i = 0; i < params.size(); ++i) out.params.push_back(tape.parameter(params.tensor(i)));
  auto p = [&](const std::string& name) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params.name(i) == name) return out.params[i];
    }
    throw ContractError("camae_forward: missing parameter '" + name + "'");
  };

  // (1) hop-specific encoders and (2) expansion to d columns.
  NodeId z;
  if (config.no_ae) {
    z = tape.matmul(tape.constant(u_t), tape.constant(selection<T>(n_items, m)));
  } else {
    z = tape.matmul(tape.constant(u_t), p("E1"), false, true);
  }
  NodeId v = tape.matmul(tape.reshape(z, batch * rows, 1), p("Ev"));
  if (config.t_embed) v = tape.add(v, tape.sinusoidal_embed(timesteps, d, rows));

  std::vector<NodeId> queries;
  for (int h = 2; h <= config.hops; ++h) {
    if (config.variant == Variant::self_attn) {
      queries.push_back(v);
    } else if (uses_hops) {
      const NodeId c = tape.constant(contexts[static_cast<std::size_t>(h - 2)]);
      const NodeId zh = config.no_ae ? c : tape.matmul(c, p(hop_encoder_name(h)), false, true);
      queries.push_back(tape.matmul(tape.reshape(zh, batch * rows, 1), p("Eq")));
    }
  }

  // (3) stacked multi-hop cross-attention with per-hop feedforward.
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  NodeId x = v;
  for (std::size_t l = 0; l < config.layers; ++l) {
    std::vector<NodeId> hop_out;
    for (int h = 2; h <= config.hops; ++h) {
      NodeId a = x;
      if (config.variant != Variant::no_cross_attn) {
        const NodeId q = tape.matmul(queries[static_cast<std::size_t>(h - 2)], p(attention_name(l, h, 'q')));
        const NodeId kk = tape.matmul(x, p(attention_name(l, h, 'k')));
        const NodeId vv = tape.matmul(x, p(attention_name(l, h, 'v')));
        const NodeId logits = tape.scale(tape.block_matmul(q, kk, batch, true), inv_sqrt_d);
        const NodeId attn = tape.row_softmax(logits);
        out.attention.push_back(attn);
        a = tape.block_matmul(attn, vv, batch);
      }
      NodeId hidden = tape.matmul(a, p(ff_name(h, 1)));
      hidden = config.activation == Activation::relu ? tape.relu(hidden) : tape.tanh(hidden);
      hop_out.push_back(tape.matmul(hidden, p(ff_name(h, 2))));
    }
    NodeId agg = tape.weighted_sum(hop_out, config.alpha);
    if (config.residual) agg = tape.add(agg, x);
    x = agg;
  }

  // (4) collapse d columns and decode.
  const NodeId y = tape.reshape(tape.matmul(x, p("P")), batch, rows);
  if (config.no_ae) {
    out.mu = tape.matmul(y, tape.constant(selection<T>(n_items, m)), false, true);
  } else {
    out.mu = tape.matmul(y, p("D"), false, true);
  }
  return out;
}

template <class T>
std::vector<Tensor<T>> dense_contexts(const graph::ContextStore& store, std::span<const std::uint32_t> users) {
  const std::size_t m = store.context_length();
  std::vector<Tensor<T>> out;
  for (int h = 2; h <= store.max_hop(); ++h) {
    Tensor<T> t(users.size(), m);
    for (std::size_t b = 0; b < users.size(); ++b) {
      const auto& ctx = store.at(users[b]);
      if (ctx.hops.empty()) continue;
      const auto& hv = ctx.hops.at(static_cast<std::size_t>(h - 2));
      auto row = t.row(b);
      for (std::size_t i = 0; i < hv.indices.size(); ++i) row[hv.indices[i]] = static_cast<T>(hv.values[i]);
    }
    out.push_back(std::move(t));
  }
  return out;
}

template <class T>
std::vector<T> camae_forward_single(const CamAeParameters<T>& params, const CamAeConfig& config,
                                    std::span<const T> u_t, const graph::HighOrderContext& context, int t) {
  Tensor<T> u(1, u_t.size(), std::vector<T>(u_t.begin(), u_t.end()));
  std::vector<Tensor<T>> ctx;
  for (const auto& hv : context.hops) {
    Tensor<T> row(1, config.context_length());
    for (std::size_t i = 0; i < hv.indices.size(); ++i) row(0, hv.indices[i]) = static_cast<T>(hv.values[i]);
    ctx.push_back(std::move(row));
  }
  Tape<T> tape;
  const int ts[1] = {t};
  const auto nodes = camae_forward(tape, params, config, u, std::span<const Tensor<T>>(ctx), ts);
  const auto mu = tape.value(nodes.mu).data();
  return {mu.begin(), mu.end()};
}

namespace {

template <class T>
std::vector<T> matvec(const Tensor<T>& a, std::span<const T> x) {
  if (a.cols() != x.size()) {
    throw ShapeError("matvec: " + nd::to_string(a.shape()) + " times length " + std::to_string(x.size()));
  }
  std::vector<T> out(a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto row = a.row(r);
    double s = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) s += static_cast<double>(row[c]) * static_cast<double>(x[c]);
    out[r] = static_cast<T>(s);
  }
  return out;
}

}  // namespace

template <class T>
std::vector<T> encode_interactions(const CamAeParameters<T>& params, std::span<const T> u_t) {
  return matvec(params.get("E1"), u_t);
}

template <class T>
std::vector<std::vector<T>> encode_hops(const CamAeParameters<T>& params, const graph::HighOrderContext& context) {
  std::vector<std::vector<T>> out;
  for (const auto& hv : context.hops) {
    std::vector<T> dense(hv.length);
    for (std::size_t i = 0; i < hv.indices.size(); ++i) dense[hv.indices[i]] = static_cast<T>(hv.values[i]);
    out.push_back(matvec(params.get(hop_encoder_name(hv.hop)), std::span<const T>(dense)));
  }
  return out;
}

template <class T>
Tensor<T> cross_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  if (q.cols() != k.cols() || k.rows() != v.rows()) {
    throw ShapeError("cross_attention: Q " + nd::to_string(q.shape()) + ", K " + nd::to_string(k.shape()) +
                     ", V " + nd::to_string(v.shape()));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Tensor<T> out(q.rows(), v.cols());
  std::vector<double> w(k.rows());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k.rows(); ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < q.cols(); ++c) s += static_cast<double>(q(i, c)) * static_cast<double>(k(j, c));
      w[j] = s * scale;
      if (!std::isfinite(w[j])) throw NumericError("cross_attention: non-finite logits");
      mx = std::max(mx, w[j]);
    }
    double z = 0.0;
    for (auto& x : w) {
      x = std::exp(x - mx);
      z += x;
    }
    for (std::size_t c = 0; c < v.cols(); ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < k.rows(); ++j) s += w[j] / z * static_cast<double>(v(j, c));
      out(i, c) = static_cast<T>(s);
    }
  }
  return out;
}

#define CFDIFF_INSTANTIATE(T)                                                                              \
  template class CamAeParameters<T>;                                                                      \
  template CamAeParameters<T> init_params<T>(const CamAeConfig&, std::uint64_t);                          \
  template ForwardNodes camae_forward<T>(Tape<T>&, const CamAeParameters<T>&, const CamAeConfig&,         \
                                         const Tensor<T>&, std::span<const Tensor<T>>, std::span<const int>); \
  template std::vector<Tensor<T>> dense_contexts<T>(const graph::ContextStore&,                           \
                                                    std::span<const std::uint32_t>);                      \
  template std::vector<T> camae_forward_single<T>(const CamAeParameters<T>&, const CamAeConfig&,          \
                                                  std::span<const T>, const graph::HighOrderContext&, int); \
  template std::vector<T> encode_interactions<T>(const CamAeParameters<T>&, std::span<const T>);          \
  template std::vector<std::vector<T>> encode_hops<T>(const CamAeParameters<T>&,                          \
                                                      const graph::HighOrderContext&);                    \
  template Tensor<T> cross_attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

CFDIFF_INSTANTIATE(float)
CFDIFF_INSTANTIATE(double)

#undef CFDIFF_INSTANTIATE

}  // namespace cfdiff::camae
