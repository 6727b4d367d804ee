// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cfdiff/graph.hpp"
#include "cfdiff/tape.hpp"
#include "cfdiff/tensor.hpp"

namespace cfdiff::camae {

enum class Activation { relu, tanh };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

/// Which network variant to build.
enum class Variant {
  full,           // multi-hop cross-attention
  self_attn,      // queries come from v_t instead of the hop embeddings
  no_cross_attn,  // attention removed; f_h applied to the running state
};

struct CamAeConfig {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t k = 500;
  std::size_t d = 16;
  std::size_t layers = 2;
  int hops = 3;                 // H; hop vectors h = 2..H
  std::vector<double> alpha;    // alpha_2..alpha_H
  std::size_t hidden = 0;       // 0 means 4d
  bool t_embed = true;
  bool residual = false;
  Activation activation = Activation::relu;
  Variant variant = Variant::full;
  bool no_ae = false;           // attention over full-length vectors

  /// max(|U|, |I|), the length of every hop vector.
  std::size_t context_length() const { return std::max(num_users, num_items); }
  /// Rows per user inside the attention stack.
  std::size_t latent() const { return no_ae ? context_length() : k; }
  std::size_t hidden_width() const { return hidden ? hidden : 4 * d; }

  /// Throws ContractError on any violated invariant.
  void validate() const;
};

/// Hop weights from a spec string. A single value a sets alpha_2 = a and
/// splits 1 - a evenly over the remaining hops; a comma list gives every
/// weight explicitly. With H = 2 the only weight is 1.
std::vector<double> parse_alpha(const std::string& text, int hops);

/// Named trainable tensors in a fixed order.
template <class T>
class CamAeParameters {
 public:
  CamAeParameters() = default;

  void add(std::string name, nd::Tensor<T> value);
  bool contains(const std::string& name) const;
  const nd::Tensor<T>& get(const std::string& name) const;
  nd::Tensor<T>& get(const std::string& name);

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const nd::Tensor<T>& tensor(std::size_t i) const { return tensors_.at(i); }
  nd::Tensor<T>& tensor(std::size_t i) { return tensors_.at(i); }
  std::span<const std::string> names() const { return names_; }

  std::vector<nd::Shape> shapes() const;
  std::vector<nd::Tensor<T>*> pointers();
  std::size_t parameter_count() const;

  template <class U>
  CamAeParameters<U> cast() const {
    CamAeParameters<U> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], tensors_[i].template cast<U>());
    return out;
  }

  friend bool operator==(const CamAeParameters&, const CamAeParameters&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<nd::Tensor<T>> tensors_;
};

/// Name helpers for the tensors created by init_params.
std::string hop_encoder_name(int h);                       // "E<h>"
std::string attention_name(std::size_t layer, int h, char which);  // "L<l>.H<h>.W<q|k|v>"
std::string ff_name(int h, int which);                     // "F<h>.W<1|2>"

/// Xavier-uniform initialization, deterministic per seed.
template <class T>
CamAeParameters<T> init_params(const CamAeConfig& config, std::uint64_t seed);

/// Tape nodes produced by one batched forward pass.
struct ForwardNodes {
  nd::NodeId mu = 0;                      // B x |I|
  std::vector<nd::NodeId> params;         // aligned with CamAeParameters order
  std::vector<nd::NodeId> attention;      // row-stochastic maps, per layer and hop
};

/// Batched forward. `u_t` is B x |I|; `contexts[h-2]` is B x max(|U|,|I|);
/// `timesteps` has B entries.
template <class T>
ForwardNodes camae_forward(nd::Tape<T>& tape, const CamAeParameters<T>& params,
                           const CamAeConfig& config, const nd::Tensor<T>& u_t,
                           std::span<const nd::Tensor<T>> contexts, std::span<const int> timesteps);

/// Dense hop inputs for a batch of users, one tensor per hop.
template <class T>
std::vector<nd::Tensor<T>> dense_contexts(const graph::ContextStore& store,
                                          std::span<const std::uint32_t> users);

/// Single-example forward returning mu_hat as a length-|I| vector.
template <class T>
std::vector<T> camae_forward_single(const CamAeParameters<T>& params, const CamAeConfig& config,
                                    std::span<const T> u_t, const graph::HighOrderContext& context,
                                    int t);

/// z_t = E_1 u_t.
template <class T>
std::vector<T> encode_interactions(const CamAeParameters<T>& params, std::span<const T> u_t);

/// z^(h) = E_h u^(h) for h = 2..H.
template <class T>
std::vector<std::vector<T>> encode_hops(const CamAeParameters<T>& params,
                                        const graph::HighOrderContext& context);

/// softmax_rows(Q K^T / sqrt(d)) V.
template <class T>
nd::Tensor<T> cross_attention(const nd::Tensor<T>& q, const nd::Tensor<T>& k, const nd::Tensor<T>& v);

}  // namespace cfdiff::camae
