// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cfdiff/dataset.hpp"

namespace cfdiff::graph {

/// User-item bipartite graph in CSR form, both directions.
class BipartiteGraph {
 public:
  BipartiteGraph() = default;

  /// Edges are (user, item) pairs; duplicates are collapsed.
  BipartiteGraph(std::size_t num_users, std::size_t num_items,
                 std::vector<std::pair<std::uint32_t, std::uint32_t>> edges);

  std::size_t num_users() const { return num_users_; }
  std::size_t num_items() const { return num_items_; }
  std::size_t num_edges() const { return user_items_.size(); }

  std::span<const std::uint32_t> items_of(std::size_t user) const;
  std::span<const std::uint32_t> users_of(std::size_t item) const;

 private:
  std::size_t num_users_ = 0;
  std::size_t num_items_ = 0;
  std::vector<std::uint64_t> user_offsets_{0};
  std::vector<std::uint32_t> user_items_;
  std::vector<std::uint64_t> item_offsets_{0};
  std::vector<std::uint32_t> item_users_;
};

/// Graph over the train-tagged interactions only.
BipartiteGraph build_bipartite(const data::InteractionMatrix& matrix);

enum class Side : std::uint8_t { user = 0, item = 1 };

/// Side reached at hop h from a user: even -> users, odd -> items.
constexpr Side side_of_hop(int h) { return h % 2 == 0 ? Side::user : Side::item; }

/// Nodes at shortest-path distance exactly h and the number of edges each
/// receives from the (h-1) level.
struct Frontier {
  int hop = 0;
  Side side = Side::user;
  std::vector<std::uint32_t> nodes;   // ascending
  std::vector<std::uint32_t> counts;  // parallel to nodes
  std::uint64_t total = 0;            // sum of counts
};

Frontier hop_frontier(const BipartiteGraph& graph, std::uint32_t user, int h);

/// All BFS levels 1..max_hop in one sweep; element [h-1] is level h.
std::vector<Frontier> bfs_levels(const BipartiteGraph& graph, std::uint32_t user, int max_hop);

/// Normalized hop encoding, stored sparsely. The dense view has length
/// max(|U|, |I|); user-side hops fill the first |U| slots, item-side the
/// first |I|.
struct HopVector {
  int hop = 2;
  Side side = Side::user;
  std::size_t length = 0;
  std::vector<std::uint32_t> indices;  // ascending
  std::vector<float> values;

  std::vector<float> dense() const;
  void scatter(std::span<float> out) const;  // out.size() == length, zeroed first
  double sum() const;

  friend bool operator==(const HopVector&, const HopVector&) = default;
};

/// counts[j] / total, in that exact evaluation order.
inline float normalize_count(std::uint64_t count, std::uint64_t total) {
  return static_cast<float>(static_cast<double>(count) / static_cast<double>(total));
}

HopVector encode_hop(const BipartiteGraph& graph, std::uint32_t user, int h);

struct HighOrderContext {
  std::uint32_t user = 0;
  std::vector<HopVector> hops;  // h = 2..H

  friend bool operator==(const HighOrderContext&, const HighOrderContext&) = default;
};

HighOrderContext encode_context(const BipartiteGraph& graph, std::uint32_t user, int max_hop);

/// Precomputed contexts for every user, with a binary cache format.
class ContextStore {
 public:
  ContextStore() = default;
  ContextStore(std::size_t num_users, std::size_t num_items, int max_hop,
               std::vector<HighOrderContext> contexts);

  static ContextStore build(const BipartiteGraph& graph, int max_hop);
  /// Contexts for a subset of users only; other users get empty hops.
  static ContextStore build_subset(const BipartiteGraph& graph, int max_hop,
                                   std::span<const std::uint32_t> users);

  std::size_t num_users() const { return num_users_; }
  std::size_t num_items() const { return num_items_; }
  int max_hop() const { return max_hop_; }
  std::size_t context_length() const { return std::max(num_users_, num_items_); }

  const HighOrderContext& at(std::size_t user) const { return contexts_.at(user); }

  std::string serialize() const;
  static ContextStore deserialize(const std::string& bytes);
  void save(const std::filesystem::path& path) const;
  static ContextStore load(const std::filesystem::path& path);

  friend bool operator==(const ContextStore&, const ContextStore&) = default;

 private:
  std::size_t num_users_ = 0;
  std::size_t num_items_ = 0;
  int max_hop_ = 2;
  std::vector<HighOrderContext> contexts_;
};

}  // namespace cfdiff::graph
