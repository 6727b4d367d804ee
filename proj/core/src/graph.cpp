// SPDX-License-Identifier: Apache-2.0
#include "cfdiff/graph.hpp"

#include <numeric>
#include <sstream>

#include "cfdiff/binary_io.hpp"
#include "cfdiff/errors.hpp"

namespace cfdiff::graph {

namespace {

constexpr std::uint16_t kContextVersion = 1;

void build_csr(std::size_t n, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges,
               bool by_first, std::vector<std::uint64_t>& offsets,
               std::vector<std::uint32_t>& targets) {
  offsets.assign(n + 1, 0);
  for (const auto& [a, b] : edges) ++offsets[(by_first ? a : b) + 1];
  std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
  targets.resize(edges.size());
  auto cursor = offsets;
  for (const auto& [a, b] : edges) {
    const auto src = by_first ? a : b;
    targets[cursor[src]++] = by_first ? b : a;
  }
  for (std::size_t v = 0; v < n; ++v) {
    std::sort(targets.begin() + static_cast<std::ptrdiff_t>(offsets[v]),
              targets.begin() + static_cast<std::ptrdiff_t>(offsets[v + 1]));
  }
}

}  // namespace

BipartiteGraph::BipartiteGraph(std::size_t num_users, std::size_t num_items,
                               std::vector<std::pair<std::uint32_t, std::uint32_t>> edges)
    : num_users_(num_users), num_items_(num_items) {
  for (const auto& [u, i] : edges) {
    if (u >= num_users || i >= num_items) throw ContractError("edge endpoint out of range");
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  build_csr(num_users, edges, true, user_offsets_, user_items_);
  build_csr(num_items, edges, false, item_offsets_, item_users_);
}

std::span<const std::uint32_t> BipartiteGraph::items_of(std::size_t user) const {
  return {user_items_.data() + user_offsets_[user],
          static_cast<std::size_t>(user_offsets_[user + 1] - user_offsets_[user])};
}

std::span<const std::uint32_t> BipartiteGraph::users_of(std::size_t item) const {
  return {item_users_.data() + item_offsets_[item],
          static_cast<std::size_t>(item_offsets_[item + 1] - item_offsets_[item])};
}

BipartiteGraph build_bipartite(const data::InteractionMatrix& matrix) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  edges.reserve(matrix.count(data::Split::train));
  for (std::size_t u = 0; u < matrix.num_users(); ++u) {
    const auto row = matrix.row(u);
    const auto tags = matrix.row_tags(u);
    for (std::size_t p = 0; p < row.size(); ++p) {
      if (tags[p] == data::Split::train) edges.emplace_back(static_cast<std::uint32_t>(u), row[p]);
    }
  }
  return BipartiteGraph(matrix.num_users(), matrix.num_items(), std::move(edges));
}

std::vector<Frontier> bfs_levels(const BipartiteGraph& graph, std::uint32_t user, int max_hop) {
  if (user >= graph.num_users()) throw ContractError("bfs: user index out of range");
  if (max_hop < 1) throw ContractError("bfs: hop count must be >= 1");
  std::vector<int> level_user(graph.num_users(), -1);
  std::vector<int> level_item(graph.num_items(), -1);
  std::vector<std::uint32_t> count_user(graph.num_users(), 0);
  std::vector<std::uint32_t> count_item(graph.num_items(), 0);
  level_user[user] = 0;

  std::vector<Frontier> levels;
  levels.reserve(static_cast<std::size_t>(max_hop));
  std::vector<std::uint32_t> prev{user};
  for (int h = 1; h <= max_hop; ++h) {
    Frontier f;
    f.hop = h;
    f.side = side_of_hop(h);
    const bool to_items = f.side == Side::item;
    auto& level = to_items ? level_item : level_user;
    auto& count = to_items ? count_item : count_user;
    for (auto src : prev) {
      const auto nbrs = to_items ? graph.items_of(src) : graph.users_of(src);
      for (auto j : nbrs) {
        if (level[j] == -1) {
          level[j] = h;
          f.nodes.push_back(j);
        }
        if (level[j] == h) ++count[j];
      }
    }
    std::sort(f.nodes.begin(), f.nodes.end());
    f.counts.reserve(f.nodes.size());
    for (auto j : f.nodes) {
      f.counts.push_back(count[j]);
      f.total += count[j];
    }
    prev = f.nodes;
    levels.push_back(std::move(f));
  }
  return levels;
}

Frontier hop_frontier(const BipartiteGraph& graph, std::uint32_t user, int h) {
  auto levels = bfs_levels(graph, user, h);
  return std::move(levels.back());
}

namespace {

HopVector to_hop_vector(const Frontier& f, std::size_t length) {
  HopVector v;
  v.hop = f.hop;
  v.side = f.side;
  v.length = length;
  if (f.total == 0) return v;
  v.indices = f.nodes;
  v.values.reserve(f.nodes.size());
  for (auto c : f.counts) v.values.push_back(normalize_count(c, f.total));
  return v;
}

}  // namespace

std::vector<float> HopVector::dense() const {
  std::vector<float> out(length, 0.0f);
  scatter(out);
  return out;
}

void HopVector::scatter(std::span<float> out) const {
  if (out.size() != length) throw ShapeError("HopVector::scatter: wrong output length");
  std::fill(out.begin(), out.end(), 0.0f);
  for (std::size_t p = 0; p < indices.size(); ++p) out[indices[p]] = values[p];
}

double HopVector::sum() const {
  double s = 0.0;
  for (auto v : values) s += v;
  return s;
}

HopVector encode_hop(const BipartiteGraph& graph, std::uint32_t user, int h) {
  if (h < 2) throw ContractError("encode_hop: h must be >= 2");
  const auto length = std::max(graph.num_users(), graph.num_items());
  return to_hop_vector(hop_frontier(graph, user, h), length);
}

HighOrderContext encode_context(const BipartiteGraph& graph, std::uint32_t user, int max_hop) {
  if (max_hop < 2) throw ContractError("encode_context: H must be >= 2");
  const auto length = std::max(graph.num_users(), graph.num_items());
  const auto levels = bfs_levels(graph, user, max_hop);
  HighOrderContext ctx;
  ctx.user = user;
  for (int h = 2; h <= max_hop; ++h) {
    ctx.hops.push_back(to_hop_vector(levels[static_cast<std::size_t>(h - 1)], length));
  }
  return ctx;
}

ContextStore::ContextStore(std::size_t num_users, std::size_t num_items, int max_hop,
                           std::vector<HighOrderContext> contexts)
    : num_users_(num_users), num_items_(num_items), max_hop_(max_hop), contexts_(std::move(contexts)) {
  if (max_hop_ < 2) throw ContractError("context store: H must be >= 2");
  if (contexts_.size() != num_users_) throw ContractError("context store: one context per user");
  for (const auto& c : contexts_) {
    if (c.hops.size() != static_cast<std::size_t>(max_hop_ - 1)) {
      throw ContractError("context store: hop count mismatch");
    }
  }
}

ContextStore ContextStore::build(const BipartiteGraph& graph, int max_hop) {
  std::vector<HighOrderContext> contexts;
  contexts.reserve(graph.num_users());
  for (std::size_t u = 0; u < graph.num_users(); ++u) {
    contexts.push_back(encode_context(graph, static_cast<std::uint32_t>(u), max_hop));
  }
  return ContextStore(graph.num_users(), graph.num_items(), max_hop, std::move(contexts));
}

ContextStore ContextStore::build_subset(const BipartiteGraph& graph, int max_hop,
                                        std::span<const std::uint32_t> users) {
  const auto length = std::max(graph.num_users(), graph.num_items());
  std::vector<HighOrderContext> contexts(graph.num_users());
  for (std::size_t u = 0; u < graph.num_users(); ++u) {
    contexts[u].user = static_cast<std::uint32_t>(u);
    for (int h = 2; h <= max_hop; ++h) {
      HopVector v;
      v.hop = h;
      v.side = side_of_hop(h);
      v.length = length;
      contexts[u].hops.push_back(std::move(v));
    }
  }
  for (auto u : users) contexts.at(u) = encode_context(graph, u, max_hop);
  return ContextStore(graph.num_users(), graph.num_items(), max_hop, std::move(contexts));
}

std::string ContextStore::serialize() const {
  std::ostringstream out(std::ios::binary);
  io::LeWriter w(out);
  w.magic("CFHC");
  w.u16(kContextVersion);
  w.u64(num_users_);
  w.u64(num_items_);
  w.u32(static_cast<std::uint32_t>(max_hop_));
  for (const auto& ctx : contexts_) {
    for (const auto& hop : ctx.hops) {
      w.u32(static_cast<std::uint32_t>(hop.indices.size()));
      for (std::size_t p = 0; p < hop.indices.size(); ++p) {
        w.u32(hop.indices[p]);
        w.f32(hop.values[p]);
      }
    }
  }
  return out.str();
}

ContextStore ContextStore::deserialize(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  io::LeReader r(in);
  r.expect_magic("CFHC");
  const auto version = r.u16();
  if (version != kContextVersion) throw IoError("unsupported CFHC version " + std::to_string(version));
  const auto users = r.u64();
  const auto items = r.u64();
  const auto max_hop = static_cast<int>(r.u32());
  if (max_hop < 2 || max_hop > 64 || users > (1ull << 32) || items > (1ull << 32)) {
    throw IoError("CFHC header implausible");
  }
  const auto length = std::max<std::size_t>(users, items);
  std::vector<HighOrderContext> contexts(users);
  for (std::size_t u = 0; u < users; ++u) {
    contexts[u].user = static_cast<std::uint32_t>(u);
    for (int h = 2; h <= max_hop; ++h) {
      HopVector v;
      v.hop = h;
      v.side = side_of_hop(h);
      v.length = length;
      const auto n = r.u32();
      if (n > length) throw IoError("CFHC run longer than context length");
      v.indices.resize(n);
      v.values.resize(n);
      for (std::uint32_t p = 0; p < n; ++p) {
        v.indices[p] = r.u32();
        v.values[p] = r.f32();
        if (v.indices[p] >= length) throw IoError("CFHC index out of range");
      }
      contexts[u].hops.push_back(std::move(v));
    }
  }
  return ContextStore(users, items, max_hop, std::move(contexts));
}

void ContextStore::save(const std::filesystem::path& path) const {
  io::write_file_atomic(path, serialize());
}

ContextStore ContextStore::load(const std::filesystem::path& path) {
  return deserialize(io::read_file(path));
}

}  // namespace cfdiff::graph
