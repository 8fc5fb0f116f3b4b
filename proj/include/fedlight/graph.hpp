#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <utility>
#include <vector>

#include "fedlight/ids.hpp"

namespace fedlight {

// Bipartite interaction graph over densely numbered users and items.
// Edge lists are deduplicated and sorted; behaviour is independent of input
// edge order.
struct InteractionGraph {
  std::uint32_t num_users = 0;
  std::uint32_t num_items = 0;
  std::vector<std::vector<ItemId>> items_of_user;  // ascending per user
  std::vector<std::vector<UserId>> users_of_item;  // ascending per item
  std::vector<std::uint32_t> user_degree;
  std::vector<std::uint32_t> item_degree;

  std::uint32_t num_nodes() const { return num_users + num_items; }
  std::size_t num_edges() const;
  std::vector<std::pair<UserId, ItemId>> edges() const;  // (user asc, item asc)
};

// Builds the graph from (user, item) pairs. IDs must be dense: every user id
// and item id below the inferred maximum must occur in at least one edge.
// Throws std::invalid_argument on an empty edge list or an isolated id.
InteractionGraph build_graph(const std::vector<std::pair<UserId, ItemId>>& edges);

// 1/sqrt(deg_a * deg_b); throws std::invalid_argument if either degree is 0.
double sym_norm_coeff(std::uint32_t deg_a, std::uint32_t deg_b);

// A client's post-expansion view of its graph neighbourhood: everything user
// `owner` learns from the private set intersection round, and nothing more.
struct ExpandedSubgraph {
  UserId owner = 0;
  std::vector<ItemId> own_items;                  // ascending
  std::vector<ItemId> exclusive_items;            // own items no other user holds
  std::vector<UserId> neighbor_users;             // users sharing >= 1 item, ascending
  std::map<UserId, std::vector<ItemId>> neighbor_edges;  // neighbor -> shared own items
  std::uint32_t owner_degree = 0;
  std::map<UserId, std::uint32_t> neighbor_degree;
  std::map<ItemId, std::uint32_t> item_degree;    // for own items
  std::uint32_t catalog_items = 0;                // global |I|, for negative sampling

  bool operator==(const ExpandedSubgraph&) const = default;
};

// Ground-truth expansion computed directly from the global graph. The
// federated expansion protocol must reproduce this map exactly; tests compare
// against it as the oracle.
ExpandedSubgraph derive_expanded_subgraph(const InteractionGraph& g, UserId owner);

}  // namespace fedlight
