#include "fedlight/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

namespace fedlight {

std::size_t InteractionGraph::num_edges() const {
  std::size_t n = 0;
  for (const auto& row : items_of_user) n += row.size();
  return n;
}

std::vector<std::pair<UserId, ItemId>> InteractionGraph::edges() const {
  std::vector<std::pair<UserId, ItemId>> out;
  out.reserve(num_edges());
  for (UserId u = 0; u < num_users; ++u)
    for (ItemId i : items_of_user[u]) out.emplace_back(u, i);
  return out;
}

InteractionGraph build_graph(const std::vector<std::pair<UserId, ItemId>>& edges) {
  if (edges.empty()) throw std::invalid_argument("build_graph: empty edge list");

  std::set<std::pair<UserId, ItemId>> dedup(edges.begin(), edges.end());
  InteractionGraph g;
  for (const auto& [u, i] : dedup) {
    g.num_users = std::max(g.num_users, u + 1);
    g.num_items = std::max(g.num_items, i + 1);
  }
  g.items_of_user.resize(g.num_users);
  g.users_of_item.resize(g.num_items);
  for (const auto& [u, i] : dedup) {
    g.items_of_user[u].push_back(i);
    g.users_of_item[i].push_back(u);
  }
  g.user_degree.resize(g.num_users);
  g.item_degree.resize(g.num_items);
  for (UserId u = 0; u < g.num_users; ++u) {
    g.user_degree[u] = static_cast<std::uint32_t>(g.items_of_user[u].size());
    if (g.user_degree[u] == 0)
      throw std::invalid_argument("build_graph: isolated user id " + std::to_string(u));
  }
  for (ItemId i = 0; i < g.num_items; ++i) {
    g.item_degree[i] = static_cast<std::uint32_t>(g.users_of_item[i].size());
    if (g.item_degree[i] == 0)
      throw std::invalid_argument("build_graph: isolated item id " + std::to_string(i));
  }
  return g;
}

double sym_norm_coeff(std::uint32_t deg_a, std::uint32_t deg_b) {
  if (deg_a == 0 || deg_b == 0)
    throw std::invalid_argument("sym_norm_coeff: zero degree");
  return 1.0 / std::sqrt(static_cast<double>(deg_a) * static_cast<double>(deg_b));
}

ExpandedSubgraph derive_expanded_subgraph(const InteractionGraph& g, UserId owner) {
  if (owner >= g.num_users) throw std::invalid_argument("derive_expanded_subgraph: bad owner");
  ExpandedSubgraph s;
  s.owner = owner;
  s.own_items = g.items_of_user[owner];
  s.owner_degree = g.user_degree[owner];
  s.catalog_items = g.num_items;
  for (ItemId i : s.own_items) {
    s.item_degree[i] = g.item_degree[i];
    if (g.item_degree[i] == 1) s.exclusive_items.push_back(i);
    for (UserId w : g.users_of_item[i]) {
      if (w == owner) continue;
      s.neighbor_edges[w].push_back(i);  // i ascending per neighbor by outer loop
    }
  }
  for (const auto& [w, shared] : s.neighbor_edges) {
    s.neighbor_users.push_back(w);
    s.neighbor_degree[w] = g.user_degree[w];
    (void)shared;
  }
  return s;
}

}  // namespace fedlight
