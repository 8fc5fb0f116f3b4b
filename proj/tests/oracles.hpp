#pragma once

// Independent computational paths used as ground truth in tests. Everything
// here works from dense adjacency matrices and first-principles formulas so
// agreement with the library is evidence, not tautology.

#include <cmath>
#include <cstdint>
#include <vector>

#include "fedlight/central.hpp"
#include "fedlight/gnn.hpp"
#include "fedlight/graph.hpp"

namespace fedlight::oracle {

// Dense symmetric-normalized adjacency over user+item nodes.
inline std::vector<std::vector<double>> dense_adj(const InteractionGraph& g) {
  const std::size_t n = g.num_nodes();
  std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
  for (UserId u = 0; u < g.num_users; ++u)
    for (ItemId i : g.items_of_user[u]) {
      const double w = 1.0 / std::sqrt(static_cast<double>(g.user_degree[u]) *
                                       static_cast<double>(g.item_degree[i]));
      const NodeId iu = user_node(u);
      const NodeId ii = item_node(i, g.num_users);
      a[iu][ii] = w;
      a[ii][iu] = w;
    }
  return a;
}

// One propagation step, accumulating ascending over nonzero entries only so
// the result is bit-comparable with the sparse kernel.
inline std::vector<Vec> dense_step(const std::vector<std::vector<double>>& a,
                                   const std::vector<Vec>& x) {
  const std::size_t n = a.size();
  const std::size_t d = x[0].size();
  std::vector<Vec> out(n, Vec(d, 0.0));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      if (a[r][c] == 0.0) continue;
      for (std::size_t k = 0; k < d; ++k) out[r][k] += a[r][c] * x[c][k];
    }
  return out;
}

// Final representation: mean of layers 0..L computed as (sum, then scale).
inline std::vector<Vec> dense_final(const InteractionGraph& g, const std::vector<Vec>& theta,
                                    std::uint32_t layers) {
  const auto a = dense_adj(g);
  std::vector<Vec> x = theta;
  std::vector<Vec> acc = theta;
  for (std::uint32_t l = 0; l < layers; ++l) {
    x = dense_step(a, x);
    for (std::size_t n = 0; n < acc.size(); ++n)
      for (std::size_t k = 0; k < acc[n].size(); ++k) acc[n][k] += x[n][k];
  }
  const double inv = 1.0 / (layers + 1.0);
  for (auto& v : acc)
    for (double& y : v) y *= inv;
  return acc;
}

inline double softplus_neg(double s) {
  // log(1 + exp(-s)) without overflow on either side
  return s > 0.0 ? std::log1p(std::exp(-s)) : -s + std::log1p(std::exp(s));
}

// Total objective for one epoch's sample schedule: BPR terms over every
// (user, positive, slot) the trainer visits, plus the L2 term the update
// rule implies, evaluated at an arbitrary parameter table.
inline double epoch_objective(const InteractionGraph& g, const TrainConfig& cfg,
                              std::uint32_t epoch, const std::vector<Vec>& theta) {
  const auto fin = dense_final(g, theta, cfg.layers);
  double loss = 0.0;
  for (UserId u = 0; u < g.num_users; ++u) {
    const auto& items = g.items_of_user[u];
    if (items.size() >= g.num_items) continue;  // no negatives to draw
    const Vec& uf = fin[user_node(u)];
    for (ItemId i : items)
      for (std::uint32_t k = 0; k < cfg.neg_per_pos; ++k) {
        const ItemId j = sample_negative(cfg.seed, epoch, u, i, k, g.num_items, items);
        const Vec& pf = fin[item_node(i, g.num_users)];
        const Vec& nf = fin[item_node(j, g.num_users)];
        double s = 0.0;
        for (std::size_t c = 0; c < uf.size(); ++c) s += uf[c] * (pf[c] - nf[c]);
        loss += softplus_neg(s);
      }
  }
  double reg = 0.0;
  for (const auto& v : theta)
    for (double y : v) reg += y * y;
  return loss + 0.5 * cfg.l2 * reg;
}

// Central-difference gradient of the epoch objective w.r.t. one parameter.
inline double fd_grad(const InteractionGraph& g, const TrainConfig& cfg, std::uint32_t epoch,
                      std::vector<Vec> theta, std::size_t node, std::size_t dim, double h) {
  theta[node][dim] += h;
  const double up = epoch_objective(g, cfg, epoch, theta);
  theta[node][dim] -= 2.0 * h;
  const double down = epoch_objective(g, cfg, epoch, theta);
  return (up - down) / (2.0 * h);
}

inline std::vector<Vec> theta_as_table(const EmbeddingMap& theta, std::size_t num_nodes) {
  std::vector<Vec> t(num_nodes);
  for (const auto& [n, v] : theta) t.at(n) = v;
  return t;
}

// A connected random bipartite interaction set: every user and item gets at
// least one edge, then extra edges sprinkle in.
inline std::vector<std::pair<UserId, ItemId>> random_edges(RngStream& rng, std::uint32_t users,
                                                           std::uint32_t items,
                                                           std::uint32_t extra) {
  std::vector<std::pair<UserId, ItemId>> edges;
  for (UserId u = 0; u < users; ++u) edges.emplace_back(u, rng.uniform_index(items));
  for (ItemId i = 0; i < items; ++i) edges.emplace_back(rng.uniform_index(users), i);
  for (std::uint32_t e = 0; e < extra; ++e)
    edges.emplace_back(rng.uniform_index(users), rng.uniform_index(items));
  return edges;
}

}  // namespace fedlight::oracle
