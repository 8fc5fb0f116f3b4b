#include "fedlight/gnn.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "fedlight/rng.hpp"

namespace fedlight {

void TrainConfig::validate() const {
  if (dim == 0) throw std::invalid_argument("config: dim must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("config: bad lr");
  if (!(l2 >= 0.0) || !std::isfinite(l2)) throw std::invalid_argument("config: bad l2");
  if (neg_per_pos == 0) throw std::invalid_argument("config: neg_per_pos must be >= 1");
}

Neighborhood build_full_neighborhood(const InteractionGraph& g) {
  Neighborhood nbh;
  for (UserId u = 0; u < g.num_users; ++u) {
    auto row = std::make_shared<Row>();
    row->reserve(g.items_of_user[u].size());
    for (ItemId i : g.items_of_user[u])
      row->emplace_back(item_node(i, g.num_users),
                        sym_norm_coeff(g.user_degree[u], g.item_degree[i]));
    nbh.rows[user_node(u)] = row;
  }
  for (ItemId i = 0; i < g.num_items; ++i) {
    auto row = std::make_shared<Row>();
    row->reserve(g.users_of_item[i].size());
    for (UserId u : g.users_of_item[i])
      row->emplace_back(user_node(u), sym_norm_coeff(g.user_degree[u], g.item_degree[i]));
    nbh.rows[item_node(i, g.num_users)] = row;
  }
  nbh.transpose = nbh.rows;  // symmetric weights
  return nbh;
}

Vec init_node_embedding(std::uint64_t seed, NodeId node, std::uint32_t dim) {
  RngStream rng(seed, "init", {static_cast<std::uint64_t>(node)});
  Vec e(dim);
  for (auto& x : e) x = rng.normal(0.0, 0.1);
  return e;
}

EmbeddingMap init_embeddings(std::uint64_t seed, std::uint32_t num_nodes, std::uint32_t dim) {
  EmbeddingMap out;
  for (NodeId n = 0; n < num_nodes; ++n) out[n] = init_node_embedding(seed, n, dim);
  return out;
}

EmbeddingMap convolve_layer(const Neighborhood& nbh, const EmbeddingMap& in) {
  EmbeddingMap out;
  for (const auto& [n, row] : nbh.rows) {
    Vec acc;
    for (const auto& [m, w] : *row) {
      auto it = in.find(m);
      if (it == in.end())
        throw std::runtime_error("incomplete layer state: missing node " + std::to_string(m));
      if (acc.empty()) acc.assign(it->second.size(), 0.0);
      axpy(acc, w, it->second);
    }
    out.emplace(n, std::move(acc));
  }
  return out;
}

EmbeddingMap combine_layers(const std::vector<EmbeddingMap>& layers) {
  if (layers.empty()) throw std::invalid_argument("combine_layers: no layers");
  const double alpha = 1.0 / static_cast<double>(layers.size());
  EmbeddingMap out;
  for (const auto& [n, e0] : layers[0]) {
    Vec acc = e0;
    for (std::size_t l = 1; l < layers.size(); ++l) {
      auto it = layers[l].find(n);
      if (it == layers[l].end())
        throw std::runtime_error("incomplete layer state: node " + std::to_string(n) +
                                 " absent from layer " + std::to_string(l));
      add_in_place(acc, it->second);
    }
    scale_in_place(acc, alpha);
    out.emplace(n, std::move(acc));
  }
  return out;
}

BprGrads bpr_loss_and_grad(const Vec& user, const Vec& pos, const Vec& neg) {
  check_same_dim(user, pos, "bpr pos");
  check_same_dim(user, neg, "bpr neg");
  Vec diff(pos.size());
  for (std::size_t k = 0; k < diff.size(); ++k) diff[k] = pos[k] - neg[k];
  const double s = dot(user, diff);
  BprGrads g;
  g.score = s;
  // softplus(-s), evaluated on the stable side
  g.loss = s > 0.0 ? std::log1p(std::exp(-s)) : -s + std::log1p(std::exp(s));
  const double c = 1.0 / (1.0 + std::exp(s));  // sigma(-s); underflows to 0 gracefully
  g.d_user = scaled(diff, -c);
  g.d_pos = scaled(user, -c);
  g.d_neg = scaled(user, c);
  return g;
}

EmbeddingMap backprop_layer(const Neighborhood& nbh, const EmbeddingMap& grad_next, double alpha,
                            const EmbeddingMap& final_grad, std::uint32_t dim) {
  EmbeddingMap out;
  for (const auto& [n, row] : nbh.transpose) {
    Vec acc;
    for (const auto& [m, w] : *row) {
      auto it = grad_next.find(m);
      if (it == grad_next.end()) continue;  // sparse upstream: absent == zero
      if (acc.empty()) acc.assign(it->second.size(), 0.0);
      axpy(acc, w, it->second);
    }
    if (!acc.empty()) out.emplace(n, std::move(acc));
  }
  for (const auto& [n, g] : final_grad) {
    auto it = out.find(n);
    if (it == out.end()) {
      out.emplace(n, scaled(g, alpha));
    } else {
      axpy(it->second, alpha, g);
    }
  }
  // nodes with a transpose row but no contributions at all: emit explicit
  // zeros so the SGD step (and its l2 term) touches the same node set on
  // every principal, even in an epoch whose sampling produced no loss term
  for (const auto& [n, row] : nbh.transpose) {
    if (out.find(n) == out.end()) out.emplace(n, Vec(dim, 0.0));
    (void)row;
  }
  return out;
}

void sgd_step(EmbeddingMap& theta, const EmbeddingMap& grad, double lr, double l2) {
  for (const auto& [n, g] : grad) {
    auto it = theta.find(n);
    if (it == theta.end())
      throw std::runtime_error("sgd_step: gradient for unknown node " + std::to_string(n));
    Vec& th = it->second;
    check_same_dim(th, g, "sgd");
    for (std::size_t k = 0; k < th.size(); ++k) th[k] -= lr * (g[k] + l2 * th[k]);
  }
}

}  // namespace fedlight
