#include "fedlight/central.hpp"

#include <algorithm>
#include <stdexcept>

#include "fedlight/rng.hpp"

namespace fedlight {

ItemId sample_negative(std::uint64_t seed, std::uint32_t epoch, UserId user, ItemId pos,
                       std::uint32_t slot, std::uint32_t num_items,
                       const std::vector<ItemId>& own_items_sorted) {
  if (own_items_sorted.size() >= num_items)
    throw std::logic_error("sample_negative: empty candidate pool");
  // one stream per (epoch, user, positive); slot k is the k-th accepted draw,
  // so every holder of the key sequence reproduces the same negatives
  RngStream rng(seed, "neg",
                {static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(user),
                 static_cast<std::uint64_t>(pos)});
  ItemId j = 0;
  for (std::uint32_t accepted = 0; accepted <= slot;) {
    j = rng.uniform_index(num_items);
    if (!std::binary_search(own_items_sorted.begin(), own_items_sorted.end(), j)) ++accepted;
  }
  return j;
}

CentralTrainer::CentralTrainer(const InteractionGraph& g, const TrainConfig& cfg)
    : graph_(g), cfg_(cfg), nbh_(build_full_neighborhood(g)) {
  cfg_.validate();
  theta_ = init_embeddings(cfg_.seed, g.num_nodes(), cfg_.dim);
}

std::vector<EmbeddingMap> CentralTrainer::forward_layers() {
  std::vector<EmbeddingMap> layers;
  layers.reserve(cfg_.layers + 1);
  layers.push_back(theta_);
  for (std::uint32_t l = 0; l < cfg_.layers; ++l)
    layers.push_back(convolve_layer(nbh_, layers.back()));
  return layers;
}

namespace {
void add_into(EmbeddingMap& m, NodeId n, const Vec& v) {
  auto it = m.find(n);
  if (it == m.end()) {
    m.emplace(n, v);
  } else {
    add_in_place(it->second, v);
  }
}
}  // namespace

EpochStats CentralTrainer::run_epoch(std::uint32_t epoch) {
  final_fresh_ = false;
  const auto layers = forward_layers();
  const EmbeddingMap final = combine_layers(layers);

  EpochStats stats;
  stats.epoch = epoch;
  EmbeddingMap final_grad;
  for (UserId u = 0; u < graph_.num_users; ++u) {
    const auto& items = graph_.items_of_user[u];
    if (items.size() >= graph_.num_items) {
      ++stats.users_skipped;
      continue;
    }
    const Vec& uf = final.at(user_node(u));
    for (ItemId i : items) {
      for (std::uint32_t k = 0; k < cfg_.neg_per_pos; ++k) {
        const ItemId j = sample_negative(cfg_.seed, epoch, u, i, k, graph_.num_items, items);
        const auto g = bpr_loss_and_grad(uf, final.at(item_node(i, graph_.num_users)),
                                         final.at(item_node(j, graph_.num_users)));
        stats.loss += g.loss;
        add_into(final_grad, user_node(u), g.d_user);
        add_into(final_grad, item_node(i, graph_.num_users), g.d_pos);
        add_into(final_grad, item_node(j, graph_.num_users), g.d_neg);
      }
    }
  }

  // top of chain over the full transpose: explicit zeros everywhere, so the
  // l2 term decays every parameter regardless of what this epoch sampled
  EmbeddingMap grad = backprop_layer(nbh_, {}, cfg_.alpha(), final_grad, cfg_.dim);
  for (std::uint32_t l = 0; l < cfg_.layers; ++l)
    grad = backprop_layer(nbh_, grad, cfg_.alpha(), final_grad, cfg_.dim);
  sgd_step(theta_, grad, cfg_.lr, cfg_.l2);
  last_loss_ = stats.loss;
  return stats;
}

void CentralTrainer::train(const EpochObserver& observer) {
  for (std::uint32_t t = 0; t < cfg_.epochs; ++t) {
    const EpochStats stats = run_epoch(t);
    if (observer) observer(stats, theta_);
  }
}

const EmbeddingMap& CentralTrainer::final_embeddings() {
  if (!final_fresh_) {
    final_ = combine_layers(forward_layers());
    final_fresh_ = true;
  }
  return final_;
}

std::vector<ItemId> rank_top_n(const Vec& user_final,
                               const std::vector<std::pair<ItemId, const Vec*>>& candidates,
                               std::uint32_t topn) {
  std::vector<std::pair<double, ItemId>> scored;
  scored.reserve(candidates.size());
  for (const auto& [item, emb] : candidates) scored.emplace_back(dot(user_final, *emb), item);
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<ItemId> out;
  out.reserve(std::min<std::size_t>(topn, scored.size()));
  for (std::size_t k = 0; k < scored.size() && k < topn; ++k) out.push_back(scored[k].second);
  return out;
}

std::vector<std::vector<ItemId>> CentralTrainer::predict(std::uint32_t topn) {
  const EmbeddingMap& final = final_embeddings();
  std::vector<std::vector<ItemId>> out(graph_.num_users);
  for (UserId u = 0; u < graph_.num_users; ++u) {
    const auto& own = graph_.items_of_user[u];
    std::vector<std::pair<ItemId, const Vec*>> candidates;
    candidates.reserve(graph_.num_items - own.size());
    for (ItemId i = 0; i < graph_.num_items; ++i) {
      if (std::binary_search(own.begin(), own.end(), i)) continue;
      candidates.emplace_back(i, &final.at(item_node(i, graph_.num_users)));
    }
    out[u] = rank_top_n(final.at(user_node(u)), candidates, topn);
  }
  return out;
}

}  // namespace fedlight
