#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <vector>

#include "fedlight/gnn.hpp"
#include "fedlight/graph.hpp"

namespace fedlight {

// Uniform negative draw for positive pair (user, pos) slot k of one epoch,
// rejected against the user's own item set. The stream key contains no state,
// so any principal holding (seed, epoch, user, pos, k) and the user's item
// list draws the identical item. Returns catalog id in [0, num_items).
ItemId sample_negative(std::uint64_t seed, std::uint32_t epoch, UserId user, ItemId pos,
                       std::uint32_t slot, std::uint32_t num_items,
                       const std::vector<ItemId>& own_items_sorted);

struct EpochStats {
  std::uint32_t epoch = 0;
  double loss = 0.0;
  std::uint32_t users_skipped = 0;  // users holding the whole catalog: no negatives
};

// Called after each epoch's parameter update with the post-update layer-0
// table. theta covers all graph nodes, ascending.
using EpochObserver = std::function<void(const EpochStats&, const EmbeddingMap& theta)>;

// Full-graph trainer: the equivalence oracle the federated run is measured
// against. Same kernels, same init, same sampling streams; the only liberty
// is that it sees the whole graph at once.
class CentralTrainer {
 public:
  CentralTrainer(const InteractionGraph& g, const TrainConfig& cfg);

  EpochStats run_epoch(std::uint32_t epoch);
  void train(const EpochObserver& observer = nullptr);

  const EmbeddingMap& theta() const { return theta_; }
  const EmbeddingMap& final_embeddings();  // fresh propagation from current theta

  // top-n per user over the catalog minus the user's items;
  // ties broken by ascending item id
  std::vector<std::vector<ItemId>> predict(std::uint32_t topn);

  double last_loss() const { return last_loss_; }

 private:
  std::vector<EmbeddingMap> forward_layers();

  InteractionGraph graph_;
  TrainConfig cfg_;
  Neighborhood nbh_;
  EmbeddingMap theta_;
  EmbeddingMap final_;
  bool final_fresh_ = false;
  double last_loss_ = 0.0;
};

// Shared by both trainers: ranked top-n for one user given its final
// embedding and the candidate (item, embedding) pairs.
std::vector<ItemId> rank_top_n(const Vec& user_final,
                               const std::vector<std::pair<ItemId, const Vec*>>& candidates,
                               std::uint32_t topn);

}  // namespace fedlight
