#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <utility>
#include <vector>

#include "fedlight/graph.hpp"
#include "fedlight/ids.hpp"
#include "fedlight/vec.hpp"

namespace fedlight {

struct TrainConfig {
  std::uint32_t layers = 3;
  std::uint32_t dim = 64;
  double lr = 0.01;
  std::uint32_t epochs = 100;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
  std::uint32_t neg_per_pos = 1;

  void validate() const;
  double alpha() const { return 1.0 / (layers + 1.0); }  // uniform layer combination
};

// node -> embedding; std::map so every iteration is ascending NodeId. The
// equivalence guarantees rest on that ordering, do not swap in a hash map.
using EmbeddingMap = std::map<NodeId, Vec>;

// In-neighbour list of one node, ascending by NodeId.
using Row = std::vector<std::pair<NodeId, double>>;

// rows: node computed by this principal -> its in-neighbours.
// transpose: gradient target -> sources that propagate into it.
// Rows are shared_ptr so replicated structure (e.g. an item's user list,
// identical on every owner) can be stored once.
struct Neighborhood {
  std::map<NodeId, std::shared_ptr<const Row>> rows;
  std::map<NodeId, std::shared_ptr<const Row>> transpose;
};

// Full-graph neighbourhood with symmetric normalisation 1/sqrt(d_a d_b).
// For a bipartite graph the weighted adjacency is symmetric, so transpose
// shares the same rows.
Neighborhood build_full_neighborhood(const InteractionGraph& g);

// Embedding init is keyed per node: stream (seed, "init", node) yields the
// node's dim draws of Normal(0, 0.1). Any principal can materialise any
// node's initial embedding independently and get identical bits.
Vec init_node_embedding(std::uint64_t seed, NodeId node, std::uint32_t dim);
EmbeddingMap init_embeddings(std::uint64_t seed, std::uint32_t num_nodes, std::uint32_t dim);

// out[n] = sum_{(m,w) in rows[n]} w * in[m], accumulated in row order
// (ascending m). Missing referenced input -> "incomplete layer state".
EmbeddingMap convolve_layer(const Neighborhood& nbh, const EmbeddingMap& in);

// Mean over layers for every node of layers[0]; the 1/(L+1) factor is applied
// once, after the sum.
EmbeddingMap combine_layers(const std::vector<EmbeddingMap>& layers);

struct BprGrads {
  double loss = 0.0;
  double score = 0.0;  // <u, pos - neg>
  Vec d_user, d_pos, d_neg;
};

// Pairwise ranking loss softplus(-s), s = <u, pos - neg>, and its exact
// gradients. s == 0 gives loss ln 2 and d_pos = -u/2, d_neg = +u/2.
BprGrads bpr_loss_and_grad(const Vec& user, const Vec& pos, const Vec& neg);

// One adjoint step: out[n] = sum_{(m,w) in transpose[n]} w * grad_next[m]
//                           + alpha * final_grad[n]   (when present).
// Sources absent from grad_next contribute nothing (gradients are sparse).
// Every transpose node appears in the result, as an explicit zero of length
// `dim` when nothing flowed into it: downstream l2 decay must touch the same
// node set no matter which loss terms an epoch happened to sample.
EmbeddingMap backprop_layer(const Neighborhood& nbh, const EmbeddingMap& grad_next, double alpha,
                            const EmbeddingMap& final_grad, std::uint32_t dim);

// theta[n] -= lr * (grad[n] + l2 * theta[n]) for every n in grad.
void sgd_step(EmbeddingMap& theta, const EmbeddingMap& grad, double lr, double l2);

}  // namespace fedlight
