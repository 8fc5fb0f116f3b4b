// Python face of the library: enough surface to drive both trainers, check
// their agreement, and inspect what the expansion protocol hands a client.
// Everything crosses the boundary as plain lists/dicts; callers wanting
// arrays can wrap them.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <utility>
#include <vector>

#include "fedlight/central.hpp"
#include "fedlight/dataset.hpp"
#include "fedlight/graph.hpp"
#include "fedlight/protocol.hpp"

namespace py = pybind11;
using namespace fedlight;

namespace {

using EdgeList = std::vector<std::pair<UserId, ItemId>>;

TrainConfig make_train_config(std::uint32_t layers, std::uint32_t dim, double lr,
                              std::uint32_t epochs, double l2, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.layers = layers;
  cfg.dim = dim;
  cfg.lr = lr;
  cfg.epochs = epochs;
  cfg.l2 = l2;
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

// ascending node id; row index == node id because EmbeddingMap covers 0..n-1
std::vector<std::vector<double>> theta_rows(const EmbeddingMap& theta) {
  std::vector<std::vector<double>> rows;
  rows.reserve(theta.size());
  for (const auto& [node, vec] : theta) rows.push_back(vec);
  return rows;
}

py::dict subgraph_dict(const ExpandedSubgraph& s) {
  py::dict d;
  d["owner"] = s.owner;
  d["own_items"] = s.own_items;
  d["exclusive_items"] = s.exclusive_items;
  d["neighbor_users"] = s.neighbor_users;
  d["neighbor_edges"] = s.neighbor_edges;
  d["owner_degree"] = s.owner_degree;
  d["neighbor_degree"] = s.neighbor_degree;
  d["item_degree"] = s.item_degree;
  d["catalog_items"] = s.catalog_items;
  return d;
}

py::dict run_central(const EdgeList& edges, std::uint32_t layers, std::uint32_t dim, double lr,
                     std::uint32_t epochs, double l2, std::uint64_t seed, std::uint32_t topn) {
  const InteractionGraph g = build_graph(edges);
  CentralTrainer trainer(g, make_train_config(layers, dim, lr, epochs, l2, seed));
  std::vector<double> losses;
  std::vector<std::uint32_t> skipped;
  trainer.train([&](const EpochStats& s, const EmbeddingMap&) {
    losses.push_back(s.loss);
    skipped.push_back(s.users_skipped);
  });
  py::dict d;
  d["losses"] = losses;
  d["users_skipped"] = skipped;
  d["theta"] = theta_rows(trainer.theta());
  d["rankings"] = trainer.predict(topn);
  return d;
}

py::dict run_federated(const EdgeList& edges, std::uint32_t layers, std::uint32_t dim, double lr,
                       std::uint32_t epochs, double l2, std::uint64_t seed, std::uint32_t topn,
                       const std::string& crypto, std::uint32_t threads) {
  const InteractionGraph g = build_graph(edges);
  RunConfig cfg;
  cfg.train = make_train_config(layers, dim, lr, epochs, l2, seed);
  cfg.crypto_mode = crypto;
  cfg.threads = threads;
  cfg.topn = topn;
  cfg.full_transcript = false;
  cfg.verbose_access_log = false;
  FederatedRun run(g, cfg);
  run.train(nullptr);
  std::vector<double> losses;
  std::vector<std::uint32_t> skipped;
  for (const auto& s : run.epoch_stats()) {
    losses.push_back(s.loss);
    skipped.push_back(s.users_skipped);
  }
  py::dict d;
  d["losses"] = losses;
  d["users_skipped"] = skipped;
  d["theta"] = theta_rows(run.assemble_theta());
  d["rankings"] = run.run_predict(topn);
  d["messages_total"] = run.transcript().total();
  return d;
}

py::dict expansion_oracle(const EdgeList& edges, UserId owner) {
  return subgraph_dict(derive_expanded_subgraph(build_graph(edges), owner));
}

// Runs only the enrollment and expansion phases, then reports what the owner
// actually assembled from protocol messages.
py::dict protocol_expansion(const EdgeList& edges, UserId owner, const std::string& crypto) {
  const InteractionGraph g = build_graph(edges);
  RunConfig cfg;
  cfg.train = make_train_config(1, 1, 0.1, 0, 0.0, 1);
  cfg.crypto_mode = crypto;
  cfg.full_transcript = false;
  cfg.verbose_access_log = false;
  FederatedRun run(g, cfg);
  run.run_initialize();
  run.run_expand();
  return subgraph_dict(run.client(owner).sub);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "federated LightGCN training simulator with a full-graph reference trainer";

  m.def("sym_norm_coeff", &sym_norm_coeff, py::arg("deg_a"), py::arg("deg_b"),
        "symmetric normalisation 1/sqrt(deg_a * deg_b)");

  m.def(
      "fixture_edges", [] { return fixture_graph().edges(); },
      "edge list of the 3-user / 4-item example graph");

  m.def("train_centralized", &run_central, py::arg("edges"), py::arg("layers") = 3,
        py::arg("dim") = 8, py::arg("lr") = 0.05, py::arg("epochs") = 20, py::arg("l2") = 1e-4,
        py::arg("seed") = 7, py::arg("topn") = 5,
        "full-graph training; returns losses, users_skipped, theta, rankings");

  m.def("train_federated", &run_federated, py::arg("edges"), py::arg("layers") = 3,
        py::arg("dim") = 8, py::arg("lr") = 0.05, py::arg("epochs") = 20, py::arg("l2") = 1e-4,
        py::arg("seed") = 7, py::arg("topn") = 5, py::arg("crypto") = "real",
        py::arg("threads") = 1,
        "protocol simulation; same keys as train_centralized plus messages_total");

  m.def("expansion_oracle", &expansion_oracle, py::arg("edges"), py::arg("owner"),
        "neighbourhood view derived directly from the global graph");

  m.def("protocol_expansion", &protocol_expansion, py::arg("edges"), py::arg("owner"),
        py::arg("crypto") = "real",
        "neighbourhood view a client assembles from the tag intersection round");
}
