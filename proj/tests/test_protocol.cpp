#include <doctest.h>

#include <bit>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "fedlight/central.hpp"
#include "fedlight/dataset.hpp"
#include "fedlight/metrics.hpp"
#include "fedlight/protocol.hpp"
#include "fedlight/rng.hpp"
#include "fedlight/snapshot.hpp"
#include "oracles.hpp"

using namespace fedlight;

namespace {

RunConfig fixture_run_config() {
  RunConfig rc;
  rc.train.layers = 3;
  rc.train.dim = 8;
  rc.train.lr = 0.05;
  rc.train.epochs = 20;
  rc.train.l2 = 1e-4;
  rc.train.seed = 7;
  rc.crypto_mode = "transparent";
  return rc;
}

std::string tmp_path(const char* stem) {
  static int counter = 0;
  return std::string("/tmp/fedlight_protocol_") + stem + std::to_string(counter++);
}

bool bitwise_equal(const EmbeddingMap& a, const EmbeddingMap& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [n, v] : a) {
    const auto it = b.find(n);
    if (it == b.end() || it->second.size() != v.size()) return false;
    for (std::size_t k = 0; k < v.size(); ++k)
      if (std::bit_cast<std::uint64_t>(v[k]) != std::bit_cast<std::uint64_t>(it->second[k]))
        return false;
  }
  return true;
}

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// central trainer trajectory written in the same snapshot format
void write_central_trajectory(const InteractionGraph& g, const TrainConfig& cfg,
                              const std::string& path) {
  CentralTrainer t(g, cfg);
  SnapshotWriter w(path, g.num_users, g.num_items, cfg.dim);
  t.train([&](const EpochStats& s, const EmbeddingMap& th) { w.append(s.epoch, s.loss, th); });
}

}  // namespace

TEST_CASE("expansion reproduces the ground-truth subgraph on the fixture") {
  const InteractionGraph g = fixture_graph();
  for (const char* mode : {"real", "transparent"}) {
    RunConfig rc = fixture_run_config();
    rc.crypto_mode = mode;
    FederatedRun run(g, rc);
    run.run_initialize();
    run.run_expand();
    for (UserId u = 0; u < g.num_users; ++u) {
      CAPTURE(mode);
      CAPTURE(u);
      CHECK(run.client(u).sub == derive_expanded_subgraph(g, u));
    }
    // the server's learned adjacency matches the derived neighbour sets
    for (UserId u = 0; u < g.num_users; ++u)
      CHECK(run.server().neighbors.at(u) == derive_expanded_subgraph(g, u).neighbor_users);
  }
}

TEST_CASE("expansion matches the derivation on random graphs") {
  RngStream rng(41, "test-expand");
  for (int rep = 0; rep < 30; ++rep) {
    const std::uint32_t users = 2 + rng.uniform_index(6);
    const std::uint32_t items = 2 + rng.uniform_index(8);
    const InteractionGraph g =
        build_graph(oracle::random_edges(rng, users, items, rng.uniform_index(10)));
    RunConfig rc = fixture_run_config();
    rc.train.seed = 1000 + rep;
    FederatedRun run(g, rc);
    run.run_initialize();
    run.run_expand();
    for (UserId u = 0; u < users; ++u) {
      CAPTURE(rep);
      CAPTURE(u);
      CHECK(run.client(u).sub == derive_expanded_subgraph(g, u));
    }
  }
}

TEST_CASE("forward propagation is bit-exact against the full-graph trainer") {
  RngStream rng(53, "test-forward");
  for (int rep = 0; rep < 10; ++rep) {
    const std::uint32_t users = 2 + rng.uniform_index(4);
    const std::uint32_t items = 2 + rng.uniform_index(5);
    const InteractionGraph g =
        build_graph(oracle::random_edges(rng, users, items, rng.uniform_index(8)));
    RunConfig rc = fixture_run_config();
    rc.train.epochs = 0;
    rc.train.seed = 2000 + rep;
    FederatedRun fed(g, rc);
    fed.train();
    fed.run_predict(1);  // fresh forward pass over the initial parameters

    CentralTrainer central(g, rc.train);
    const EmbeddingMap& fin = central.final_embeddings();
    for (UserId u = 0; u < users; ++u) {
      const ClientState& c = fed.client(u);
      const Vec& mine = c.final_emb.at(c.own_user_node());
      const Vec& ref = fin.at(user_node(u));
      REQUIRE(mine.size() == ref.size());
      for (std::size_t k = 0; k < mine.size(); ++k)
        CHECK(std::bit_cast<std::uint64_t>(mine[k]) == std::bit_cast<std::uint64_t>(ref[k]));
      for (ItemId i : c.items) {
        const Vec& item_mine = c.final_emb.at(c.own_item_node(i));
        const Vec& item_ref = fin.at(item_node(i, users));
        for (std::size_t k = 0; k < item_mine.size(); ++k)
          CHECK(std::bit_cast<std::uint64_t>(item_mine[k]) ==
                std::bit_cast<std::uint64_t>(item_ref[k]));
      }
    }
  }
}

TEST_CASE("federated training tracks the full-graph trainer on the fixture") {
  const InteractionGraph g = fixture_graph();
  RunConfig rc = fixture_run_config();
  const std::string fed_path = tmp_path("fed");
  const std::string central_path = tmp_path("central");

  FederatedRun fed(g, rc);
  {
    SnapshotWriter w(fed_path, g.num_users, g.num_items, rc.train.dim);
    fed.train(&w);
  }
  write_central_trajectory(g, rc.train, central_path);

  const TrajectoryComparison cmp = compare_trajectories(fed_path, central_path, 1e-9);
  CAPTURE(cmp.error);
  CAPTURE(cmp.max_rel_diff);
  CHECK(cmp.error.empty());
  CHECK(cmp.within_tolerance);
  CHECK(cmp.epochs.size() == 20);
  for (const auto& e : cmp.epochs) CHECK(e.loss_rel_diff <= 1e-9);

  // identical recommendations, not merely close embeddings
  CentralTrainer central(g, rc.train);
  central.train();
  const auto fed_recs = fed.run_predict(2);
  const auto central_recs = central.predict(2);
  CHECK(compare_rankings(fed_recs, central_recs).identical);

  std::remove(fed_path.c_str());
  std::remove(central_path.c_str());
}

TEST_CASE("federated training tracks the full-graph trainer on random graphs") {
  RngStream rng(67, "test-lockstep");
  for (int rep = 0; rep < 5; ++rep) {
    const std::uint32_t users = 2 + rng.uniform_index(4);
    const std::uint32_t items = 3 + rng.uniform_index(5);
    const InteractionGraph g =
        build_graph(oracle::random_edges(rng, users, items, rng.uniform_index(8)));
    RunConfig rc = fixture_run_config();
    rc.train.epochs = 5;
    rc.train.seed = 3000 + rep;
    const std::string fed_path = tmp_path("rfed");
    const std::string central_path = tmp_path("rcentral");
    FederatedRun fed(g, rc);
    {
      SnapshotWriter w(fed_path, g.num_users, g.num_items, rc.train.dim);
      fed.train(&w);
    }
    write_central_trajectory(g, rc.train, central_path);
    const TrajectoryComparison cmp = compare_trajectories(fed_path, central_path, 1e-9);
    CAPTURE(rep);
    CAPTURE(cmp.error);
    CAPTURE(cmp.max_rel_diff);
    CHECK(cmp.within_tolerance);
    std::remove(fed_path.c_str());
    std::remove(central_path.c_str());
  }
}

TEST_CASE("disjoint clients train without any embedding exchange") {
  // two users with no shared item: all sync traffic vanishes, negatives
  // still route through the designated owner
  const InteractionGraph g = build_graph({{0, 0}, {1, 1}});
  RunConfig rc = fixture_run_config();
  rc.train.epochs = 4;
  const std::string fed_path = tmp_path("dfed");
  const std::string central_path = tmp_path("dcentral");
  FederatedRun fed(g, rc);
  {
    SnapshotWriter w(fed_path, g.num_users, g.num_items, rc.train.dim);
    fed.train(&w);
  }
  for (const auto& s : fed.epoch_stats()) {
    CHECK(s.embedding_syncs == 0);
    CHECK(s.grad_syncs == 0);
  }
  CHECK(fed.transcript().count(MsgType::kNegEmbedRequest) > 0);
  write_central_trajectory(g, rc.train, central_path);
  CHECK(compare_trajectories(fed_path, central_path, 1e-9).within_tolerance);
  std::remove(fed_path.c_str());
  std::remove(central_path.c_str());
}

TEST_CASE("crypto mode changes bytes on the wire, not the model") {
  const InteractionGraph g = fixture_graph();
  RunConfig real = fixture_run_config();
  real.train.epochs = 5;
  real.crypto_mode = "real";
  RunConfig open = real;
  open.crypto_mode = "transparent";

  FederatedRun a(g, real), b(g, open);
  a.train();
  b.train();
  CHECK(bitwise_equal(a.assemble_theta(), b.assemble_theta()));
  REQUIRE(a.epoch_stats().size() == b.epoch_stats().size());
  for (std::size_t t = 0; t < a.epoch_stats().size(); ++t)
    CHECK(std::bit_cast<std::uint64_t>(a.epoch_stats()[t].loss) ==
          std::bit_cast<std::uint64_t>(b.epoch_stats()[t].loss));
  CHECK(compare_rankings(a.run_predict(2), b.run_predict(2)).identical);
}

TEST_CASE("socket transport carries the identical run") {
  const InteractionGraph g = fixture_graph();
  RunConfig rc = fixture_run_config();
  rc.train.epochs = 3;

  FederatedRun in_process(g, rc);
  in_process.train();

  SocketTransport sockets(g.num_users);
  FederatedRun over_sockets(g, rc, &sockets);
  over_sockets.train();

  CHECK(bitwise_equal(in_process.assemble_theta(), over_sockets.assemble_theta()));
  CHECK(in_process.transcript().total() == over_sockets.transcript().total());
}

TEST_CASE("worker thread count does not change a single bit") {
  const InteractionGraph g = fixture_graph();
  RunConfig one = fixture_run_config();
  one.train.epochs = 4;
  RunConfig three = one;
  three.threads = 3;

  FederatedRun a(g, one), b(g, three);
  a.train();
  b.train();
  CHECK(bitwise_equal(a.assemble_theta(), b.assemble_theta()));
  for (std::size_t t = 0; t < a.epoch_stats().size(); ++t)
    CHECK(std::bit_cast<std::uint64_t>(a.epoch_stats()[t].loss) ==
          std::bit_cast<std::uint64_t>(b.epoch_stats()[t].loss));
}

TEST_CASE("reruns produce byte-identical trajectory files") {
  const InteractionGraph g = fixture_graph();
  RunConfig rc = fixture_run_config();
  rc.train.epochs = 5;
  const std::string a = tmp_path("rerun_a");
  const std::string b = tmp_path("rerun_b");
  for (const std::string& path : {a, b}) {
    FederatedRun fed(g, rc);
    SnapshotWriter w(path, g.num_users, g.num_items, rc.train.dim);
    fed.train(&w);
  }
  CHECK(read_file(a) == read_file(b));
  std::remove(a.c_str());
  std::remove(b.c_str());
}

TEST_CASE("per-epoch sync traffic equals layers times total neighbour count") {
  const InteractionGraph g = fixture_graph();
  RunConfig rc = fixture_run_config();
  rc.train.epochs = 4;
  FederatedRun fed(g, rc);
  fed.train();

  std::uint64_t neighbor_total = 0;
  for (UserId u = 0; u < g.num_users; ++u)
    neighbor_total += derive_expanded_subgraph(g, u).neighbor_users.size();
  CHECK(neighbor_total == 4);  // u0:{1}, u1:{0,2}, u2:{1}

  const std::uint64_t per_epoch = rc.train.layers * neighbor_total;
  for (const auto& s : fed.epoch_stats()) {
    CHECK(s.embedding_syncs == per_epoch);
    CHECK(s.grad_syncs == per_epoch);
  }
  CHECK(fed.transcript().count(MsgType::kEmbeddingSync) == rc.train.epochs * per_epoch);
  CHECK(fed.transcript().count(MsgType::kGradSync) == rc.train.epochs * per_epoch);
}

TEST_CASE("saturated users are skipped on both sides") {
  const InteractionGraph g = build_graph({{0, 0}, {0, 1}, {1, 0}});
  RunConfig rc = fixture_run_config();
  rc.train.epochs = 2;
  FederatedRun fed(g, rc);
  fed.train();
  CentralTrainer central(g, rc.train);
  double central_loss = 0.0;
  std::uint32_t central_skipped = 0;
  central.train([&](const EpochStats& s, const EmbeddingMap&) {
    central_loss = s.loss;
    central_skipped = s.users_skipped;
  });
  const auto& last = fed.epoch_stats().back();
  CHECK(last.users_skipped == 1);
  CHECK(central_skipped == 1);
  CHECK(relative_diff(last.loss, central_loss) <= 1e-9);
}

TEST_CASE("prediction agrees with the full-graph ranker at several depths") {
  const InteractionGraph g = fixture_graph();
  RunConfig rc = fixture_run_config();
  rc.train.epochs = 6;
  FederatedRun fed(g, rc);
  fed.train();
  CentralTrainer central(g, rc.train);
  central.train();
  for (std::uint32_t n : {1u, 2u, 5u}) {
    const auto f = fed.run_predict(n);
    const auto c = central.predict(n);
    CAPTURE(n);
    CHECK(compare_rankings(f, c).identical);
    for (UserId u = 0; u < g.num_users; ++u)
      for (ItemId i : f[u])
        CHECK(!std::binary_search(g.items_of_user[u].begin(), g.items_of_user[u].end(), i));
  }
}
