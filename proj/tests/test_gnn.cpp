#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fedlight/dataset.hpp"
#include "fedlight/gnn.hpp"
#include "fedlight/graph.hpp"
#include "fedlight/metrics.hpp"
#include "fedlight/rng.hpp"
#include "oracles.hpp"

using namespace fedlight;

namespace {

bool same_bits(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k)
    if (std::bit_cast<std::uint64_t>(a[k]) != std::bit_cast<std::uint64_t>(b[k])) return false;
  return true;
}

}  // namespace

TEST_CASE("node init is keyed and reproducible") {
  const Vec a = init_node_embedding(5, 3, 8);
  CHECK(a == init_node_embedding(5, 3, 8));
  CHECK(a != init_node_embedding(5, 4, 8));
  CHECK(a != init_node_embedding(6, 3, 8));

  const EmbeddingMap table = init_embeddings(5, 10, 8);
  CHECK(table.size() == 10);
  CHECK(same_bits(table.at(3), a));

  // draw scale: Normal(0, 0.1)
  double sq = 0.0;
  int n = 0;
  for (NodeId node = 0; node < 200; ++node)
    for (double x : init_node_embedding(1, node, 16)) {
      sq += x * x;
      ++n;
    }
  CHECK(std::sqrt(sq / n) == doctest::Approx(0.1).epsilon(0.05));
}

TEST_CASE("convolution on the fixture matches the hand formula") {
  const InteractionGraph g = fixture_graph();
  const Neighborhood nbh = build_full_neighborhood(g);
  const EmbeddingMap in = init_embeddings(7, g.num_nodes(), 4);
  const EmbeddingMap out = convolve_layer(nbh, in);

  // u1 holds i0 (deg 2) and i2 (deg 2); both weights are 1/sqrt(2*2) = 0.5
  const NodeId n_u1 = user_node(1);
  const NodeId n_i0 = item_node(0, 3);
  const NodeId n_i2 = item_node(2, 3);
  Vec expect(4, 0.0);
  for (int k = 0; k < 4; ++k) {
    expect[k] += 0.5 * in.at(n_i0)[k];
    expect[k] += 0.5 * in.at(n_i2)[k];
  }
  CHECK(same_bits(out.at(n_u1), expect));

  // i1 is exclusive to u0 with degrees (2, 1): weight 1/sqrt(2)
  Vec expect_i1(4, 0.0);
  for (int k = 0; k < 4; ++k)
    expect_i1[k] += sym_norm_coeff(2, 1) * in.at(user_node(0))[k];
  CHECK(same_bits(out.at(item_node(1, 3)), expect_i1));
}

TEST_CASE("convolution equals the dense operator bit for bit") {
  RngStream rng(17, "test-dense");
  for (int rep = 0; rep < 30; ++rep) {
    const std::uint32_t users = 2 + rng.uniform_index(5);
    const std::uint32_t items = 2 + rng.uniform_index(6);
    const InteractionGraph g =
        build_graph(oracle::random_edges(rng, users, items, rng.uniform_index(8)));
    const Neighborhood nbh = build_full_neighborhood(g);
    const EmbeddingMap in = init_embeddings(rep, g.num_nodes(), 5);
    const EmbeddingMap out = convolve_layer(nbh, in);

    const auto a = oracle::dense_adj(g);
    const auto dense =
        oracle::dense_step(a, oracle::theta_as_table(in, g.num_nodes()));
    for (NodeId n = 0; n < g.num_nodes(); ++n) CHECK(same_bits(out.at(n), dense[n]));
  }
}

TEST_CASE("layer combination is the uniform mean") {
  const InteractionGraph g = fixture_graph();
  const Neighborhood nbh = build_full_neighborhood(g);
  std::vector<EmbeddingMap> layers;
  layers.push_back(init_embeddings(3, g.num_nodes(), 4));
  layers.push_back(convolve_layer(nbh, layers[0]));
  layers.push_back(convolve_layer(nbh, layers[1]));
  const EmbeddingMap fin = combine_layers(layers);
  for (NodeId n = 0; n < g.num_nodes(); ++n) {
    Vec expect(4, 0.0);
    for (const auto& l : layers)
      for (int k = 0; k < 4; ++k) expect[k] += l.at(n)[k];
    for (int k = 0; k < 4; ++k) expect[k] *= 1.0 / 3.0;
    CHECK(same_bits(fin.at(n), expect));
  }
}

TEST_CASE("bpr loss at the symmetric point") {
  const Vec u = {0.5, -1.0, 2.0};
  const Vec same = {0.3, 0.3, 0.3};
  const BprGrads g = bpr_loss_and_grad(u, same, same);  // s = 0
  CHECK(g.score == 0.0);
  CHECK(g.loss == 0.6931471805599453);  // ln 2
  for (int k = 0; k < 3; ++k) {
    CHECK(g.d_pos[k] == -0.5 * u[k]);
    CHECK(g.d_neg[k] == 0.5 * u[k]);
    CHECK(g.d_user[k] == 0.0);  // diff is zero
  }
}

TEST_CASE("bpr is stable at extreme scores") {
  const Vec u = {20.0};
  const Vec pos = {40.0};
  const Vec neg = {0.0};  // s = 800
  const BprGrads big = bpr_loss_and_grad(u, pos, neg);
  CHECK(std::isfinite(big.loss));
  CHECK(big.loss < 1e-300);
  const BprGrads small = bpr_loss_and_grad(u, neg, pos);  // s = -800
  CHECK(small.loss == doctest::Approx(800.0));
  CHECK(small.d_user[0] == doctest::Approx(40.0));  // c -> 1, d_user = -c*diff
}

TEST_CASE("bpr gradients match finite differences") {
  RngStream rng(19, "test-bpr");
  for (int rep = 0; rep < 50; ++rep) {
    Vec u(4), pos(4), neg(4);
    for (int k = 0; k < 4; ++k) {
      u[k] = rng.uniform(-1.0, 1.0);
      pos[k] = rng.uniform(-1.0, 1.0);
      neg[k] = rng.uniform(-1.0, 1.0);
    }
    const BprGrads g = bpr_loss_and_grad(u, pos, neg);
    const double h = 1e-6;
    for (int k = 0; k < 4; ++k) {
      auto probe = [&](Vec& v, double delta) {
        v[k] += delta;
        const double l = bpr_loss_and_grad(u, pos, neg).loss;
        v[k] -= delta;
        return l;
      };
      const double du = (probe(u, h) - probe(u, -h)) / (2 * h);
      const double dp = (probe(pos, h) - probe(pos, -h)) / (2 * h);
      const double dn = (probe(neg, h) - probe(neg, -h)) / (2 * h);
      CHECK(du == doctest::Approx(g.d_user[k]).epsilon(1e-5));
      CHECK(dp == doctest::Approx(g.d_pos[k]).epsilon(1e-5));
      CHECK(dn == doctest::Approx(g.d_neg[k]).epsilon(1e-5));
    }
  }
}

TEST_CASE("single-edge backprop agrees with the closed form") {
  // one user, one item, L = 1, alpha = 1/2, weight 1: the chain rule gives
  // grad0[u] = (G_u + G_i)/2 and symmetrically for i
  const InteractionGraph g = build_graph({{0, 0}});
  const Neighborhood nbh = build_full_neighborhood(g);
  EmbeddingMap final_grad;
  final_grad[0] = {2.0, -4.0};  // G_u
  final_grad[1] = {10.0, 6.0};  // G_i
  static const Neighborhood empty;
  const EmbeddingMap top = backprop_layer(empty, {}, 0.5, final_grad, 2);
  CHECK(top.at(0) == Vec{1.0, -2.0});
  CHECK(top.at(1) == Vec{5.0, 3.0});
  const EmbeddingMap bottom = backprop_layer(nbh, top, 0.5, final_grad, 2);
  CHECK(bottom.at(0) == Vec{1.0 * 5.0 + 1.0, 1.0 * 3.0 - 2.0});
  CHECK(bottom.at(1) == Vec{1.0 * 1.0 + 5.0, 1.0 * -2.0 + 3.0});
}

TEST_CASE("backprop covers every transpose node even with sparse adjoints") {
  const InteractionGraph g = fixture_graph();
  const Neighborhood nbh = build_full_neighborhood(g);
  EmbeddingMap final_grad;
  final_grad[user_node(0)] = {1.0, 0.0};  // only one node carries loss signal
  static const Neighborhood empty;
  EmbeddingMap grad = backprop_layer(empty, {}, 0.5, final_grad, 2);
  grad = backprop_layer(nbh, grad, 0.5, final_grad, 2);
  // every graph node appears, absent sources treated as zero
  for (NodeId n = 0; n < g.num_nodes(); ++n) {
    REQUIRE(grad.find(n) != grad.end());
    CHECK(grad.at(n).size() == 2);
  }

  // an epoch with no loss signal at all still produces explicit zeros for
  // every node, sized by the declared dimension
  const EmbeddingMap silent = backprop_layer(nbh, {}, 0.5, {}, 3);
  for (NodeId n = 0; n < g.num_nodes(); ++n) {
    REQUIRE(silent.find(n) != silent.end());
    CHECK(silent.at(n) == Vec{0.0, 0.0, 0.0});
  }
}

TEST_CASE("sgd applies weight decay once at layer zero") {
  EmbeddingMap theta;
  theta[0] = {1.0, -2.0};
  EmbeddingMap grad;
  grad[0] = {0.5, 0.25};
  sgd_step(theta, grad, 0.1, 0.01);
  CHECK(theta.at(0)[0] == 1.0 - 0.1 * (0.5 + 0.01 * 1.0));
  CHECK(theta.at(0)[1] == -2.0 - 0.1 * (0.25 + 0.01 * -2.0));

  EmbeddingMap unknown;
  unknown[9] = {1.0, 1.0};
  CHECK_THROWS(sgd_step(theta, unknown, 0.1, 0.0));
}

TEST_CASE("missing layer inputs are reported") {
  const InteractionGraph g = fixture_graph();
  const Neighborhood nbh = build_full_neighborhood(g);
  EmbeddingMap partial = init_embeddings(1, g.num_nodes(), 2);
  partial.erase(user_node(2));
  CHECK_THROWS_WITH_AS(convolve_layer(nbh, partial),
                       doctest::Contains("incomplete layer state"), std::runtime_error);
  std::vector<EmbeddingMap> layers(2);
  layers[0] = init_embeddings(1, g.num_nodes(), 2);
  layers[1] = init_embeddings(2, g.num_nodes(), 2);
  layers[1].erase(3);
  CHECK_THROWS_WITH_AS(combine_layers(layers), doctest::Contains("incomplete layer state"),
                       std::runtime_error);
}
