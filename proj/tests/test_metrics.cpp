#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "fedlight/central.hpp"
#include "fedlight/dataset.hpp"
#include "fedlight/metrics.hpp"
#include "fedlight/snapshot.hpp"

using namespace fedlight;

namespace {

std::string tmp_path(const char* stem) {
  static int counter = 0;
  return std::string("/tmp/fedlight_metrics_") + stem + std::to_string(counter++);
}

}  // namespace

TEST_CASE("precision and recall average over evaluated users") {
  const std::vector<std::vector<ItemId>> recommended = {{1, 2, 3}, {4, 5, 6}, {7, 8, 9}};
  const std::vector<std::vector<ItemId>> positives = {{2, 9}, {}, {7, 8, 9}};
  const RankingMetrics m = precision_recall_at_n(recommended, positives, 3);
  CHECK(m.users_evaluated == 2);  // empty test set drops the user
  // u0: 1 hit of 3 recommended, of 2 relevant; u2: 3 of 3, of 3
  CHECK(m.precision == doctest::Approx((1.0 / 3 + 1.0) / 2));
  CHECK(m.recall == doctest::Approx((0.5 + 1.0) / 2));
}

TEST_CASE("precision at n counts only the first n slots") {
  const std::vector<std::vector<ItemId>> recommended = {{1, 2, 3, 4}};
  const std::vector<std::vector<ItemId>> positives = {{4}};
  CHECK(precision_recall_at_n(recommended, positives, 2).precision == 0.0);
  CHECK(precision_recall_at_n(recommended, positives, 4).precision == doctest::Approx(0.25));
}

TEST_CASE("no evaluated users yields zero metrics") {
  const RankingMetrics m = precision_recall_at_n({{1}}, {{}}, 1);
  CHECK(m.users_evaluated == 0);
  CHECK(m.precision == 0.0);
  CHECK(m.recall == 0.0);
}

TEST_CASE("snapshot files round-trip bitwise") {
  const std::string path = tmp_path("snap");
  const InteractionGraph g = fixture_graph();
  TrainConfig cfg;
  cfg.layers = 2;
  cfg.dim = 3;
  cfg.epochs = 2;
  cfg.seed = 5;
  CentralTrainer t(g, cfg);
  {
    SnapshotWriter w(path, g.num_users, g.num_items, cfg.dim);
    t.train([&](const EpochStats& s, const EmbeddingMap& theta) {
      w.append(s.epoch, s.loss, theta);
    });
  }
  SnapshotReader r(path);
  CHECK(r.num_users() == 3);
  CHECK(r.num_items() == 4);
  CHECK(r.dim() == 3);
  std::uint32_t epochs = 0;
  while (auto e = r.next()) {
    CHECK(e->epoch == epochs);
    CHECK(e->values.size() == 7 * 3);
    ++epochs;
  }
  CHECK(epochs == 2);
  std::remove(path.c_str());
}

TEST_CASE("identical trajectories compare clean") {
  const std::string a = tmp_path("a");
  const std::string b = tmp_path("b");
  const InteractionGraph g = fixture_graph();
  TrainConfig cfg;
  cfg.layers = 1;
  cfg.dim = 2;
  cfg.epochs = 3;
  cfg.seed = 9;
  for (const std::string& path : {a, b}) {
    CentralTrainer t(g, cfg);
    SnapshotWriter w(path, g.num_users, g.num_items, cfg.dim);
    t.train([&](const EpochStats& s, const EmbeddingMap& th) { w.append(s.epoch, s.loss, th); });
  }
  const TrajectoryComparison cmp = compare_trajectories(a, b, 1e-9);
  CHECK(cmp.error.empty());
  CHECK(cmp.within_tolerance);
  CHECK(cmp.max_rel_diff == 0.0);
  CHECK(cmp.first_divergent_epoch == -1);
  CHECK(cmp.epochs.size() == 3);
  std::remove(a.c_str());
  std::remove(b.c_str());
}

TEST_CASE("diverging trajectories report the first bad epoch") {
  const std::string a = tmp_path("a");
  const std::string b = tmp_path("b");
  const EmbeddingMap base = {{0, Vec{1.0}}, {1, Vec{2.0}}};
  EmbeddingMap off = base;
  {
    SnapshotWriter w(a, 1, 1, 1);
    w.append(0, 0.5, base);
    w.append(1, 0.4, base);
  }
  {
    SnapshotWriter w(b, 1, 1, 1);
    w.append(0, 0.5, base);
    off.at(1)[0] = 2.0 + 1e-3;
    w.append(1, 0.4, off);
  }
  const TrajectoryComparison cmp = compare_trajectories(a, b, 1e-6);
  CHECK(cmp.error.empty());
  CHECK(!cmp.within_tolerance);
  CHECK(cmp.first_divergent_epoch == 1);
  CHECK(cmp.max_rel_diff == doctest::Approx(1e-3 / 2.0).epsilon(1e-6));
  std::remove(a.c_str());
  std::remove(b.c_str());
}

TEST_CASE("structurally different snapshots are incomparable") {
  const std::string a = tmp_path("a");
  const std::string b = tmp_path("b");
  {
    SnapshotWriter w(a, 1, 1, 1);
    w.append(0, 0.5, EmbeddingMap{{0, Vec{1.0}}, {1, Vec{2.0}}});
  }
  {
    SnapshotWriter w(b, 1, 1, 2);
    w.append(0, 0.5, EmbeddingMap{{0, Vec{1.0, 0.0}}, {1, Vec{2.0, 0.0}}});
  }
  CHECK(!compare_trajectories(a, b, 1e-6).error.empty());
  CHECK(!compare_trajectories(a, "/nonexistent/snap", 1e-6).error.empty());
  std::remove(a.c_str());
  std::remove(b.c_str());
}

TEST_CASE("ranking files round-trip and compare exactly") {
  const std::string path = tmp_path("rank");
  const std::vector<std::vector<ItemId>> r = {{3, 1, 2}, {}, {7}};
  write_rankings(path, r);
  CHECK(read_rankings(path) == r);

  CHECK(compare_rankings(r, r).identical);
  auto other = r;
  other[2] = {8};
  const RankingComparison cmp = compare_rankings(r, other);
  CHECK(!cmp.identical);
  CHECK(cmp.first_mismatch_user == 2);
  CHECK(!compare_rankings(r, {{3, 1, 2}}).identical);
  std::remove(path.c_str());
}

TEST_CASE("relative difference uses the dominant magnitude") {
  CHECK(relative_diff(2.0, 2.0) == 0.0);
  CHECK(relative_diff(2.0, 1.0) == 0.5);
  CHECK(relative_diff(0.0, 0.0) == 0.0);
  CHECK(relative_diff(1e-15, 0.0) > 0.0);  // guarded by the 1e-12 floor
}
