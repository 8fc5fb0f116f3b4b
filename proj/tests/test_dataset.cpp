#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "fedlight/dataset.hpp"
#include "fedlight/graph.hpp"

using namespace fedlight;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& body) {
    path = std::string("/tmp/fedlight_dataset_") + std::to_string(counter++) + ".tsv";
    std::ofstream out(path, std::ios::binary);
    out << body;
  }
  ~TempFile() { std::remove(path.c_str()); }
  static int counter;
};

int TempFile::counter = 0;

}  // namespace

TEST_CASE("ratings file parses records in order") {
  TempFile f("1\t10\t5\t874965758\n2\t10\t3\t876893171\n1\t11\t4.5\t878542960\n");
  const auto recs = load_movielens(f.path);
  REQUIRE(recs.size() == 3);
  CHECK(recs[0].user == 1);
  CHECK(recs[0].item == 10);
  CHECK(recs[0].rating == 5.0);
  CHECK(recs[0].timestamp == 874965758);
  CHECK(recs[2].rating == 4.5);
}

TEST_CASE("parse errors name the offending line") {
  TempFile missing("1\t10\t5\t874965758\n2\t10\n");
  CHECK_THROWS_WITH_AS(load_movielens(missing.path),
                       doctest::Contains("line 2"), std::runtime_error);

  TempFile junk("1\t10\tfive\t874965758\n");
  CHECK_THROWS_WITH_AS(load_movielens(junk.path),
                       doctest::Contains("line 1"), std::runtime_error);

  CHECK_THROWS_WITH_AS(load_movielens("/nonexistent/u.data"),
                       doctest::Contains("/nonexistent/u.data"), std::runtime_error);
}

TEST_CASE("blank trailing line is tolerated") {
  TempFile f("1\t10\t5\t874965758\n");
  CHECK(load_movielens(f.path).size() == 1);
}

TEST_CASE("positive filter keeps >= threshold and renumbers densely") {
  const std::vector<RatingRecord> recs = {
      {7, 100, 5.0, 0},
      {7, 200, 2.0, 0},   // below threshold, dropped
      {3, 200, 4.0, 0},
      {3, 300, 4.0, 0},
      {9, 100, 1.0, 0},   // user 9 has no positives at all
  };
  const PositiveSet ps = filter_positive(recs, 4.0);
  // users 3,7 -> 0,1; items 100,200,300 -> 0,1,2
  REQUIRE(ps.user_original.size() == 2);
  REQUIRE(ps.item_original.size() == 3);
  CHECK(ps.user_original[0] == 3);
  CHECK(ps.user_original[1] == 7);
  CHECK(ps.item_original == std::vector<std::uint32_t>{100, 200, 300});
  CHECK(ps.user_index.at(7) == 1);
  CHECK(ps.item_index.at(300) == 2);
  REQUIRE(ps.edges.size() == 3);
  const InteractionGraph g = build_graph(ps.edges);
  CHECK(g.items_of_user[0] == std::vector<ItemId>{1, 2});  // user 3
  CHECK(g.items_of_user[1] == std::vector<ItemId>{0});     // user 7
}

TEST_CASE("duplicate positive pairs collapse to one edge") {
  const std::vector<RatingRecord> recs = {
      {1, 1, 5.0, 0}, {1, 1, 4.0, 10}, {2, 1, 4.0, 0}};
  const PositiveSet ps = filter_positive(recs, 4.0);
  CHECK(ps.edges.size() == 2);
}

TEST_CASE("fixture graph is the documented 3x4 example") {
  const InteractionGraph g = fixture_graph();
  CHECK(g.num_users == 3);
  CHECK(g.num_items == 4);
  CHECK(g.items_of_user[0] == std::vector<ItemId>{0, 1});
  CHECK(g.items_of_user[1] == std::vector<ItemId>{0, 2});
  CHECK(g.items_of_user[2] == std::vector<ItemId>{2, 3});
}

TEST_CASE("test positives map through the training index") {
  const std::vector<RatingRecord> train = {
      {7, 100, 5.0, 0}, {3, 200, 4.0, 0}, {3, 300, 4.0, 0}};
  const PositiveSet ps = filter_positive(train, 4.0);
  const std::vector<RatingRecord> test = {
      {3, 100, 5.0, 0},   // kept: user 3 -> 0, item 100 -> 0
      {3, 300, 2.0, 0},   // below threshold
      {7, 999, 5.0, 0},   // unseen item, dropped
      {42, 100, 5.0, 0},  // unseen user, dropped
      {7, 200, 4.0, 0},   // kept: user 7 -> 1, item 200 -> 1
  };
  const auto positives = map_test_positives(test, ps, 4.0);
  REQUIRE(positives.size() == 2);
  CHECK(positives[0] == std::vector<ItemId>{0});
  CHECK(positives[1] == std::vector<ItemId>{1});
}
