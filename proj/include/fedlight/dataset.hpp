#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedlight/graph.hpp"

namespace fedlight {

struct RatingRecord {
  std::uint32_t user = 0;  // original file id (1-based in the common format)
  std::uint32_t item = 0;
  double rating = 0.0;
  std::int64_t timestamp = 0;
};

// Tab-separated "user<TAB>item<TAB>rating<TAB>timestamp" records.
// Malformed lines raise std::runtime_error naming the line number.
std::vector<RatingRecord> load_movielens(const std::string& path);

// Keeps ratings >= threshold as positive edges and renumbers users/items
// densely (ascending original id -> 0-based). Users or items left without a
// positive interaction simply do not appear.
struct PositiveSet {
  std::vector<std::pair<UserId, ItemId>> edges;
  std::vector<std::uint32_t> user_original;            // new -> original
  std::vector<std::uint32_t> item_original;
  std::map<std::uint32_t, UserId> user_index;          // original -> new
  std::map<std::uint32_t, ItemId> item_index;
};

PositiveSet filter_positive(const std::vector<RatingRecord>& ratings, double threshold = 4.0);

// The 3-user / 4-item worked example used across the test suite:
// u0-{i0,i1}, u1-{i0,i2}, u2-{i2,i3}.
InteractionGraph fixture_graph();

// Test positives of `records` mapped through a training index; records whose
// user or item never occurs in training are dropped (nothing to score them
// against). Result: per training user, ascending item lists.
std::vector<std::vector<ItemId>> map_test_positives(const std::vector<RatingRecord>& records,
                                                    const PositiveSet& train, double threshold);

}  // namespace fedlight
