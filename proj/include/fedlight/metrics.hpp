#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedlight/ids.hpp"

namespace fedlight {

struct RankingMetrics {
  double precision = 0.0;
  double recall = 0.0;
  std::uint32_t users_evaluated = 0;  // users with at least one test positive
};

// Averages over users with non-empty test sets. recommended[u] must already
// exclude the user's training items (the rankers guarantee this).
RankingMetrics precision_recall_at_n(const std::vector<std::vector<ItemId>>& recommended,
                                     const std::vector<std::vector<ItemId>>& test_positives,
                                     std::uint32_t n);

// Per-epoch worst relative difference between two trajectories.
// Relative difference of a pair: |a-b| / max(|a|, |b|, 1e-12).
struct EpochDiff {
  std::uint32_t epoch = 0;
  double max_rel_diff = 0.0;
  double loss_rel_diff = 0.0;
};

struct TrajectoryComparison {
  std::vector<EpochDiff> epochs;
  double max_rel_diff = 0.0;
  std::int64_t first_divergent_epoch = -1;  // first epoch above tolerance, -1 if none
  bool within_tolerance = true;
  std::string error;  // non-empty when the files are structurally incomparable
};

TrajectoryComparison compare_trajectories(const std::string& snapshot_a,
                                          const std::string& snapshot_b, double tolerance);

// Exact equality of ranking files (per user, same items in the same order).
struct RankingComparison {
  bool identical = true;
  std::int64_t first_mismatch_user = -1;
};

RankingComparison compare_rankings(const std::vector<std::vector<ItemId>>& a,
                                   const std::vector<std::vector<ItemId>>& b);

std::vector<std::vector<ItemId>> read_rankings(const std::string& path);
void write_rankings(const std::string& path, const std::vector<std::vector<ItemId>>& r);

double relative_diff(double a, double b);

}  // namespace fedlight
