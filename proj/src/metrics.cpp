#include "fedlight/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fedlight/snapshot.hpp"

namespace fedlight {

double relative_diff(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-12});
  return std::fabs(a - b) / denom;
}

RankingMetrics precision_recall_at_n(const std::vector<std::vector<ItemId>>& recommended,
                                     const std::vector<std::vector<ItemId>>& test_positives,
                                     std::uint32_t n) {
  if (recommended.size() != test_positives.size())
    throw std::invalid_argument("precision_recall_at_n: user count mismatch");
  if (n == 0) throw std::invalid_argument("precision_recall_at_n: n must be >= 1");
  RankingMetrics m;
  double p_sum = 0.0, r_sum = 0.0;
  for (std::size_t u = 0; u < recommended.size(); ++u) {
    const auto& truth = test_positives[u];
    if (truth.empty()) continue;
    ++m.users_evaluated;
    const std::set<ItemId> truth_set(truth.begin(), truth.end());
    std::size_t hits = 0;
    const std::size_t depth = std::min<std::size_t>(n, recommended[u].size());
    for (std::size_t k = 0; k < depth; ++k)
      if (truth_set.count(recommended[u][k])) ++hits;
    p_sum += static_cast<double>(hits) / static_cast<double>(n);
    r_sum += static_cast<double>(hits) / static_cast<double>(truth.size());
  }
  if (m.users_evaluated) {
    p_sum /= m.users_evaluated;
    r_sum /= m.users_evaluated;
  }
  m.precision = p_sum;
  m.recall = r_sum;
  return m;
}

namespace {

TrajectoryComparison compare_trajectories_impl(const std::string& snapshot_a,
                                               const std::string& snapshot_b, double tolerance) {
  TrajectoryComparison cmp;
  SnapshotReader a(snapshot_a), b(snapshot_b);
  if (a.num_users() != b.num_users() || a.num_items() != b.num_items() || a.dim() != b.dim()) {
    cmp.error = "snapshot shape mismatch";
    cmp.within_tolerance = false;
    return cmp;
  }
  for (;;) {
    auto ea = a.next();
    auto eb = b.next();
    if (!ea && !eb) break;
    if (!ea || !eb) {
      cmp.error = "different epoch counts";
      cmp.within_tolerance = false;
      return cmp;
    }
    if (ea->epoch != eb->epoch) {
      cmp.error = "epoch numbering differs";
      cmp.within_tolerance = false;
      return cmp;
    }
    EpochDiff d;
    d.epoch = ea->epoch;
    d.loss_rel_diff = relative_diff(ea->loss, eb->loss);
    for (std::size_t k = 0; k < ea->values.size(); ++k)
      d.max_rel_diff = std::max(d.max_rel_diff, relative_diff(ea->values[k], eb->values[k]));
    cmp.max_rel_diff = std::max(cmp.max_rel_diff, d.max_rel_diff);
    if (d.max_rel_diff > tolerance && cmp.first_divergent_epoch < 0)
      cmp.first_divergent_epoch = d.epoch;
    cmp.epochs.push_back(d);
  }
  cmp.within_tolerance = cmp.first_divergent_epoch < 0 && cmp.error.empty();
  return cmp;
}

}  // namespace

TrajectoryComparison compare_trajectories(const std::string& snapshot_a,
                                          const std::string& snapshot_b, double tolerance) {
  // unreadable or truncated files surface through `error`, not an exception:
  // callers comparing artifacts want a verdict either way
  try {
    return compare_trajectories_impl(snapshot_a, snapshot_b, tolerance);
  } catch (const std::exception& e) {
    TrajectoryComparison cmp;
    cmp.error = e.what();
    cmp.within_tolerance = false;
    return cmp;
  }
}

RankingComparison compare_rankings(const std::vector<std::vector<ItemId>>& a,
                                   const std::vector<std::vector<ItemId>>& b) {
  RankingComparison cmp;
  if (a.size() != b.size()) {
    cmp.identical = false;
    cmp.first_mismatch_user = static_cast<std::int64_t>(std::min(a.size(), b.size()));
    return cmp;
  }
  for (std::size_t u = 0; u < a.size(); ++u) {
    if (a[u] != b[u]) {
      cmp.identical = false;
      cmp.first_mismatch_user = static_cast<std::int64_t>(u);
      return cmp;
    }
  }
  return cmp;
}

void write_rankings(const std::string& path, const std::vector<std::vector<ItemId>>& r) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open rankings file for writing: " + path);
  for (std::size_t u = 0; u < r.size(); ++u) {
    out << u << ":";
    for (ItemId i : r[u]) out << " " << i;
    out << "\n";
  }
  if (!out) throw std::runtime_error("rankings write failure: " + path);
}

std::vector<std::vector<ItemId>> read_rankings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open rankings file: " + path);
  std::vector<std::vector<ItemId>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string head;
    is >> head;
    if (head != std::to_string(out.size()) + ":")
      throw std::runtime_error("rankings line " + std::to_string(line_no) +
                               ": unexpected user header '" + head + "'");
    std::vector<ItemId> items;
    ItemId i;
    while (is >> i) items.push_back(i);
    out.push_back(std::move(items));
  }
  return out;
}

}  // namespace fedlight
