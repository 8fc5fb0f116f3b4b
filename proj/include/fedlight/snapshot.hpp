#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "fedlight/gnn.hpp"

namespace fedlight {

// Canonical binary trajectory file. Layout (all little-endian):
//   magic "FLS1" | u32 num_users | u32 num_items | u32 dim
//   then per epoch block: u32 epoch | f64 loss | (num_users+num_items)*dim f64
// Values are written ascending by node id. The format carries no timestamps
// or padding: two runs that agree numerically produce identical bytes.
class SnapshotWriter {
 public:
  SnapshotWriter(const std::string& path, std::uint32_t num_users, std::uint32_t num_items,
                 std::uint32_t dim);
  void append(std::uint32_t epoch, double loss, const EmbeddingMap& theta);
  void close();

 private:
  std::ofstream out_;
  std::uint32_t num_users_, num_items_, dim_;
};

struct SnapshotEpoch {
  std::uint32_t epoch = 0;
  double loss = 0.0;
  std::vector<double> values;  // (num_users+num_items) * dim, ascending node id
};

class SnapshotReader {
 public:
  explicit SnapshotReader(const std::string& path);
  std::uint32_t num_users() const { return num_users_; }
  std::uint32_t num_items() const { return num_items_; }
  std::uint32_t dim() const { return dim_; }
  std::optional<SnapshotEpoch> next();

 private:
  std::ifstream in_;
  std::uint32_t num_users_ = 0, num_items_ = 0, dim_ = 0;
};

}  // namespace fedlight
