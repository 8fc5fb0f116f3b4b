#include "fedlight/snapshot.hpp"

#include <bit>
#include <cstring>
#include <stdexcept>

namespace fedlight {

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>(v >> (8 * i));
  out.write(b, 4);
}

void put_f64(std::ofstream& out, double v) {
  const std::uint64_t u = std::bit_cast<std::uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(u >> (8 * i));
  out.write(b, 8);
}

bool get_u32(std::ifstream& in, std::uint32_t& v) {
  char b[4];
  if (!in.read(b, 4)) return false;
  v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return true;
}

bool get_f64(std::ifstream& in, double& v) {
  char b[8];
  if (!in.read(b, 8)) return false;
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  v = std::bit_cast<double>(u);
  return true;
}

}  // namespace

SnapshotWriter::SnapshotWriter(const std::string& path, std::uint32_t num_users,
                               std::uint32_t num_items, std::uint32_t dim)
    : out_(path, std::ios::binary), num_users_(num_users), num_items_(num_items), dim_(dim) {
  if (!out_) throw std::runtime_error("cannot open snapshot file for writing: " + path);
  out_.write("FLS1", 4);
  put_u32(out_, num_users_);
  put_u32(out_, num_items_);
  put_u32(out_, dim_);
}

void SnapshotWriter::append(std::uint32_t epoch, double loss, const EmbeddingMap& theta) {
  const std::uint32_t expect = num_users_ + num_items_;
  if (theta.size() != expect)
    throw std::runtime_error("snapshot: table has " + std::to_string(theta.size()) +
                             " nodes, expected " + std::to_string(expect));
  put_u32(out_, epoch);
  put_f64(out_, loss);
  NodeId want = 0;
  for (const auto& [n, v] : theta) {
    if (n != want++) throw std::runtime_error("snapshot: non-contiguous node ids");
    if (v.size() != dim_) throw std::runtime_error("snapshot: wrong embedding dim");
    for (double x : v) put_f64(out_, x);
  }
  if (!out_) throw std::runtime_error("snapshot: write failure");
}

void SnapshotWriter::close() { out_.close(); }

SnapshotReader::SnapshotReader(const std::string& path) : in_(path, std::ios::binary) {
  if (!in_) throw std::runtime_error("cannot open snapshot file: " + path);
  char magic[4];
  if (!in_.read(magic, 4) || std::memcmp(magic, "FLS1", 4) != 0)
    throw std::runtime_error("not a snapshot file: " + path);
  if (!get_u32(in_, num_users_) || !get_u32(in_, num_items_) || !get_u32(in_, dim_))
    throw std::runtime_error("truncated snapshot header: " + path);
}

std::optional<SnapshotEpoch> SnapshotReader::next() {
  SnapshotEpoch e;
  if (!get_u32(in_, e.epoch)) return std::nullopt;
  if (!get_f64(in_, e.loss)) throw std::runtime_error("truncated snapshot block");
  const std::size_t n = static_cast<std::size_t>(num_users_ + num_items_) * dim_;
  e.values.resize(n);
  for (std::size_t k = 0; k < n; ++k)
    if (!get_f64(in_, e.values[k])) throw std::runtime_error("truncated snapshot block");
  return e;
}

}  // namespace fedlight
