#include "fedlight/dataset.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

namespace fedlight {

namespace {

std::uint32_t parse_u32(std::string_view field, std::size_t line_no, const char* what) {
  std::uint32_t v = 0;
  const auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || p != field.data() + field.size())
    throw std::runtime_error("line " + std::to_string(line_no) + ": bad " + what + " field '" +
                             std::string(field) + "'");
  return v;
}

std::int64_t parse_i64(std::string_view field, std::size_t line_no, const char* what) {
  std::int64_t v = 0;
  const auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || p != field.data() + field.size())
    throw std::runtime_error("line " + std::to_string(line_no) + ": bad " + what + " field '" +
                             std::string(field) + "'");
  return v;
}

double parse_f64(std::string_view field, std::size_t line_no, const char* what) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || p != field.data() + field.size())
    throw std::runtime_error("line " + std::to_string(line_no) + ": bad " + what + " field '" +
                             std::string(field) + "'");
  return v;
}

}  // namespace

std::vector<RatingRecord> load_movielens(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open ratings file: " + path);
  std::vector<RatingRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<std::string_view, 4> f;
    std::string_view rest = line;
    for (int k = 0; k < 4; ++k) {
      const auto tab = rest.find('\t');
      if (k < 3 && tab == std::string_view::npos)
        throw std::runtime_error("line " + std::to_string(line_no) +
                                 ": expected 4 tab-separated fields");
      f[k] = rest.substr(0, tab);
      rest = tab == std::string_view::npos ? std::string_view{} : rest.substr(tab + 1);
    }
    RatingRecord r;
    r.user = parse_u32(f[0], line_no, "user");
    r.item = parse_u32(f[1], line_no, "item");
    r.rating = parse_f64(f[2], line_no, "rating");
    r.timestamp = parse_i64(f[3], line_no, "timestamp");
    out.push_back(r);
  }
  if (out.empty()) throw std::runtime_error("ratings file is empty: " + path);
  return out;
}

PositiveSet filter_positive(const std::vector<RatingRecord>& ratings, double threshold) {
  std::set<std::uint32_t> users, items;
  for (const auto& r : ratings) {
    if (r.rating >= threshold) {
      users.insert(r.user);
      items.insert(r.item);
    }
  }
  PositiveSet p;
  for (std::uint32_t u : users) {
    p.user_index[u] = static_cast<UserId>(p.user_original.size());
    p.user_original.push_back(u);
  }
  for (std::uint32_t i : items) {
    p.item_index[i] = static_cast<ItemId>(p.item_original.size());
    p.item_original.push_back(i);
  }
  std::set<std::pair<UserId, ItemId>> dedup;
  for (const auto& r : ratings)
    if (r.rating >= threshold) dedup.emplace(p.user_index.at(r.user), p.item_index.at(r.item));
  p.edges.assign(dedup.begin(), dedup.end());
  return p;
}

InteractionGraph fixture_graph() {
  return build_graph({{0, 0}, {0, 1}, {1, 0}, {1, 2}, {2, 2}, {2, 3}});
}

std::vector<std::vector<ItemId>> map_test_positives(const std::vector<RatingRecord>& records,
                                                    const PositiveSet& train, double threshold) {
  std::vector<std::set<ItemId>> per_user(train.user_original.size());
  for (const auto& r : records) {
    if (r.rating < threshold) continue;
    const auto u = train.user_index.find(r.user);
    const auto i = train.item_index.find(r.item);
    if (u == train.user_index.end() || i == train.item_index.end()) continue;
    per_user[u->second].insert(i->second);
  }
  std::vector<std::vector<ItemId>> out(per_user.size());
  for (std::size_t u = 0; u < per_user.size(); ++u)
    out[u].assign(per_user[u].begin(), per_user[u].end());
  return out;
}

}  // namespace fedlight
