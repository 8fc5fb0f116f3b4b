#pragma once

#include <cstdint>
#include <limits>

namespace fedlight {

using UserId = std::uint32_t;
using ItemId = std::uint32_t;

// Global node numbering: users occupy [0, num_users), items [num_users, num_users + num_items).
// Every cross-principal summation order in this codebase is defined in terms of ascending NodeId.
using NodeId = std::uint32_t;

inline constexpr std::uint32_t kServerId = std::numeric_limits<std::uint32_t>::max();

constexpr NodeId user_node(UserId u) { return u; }
constexpr NodeId item_node(ItemId i, std::uint32_t num_users) { return num_users + i; }
constexpr bool is_item_node(NodeId n, std::uint32_t num_users) { return n >= num_users; }
constexpr ItemId node_item(NodeId n, std::uint32_t num_users) { return n - num_users; }

}  // namespace fedlight
