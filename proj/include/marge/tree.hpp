#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace marge {

using Action = std::uint32_t;
using ActionSeq = std::vector<Action>;

/// Indexing for the complete `branching`-ary tree of fixed `depth`.
/// Nonterminal prefixes (length < depth) are numbered level by level;
/// within a level a prefix is its base-`branching` value, first action most
/// significant. Leaves are numbered the same way within the last level.
class TreeShape {
 public:
  TreeShape() = default;
  TreeShape(std::uint32_t depth, std::uint32_t branching);

  std::uint32_t depth() const noexcept { return depth_; }
  std::uint32_t branching() const noexcept { return branching_; }
  std::size_t leaf_count() const noexcept { return level_size_.back(); }
  std::size_t nonterminal_count() const noexcept { return level_offset_.back(); }
  std::size_t level_offset(std::uint32_t len) const { return level_offset_.at(len); }
  std::size_t level_size(std::uint32_t len) const { return level_size_.at(len); }

  bool valid_prefix(std::span<const Action> prefix) const noexcept;
  bool is_terminal(std::span<const Action> prefix) const noexcept { return prefix.size() == depth_; }

  // Throws on invalid or terminal prefixes.
  std::size_t node_index(std::span<const Action> prefix) const;
  std::size_t leaf_index(std::span<const Action> full) const;
  // Position of a prefix within its own level.
  std::size_t level_value(std::span<const Action> prefix) const;

  ActionSeq prefix_at(std::uint32_t len, std::size_t value) const;
  // First and one-past-last leaf below a prefix.
  std::pair<std::size_t, std::size_t> leaf_range(std::span<const Action> prefix) const;

  bool operator==(const TreeShape&) const = default;

 private:
  std::uint32_t depth_ = 0;
  std::uint32_t branching_ = 0;
  std::vector<std::size_t> level_offset_;  // size depth+1; back() = #nonterminals
  std::vector<std::size_t> level_size_;    // size depth+1; back() = #leaves
};

/// "0.2.1" style key; the root is the empty string.
std::string prefix_key(std::span<const Action> prefix);
ActionSeq parse_prefix_key(const std::string& key);

ActionSeq concat(std::span<const Action> a, std::span<const Action> b);

}  // namespace marge
