#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "marge/tree.hpp"

namespace marge {

/// Largest leaf count for which every oracle stays exact and sub-second.
inline constexpr std::size_t kMaxLeaves = std::size_t{1} << 20;

struct EnvSpec {
  std::uint32_t depth = 1;
  std::uint32_t branching = 2;
  double correct_fraction = 0.5;
  std::uint64_t seed = 0;

  // Throws kInvalidArgument for malformed specs and kBoundExceeded when
  // branching^depth > kMaxLeaves.
  void validate() const;
  bool operator==(const EnvSpec&) const = default;
};

/// A response, possibly completing a non-root prefix.
struct Trajectory {
  ActionSeq start_state;
  ActionSeq actions;
  int reward = 0;

  ActionSeq full() const { return concat(start_state, actions); }
  bool operator==(const Trajectory&) const = default;
};

/// Finite rooted tree MDP. One action is one reasoning step; a state is the
/// prefix of actions taken so far and every length-`depth` prefix is a
/// terminal labelled correct (1) or incorrect (0). Immutable once built.
class ReasoningEnv {
 public:
  static ReasoningEnv generate(const EnvSpec& spec);
  // Explicit labels, one byte per leaf in leaf-index order. Both labels must occur.
  static ReasoningEnv from_labels(const EnvSpec& spec, std::vector<std::uint8_t> labels);

  const EnvSpec& spec() const noexcept { return spec_; }
  const TreeShape& shape() const noexcept { return shape_; }
  std::uint32_t depth() const noexcept { return spec_.depth; }
  std::uint32_t branching() const noexcept { return spec_.branching; }
  const std::vector<std::uint8_t>& terminal_labels() const noexcept { return labels_; }
  std::size_t correct_count() const noexcept { return correct_count_; }
  double realized_correct_fraction() const noexcept {
    return static_cast<double>(correct_count_) / static_cast<double>(labels_.size());
  }

  bool valid_state(std::span<const Action> prefix) const noexcept { return shape_.valid_prefix(prefix); }

  // Label of a full action sequence; throws if it is not a terminal.
  int reward(std::span<const Action> full) const;
  int reward(const Trajectory& traj) const;

  std::string to_json() const;
  static ReasoningEnv from_json(const std::string& text);

  bool operator==(const ReasoningEnv& other) const {
    return spec_ == other.spec_ && labels_ == other.labels_;
  }

 private:
  ReasoningEnv(const EnvSpec& spec, std::vector<std::uint8_t> labels);

  EnvSpec spec_;
  TreeShape shape_;
  std::vector<std::uint8_t> labels_;
  std::size_t correct_count_ = 0;
};

/// Depth-2 binary tree where only leaf (0,0) is correct. Used as a fixture in
/// docs, tests and the C API.
ReasoningEnv canonical_t2();

}  // namespace marge
