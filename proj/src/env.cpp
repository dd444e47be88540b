#include "marge/env.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "marge/error.hpp"
#include "marge/rng.hpp"

namespace marge {

TreeShape::TreeShape(std::uint32_t depth, std::uint32_t branching) : depth_(depth), branching_(branching) {
  require(depth >= 1, "tree depth must be >= 1");
  require(branching >= 2, "tree branching must be >= 2");
  level_offset_.assign(depth + 1, 0);
  level_size_.assign(depth + 1, 1);
  for (std::uint32_t len = 1; len <= depth; ++len) {
    if (level_size_[len - 1] > kMaxLeaves / branching) {
      fail(ErrorCode::kBoundExceeded, "branching^depth = " + std::to_string(branching) + "^" +
                                          std::to_string(depth) + " exceeds the enumerability bound 2^20");
    }
    level_size_[len] = level_size_[len - 1] * branching;
    level_offset_[len] = level_offset_[len - 1] + level_size_[len - 1];
  }
}

bool TreeShape::valid_prefix(std::span<const Action> prefix) const noexcept {
  if (prefix.size() > depth_) return false;
  return std::all_of(prefix.begin(), prefix.end(), [&](Action a) { return a < branching_; });
}

std::size_t TreeShape::level_value(std::span<const Action> prefix) const {
  require(valid_prefix(prefix), "invalid state prefix '" + prefix_key(prefix) + "'");
  std::size_t v = 0;
  for (Action a : prefix) v = v * branching_ + a;
  return v;
}

std::size_t TreeShape::node_index(std::span<const Action> prefix) const {
  require(prefix.size() < depth_, "state '" + prefix_key(prefix) + "' is terminal");
  return level_offset_[prefix.size()] + level_value(prefix);
}

std::size_t TreeShape::leaf_index(std::span<const Action> full) const {
  require(full.size() == depth_, "sequence '" + prefix_key(full) + "' does not end at a terminal");
  return level_value(full);
}

ActionSeq TreeShape::prefix_at(std::uint32_t len, std::size_t value) const {
  ActionSeq out(len);
  for (std::uint32_t i = len; i-- > 0;) {
    out[i] = static_cast<Action>(value % branching_);
    value /= branching_;
  }
  return out;
}

std::pair<std::size_t, std::size_t> TreeShape::leaf_range(std::span<const Action> prefix) const {
  const std::size_t width = level_size_[depth_ - prefix.size()];
  const std::size_t first = level_value(prefix) * width;
  return {first, first + width};
}

std::string prefix_key(std::span<const Action> prefix) {
  std::string out;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (i) out += '.';
    out += std::to_string(prefix[i]);
  }
  return out;
}

ActionSeq parse_prefix_key(const std::string& key) {
  ActionSeq out;
  if (key.empty()) return out;
  std::size_t pos = 0;
  while (pos <= key.size()) {
    const std::size_t dot = std::min(key.find('.', pos), key.size());
    const std::string tok = key.substr(pos, dot - pos);
    require(!tok.empty() && std::all_of(tok.begin(), tok.end(), ::isdigit), "malformed prefix key '" + key + "'");
    out.push_back(static_cast<Action>(std::stoul(tok)));
    pos = dot + 1;
  }
  return out;
}

ActionSeq concat(std::span<const Action> a, std::span<const Action> b) {
  ActionSeq out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

void EnvSpec::validate() const {
  require(depth >= 1, "EnvSpec.depth must be >= 1");
  require(branching >= 2, "EnvSpec.branching must be >= 2");
  require(correct_fraction > 0.0 && correct_fraction < 1.0, "EnvSpec.correct_fraction must lie in (0,1)");
  TreeShape check(depth, branching);
}

ReasoningEnv::ReasoningEnv(const EnvSpec& spec, std::vector<std::uint8_t> labels)
    : spec_(spec), shape_(spec.depth, spec.branching), labels_(std::move(labels)) {
  require(labels_.size() == shape_.leaf_count(), "terminal label count does not match branching^depth");
  for (auto l : labels_) {
    require(l <= 1, "terminal labels must be 0 or 1");
    correct_count_ += l;
  }
  require(correct_count_ >= 1 && correct_count_ < labels_.size(),
          "an environment needs at least one correct and one incorrect terminal");
}

ReasoningEnv ReasoningEnv::generate(const EnvSpec& spec) {
  spec.validate();
  const TreeShape shape(spec.depth, spec.branching);
  const std::size_t leaves = shape.leaf_count();
  auto correct = static_cast<std::size_t>(std::llround(spec.correct_fraction * static_cast<double>(leaves)));
  correct = std::clamp<std::size_t>(correct, 1, leaves - 1);

  // Fisher-Yates with our own stream so labels do not depend on the standard
  // library's shuffle implementation.
  std::vector<std::size_t> order(leaves);
  std::iota(order.begin(), order.end(), std::size_t{0});
  RngStream rng = StreamFactory(spec.seed).derive(Purpose::kEnvLabels, 0).stream(0, 0, 0);
  for (std::size_t i = leaves - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

  std::vector<std::uint8_t> labels(leaves, 0);
  for (std::size_t i = 0; i < correct; ++i) labels[order[i]] = 1;
  return ReasoningEnv(spec, std::move(labels));
}

ReasoningEnv ReasoningEnv::from_labels(const EnvSpec& spec, std::vector<std::uint8_t> labels) {
  spec.validate();
  return ReasoningEnv(spec, std::move(labels));
}

int ReasoningEnv::reward(std::span<const Action> full) const { return labels_[shape_.leaf_index(full)]; }

int ReasoningEnv::reward(const Trajectory& traj) const {
  const ActionSeq full = traj.full();
  require(shape_.valid_prefix(full), "trajectory leaves the environment's action space");
  return reward(full);
}

std::string ReasoningEnv::to_json() const {
  std::string bits(labels_.size(), '0');
  for (std::size_t i = 0; i < labels_.size(); ++i) bits[i] = labels_[i] ? '1' : '0';
  nlohmann::ordered_json j;
  j["spec"] = {{"depth", spec_.depth},
               {"branching", spec_.branching},
               {"correct_fraction", spec_.correct_fraction},
               {"seed", spec_.seed}};
  j["terminal_labels"] = bits;
  return j.dump(2) + "\n";
}

ReasoningEnv ReasoningEnv::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    EnvSpec spec;
    const auto& s = j.at("spec");
    spec.depth = s.at("depth").get<std::uint32_t>();
    spec.branching = s.at("branching").get<std::uint32_t>();
    spec.correct_fraction = s.at("correct_fraction").get<double>();
    spec.seed = s.at("seed").get<std::uint64_t>();
    const auto bits = j.at("terminal_labels").get<std::string>();
    std::vector<std::uint8_t> labels(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) {
      require(bits[i] == '0' || bits[i] == '1', "terminal_labels must be a bitstring");
      labels[i] = bits[i] == '1';
    }
    return from_labels(spec, std::move(labels));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed env document: ") + e.what());
  }
}

ReasoningEnv canonical_t2() {
  return ReasoningEnv::from_labels(EnvSpec{2, 2, 0.25, 0}, {1, 0, 0, 0});
}

}  // namespace marge
