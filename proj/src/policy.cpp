#include "marge/policy.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "marge/error.hpp"
#include "marge/oracles.hpp"

namespace marge {

GradientTable& GradientTable::operator+=(const GradientTable& other) {
  require(shape_ == other.shape_, "gradient tables have different shapes");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

GradientTable& GradientTable::operator*=(double s) {
  for (double& v : values_) v *= s;
  return *this;
}

double GradientTable::squared_norm() const {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return s;
}

double GradientTable::max_abs() const {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

TabularPolicy::TabularPolicy(const TreeShape& shape, double temperature)
    : shape_(shape), temperature_(temperature), logits_(shape.nonterminal_count() * shape.branching(), 0.0) {
  require(temperature > 0.0 && std::isfinite(temperature), "policy temperature must be positive");
}

TabularPolicy TabularPolicy::random(const TreeShape& shape, std::uint64_t seed, double scale, double temperature) {
  TabularPolicy p(shape, temperature);
  const StreamFactory streams = StreamFactory(seed).derive(Purpose::kCustom, 0x706f6c);
  for (std::size_t node = 0; node < shape.nonterminal_count(); ++node) {
    RngStream rng = streams.stream(0, node, 0);
    for (double& z : p.logits_at(node)) z = scale * (2.0 * rng.uniform() - 1.0);
  }
  return p;
}

void TabularPolicy::probs_at(std::size_t node, std::span<double> out) const {
  const auto z = logits_at(node);
  const double zmax = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (std::size_t a = 0; a < z.size(); ++a) {
    out[a] = std::exp((z[a] - zmax) / temperature_);
    total += out[a];
  }
  for (double& p : out) p /= total;
}

std::vector<double> TabularPolicy::probs_at(std::size_t node) const {
  std::vector<double> out(shape_.branching());
  probs_at(node, out);
  return out;
}

std::vector<double> TabularPolicy::action_probs(std::span<const Action> state) const {
  return probs_at(shape_.node_index(state));
}

Action TabularPolicy::greedy_action(std::size_t node) const {
  const auto z = logits_at(node);
  return static_cast<Action>(std::max_element(z.begin(), z.end()) - z.begin());
}

void TabularPolicy::check_path(std::span<const Action> start, std::span<const Action> actions) const {
  require(shape_.valid_prefix(start), "invalid start state '" + prefix_key(start) + "'");
  require(start.size() + actions.size() <= shape_.depth(), "action sequence runs past the terminal depth");
  for (Action a : actions) require(a < shape_.branching(), "action index " + std::to_string(a) + " out of range");
}

double TabularPolicy::log_prob(std::span<const Action> start, std::span<const Action> actions) const {
  check_path(start, actions);
  ActionSeq state(start.begin(), start.end());
  std::vector<double> p(shape_.branching());
  double lp = 0.0;
  for (Action a : actions) {
    probs_at(shape_.node_index(state), p);
    lp += std::log(p[a]);
    state.push_back(a);
  }
  return lp;
}

void TabularPolicy::accumulate_grad_log_prob(std::span<const Action> start, std::span<const Action> actions,
                                             double weight, GradientTable& out) const {
  check_path(start, actions);
  require(out.shape() == shape_, "gradient table shape does not match the policy");
  ActionSeq state(start.begin(), start.end());
  std::vector<double> p(shape_.branching());
  const double w = weight / temperature_;
  for (Action a : actions) {
    const std::size_t node = shape_.node_index(state);
    probs_at(node, p);
    auto row = out.row(node);
    for (std::size_t j = 0; j < p.size(); ++j) row[j] -= w * p[j];
    row[a] += w;
    state.push_back(a);
  }
}

GradientTable TabularPolicy::grad_log_prob(std::span<const Action> start, std::span<const Action> actions) const {
  GradientTable g(shape_);
  accumulate_grad_log_prob(start, actions, 1.0, g);
  return g;
}

void TabularPolicy::apply_gradient(const GradientTable& grad, double step) {
  require(grad.shape() == shape_, "gradient table shape does not match the policy");
  const auto& g = grad.values();
  for (std::size_t i = 0; i < logits_.size(); ++i) logits_[i] -= step * g[i];
}

std::string TabularPolicy::to_json() const {
  nlohmann::ordered_json j;
  j["depth"] = shape_.depth();
  j["branching"] = shape_.branching();
  j["temperature"] = temperature_;
  nlohmann::ordered_json table = nlohmann::ordered_json::object();
  for (std::uint32_t len = 0; len < shape_.depth(); ++len) {
    for (std::size_t v = 0; v < shape_.level_size(len); ++v) {
      const std::size_t node = shape_.level_offset(len) + v;
      const auto z = logits_at(node);
      table[prefix_key(shape_.prefix_at(len, v))] = std::vector<double>(z.begin(), z.end());
    }
  }
  j["logits"] = std::move(table);
  return j.dump(1) + "\n";
}

TabularPolicy TabularPolicy::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    TabularPolicy p(TreeShape(j.at("depth").get<std::uint32_t>(), j.at("branching").get<std::uint32_t>()),
                    j.at("temperature").get<double>());
    const auto& table = j.at("logits");
    require(table.size() == p.shape_.nonterminal_count(), "policy document has the wrong number of states");
    for (const auto& [key, row] : table.items()) {
      const auto z = row.get<std::vector<double>>();
      require(z.size() == p.shape_.branching(), "logit row '" + key + "' has the wrong length");
      std::copy(z.begin(), z.end(), p.logits_at(p.shape_.node_index(parse_prefix_key(key))).begin());
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed policy document: ") + e.what());
  }
}

Trajectory sample_completion(const TabularPolicy& policy, const ReasoningEnv& env, std::span<const Action> start,
                             RngStream& rng) {
  require(env.shape() == policy.shape(), "policy and environment shapes differ");
  require(env.valid_state(start), "invalid start state '" + prefix_key(start) + "'");
  Trajectory out;
  out.start_state.assign(start.begin(), start.end());
  ActionSeq state = out.start_state;
  std::vector<double> p(env.branching());
  while (state.size() < env.depth()) {
    policy.probs_at(env.shape().node_index(state), p);
    const double u = rng.uniform();
    double cdf = 0.0;
    Action a = static_cast<Action>(p.size() - 1);
    for (std::size_t j = 0; j < p.size(); ++j) {
      cdf += p[j];
      if (u < cdf) {
        a = static_cast<Action>(j);
        break;
      }
    }
    out.actions.push_back(a);
    state.push_back(a);
  }
  out.reward = env.reward(state);
  return out;
}

double kl_exact(const TabularPolicy& policy, const TabularPolicy& reference, const ReasoningEnv& env) {
  require(policy.shape() == env.shape() && reference.shape() == env.shape(), "policy shapes differ from the env");
  double kl = 0.0;
  for (const auto& c : enumerate_completions(env, policy, {})) {
    const auto& y = c.trajectory.actions;
    kl += c.probability * (policy.log_prob({}, y) - reference.log_prob({}, y));
  }
  return std::max(kl, 0.0);
}

}  // namespace marge
