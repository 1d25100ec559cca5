#include "uq/clustering.hpp"

namespace uq {

ClusterState::ClusterState(EntailmentFn entails) : entails_(std::move(entails)) {
  if (!entails_) throw Error("clustering needs an entailment judge");
}

bool ClusterState::directional(const std::string& a, const std::string& b) {
  auto key = std::make_pair(a, b);
  if (auto it = pair_cache_.find(key); it != pair_cache_.end()) return it->second;
  ++calls_;
  bool result = false;
  try {
    result = entails_(a, b);
  } catch (const std::exception& e) {
    throw Error("equivalence judge failed on pair ('" + a + "', '" + b + "'): " + e.what());
  }
  pair_cache_.emplace(std::move(key), result);
  return result;
}

bool ClusterState::equivalent(const std::string& a, const std::string& b) {
  const std::string ta = trim(a), tb = trim(b);
  if (ta == tb) return true;
  return directional(ta, tb) && directional(tb, ta);
}

int ClusterState::assign(const std::string& text) {
  const std::string t = trim(text);
  if (auto it = seen_.find(t); it != seen_.end()) return it->second;
  int chosen = -1;
  for (const auto& [index, rep] : reps_) {
    if (equivalent(t, rep)) {
      chosen = index;
      break;
    }
  }
  if (chosen < 0) {
    chosen = static_cast<int>(reps_.size());
    reps_.emplace_back(chosen, t);
  }
  seen_.emplace(t, chosen);
  return chosen;
}

ClusterPartition cluster(std::span<const std::string> texts, const EntailmentFn& entails, std::string prompt_id) {
  if (texts.empty()) throw Error("cannot cluster an empty sample set");
  ClusterState state(entails);
  ClusterPartition out;
  out.prompt_id = std::move(prompt_id);
  out.assignments.reserve(texts.size());
  for (const auto& t : texts) out.assignments.push_back(state.assign(t));
  out.J = static_cast<int>(state.representatives().size());
  return out;
}

ClusterPartition cluster(const SampleSet& sample_set, const EntailmentFn& entails) {
  std::vector<std::string> texts;
  texts.reserve(sample_set.samples.size());
  for (const auto& s : sample_set.samples) texts.push_back(s.text);
  return cluster(texts, entails, sample_set.prompt_id);
}

}  // namespace uq
