#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "uq/core.hpp"

namespace uq {

/// Directional entailment: does `premise` entail `hypothesis`?
using EntailmentFn = std::function<bool(const std::string& premise, const std::string& hypothesis)>;

/// Greedy clustering state for one prompt. Each cluster is represented by its
/// first member; a new text is compared against representatives only, in
/// cluster creation order.
class ClusterState {
 public:
  explicit ClusterState(EntailmentFn entails);

  /// Cluster index for `text`, opening a new cluster if none is equivalent.
  int assign(const std::string& text);

  /// Bidirectional check through the pair cache; trim-equal texts short-circuit.
  bool equivalent(const std::string& a, const std::string& b);

  const std::vector<std::pair<int, std::string>>& representatives() const { return reps_; }
  std::size_t judge_calls() const { return calls_; }
  std::size_t cached_pairs() const { return pair_cache_.size(); }

 private:
  bool directional(const std::string& a, const std::string& b);

  EntailmentFn entails_;
  std::vector<std::pair<int, std::string>> reps_;
  std::map<std::string, int> seen_;
  std::map<std::pair<std::string, std::string>, bool> pair_cache_;
  std::size_t calls_ = 0;
};

ClusterPartition cluster(std::span<const std::string> texts, const EntailmentFn& entails,
                         std::string prompt_id = {});

ClusterPartition cluster(const SampleSet& sample_set, const EntailmentFn& entails);

}  // namespace uq
