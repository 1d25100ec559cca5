#include <doctest.h>

#include "uq/clustering.hpp"

#include "testkit.hpp"

using namespace uq;

TEST_CASE("greedy assignment compares against representatives only") {
  // x~y, y~z but x!~z: y joins x's cluster, z opens a new one only when it
  // arrives before y. Non-transitive judges therefore depend on order.
  auto fn = [](const std::string& a, const std::string& b) {
    auto near = [](char p, char q) { return (p == 'x' && q == 'y') || (p == 'y' && q == 'z') || p == q; };
    return near(a[0], b[0]) || near(b[0], a[0]);
  };
  std::vector<std::string> order1{"x", "z", "y"};
  auto p = cluster(order1, fn, "p");
  CHECK(p.assignments == std::vector<int>{0, 1, 0});
  CHECK(p.J == 2);
  std::vector<std::string> order2{"x", "y", "z"};
  CHECK(cluster(order2, fn).assignments == std::vector<int>{0, 0, 1});
}

TEST_CASE("duplicates join without a judge call") {
  int calls = 0;
  ClusterState state([&](const std::string&, const std::string&) {
    ++calls;
    return false;
  });
  CHECK(state.assign("a") == 0);
  CHECK(state.assign(" a ") == 0);
  CHECK(calls == 0);
  CHECK(state.assign("b") == 1);
  CHECK(calls == 1);
  CHECK(state.assign("b") == 1);
  CHECK(calls == 1);
  CHECK(state.representatives().size() == 2);
}

TEST_CASE("pair cache avoids repeated directional calls") {
  int calls = 0;
  ClusterState state([&](const std::string&, const std::string&) {
    ++calls;
    return true;
  });
  CHECK(state.equivalent("a", "b"));
  CHECK(calls == 2);
  CHECK(state.equivalent("a", "b"));
  CHECK(state.equivalent("b", "a"));
  CHECK(calls == 2);
  CHECK(state.cached_pairs() == 2);
}

TEST_CASE("a failing judge names the pair") {
  auto fn = [](const std::string&, const std::string&) -> bool { throw Error("boom"); };
  std::vector<std::string> t{"first", "second"};
  CHECK_THROWS_WITH_AS(cluster(t, fn, "pid"), doctest::Contains("second"), Error);
}

TEST_CASE("partition from a sample set matches union-find on transitive judges") {
  std::vector<int> labels{2, 0, 2, 1, 0, 2};
  SampleSet set;
  set.prompt_id = "p";
  for (int l : labels) set.samples.push_back(Sample{"t" + std::to_string(l) + "_" + std::to_string(set.samples.size()), 1,
                                                    std::nullopt, FinishReason::stop_token});
  auto fn = [](const std::string& a, const std::string& b) { return a[1] == b[1]; };
  auto p = cluster(set, fn);
  CHECK(p.prompt_id == "p");
  CHECK(p.assignments == testkit::union_find_classes(labels));
  CHECK_NOTHROW(p.validate());
}
