#include <doctest.h>

#include <cmath>

#include "uq/estimators.hpp"

#include "testkit.hpp"

using namespace uq;

namespace {

SampleSet set_of(std::vector<std::string> texts) {
  SampleSet s;
  s.prompt_id = "p";
  for (auto& t : texts) s.samples.push_back(Sample{t, 1, std::nullopt, FinishReason::stop_token});
  s.prediction = s.samples.front();
  s.generation_params.n = static_cast<int>(s.samples.size());
  return s;
}

Verdict v(VerdictValue x) { return Verdict{x, ""}; }

}  // namespace

TEST_CASE("entropy of counts") {
  std::vector<int> c{5, 3, 2};
  CHECK(entropy_of_counts(c) == doctest::Approx(1.0296530140645737).epsilon(1e-12));
  std::vector<int> one{10};
  CHECK(entropy_of_counts(one) == 0.0);
  std::vector<int> bad{3, 0};
  CHECK_THROWS_AS(entropy_of_counts(bad), Error);
}

TEST_CASE("MC entropy counts trim-equal surface forms") {
  auto s = set_of({"Paris", " Paris", "Lyon", "paris"});
  auto r = mc_entropy(s);
  CHECK(r.name == Quantifier::E);
  CHECK(r.support_size == std::optional<int>(3));
  std::vector<int> c{2, 1, 1};
  CHECK(r.value == doctest::Approx(entropy_of_counts(c)));
}

TEST_CASE("semantic entropy and normalization") {
  ClusterPartition p{"p", {0, 0, 1, 1, 1}, 2};
  auto se = semantic_entropy(p);
  CHECK(se.support_size == std::optional<int>(2));
  auto n = normalized(se);
  CHECK(n.name == Quantifier::NormSE);
  CHECK(n.value == doctest::Approx(1.0 - se.value / std::log(2.0)));
  CHECK(normalized_confidence(1.029653, 3) == doctest::Approx(0.0628).epsilon(1e-3));
  CHECK(normalized_confidence(0.0, 1) == 1.0);
  CHECK(normalized_confidence(5.0, 2) == 0.0);
  CHECK_THROWS_AS(normalized(probar("p", std::vector<Verdict>{v(VerdictValue::Adequate)})), Error);
}

TEST_CASE("ProbAR excludes dismissed verdicts") {
  std::vector<Verdict> vs;
  for (int i = 0; i < 6; ++i) vs.push_back(v(VerdictValue::Adequate));
  for (int i = 0; i < 2; ++i) vs.push_back(v(VerdictValue::Inadequate));
  for (int i = 0; i < 2; ++i) vs.push_back(v(VerdictValue::Dismissed));
  auto r = probar("p", vs);
  CHECK(r.value == doctest::Approx(0.75));
  CHECK(r.judged_count == std::optional<int>(8));
  std::vector<Verdict> dismissed(3, v(VerdictValue::Dismissed));
  CHECK_THROWS_AS(probar("p", dismissed), InstanceInvalid);
}

TEST_CASE("P(Adequate) is a stable two-way softmax") {
  CHECK(p_adequate(-0.1, -3.0) == doctest::Approx(0.9479).epsilon(1e-4));
  CHECK(p_adequate(-1000.0, -1001.0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
  CHECK(p_adequate(0.0, 0.0) == 0.5);
  CHECK_THROWS_AS(p_adequate(NAN, 0.0), Error);
}

TEST_CASE("quantifier names and orientation") {
  for (auto q : all_quantifiers()) CHECK(parse_quantifier(to_string(q)) == q);
  CHECK_FALSE(higher_is_confident("E"));
  CHECK_FALSE(higher_is_confident("SE"));
  CHECK(higher_is_confident("NormSE"));
  CHECK(higher_is_confident("ProbAR"));
  CHECK_THROWS_AS(parse_quantifier("X"), Error);
  QuantifierResult r{"p", Quantifier::SE, 0.5, 2, std::nullopt};
  CHECK(json(r).get<QuantifierResult>() == r);
}
